import sys

from rangeforge.cli import main

sys.exit(main())
