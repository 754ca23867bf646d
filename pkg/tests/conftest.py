import pytest

from rangeforge.config import RunConfig


def toy_config(**over) -> RunConfig:
    """Small endpoint run: synthetic corpus, a handful of slots, seconds of real time."""
    data = {
        "name": "t",
        "seed": 11,
        "corpus": {"n_total": 40, "benign_fraction": 0.5, "zero_days": 2},
        "topology": {"nodes": [{"node_id": "n0", "drive_controllers": 1, "vm_capacity_per_controller": 3},
                               {"node_id": "n1", "drive_controllers": 2, "vm_capacity_per_controller": 2}]},
        "detector": {"preset": "ml-generalizer"},
        "qa": {"subset_size": 10},
    }
    data.update(over)
    return RunConfig.from_dict(data)


@pytest.fixture
def toy():
    return toy_config()


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
