"""Simulated time is kept as integer microseconds; journals show float seconds.

Integer arithmetic keeps clock shifts exactly reversible.
"""

from __future__ import annotations

US_PER_S = 1_000_000


def to_us(seconds: float) -> int:
    return round(seconds * US_PER_S)


def to_s(us: int) -> float:
    return us / US_PER_S
