"""Start-value inference and Hop Count estimation from observed TTLs."""

from __future__ import annotations

from functools import lru_cache
from typing import NamedTuple, Sequence

START_VALUES = (32, 64, 128, 255)
# estimates with more hops than this are flagged unreliable (32 itself is reliable)
MAX_RELIABLE_HOPS = 32


class HopEstimate(NamedTuple):
    start: int
    hop_count: int
    reliable: bool


def estimate(ttl: int, starts: Sequence[int] = START_VALUES) -> HopEstimate:
    """Map an observed TTL to the smallest start value >= ttl and its Hop Count.

    >>> estimate(50)
    HopEstimate(start=64, hop_count=14, reliable=True)
    """
    if starts is START_VALUES:
        if not 0 <= ttl <= 255:
            raise ValueError(f"ttl {ttl} outside [0, 255]")
        return _TABLE[ttl]
    return _estimate(ttl, tuple(sorted(starts)))


def _estimate(ttl: int, starts: tuple[int, ...]) -> HopEstimate:
    if not 0 <= ttl <= 255:
        raise ValueError(f"ttl {ttl} outside [0, 255]")
    for start in starts:
        if start >= ttl:
            hc = start - ttl
            return HopEstimate(start, hc, hc <= MAX_RELIABLE_HOPS)
    raise ValueError(f"no start value >= {ttl} in {starts}")


_TABLE = tuple(_estimate(t, START_VALUES) for t in range(256))

# flat lookup used in hot loops
HOP_COUNT = tuple(e.hop_count for e in _TABLE)


@lru_cache(maxsize=None)
def hop_counts_of(ttls: frozenset[int]) -> frozenset[int]:
    return frozenset(HOP_COUNT[t] for t in ttls)
