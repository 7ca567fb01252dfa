import pytest
from hypothesis import given, strategies as st

from ttlscope.hopcount import HopEstimate, START_VALUES, estimate


def brute_estimate(ttl):
    start = min(s for s in (32, 64, 128, 255) if s >= ttl)
    return start, start - ttl


@pytest.mark.parametrize("ttl,expected", [
    (50, HopEstimate(64, 14, True)),
    (117, HopEstimate(128, 11, True)),
    (249, HopEstimate(255, 6, True)),
    (255, HopEstimate(255, 0, True)),
    (70, HopEstimate(128, 58, False)),
    (0, HopEstimate(32, 32, True)),
    (96, HopEstimate(128, 32, True)),
    (95, HopEstimate(128, 33, False)),
])
def test_examples(ttl, expected):
    assert estimate(ttl) == expected


def test_total_and_consistent():
    for ttl in range(256):
        e = estimate(ttl)
        assert (e.start, e.hop_count) == brute_estimate(ttl)
        assert e.start >= ttl and e.reliable == (e.hop_count <= 32)


def test_monotone_within_band():
    for lo, hi in zip((0,) + START_VALUES[:-1], START_VALUES):
        band = [estimate(t) for t in range(lo + (lo > 0), hi + 1)]
        assert len({e.start for e in band}) == 1
        hcs = [e.hop_count for e in band]
        assert all(a > b for a, b in zip(hcs, hcs[1:]))


def test_out_of_domain():
    for bad in (256, -1):
        with pytest.raises(ValueError):
            estimate(bad)


def test_custom_starts():
    assert estimate(50, starts=(60, 255)) == HopEstimate(60, 10, True)


@given(st.lists(st.integers(0, 255), min_size=1))
def test_unreliable_fraction_is_definitional(ttls):
    flagged = sum(not estimate(t).reliable for t in ttls)
    assert flagged == sum(brute_estimate(t)[1] > 32 for t in ttls)
