"""Exit criteria for the toolkit, one test per criterion.

Each test records a PASS/FAIL line that is printed in the terminal summary.
"""

import gc
import ipaddress
import statistics
import time
import tracemalloc
import zlib
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from ttlscope.anomaly import (FlagPolicy, Verifier, VerdictPolicy, accumulation_spikes,
                              concentration, detect)
from ttlscope.distributions import (EmpiricalDistribution, build, collision_exact,
                                    collision_window, flow_collision)
from ttlscope.hopcount import estimate
from ttlscope.pingback import (OffsetOverflow, STABLE, anchor, ingest_probes, longitudinal,
                               longitudinal_summary)
from ttlscope.stability import LEAVES, classify, summarize
from ttlscope.state import StateTable, build_table, excise_bins, merge
from ttlscope.subnets import regress, subnet_stats
from ttlscope.synth import AttackSpec, GroupSpec, Scenario, ScenarioSpec, generate

ATTACK_TTLS = [43, 47, 51, 233, 108]


def check(ac: str, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE_LINES.append(f"{ac:5s} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else ""))
    assert ok, f"{ac} {title}: {detail}"


def background_groups(scale=1.0):
    def n(x):
        return max(1, int(x * scale))
    return [
        GroupSpec("stable", n(10000), starts=[64, 128, 255], hop_range=(3, 25), active_bins=(5, 40),
                  packets_per_bin=(1, 6)),
        GroupSpec("stable", n(1500), family="v6", starts=[64, 255], hop_range=(2, 15),
                  active_bins=(5, 40), packets_per_bin=(1, 6)),
        GroupSpec("single_packet", n(4000), starts=[64, 128]),
        GroupSpec("multi_ttl_single_bin", n(400)),
        GroupSpec("reassignment", n(800), active_bins=(3, 30)),
        GroupSpec("routing_churn", n(400), active_bins=(3, 30)),
        GroupSpec("nat", n(300), active_bins=(2, 20)),
    ]


@pytest.fixture(scope="module")
def big_trace():
    spec = ScenarioSpec(seed=2024, groups=background_groups(),
                        attack=AttackSpec(start_s=int(1.5 * 86400) + 240, duration_s=1800,
                                          sources=100_000, ttls=ATTACK_TTLS))
    records, truth = generate(spec)
    return spec, records, truth


# 1 -----------------------------------------------------------------------------

def test_ac01_flow_collision():
    t0 = time.perf_counter()
    p100, p1000 = flow_collision(100), flow_collision(1000)
    ms = (time.perf_counter() - t0) * 1000
    ok = abs(p100 - 0.073) <= 0.0005 and abs(p1000 - 0.9995) <= 0.0001 and ms < 100
    check("AC1", "flow collision n=100 -> 7.3%, n=1000 -> 99.95%", ok,
          f"{p100:.5f}, {p1000:.5f}, {ms:.2f} ms")


# 2 -----------------------------------------------------------------------------

# (TTL, start, Hop Count) for the ten most common IPv4 and IPv6 TTLs of the capture
TOP_TTLS = [
    (50, 64, 14), (117, 128, 11), (118, 128, 10), (114, 128, 14), (115, 128, 13),
    (116, 128, 12), (51, 64, 13), (39, 64, 25), (119, 128, 9), (49, 64, 15),
    (249, 255, 6), (56, 64, 8), (58, 64, 6), (57, 64, 7), (250, 255, 5),
    (59, 64, 5), (55, 64, 9), (248, 255, 7), (61, 64, 3), (247, 255, 8),
]


def test_ac02_hop_count_mapping():
    bad = [(t, s, h) for t, s, h in TOP_TTLS if (estimate(t).start, estimate(t).hop_count) != (s, h)]
    total = all(sum(1 for s in (32, 64, 128, 255) if s == estimate(t).start) == 1
                and estimate(t).start == min(s for s in (32, 64, 128, 255) if s >= t)
                for t in range(256))
    check("AC2", "20 top-TTL pairs map exactly; 0..255 total", len(TOP_TTLS) == 20 and not bad and total,
          f"mismatches={bad}")


# 3 -----------------------------------------------------------------------------

def test_ac03_collision_monte_carlo():
    rng = np.random.default_rng(2024)
    draws = 10**6
    worst = 0.0
    all_full = True
    for _ in range(25):
        k = int(rng.integers(1, 11))
        counts = np.zeros(256)
        counts[rng.choice(256, size=k, replace=False)] = rng.random(k)
        d = EmpiricalDistribution.from_counts(counts)
        n = int(rng.integers(0, 4))
        x = rng.choice(256, size=draws, p=d.p)
        y = rng.choice(256, size=draws, p=d.p)
        diff = np.abs(x - y)
        mc_window = np.mean(diff <= n)
        mc_exact = np.mean((diff == 0) | (diff == n))
        worst = max(worst, abs(mc_window - collision_window(d, n)), abs(mc_exact - collision_exact(d, n)))
        all_full = all_full and collision_window(d, 255) == 1.0
    check("AC3", "collision formulas vs Monte-Carlo pairs (25 dists, 1e6 draws, 1e-3)",
          worst <= 1e-3 and all_full, f"max abs err {worst:.2e}")


# 4 -----------------------------------------------------------------------------

def test_ac04_classifier_oracle():
    groups = [
        GroupSpec("single_packet", 2000),
        GroupSpec("stable", 2000, starts=[32, 64, 128, 255], hop_range=(2, 25)),
        GroupSpec("stable", 500, jitter=2, hop_range=(5, 20), active_bins=(3, 20)),
        GroupSpec("multi_ttl_single_bin", 800),
        GroupSpec("multi_ttl_single_bin", 700, same_hop_count=False, family="v6", starts=[64, 255]),
        GroupSpec("reassignment", 1000),
        GroupSpec("reassignment", 500, transition_mixbin=False, same_hop_count=False),
        GroupSpec("routing_churn", 1000, family="v6", starts=[64]),
        GroupSpec("nat", 1500),
    ]
    spec = ScenarioSpec(seed=4, groups=groups)
    assert sum(g.count for g in groups) == 10_000
    records, truth = generate(spec)
    table = build_table(records, epoch_us=spec.epoch_us)
    matches = sum(classify(s).leaf == truth.leaf(ip) for ip, s in table.items())
    leaves = {truth.leaf(ip) for ip in table.ips}
    report = summarize(table)
    expected = {leaf: 0 for leaf in LEAVES}
    for ip in table.ips:
        expected[truth.leaf(ip)] += 1
    counted = {leaf: sum(report.counts[f][leaf.split("_")[0]] for f in ("v4", "v6")) for leaf in LEAVES}
    ok = (len(table) == 10_000 and matches == 10_000 and leaves == set(LEAVES)
          and report.reconciles() and counted == expected)
    check("AC4", "classifier matches generator labels on 10^4 IPs; report reconciles", ok,
          f"{matches}/{len(table)} match, counts {counted}")


# 5 -----------------------------------------------------------------------------

def test_ac05_sharding_and_excision(big_trace):
    spec, records, truth = big_trace
    assert len(records) >= 10**6
    sequential = build_table(records, epoch_us=spec.epoch_us)
    shards = [StateTable(epoch_us=spec.epoch_us) for _ in range(4)]
    buckets = [[] for _ in range(4)]
    for r in records:
        buckets[zlib.crc32(r.ip.encode()) & 3].append(r)
    for table, bucket in zip(shards, buckets):
        table.ingest_many(bucket)
    merged = merge(merge(shards[0], shards[1]), merge(shards[2], shards[3]))
    sharded_ok = merged == sequential

    flagged = [r for r in detect(sequential) if r.flag.flagged]
    drop = {b for r in flagged for b in r.window.bins}
    width = spec.bin_width_us
    oracle = build_table([r for r in records if (r.ts_us - spec.epoch_us) // width not in drop],
                         epoch_us=spec.epoch_us)
    excised_ok = bool(drop) and excise_bins(sequential, drop) == oracle
    check("AC5", "4-shard ingest+merge == sequential; excise == filter-then-ingest",
          sharded_ok and excised_ok, f"{len(records)} records, excised bins {sorted(drop)}")


# 6 -----------------------------------------------------------------------------

def flood_spec(attack: bool) -> ScenarioSpec:
    return ScenarioSpec(
        seed=6, groups=background_groups(scale=0.5),
        attack=AttackSpec(start_s=int(1.25 * 86400) + 300, duration_s=2400, sources=120_000,
                          ttls=ATTACK_TTLS) if attack else None)


def test_ac06_attack_detection():
    t0 = time.perf_counter()
    spec = flood_spec(True)
    records, truth = generate(spec)
    table = build_table(records, epoch_us=spec.epoch_us)
    results = detect(table)
    elapsed = time.perf_counter() - t0

    flagged = [r for r in results if r.flag.flagged]
    lo, hi = truth.attack_bins
    range_ok = (len(flagged) == 1 and abs(flagged[0].window.first_bin - lo) <= 1
                and abs(flagged[0].window.last_bin - hi) <= 1)
    share = flagged[0].report.combined_top_share if flagged else 0.0
    top5 = sorted(t for t, _ in flagged[0].report.top_ttls) if flagged else []

    control = build_table(generate(flood_spec(False))[0], epoch_us=spec.epoch_us)
    fp_spikes = accumulation_spikes(control)
    fp_flags = [r for r in detect(control) if r.flag.flagged]
    ok = range_ok and share >= 0.99 and top5 == sorted(ATTACK_TTLS) and not fp_spikes and not fp_flags \
        and elapsed < 60
    detail = (f"truth bins {lo}-{hi}, flagged "
              f"{[(r.window.first_bin, r.window.last_bin) for r in flagged]}, top-5 share {share:.4f}, "
              f"control windows {len(fp_spikes)}, {elapsed:.1f} s")
    check("AC6", "flood flagged within +-1 bin, top-5 share >= 0.99, clean control, < 60 s", ok, detail)


# 7 -----------------------------------------------------------------------------

def test_ac07_verdict_matches_collision():
    spec = ScenarioSpec(
        seed=7,
        groups=[GroupSpec("stable", 3000, starts=[32, 64, 128, 255], hop_range=(1, 25),
                          active_bins=(1, 5)),
                GroupSpec("stable", 1000, family="v6", starts=[64, 255], hop_range=(1, 12),
                          active_bins=(1, 5))],
        attack=AttackSpec(start_s=3600, duration_s=3600, sources=100_000, ttls=[], spoof_mode="background"))
    records, truth = generate(spec)
    genuine = [r for r, s in zip(records, truth.spoofed) if not s]
    spoofed = [r for r, s in zip(records, truth.spoofed) if s]
    table = build_table(genuine, epoch_us=spec.epoch_us)
    verifier = Verifier(table, VerdictPolicy("hop_count", 1))
    accepted = sum(verifier(r).accepted for r in spoofed) / len(spoofed)
    expected = collision_window(build(table, "hop_count", "per_ip"), 1)
    check("AC7", "spoofed acceptance under (hc, +-1) tracks collision_window within 2 pp",
          len(spoofed) == 100_000 and abs(accepted - expected) <= 0.02,
          f"accepted {accepted:.4f} vs window {expected:.4f}")


# 8 -----------------------------------------------------------------------------

def test_ac08_pingback():
    mix = {"Stable": 6, "BinStable": 2, "BinUnstable": 1, "unresponsive": 3}
    spec = ScenarioSpec(seed=8, groups=[GroupSpec("stable", 2000, probe_mix=mix),
                                        GroupSpec("nat", 200, probe_mix=mix, probe_replies=107),
                                        GroupSpec("stable", 300, family="v6", starts=[64, 255],
                                                  hop_range=(1, 12), probe_mix=mix)])
    scen = Scenario(spec)
    targets, replies = scen.probe_files()
    state = ingest_probes([f"{r},{ip}" for r, ip in targets],
                          [f"{r},{ts},{ip},{t}" for r, ts, ip, t in replies], offset=3)
    partition_ok = all(
        (h.ip not in state.ips) if h.probe_class == "unresponsive" else longitudinal(state, h.ip) == h.probe_class
        for h in scen.hosts)
    raw = {}
    for r, _, ip, t in replies:
        raw.setdefault((r, ip), set()).add(t)
    offset_ok = all(set(state.ips[ip].runs[r]) == {t + 3 for t in ttls} for (r, ip), ttls in raw.items())
    try:
        ingest_probes(["r0,10.0.0.1"], ["r0,1,10.0.0.1,254"], offset=3)
        overflow_ok = False
    except OffsetOverflow:
        overflow_ok = True
    anchor_ok = all((anchor(state, ip) is not None) == (longitudinal(state, ip) == STABLE)
                    for ip in state.responsive())
    summary = longitudinal_summary(state)
    check("AC8", "probe classes match truth; offset 3; 254+3 overflows; anchor iff Stable",
          partition_ok and offset_ok and overflow_ok and anchor_ok and all(summary.values()),
          f"{summary}")


# 9 -----------------------------------------------------------------------------

def test_ac09_regression():
    exact = regress([(x, 2 * x + 1) for x in range(1, 11)])
    exact_ok = (exact.slope, exact.intercept, exact.r_squared) == (2.0, 1.0, 1.0)
    covered = 0
    r2 = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        x = rng.integers(1, 11, size=500).astype(float)
        # noise level chosen for r^2 around 0.05
        y = 1.14 * x + 7.74 + rng.normal(0.0, 14.3, size=500)
        fit = regress(zip(x, y))
        lo, hi = fit.slope_ci(0.95)
        covered += lo <= 1.14 <= hi
        r2.append(fit.r_squared)
    check("AC9", "noiseless fit exact; slope 1.14 inside 95% CI in >= 93/100 seeds",
          exact_ok and covered >= 93, f"{covered}/100 covered, mean r2 {statistics.mean(r2):.3f}")


# 10 ----------------------------------------------------------------------------

def test_ac10_subnet_stats():
    (s,) = subnet_stats({"10.1.2.1": 9, "10.1.2.2": 10, "10.1.2.3": 12}, 24)
    hand_ok = s.hc_amplitude == 3 and s.hc_median == 10 and abs(s.median_pm1_coverage - 2 / 3) < 1e-12
    rng = np.random.default_rng(10)
    slash32_ok = True
    coarsen_ok = True
    for _ in range(200):
        hosts = {f"10.{rng.integers(0, 4)}.{rng.integers(0, 256)}.{rng.integers(0, 256)}": int(rng.integers(0, 40))
                 for _ in range(int(rng.integers(1, 80)))}
        slash32_ok &= all(r.hc_stddev == 0 for r in subnet_stats(hosts, 32))
        prev = {r.prefix: r.hc_amplitude for r in subnet_stats(hosts, 32)}
        for pl in range(31, 7, -1):
            cur = {r.prefix: r.hc_amplitude for r in subnet_stats(hosts, pl)}
            for prefix, amp in prev.items():
                parent = str(ipaddress.ip_network(prefix).supernet(new_prefix=pl))
                coarsen_ok &= cur[parent] >= amp
            prev = cur
    check("AC10", "subnet hand example; /32 sigma 0; coarsening never shrinks amplitude",
          hand_ok and slash32_ok and coarsen_ok)


# 11 ----------------------------------------------------------------------------

def test_ac11_non_reproducible_documented():
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    ok = "Not reproduced" in readme and "trace-dependent" in readme
    check("AC11", "trace-dependent percentages declared out of reach; property suites stand in", ok)


# 12 ----------------------------------------------------------------------------

def test_ac12_performance_and_memory(big_trace):
    spec, records, _ = big_trace
    rates = []
    for _ in range(3):
        gc.collect()
        t0 = time.perf_counter()
        build_table(records, epoch_us=spec.epoch_us)
        rates.append(len(records) / (time.perf_counter() - t0))
    rate = statistics.median(rates)

    # replaying the same records doubles the packet count but adds no IP or (IP, bin) pair,
    # so retained memory must stay flat
    gc.collect()
    tracemalloc.start()
    table = build_table(records, epoch_us=spec.epoch_us)
    once, _ = tracemalloc.get_traced_memory()
    table.ingest_many(records)
    twice, _ = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    growth = (twice - once) / once
    cells = sum(len(s.bins) for s in table.ips.values())
    per_cell = once / (len(table) + cells)
    ok = rate >= 200_000 and growth < 0.01 and table.total_packets == 2 * len(records)
    check("AC12", ">= 200k records/s ingest; memory flat when packets double", ok,
          f"median {rate:,.0f} rec/s, growth {growth:.4%}, {len(table)} IPs + {cells} cells, "
          f"{per_cell:.0f} B per IP/cell")
