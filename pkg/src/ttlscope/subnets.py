"""Subnet-level Hop Count spread and AS-path-length correlation."""

from __future__ import annotations

import ipaddress
import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Mapping

import numpy as np
from scipy import stats

from ttlscope.hopcount import HOP_COUNT
from ttlscope.state import StateTable


class DegenerateRegression(ValueError):
    pass


@dataclass
class SubnetStats:
    prefix: str
    host_count: int
    hc_stddev: float
    hc_amplitude: int
    hc_median: int
    median_pm1_coverage: float


def lower_median(values: list[int]) -> int:
    v = sorted(values)
    return v[(len(v) - 1) // 2]


def _subnet_of(ip: str, v4_len: int, v6_len: int) -> ipaddress._BaseNetwork:
    addr = ipaddress.ip_address(ip)
    pl = v4_len if addr.version == 4 else v6_len
    return ipaddress.ip_network((addr, pl), strict=False)


def subnet_stats(hosts: Mapping[str, int], prefix_len: int, v6_prefix_len: int = 64) -> list[SubnetStats]:
    """Group hosts into equal-size subnets and describe each subnet's Hop Counts.

    ``prefix_len`` applies to IPv4 hosts (8..32), ``v6_prefix_len`` to IPv6
    hosts.  Standard deviation is the population one; the median is the lower
    median for even host counts.
    """
    if not 8 <= prefix_len <= 32:
        raise ValueError("IPv4 prefix length must be in [8, 32]")
    if not 1 <= v6_prefix_len <= 128:
        raise ValueError("IPv6 prefix length must be in [1, 128]")
    groups: dict = defaultdict(list)
    for ip, hc in hosts.items():
        groups[_subnet_of(ip, prefix_len, v6_prefix_len)].append(hc)
    out = []
    for net in sorted(groups, key=lambda n: (n.version, n)):
        hcs = groups[net]
        med = lower_median(hcs)
        mean = sum(hcs) / len(hcs)
        var = sum((h - mean) ** 2 for h in hcs) / len(hcs)
        amp = max(hcs) - min(hcs)
        out.append(SubnetStats(
            str(net), len(hcs),
            0.0 if amp == 0 else math.sqrt(var),
            amp, med,
            sum(1 for h in hcs if abs(h - med) <= 1) / len(hcs),
        ))
    return out


def write_subnet_csv(rows: Iterable[SubnetStats], out: IO[str]) -> None:
    out.write("prefix,host_count,hc_stddev,hc_amplitude,hc_median,median_pm1_coverage\n")
    for r in rows:
        out.write(f"{r.prefix},{r.host_count},{r.hc_stddev!r},{r.hc_amplitude},"
                  f"{r.hc_median},{r.median_pm1_coverage!r}\n")


# --- RIB / longest-prefix match ----------------------------------------------

@dataclass(frozen=True)
class PrefixRecord:
    prefix: str
    as_path_length: int

    @property
    def network(self):
        return ipaddress.ip_network(self.prefix, strict=False)


def read_rib(src: IO[str] | Iterable[str]) -> list[PrefixRecord]:
    """Flattened RIB snapshot rows ``prefix,as_path_len`` (header optional)."""
    out = []
    for lineno, line in enumerate(src, start=1):
        line = line.strip()
        if not line:
            continue
        prefix, plen = line.split(",")
        if lineno == 1 and prefix == "prefix":
            continue
        n = int(plen)
        if n < 1:
            raise ValueError(f"rib line {lineno}: AS path length must be >= 1")
        out.append(PrefixRecord(str(ipaddress.ip_network(prefix, strict=True)), n))
    return out


class PrefixIndex:
    """Longest-prefix match via one hash table per (family, prefix length)."""

    def __init__(self, rib: Iterable[PrefixRecord]):
        self._tables: dict[tuple[int, int], dict[int, PrefixRecord]] = defaultdict(dict)
        for rec in rib:
            net = rec.network
            self._tables[(net.version, net.prefixlen)][int(net.network_address)] = rec
        self._lengths = {
            v: sorted((pl for ver, pl in self._tables if ver == v), reverse=True) for v in (4, 6)
        }

    def lookup(self, ip: str) -> PrefixRecord | None:
        addr = ipaddress.ip_address(ip)
        bits = addr.max_prefixlen
        value = int(addr)
        for pl in self._lengths[addr.version]:
            shift = bits - pl
            hit = self._tables[(addr.version, pl)].get((value >> shift) << shift)
            if hit is not None:
                return hit
        return None


def assign_prefix(ip: str, rib: Iterable[PrefixRecord] | PrefixIndex) -> PrefixRecord | None:
    index = rib if isinstance(rib, PrefixIndex) else PrefixIndex(rib)
    return index.lookup(ip)


def host_hop_counts(table: StateTable) -> dict[str, float]:
    """Mean Hop Count over each IP's distinct TTLs."""
    out = {}
    for ip, s in table.items():
        hcs = [HOP_COUNT[t] for t in s.distinct_ttls]
        out[ip] = sum(hcs) / len(hcs)
    return out


def mean_hc_per_prefix(hosts: Mapping[str, float] | StateTable,
                       rib: Iterable[PrefixRecord] | PrefixIndex) -> dict[PrefixRecord, float]:
    if isinstance(hosts, StateTable):
        hosts = host_hop_counts(hosts)
    index = rib if isinstance(rib, PrefixIndex) else PrefixIndex(rib)
    sums: dict[PrefixRecord, list] = {}
    for ip, hc in hosts.items():
        rec = index.lookup(ip)
        if rec is None:
            continue
        acc = sums.setdefault(rec, [0.0, 0])
        acc[0] += hc
        acc[1] += 1
    return {rec: total / n for rec, (total, n) in sums.items()}


# --- regression ---------------------------------------------------------------

@dataclass
class RegressionResult:
    slope: float
    intercept: float
    r_squared: float
    p_value: float
    sample_count: int
    slope_stderr: float
    test: str = "two-sided t-test on slope = 0"

    def slope_ci(self, level: float = 0.95) -> tuple[float, float]:
        t = stats.t.ppf(0.5 + level / 2, self.sample_count - 2)
        return self.slope - t * self.slope_stderr, self.slope + t * self.slope_stderr

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slope_ci95"] = list(self.slope_ci())
        return d


def regress(points: Iterable[tuple[float, float]]) -> RegressionResult:
    """Ordinary least squares of y on x."""
    pts = np.asarray(list(points), dtype=float)
    if pts.ndim != 2 or len(pts) < 3:
        raise DegenerateRegression("need at least 3 points")
    x, y = pts[:, 0], pts[:, 1]
    n = len(x)
    dx = x - x.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise DegenerateRegression("x has zero variance")
    dy = y - y.mean()
    slope = float(dx @ dy) / sxx
    intercept = float(y.mean() - slope * x.mean())
    resid = y - (intercept + slope * x)
    ss_res = float(resid @ resid)
    ss_tot = float(dy @ dy)
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, min(1.0, 1.0 - ss_res / ss_tot))
    dof = n - 2
    stderr = math.sqrt(ss_res / dof / sxx)
    if stderr == 0.0:
        p = 0.0 if slope != 0.0 else 1.0
    else:
        p = float(2.0 * stats.t.sf(abs(slope / stderr), dof))
    # p is reported in (0, 1]; an exact fit underflows to the smallest normal double
    p = float(min(1.0, max(p, np.finfo(float).tiny)))
    return RegressionResult(slope, intercept, r2, p, n, stderr)


def prefix_points(means: Mapping[PrefixRecord, float]) -> list[tuple[int, float]]:
    """(as_path_len, mean_hc) plot points, sorted."""
    return sorted((rec.as_path_length, m) for rec, m in means.items())
