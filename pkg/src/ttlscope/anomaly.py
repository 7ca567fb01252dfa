"""Spoofed-flood detection and per-packet TTL verdicts.

Detection has two stages.  ``accumulation_spikes`` finds short intervals in
which an unusually large share of all learned addresses appears for the first
time.  ``concentration`` then looks at the traffic of those new addresses: a
spoofed flood shows a handful of TTLs carrying almost every packet, almost
every source sending a single packet, and one dominant destination port.
"""

from __future__ import annotations

import csv
import ipaddress
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import IO, Iterable

from ttlscope.hopcount import HOP_COUNT
from ttlscope.records import PacketRecord
from ttlscope.state import StateTable
from ttlscope.stability import classify

DEFAULT_WINDOW_BINS = 6  # one hour of 10-minute bins
DEFAULT_SPIKE_THRESHOLD = 0.4
DEFAULT_WARMUP_BINS = 144  # one day; everything is "new" right after capture start
DEFAULT_TRIM_FRACTION = 0.05

MATCH = "match"
NEAR_MATCH = "near_match"
MISMATCH = "mismatch"
UNKNOWN = "unknown"


@dataclass
class AnomalyWindow:
    first_bin: int
    last_bin: int
    new_ip_count: int
    new_ip_ratio: float
    peak_window_ratio: float
    peak_window_end: int

    @property
    def bins(self) -> range:
        return range(self.first_bin, self.last_bin + 1)


@dataclass
class ConcentrationReport:
    first_bin: int
    last_bin: int
    population: str
    ip_count: int
    packet_count: int
    top_ttls: list[tuple[int, float]]
    combined_top_share: float
    single_packet_ratio: float
    top_port: tuple[int, int] | None
    top_port_share: float
    countries_per_ttl: dict[int, int] | None = None


@dataclass
class FlagPolicy:
    min_combined_share: float = 0.99
    min_single_packet_ratio: float = 0.95
    min_port_share: float | None = None


@dataclass
class FlagResult:
    flagged: bool
    reasons: list[str] = field(default_factory=list)


def first_bins(table: StateTable) -> Counter:
    """Number of IPs first seen in each bin."""
    return Counter(min(s.bins) for s in table.ips.values())


def accumulation_spikes(table: StateTable, window_bins: int = DEFAULT_WINDOW_BINS,
                        threshold: float = DEFAULT_SPIKE_THRESHOLD,
                        warmup_bins: int = DEFAULT_WARMUP_BINS,
                        trim_fraction: float = DEFAULT_TRIM_FRACTION) -> list[AnomalyWindow]:
    """Intervals where newly learned IPs make up >= ``threshold`` of all IPs learned so far.

    A window of ``window_bins`` bins ending at bin e is flagged when
    new(e-w+1..e) / cumulative(e) >= threshold.  Windows starting within
    ``warmup_bins`` of the first bin are not evaluated.  Overlapping flagged
    windows are coalesced, then edge bins contributing fewer than
    ``trim_fraction`` of the range's busiest bin are trimmed off.
    """
    if window_bins < 1:
        raise ValueError("window_bins must be >= 1")
    if not 0 < threshold < 1:
        raise ValueError("threshold must be in (0, 1)")
    new = first_bins(table)
    if not new:
        return []
    lo, hi = min(new), max(new)
    cumulative = {}
    running = 0
    for b in range(lo, hi + 1):
        running += new.get(b, 0)
        cumulative[b] = running

    flagged: list[tuple[int, int, float]] = []
    in_window = 0
    for e in range(lo, hi + 1):
        in_window += new.get(e, 0)
        if e - window_bins >= lo:
            in_window -= new.get(e - window_bins, 0)
        start = max(lo, e - window_bins + 1)
        if start < lo + warmup_bins:
            continue
        ratio = in_window / cumulative[e]
        if in_window and ratio >= threshold:
            flagged.append((start, e, ratio))

    ranges: list[list] = []
    for start, end, ratio in flagged:
        if ranges and start <= ranges[-1][1] + 1:
            r = ranges[-1]
            r[1] = max(r[1], end)
            if ratio > r[2]:
                r[2], r[3] = ratio, end
        else:
            ranges.append([start, end, ratio, end])

    out = []
    for start, end, peak, peak_end in ranges:
        busiest = max(new.get(b, 0) for b in range(start, end + 1))
        cut = trim_fraction * busiest
        while start < end and new.get(start, 0) < cut:
            start += 1
        while end > start and new.get(end, 0) < cut:
            end -= 1
        count = sum(new.get(b, 0) for b in range(start, end + 1))
        out.append(AnomalyWindow(start, end, count, count / cumulative[end], peak, peak_end))
    return out


def load_geo_table(src: IO[str]) -> list[tuple[ipaddress._BaseNetwork, str]]:
    """Read ``prefix,country`` rows (optional header)."""
    rows = []
    for line in src:
        line = line.strip()
        if not line or line.lower().startswith("prefix,"):
            continue
        prefix, country = line.split(",", 1)
        rows.append((ipaddress.ip_network(prefix, strict=False), country.strip()))
    return rows


class GeoLookup:
    """Longest-prefix country lookup over a small prefix table."""

    def __init__(self, rows: Iterable[tuple]):
        self._by_len: dict[tuple[int, int], dict[int, str]] = defaultdict(dict)
        for net, country in rows:
            net = ipaddress.ip_network(net, strict=False)
            self._by_len[(net.version, net.prefixlen)][int(net.network_address)] = country
        self._lens = {v: sorted((pl for (ver, pl) in self._by_len if ver == v), reverse=True)
                      for v in (4, 6)}

    def lookup(self, ip: str) -> str | None:
        addr = ipaddress.ip_address(ip)
        bits = 32 if addr.version == 4 else 128
        value = int(addr)
        for pl in self._lens[addr.version]:
            key = (value >> (bits - pl)) << (bits - pl) if pl else 0
            hit = self._by_len[(addr.version, pl)].get(key)
            if hit is not None:
                return hit
        return None


def concentration(table: StateTable, window: tuple[int, int] | AnomalyWindow, k: int = 5,
                  population: str = "new", geo: GeoLookup | None = None) -> ConcentrationReport:
    """TTL, single-packet and port concentration of the traffic inside a bin window.

    ``population="new"`` restricts to IPs first seen inside the window (the
    addresses an accumulation spike consists of); ``"all"`` takes every IP
    active in the window.
    """
    if isinstance(window, AnomalyWindow):
        lo, hi = window.first_bin, window.last_bin
    else:
        lo, hi = window
    if population not in ("new", "all"):
        raise ValueError(f"unknown population {population!r}")
    ttl_packets: Counter = Counter()
    ips = 0
    single = 0
    ttl_ips: dict[int, list[str]] = defaultdict(list)
    for ip, s in table.ips.items():
        inside = [b for b in s.bins if lo <= b <= hi]
        if not inside:
            continue
        if population == "new" and min(s.bins) < lo:
            continue
        ips += 1
        if s.packet_count == 1:
            single += 1
        seen = set()
        for b in inside:
            for t, c in s.bins[b].ttls.items():
                ttl_packets[t] += c
                seen.add(t)
        if geo is not None:
            for t in seen:
                ttl_ips[t].append(ip)
    packets = sum(ttl_packets.values())
    top = sorted(ttl_packets.items(), key=lambda it: (-it[1], it[0]))[:k]
    top_shares = [(t, c / packets) for t, c in top] if packets else []
    combined = sum(c for _, c in top) / packets if packets else 0.0

    ports = table.ports_in_bins(lo, hi)
    top_port = None
    port_share = 0.0
    if ports:
        (top_port, pc), = sorted(ports.items(), key=lambda it: (-it[1], it[0]))[:1]
        port_share = pc / sum(ports.values())

    countries = None
    if geo is not None:
        countries = {}
        for t, _ in top_shares:
            found = {geo.lookup(ip) for ip in ttl_ips[t]}
            found.discard(None)
            countries[t] = len(found)

    return ConcentrationReport(lo, hi, population, ips, packets, top_shares, combined,
                               single / ips if ips else 0.0, top_port, port_share, countries)


def flag(report: ConcentrationReport, policy: FlagPolicy | None = None) -> FlagResult:
    """Apply threshold policy; each threshold is met with >=."""
    policy = policy or FlagPolicy()
    reasons = []
    ok = True
    checks = [("combined_top_share", report.combined_top_share, policy.min_combined_share),
              ("single_packet_ratio", report.single_packet_ratio, policy.min_single_packet_ratio)]
    if policy.min_port_share is not None:
        checks.append(("top_port_share", report.top_port_share, policy.min_port_share))
    for name, value, limit in checks:
        met = value >= limit
        ok = ok and met
        reasons.append(f"{name} {value:.6f} {'>=' if met else '<'} {limit}")
    return FlagResult(ok, reasons)


@dataclass
class DetectionResult:
    window: AnomalyWindow
    report: ConcentrationReport
    flag: FlagResult


def detect(table: StateTable, window_bins: int = DEFAULT_WINDOW_BINS,
           threshold: float = DEFAULT_SPIKE_THRESHOLD, warmup_bins: int = DEFAULT_WARMUP_BINS,
           k: int = 5, policy: FlagPolicy | None = None,
           geo: GeoLookup | None = None) -> list[DetectionResult]:
    out = []
    for w in accumulation_spikes(table, window_bins, threshold, warmup_bins):
        rep = concentration(table, w, k=k, geo=geo)
        out.append(DetectionResult(w, rep, flag(rep, policy)))
    return out


def detection_json(results: list[DetectionResult], config: dict) -> dict:
    return {
        "config": config,
        "windows": [
            {
                "window": asdict(r.window),
                "metrics": asdict(r.report),
                "flagged": r.flag.flagged,
                "reasons": r.flag.reasons,
            }
            for r in results
        ],
    }


# --- verdicts ---------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    kind: str
    basis: str
    distance: int | None = None
    reference: tuple[int, ...] = ()

    @property
    def accepted(self) -> bool:
        return self.kind in (MATCH, NEAR_MATCH)


@dataclass
class VerdictPolicy:
    basis: str = "ttl"
    n: int = 0
    # restrict learning to IPs in these stability leaves (None = all)
    leaves: frozenset[str] | None = None
    # in hop_count mode, fall back to Hop Counts learned for other hosts of the same /len
    subnet_fallback: int | None = None

    def __post_init__(self):
        if self.basis not in ("ttl", "hop_count"):
            raise ValueError(f"unknown basis {self.basis!r}")
        if not 0 <= self.n <= 255:
            raise ValueError("n outside [0, 255]")


class Verifier:
    """Read-only verdict lookups against a frozen table; learned values are cached."""

    def __init__(self, table: StateTable, policy: VerdictPolicy | None = None):
        self.table = table
        self.policy = policy or VerdictPolicy()
        self._learned: dict[str, tuple[int, ...] | None] = {}
        self._subnets: dict | None = None

    def learned(self, ip: str) -> tuple[int, ...] | None:
        try:
            return self._learned[ip]
        except KeyError:
            pass
        s = self.table.ips.get(ip)
        values = None
        if s is not None and (self.policy.leaves is None or classify(s).leaf in self.policy.leaves):
            ttls = s.distinct_ttls
            if self.policy.basis == "hop_count":
                values = tuple(sorted({HOP_COUNT[t] for t in ttls}))
            else:
                values = tuple(sorted(ttls))
        self._learned[ip] = values
        return values

    def _subnet_key(self, ip: str):
        pl = self.policy.subnet_fallback
        net = ipaddress.ip_network(f"{ip}/{pl}", strict=False)
        return net.version, int(net.network_address)

    def subnet_values(self, ip: str) -> tuple[int, ...] | None:
        if self._subnets is None:
            idx: dict = defaultdict(set)
            for other in self.table.ips:
                vals = self.learned(other)
                if vals:
                    idx[self._subnet_key(other)].update(vals)
            self._subnets = {k: tuple(sorted(v)) for k, v in idx.items()}
        return self._subnets.get(self._subnet_key(ip))

    def __call__(self, rec: PacketRecord) -> Verdict:
        p = self.policy
        ref = self.learned(rec.ip)
        if ref is None and p.basis == "hop_count" and p.subnet_fallback is not None:
            ref = self.subnet_values(rec.ip)
        if not ref:
            return Verdict(UNKNOWN, p.basis)
        value = HOP_COUNT[rec.ttl] if p.basis == "hop_count" else rec.ttl
        dist = min(abs(value - r) for r in ref)
        if dist == 0:
            return Verdict(MATCH, p.basis, 0, ref)
        if dist <= p.n:
            return Verdict(NEAR_MATCH, p.basis, dist, ref)
        return Verdict(MISMATCH, p.basis, dist, ref)


def verdict(table: StateTable, rec: PacketRecord, policy: VerdictPolicy | None = None) -> Verdict:
    return Verifier(table, policy)(rec)


def write_verdicts(records: Iterable[PacketRecord], verifier: Verifier, out: IO[str]) -> Counter:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["ip", "verdict", "basis", "distance"])
    tally: Counter = Counter()
    for rec in records:
        v = verifier(rec)
        tally[v.kind] += 1
        w.writerow([rec.ip, v.kind, v.basis, "" if v.distance is None else v.distance])
    return tally


def to_json(obj) -> str:
    return json.dumps(obj, indent=2, default=str)
