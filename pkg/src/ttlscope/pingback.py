"""Active-probe ("pingback") result ingestion and stability analysis.

Inputs are two CSV files written by whatever scanner ran the probes::

    targets:  run_id,ip            (one row per echo request sent)
    replies:  run_id,ts_us,ip,raw_ttl

Raw reply TTLs are shifted by a fixed offset to compensate for the prober
sitting a few hops behind the passive vantage point.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import IO, Iterable

from ttlscope.hopcount import estimate
from ttlscope.records import canonical_ip

DEFAULT_OFFSET = 3

STABLE = "Stable"
BIN_STABLE = "BinStable"
BIN_UNSTABLE = "BinUnstable"


class OffsetOverflow(ValueError):
    def __init__(self, ip: str, run_id: str, raw_ttl: int, offset: int):
        self.ip, self.run_id, self.raw_ttl, self.offset = ip, run_id, raw_ttl, offset
        super().__init__(f"{ip} run {run_id}: raw TTL {raw_ttl} + offset {offset} exceeds 255")


class UnknownIp(KeyError):
    pass


@dataclass(frozen=True)
class ProbeObservation:
    run_id: str
    ts_us: int
    ip: str
    raw_ttl: int
    corrected_ttl: int


@dataclass
class IpProbes:
    # run_id -> corrected TTL -> reply count
    runs: dict[str, Counter] = field(default_factory=dict)

    def reply_count(self, run_id: str | None = None) -> int:
        if run_id is not None:
            return sum(self.runs.get(run_id, Counter()).values())
        return sum(sum(c.values()) for c in self.runs.values())

    def run_sets(self) -> dict[str, frozenset[int]]:
        return {r: frozenset(c) for r, c in self.runs.items()}


@dataclass
class ProbeState:
    offset: int = DEFAULT_OFFSET
    ips: dict[str, IpProbes] = field(default_factory=dict)
    # (run_id, ip) -> number of requests sent
    requests: Counter = field(default_factory=Counter)
    runs: dict[str, list[str]] = field(default_factory=dict)
    quarantine: list[ProbeObservation] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def responsive(self) -> list[str]:
        return [ip for ip, p in self.ips.items() if p.runs]

    def add_target(self, run_id: str, ip: str) -> None:
        ip = canonical_ip(ip)
        if (run_id, ip) not in self.requests:
            self.runs.setdefault(run_id, []).append(ip)
        self.requests[(run_id, ip)] += 1

    def add_reply(self, run_id: str, ts_us: int, ip: str, raw_ttl: int) -> ProbeObservation:
        ip = canonical_ip(ip)
        if not 0 <= raw_ttl <= 255:
            raise ValueError(f"{ip} run {run_id}: raw TTL {raw_ttl} outside [0, 255]")
        corrected = raw_ttl + self.offset
        if corrected > 255:
            raise OffsetOverflow(ip, run_id, raw_ttl, self.offset)
        obs = ProbeObservation(run_id, ts_us, ip, raw_ttl, corrected)
        if (run_id, ip) not in self.requests:
            self.quarantine.append(obs)
            return obs
        self.ips.setdefault(ip, IpProbes()).runs.setdefault(run_id, Counter())[corrected] += 1
        return obs


def _rows(src: IO[str] | Iterable[str], header_first: str) -> Iterable[tuple[int, list[str]]]:
    for lineno, line in enumerate(src, start=1):
        line = line.strip()
        if not line:
            continue
        parts = line.split(",")
        if lineno == 1 and parts[0] == header_first:
            continue
        yield lineno, parts


def ingest_probes(targets: IO[str] | Iterable[str], replies: IO[str] | Iterable[str],
                  offset: int = DEFAULT_OFFSET) -> ProbeState:
    """Build a ProbeState; replies must come after all targets are known."""
    if offset < 0:
        raise ValueError("offset must be >= 0")
    state = ProbeState(offset=offset)
    for lineno, parts in _rows(targets, "run_id"):
        if len(parts) != 2:
            raise ValueError(f"targets line {lineno}: expected run_id,ip")
        state.add_target(parts[0], parts[1])
    for lineno, parts in _rows(replies, "run_id"):
        if len(parts) != 4:
            raise ValueError(f"replies line {lineno}: expected run_id,ts_us,ip,raw_ttl")
        try:
            ts, ttl = int(parts[1]), int(parts[3])
        except ValueError:
            raise ValueError(f"replies line {lineno}: non-integer field") from None
        state.add_reply(parts[0], ts, parts[2], ttl)
    return state


def run_ttl_counts(state: ProbeState) -> Counter:
    """Histogram: number of distinct TTLs -> number of (IP, run) cells with that many."""
    hist: Counter = Counter()
    for probes in state.ips.values():
        for ttls in probes.runs.values():
            hist[len(ttls)] += 1
    return hist


def longitudinal(state: ProbeState, ip: str) -> str:
    probes = state.ips.get(ip)
    if probes is None or not probes.runs:
        raise UnknownIp(ip)
    sets = probes.run_sets().values()
    if any(len(s) > 1 for s in sets):
        return BIN_UNSTABLE
    if len(frozenset().union(*sets)) == 1:
        return STABLE
    return BIN_STABLE


def longitudinal_summary(state: ProbeState) -> dict[str, int]:
    out = {STABLE: 0, BIN_STABLE: 0, BIN_UNSTABLE: 0}
    for ip in state.responsive():
        out[longitudinal(state, ip)] += 1
    return out


@dataclass
class Anchor:
    ttl: int
    hop_count: int


def anchor(state: ProbeState, ip: str) -> Anchor | None:
    """The single trusted TTL of a longitudinally stable IP, else None."""
    if ip not in state.ips or not state.ips[ip].runs:
        return None
    if longitudinal(state, ip) != STABLE:
        return None
    (ttl,) = frozenset().union(*state.ips[ip].run_sets().values())
    return Anchor(ttl, estimate(ttl).hop_count)


CROSS_ROWS = (
    ("single_ttl", "Pingback: =1 TTL"),
    ("bin_stable", "Pingback: >1 TTL, bin-stable"),
    ("bin_unstable", "Pingback: >1 TTL, bin-unstable"),
    ("no_response", "Pingback: no response"),
)


@dataclass
class CrossReport:
    total: int
    counts: dict[str, int]

    def percent(self, key: str) -> float:
        return 100.0 * self.counts[key] / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "multi_ttl_ips": self.total,
            "rows": [{"key": k, "category": label, "count": self.counts[k],
                      "percent": round(self.percent(k), 4)} for k, label in CROSS_ROWS],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def cross_correlate(passive_multi_ttl: Iterable[str], state: ProbeState) -> CrossReport:
    """Split passively multi-TTL IPs by how they answered the probes."""
    key_of = {STABLE: "single_ttl", BIN_STABLE: "bin_stable", BIN_UNSTABLE: "bin_unstable"}
    counts = {k: 0 for k, _ in CROSS_ROWS}
    total = 0
    for ip in set(passive_multi_ttl):
        total += 1
        probes = state.ips.get(ip)
        if probes is None or not probes.runs:
            counts["no_response"] += 1
        else:
            counts[key_of[longitudinal(state, ip)]] += 1
    return CrossReport(total, counts)
