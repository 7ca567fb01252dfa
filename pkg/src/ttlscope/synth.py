"""Deterministic synthetic traces with ground-truth labels.

A scenario is a set of host groups, each built so that its stability leaf is
known by construction, plus an optional spoofed flood.  Output is the same
record CSV the rest of the package reads, probe target/reply CSVs and an
NDJSON ground-truth file.

Host kinds and the leaf they produce (activity-order adjacency):

    single_packet          B1  one packet
    stable                 C1  one TTL (E1 if jitter moves the Hop Count between bins)
    multi_ttl_single_bin   D1  two TTLs inside one bin
    reassignment           E1  start value switches once, optional transition mixbin
    routing_churn          E1  Hop Count shifts by delta once, optional transition mixbin
    nat                    E2  two start values active in every bin
"""

from __future__ import annotations

import ipaddress
import json
import random
from dataclasses import asdict, dataclass, field
from typing import IO

from ttlscope.records import PacketRecord, format_record, HEADER
from ttlscope.stability import B1, C1, D1, E1, E2

KINDS = ("single_packet", "stable", "multi_ttl_single_bin", "reassignment", "routing_churn", "nat")
PROBE_CLASSES = ("Stable", "BinStable", "BinUnstable", "unresponsive")

V4_BASE = int(ipaddress.IPv4Address("10.0.0.1"))
V6_BASE = int(ipaddress.IPv6Address("2001:db8::1"))
# spoofed sources are drawn from 11.0.0.0 - 223.255.255.255, disjoint from the 10/8 host pool
SPOOF_LO = 11 << 24
SPOOF_HI = 224 << 24


class InfeasibleSpec(ValueError):
    pass


@dataclass
class GroupSpec:
    kind: str
    count: int
    family: str = "v4"
    starts: list[int] = field(default_factory=lambda: [64])
    second_starts: list[int] = field(default_factory=lambda: [128])
    hop_range: tuple[int, int] = (5, 20)
    active_bins: tuple[int, int] = (2, 12)
    packets_per_bin: tuple[int, int] = (1, 4)
    jitter: int = 0
    delta: tuple[int, int] = (1, 3)
    same_hop_count: bool = True
    transition_mixbin: bool = True
    probe_mix: dict[str, float] = field(default_factory=lambda: {"Stable": 1.0})
    probe_replies: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InfeasibleSpec(f"unknown host kind {self.kind!r}")
        if self.family not in ("v4", "v6"):
            raise InfeasibleSpec(f"unknown family {self.family!r}")
        self.hop_range = tuple(self.hop_range)
        self.active_bins = tuple(self.active_bins)
        self.packets_per_bin = tuple(self.packets_per_bin)
        self.delta = tuple(self.delta)
        lo, hi = self.hop_range
        if lo < 0 or lo > hi:
            raise InfeasibleSpec(f"bad hop_range {self.hop_range}")
        seconds = self.kind in ("reassignment", "nat", "multi_ttl_single_bin")
        for s in list(self.starts) + (list(self.second_starts) if seconds else []):
            if not 1 <= s <= 255:
                raise InfeasibleSpec(f"start value {s} outside [1, 255]")
            uses_delta = self.kind == "routing_churn" or (
                self.kind == "multi_ttl_single_bin" and not self.same_hop_count)
            margin = self.jitter + (self.delta[1] if uses_delta else 0)
            if hi + margin >= s:
                raise InfeasibleSpec(f"hop_count up to {hi + margin} not below start value {s}")
        if self.packets_per_bin[0] < 1 or self.active_bins[0] < 1:
            raise InfeasibleSpec("packets_per_bin and active_bins must be >= 1")
        if self.kind in ("reassignment", "routing_churn", "nat") and self.active_bins[1] < 2:
            raise InfeasibleSpec(f"{self.kind} hosts need at least 2 active bins")
        if self.kind in ("routing_churn", "multi_ttl_single_bin") and self.delta[0] < 1:
            raise InfeasibleSpec("delta must be >= 1")
        for c in self.probe_mix:
            if c not in PROBE_CLASSES:
                raise InfeasibleSpec(f"unknown probe class {c!r}")


@dataclass
class AttackSpec:
    start_s: int
    duration_s: int
    sources: int
    ttls: list[int]
    ttl_weights: list[float] | None = None
    packets_per_source: int = 1
    dst_port: int = 80
    proto: int = 6
    # "random": spoof random IPv4 sources; "background": claim existing hosts' addresses
    spoof_mode: str = "random"

    def __post_init__(self):
        if self.spoof_mode not in ("random", "background"):
            raise InfeasibleSpec(f"unknown spoof_mode {self.spoof_mode!r}")
        if self.spoof_mode == "random" and not self.ttls:
            raise InfeasibleSpec("random spoofing needs attacker TTLs")
        if any(not 0 <= t <= 255 for t in self.ttls):
            raise InfeasibleSpec("attacker TTL outside [0, 255]")

    @property
    def packet_rate(self) -> float:
        return self.sources * self.packets_per_source / self.duration_s


@dataclass
class ProbeSpec:
    runs: int = 4
    requests: int = 3
    run_spacing_s: int = 6 * 3600
    offset: int = 3


@dataclass
class ScenarioSpec:
    seed: int = 0
    start_s: int = 1454544000
    duration_s: int = 2 * 86400
    bin_width_s: int = 600
    groups: list[GroupSpec] = field(default_factory=list)
    attack: AttackSpec | None = None
    probes: ProbeSpec = field(default_factory=ProbeSpec)

    def __post_init__(self):
        if self.duration_s <= 0 or self.bin_width_s <= 0:
            raise InfeasibleSpec("duration and bin width must be positive")
        if self.start_s % self.bin_width_s:
            raise InfeasibleSpec("start_s must be a whole number of bins")
        for g in self.groups:
            if g.active_bins[1] > self.n_bins:
                raise InfeasibleSpec(f"group {g.kind}: {g.active_bins[1]} active bins > {self.n_bins} bins")
        a = self.attack
        if a is not None:
            if a.start_s < 0 or a.duration_s <= 0 or a.start_s + a.duration_s > self.duration_s:
                raise InfeasibleSpec("attack schedule outside the scenario duration")

    @property
    def n_bins(self) -> int:
        return -(-self.duration_s // self.bin_width_s)

    @property
    def epoch_us(self) -> int:
        return self.start_s * 1_000_000

    @property
    def bin_width_us(self) -> int:
        return self.bin_width_s * 1_000_000

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioSpec":
        d = dict(d)
        groups = [GroupSpec(**g) for g in d.pop("groups", [])]
        attack = d.pop("attack", None)
        probes = d.pop("probes", None)
        return cls(groups=groups,
                   attack=AttackSpec(**attack) if attack else None,
                   probes=ProbeSpec(**probes) if probes else ProbeSpec(),
                   **d)

    @classmethod
    def from_json(cls, src: IO[str] | str) -> "ScenarioSpec":
        text = src if isinstance(src, str) else src.read()
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Host:
    ip: str
    group: int
    kind: str
    leaf: str
    probe_class: str
    # bin index -> list of TTLs emitted in that bin (one entry per packet)
    plan: dict[int, list[int]]
    primary_ttl: int

    @property
    def packets(self) -> int:
        return sum(len(v) for v in self.plan.values())


@dataclass
class GroundTruth:
    hosts: dict[str, Host]
    spoofed: list[bool]
    attack_bins: tuple[int, int] | None

    def leaf(self, ip: str) -> str:
        return self.hosts[ip].leaf

    def label_runs(self) -> list[tuple[int, int, str]]:
        """(first index, end index exclusive, "spoofed"|"genuine") covering every record."""
        runs: list[tuple[int, int, str]] = []
        start = 0
        for i in range(1, len(self.spoofed) + 1):
            if i == len(self.spoofed) or self.spoofed[i] != self.spoofed[start]:
                runs.append((start, i, "spoofed" if self.spoofed[start] else "genuine"))
                start = i
        return runs

    def write_ndjson(self, out: IO[str]) -> None:
        head = {"attack_bins": list(self.attack_bins) if self.attack_bins else None,
                "record_count": len(self.spoofed),
                "label_runs": [list(r) for r in self.label_runs()]}
        out.write(json.dumps(head, separators=(",", ":")) + "\n")
        for ip in sorted(self.hosts, key=lambda a: ipaddress.ip_address(a).packed):
            h = self.hosts[ip]
            out.write(json.dumps({"ip": ip, "group": h.group, "kind": h.kind, "leaf": h.leaf,
                                  "probe_class": h.probe_class, "packets": h.packets},
                                 separators=(",", ":")) + "\n")


def _ip(fam: str, index: int) -> str:
    if fam == "v4":
        return str(ipaddress.IPv4Address(V4_BASE + index))
    return str(ipaddress.IPv6Address(V6_BASE + index))


def _pick_bins(rng: random.Random, n_bins: int, k: int) -> list[int]:
    # a random span holding k active bins; gaps between them are allowed
    span = min(n_bins, rng.randint(k, max(k, min(n_bins, 4 * k))))
    first = rng.randrange(0, n_bins - span + 1)
    return sorted(rng.sample(range(first, first + span), k))


def _weighted(rng: random.Random, mix: dict[str, float]) -> str:
    keys = sorted(mix)
    return rng.choices(keys, weights=[mix[k] for k in keys])[0]


def _plan_host(rng: random.Random, g: GroupSpec, n_bins: int) -> tuple[dict[int, list[int]], str, int]:
    start = rng.choice(g.starts)
    hc = rng.randint(*g.hop_range)
    ttl = start - hc

    def ppb():
        return rng.randint(*g.packets_per_bin)

    if g.kind == "single_packet":
        return {rng.randrange(n_bins): [ttl]}, B1, ttl

    if g.kind == "multi_ttl_single_bin":
        if g.same_hop_count:
            other = rng.choice([s for s in g.second_starts if s != start] or [s for s in (64, 128, 255) if s != start]) - hc
        else:
            other = ttl - rng.randint(*g.delta)
        n = max(2, ppb())
        ttls = [ttl, other] + [rng.choice((ttl, other)) for _ in range(n - 2)]
        rng.shuffle(ttls)
        return {rng.randrange(n_bins): ttls}, D1, ttl

    k = rng.randint(*g.active_bins)
    if g.kind in ("reassignment", "routing_churn", "nat"):
        k = max(k, 2)
    bins = _pick_bins(rng, n_bins, k)

    if g.kind == "stable":
        plan = {}
        cur = hc
        for b in bins:
            if g.jitter:
                cur = min(hc + g.jitter, max(hc - g.jitter, cur + rng.choice((-1, 0, 1))))
                cur = max(cur, 0)
            plan[b] = [start - cur] * ppb()
        if sum(len(v) for v in plan.values()) < 2:
            plan[bins[0]].append(plan[bins[0]][0])
        distinct = {t for v in plan.values() for t in v}
        return plan, (C1 if len(distinct) == 1 else E1), ttl

    if g.kind == "reassignment":
        if g.same_hop_count:
            other = rng.choice([s for s in g.second_starts if s != start] or [s for s in (64, 128, 255) if s != start]) - hc
        else:
            other = rng.choice([s for s in g.second_starts if s != start] or [255]) - rng.randint(*g.hop_range)
    elif g.kind == "routing_churn":
        d = rng.randint(*g.delta)
        other = ttl + d if rng.random() < 0.5 and ttl + d <= 255 else ttl - d
    else:  # nat
        other = rng.choice([s for s in g.second_starts if s != start] or [255]) - rng.randint(*g.hop_range)
    if other == ttl:
        other = ttl - 1

    if g.kind == "nat":
        plan = {}
        for b in bins:
            n = max(2, ppb())
            ttls = [ttl, other] + [rng.choice((ttl, other)) for _ in range(n - 2)]
            rng.shuffle(ttls)
            plan[b] = ttls
        return plan, E2, ttl

    j = rng.randint(1, k - 1)
    plan = {}
    for i, b in enumerate(bins):
        if i < j:
            plan[b] = [ttl] * ppb()
        elif i == j and g.transition_mixbin:
            plan[b] = [ttl, other] + [other] * (ppb() - 1)
        else:
            plan[b] = [other] * ppb()
    return plan, E1, ttl


class Scenario:
    """A planned scenario: hosts are fixed at construction, records on demand."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        rng = random.Random(spec.seed)
        self.hosts: list[Host] = []
        counters = {"v4": 0, "v6": 0}
        for gi, g in enumerate(spec.groups):
            for _ in range(g.count):
                ip = _ip(g.family, counters[g.family])
                counters[g.family] += 1
                plan, leaf, primary = _plan_host(rng, g, spec.n_bins)
                self.hosts.append(Host(ip, gi, g.kind, leaf, _weighted(rng, g.probe_mix), plan, primary))
        self._by_ip = {h.ip: h for h in self.hosts}
        self._rng_state = rng.getstate()

    def host(self, ip: str) -> Host:
        try:
            return self._by_ip[ip]
        except KeyError:
            raise KeyError(f"unknown ip {ip!r}") from None

    def generate(self) -> tuple[list[PacketRecord], GroundTruth]:
        spec = self.spec
        rng = random.Random()
        rng.setstate(self._rng_state)
        width = spec.bin_width_us
        epoch = spec.epoch_us
        end_us = epoch + spec.duration_s * 1_000_000
        rows: list[tuple[int, int, PacketRecord]] = []
        seq = 0
        for h in self.hosts:
            proto = 6
            ext_port = rng.choice((80, 443, 53, 25))
            for b, ttls in h.plan.items():
                lo = epoch + b * width
                hi = min(lo + width, end_us)
                for ttl in ttls:
                    ts = rng.randrange(lo, hi)
                    rows.append((ts, seq, PacketRecord(ts, h.ip, proto, ext_port,
                                                       rng.randrange(1024, 65536), ttl)))
                    seq += 1
        n_genuine = seq

        attack_bins = None
        a = spec.attack
        if a is not None:
            a_lo = epoch + a.start_s * 1_000_000
            a_hi = a_lo + a.duration_s * 1_000_000
            attack_bins = ((a_lo - epoch) // width, (a_hi - 1 - epoch) // width)
            if a.spoof_mode == "random":
                sources = [str(ipaddress.IPv4Address(x))
                           for x in rng.sample(range(SPOOF_LO, SPOOF_HI), a.sources)]
            else:
                pool = [h.ip for h in self.hosts]
                sources = [rng.choice(pool) for _ in range(a.sources)]
            bg_ttls = [t for h in self.hosts for t in {x for v in h.plan.values() for x in v}]
            for src in sources:
                for _ in range(a.packets_per_source):
                    if a.ttls:
                        ttl = rng.choices(a.ttls, weights=a.ttl_weights)[0]
                    else:
                        ttl = rng.choice(bg_ttls)
                    ts = rng.randrange(a_lo, a_hi)
                    rows.append((ts, seq, PacketRecord(ts, src, a.proto, rng.randrange(1024, 65536),
                                                       a.dst_port, ttl)))
                    seq += 1

        rows.sort()
        records = [r for _, _, r in rows]
        spoofed = [s >= n_genuine for _, s, _ in rows]
        truth = GroundTruth({h.ip: h for h in self.hosts}, spoofed, attack_bins)
        return records, truth

    def probe_behavior(self, ip: str) -> dict[str, list[int]]:
        """Raw reply TTLs per run for one host (empty for unresponsive hosts)."""
        h = self.host(ip)
        p = self.spec.probes
        if h.probe_class == "unresponsive":
            return {}
        rng = random.Random(f"{self.spec.seed}:probe:{ip}")
        replies = self.spec.groups[h.group].probe_replies or p.requests
        base = h.primary_ttl
        if base - p.offset < 0:
            base = p.offset
        out = {}
        for r in range(p.runs):
            if h.probe_class == "Stable":
                ttls = [base]
            elif h.probe_class == "BinStable":
                ttls = [base - (r % 2)]
            else:
                ttls = [base, base - 1] if r == 0 else [base]
            n = max(replies, len(ttls))
            seq = ttls + [rng.choice(ttls) for _ in range(n - len(ttls))]
            out[f"run{r}"] = [t - p.offset for t in seq]
        return out

    def probe_files(self) -> tuple[list[tuple[str, str]], list[tuple[str, int, str, int]]]:
        """(targets rows, replies rows) for every host and run."""
        p = self.spec.probes
        targets = []
        replies = []
        for r in range(p.runs):
            run_id = f"run{r}"
            for h in self.hosts:
                targets.extend([(run_id, h.ip)] * p.requests)
        for h in self.hosts:
            for run_id, ttls in self.probe_behavior(h.ip).items():
                r = int(run_id[3:])
                t0 = (self.spec.start_s + r * p.run_spacing_s) * 1_000_000
                for i, ttl in enumerate(ttls):
                    replies.append((run_id, t0 + 1000 * (i + 1), h.ip, ttl))
        replies.sort(key=lambda row: (int(row[0][3:]), row[1], row[2]))
        return targets, replies


def generate(spec: ScenarioSpec) -> tuple[list[PacketRecord], GroundTruth]:
    return Scenario(spec).generate()


def probe_behavior(spec: ScenarioSpec, ip: str) -> dict[str, list[int]]:
    return Scenario(spec).probe_behavior(ip)


def write_outputs(spec: ScenarioSpec, out_dir, stem: str = "trace") -> dict[str, str]:
    """Write records, probe CSVs and ground truth into ``out_dir``; returns the paths."""
    from pathlib import Path

    from ttlscope.io import atomic_write

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    scen = Scenario(spec)
    records, truth = scen.generate()
    targets, replies = scen.probe_files()
    paths = {
        "records": out / f"{stem}.csv",
        "targets": out / f"{stem}_targets.csv",
        "replies": out / f"{stem}_replies.csv",
        "truth": out / f"{stem}_truth.ndjson",
    }
    with atomic_write(paths["records"]) as f:
        f.write(HEADER + "\n")
        for rec in records:
            f.write(format_record(rec) + "\n")
    with atomic_write(paths["targets"]) as f:
        f.write("run_id,ip\n")
        for run_id, ip in targets:
            f.write(f"{run_id},{ip}\n")
    with atomic_write(paths["replies"]) as f:
        f.write("run_id,ts_us,ip,raw_ttl\n")
        for run_id, ts, ip, ttl in replies:
            f.write(f"{run_id},{ts},{ip},{ttl}\n")
    with atomic_write(paths["truth"]) as f:
        truth.write_ndjson(f)
    return {k: str(v) for k, v in paths.items()}
