"""Per-IP aggregates over fixed-width time bins.

Each IP keeps, per active bin, the packet count of every TTL seen in that bin
plus the first and last timestamp inside the bin.  That is enough to answer
every classification question and to drop whole bins exactly, without keeping
anything per packet.
"""

from __future__ import annotations

import gc
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from ttlscope.records import PacketRecord, family

DEFAULT_BIN_WIDTH_US = 600 * 1_000_000
SNAPSHOT_VERSION = 1


class RecordBeforeEpoch(ValueError):
    pass


class ConfigMismatch(ValueError):
    pass


class BinCell:
    """TTL counts and time span of one IP inside one bin."""

    __slots__ = ("ttls", "first", "last")

    def __init__(self, ttls: dict[int, int], first: int, last: int):
        self.ttls = ttls
        self.first = first
        self.last = last

    def __eq__(self, other):
        if not isinstance(other, BinCell):
            return NotImplemented
        return self.ttls == other.ttls and self.first == other.first and self.last == other.last

    def __repr__(self):
        return f"BinCell({self.ttls!r}, {self.first}, {self.last})"

    def copy(self) -> "BinCell":
        return BinCell(dict(self.ttls), self.first, self.last)

    @property
    def packets(self) -> int:
        return sum(self.ttls.values())


@dataclass(eq=True, slots=True)
class IpState:
    packet_count: int
    first_seen: int
    last_seen: int
    bins: dict[int, BinCell] = field(default_factory=dict)

    @property
    def ttl_histogram(self) -> Counter:
        hist: Counter = Counter()
        for cell in self.bins.values():
            hist.update(cell.ttls)
        return hist

    @property
    def distinct_ttls(self) -> frozenset[int]:
        out: set[int] = set()
        for cell in self.bins.values():
            out.update(cell.ttls)
        return frozenset(out)

    def ordered_bins(self) -> list[tuple[int, frozenset[int]]]:
        """(bin index, distinct TTL set) in ascending bin order."""
        return [(b, frozenset(self.bins[b].ttls)) for b in sorted(self.bins)]

    def copy(self) -> "IpState":
        return IpState(self.packet_count, self.first_seen, self.last_seen,
                       {b: c.copy() for b, c in self.bins.items()})


def observation_duration(s: IpState) -> int:
    """Microseconds between the first and the last packet of an IP."""
    return s.last_seen - s.first_seen


def active_bin_count(s: IpState) -> int:
    return len(s.bins)


class StateTable:
    """IP -> IpState plus the binning configuration.

    ``epoch_us`` may be left as None; it is then fixed by the first ingested
    record, rounded down to a whole bin.  Tables built in shards must share an
    explicit epoch to be mergeable.

    Packet counts per (bin, proto, internal port) are tracked table-wide for
    the destination-port concentration metric, keyed by the packed integer
    ``bin << 24 | proto << 16 | port``.
    """

    def __init__(self, epoch_us: int | None = None, bin_width_us: int = DEFAULT_BIN_WIDTH_US,
                 track_ports: bool = True):
        if bin_width_us <= 0:
            raise ValueError("bin width must be positive")
        self.epoch_us = epoch_us
        self.bin_width_us = bin_width_us
        self.track_ports = track_ports
        self.ips: dict[str, IpState] = {}
        self.record_count = 0
        self.port_counts: dict[int, int] = {}

    def __repr__(self):
        return (f"StateTable(epoch_us={self.epoch_us}, bin_width_us={self.bin_width_us}, "
                f"ips={len(self.ips)}, records={self.record_count})")

    def __eq__(self, other):
        if not isinstance(other, StateTable):
            return NotImplemented
        return (self.epoch_us == other.epoch_us
                and self.bin_width_us == other.bin_width_us
                and self.record_count == other.record_count
                and self.ips == other.ips
                and self.port_counts == other.port_counts)

    def __len__(self):
        return len(self.ips)

    def __contains__(self, ip):
        return ip in self.ips

    def __getitem__(self, ip) -> IpState:
        return self.ips[ip]

    def items(self):
        return self.ips.items()

    @property
    def total_packets(self) -> int:
        return sum(s.packet_count for s in self.ips.values())

    def bin_of(self, ts_us: int) -> int:
        if self.epoch_us is None:
            raise ValueError("epoch not set")
        return (ts_us - self.epoch_us) // self.bin_width_us

    def bin_start_us(self, b: int) -> int:
        return self.epoch_us + b * self.bin_width_us

    def ingest(self, rec: PacketRecord) -> "StateTable":
        self.ingest_many((rec,))
        return self

    def ingest_many(self, records: Iterable[PacketRecord]) -> int:
        """Fold records into the table; returns how many were ingested.

        The cyclic garbage collector is paused meanwhile: ingestion only builds
        acyclic containers, and repeated full scans of a growing table would
        otherwise dominate the run time.
        """
        was_enabled = gc.isenabled()
        gc.disable()
        try:
            return self._ingest(records)
        finally:
            if was_enabled:
                gc.enable()

    def _ingest(self, records: Iterable[PacketRecord]) -> int:
        ips = self.ips
        width = self.bin_width_us
        epoch = self.epoch_us
        ports = self.port_counts if self.track_ports else None
        n = 0
        for ts, ip, proto, _ext, int_port, ttl in records:
            if epoch is None:
                epoch = self.epoch_us = (ts // width) * width
            if ts < epoch:
                self.record_count += n
                raise RecordBeforeEpoch(f"record at {ts} precedes epoch {epoch}")
            b = (ts - epoch) // width
            s = ips.get(ip)
            if s is None:
                ips[ip] = IpState(1, ts, ts, {b: BinCell({ttl: 1}, ts, ts)})
            else:
                s.packet_count += 1
                if ts < s.first_seen:
                    s.first_seen = ts
                elif ts > s.last_seen:
                    s.last_seen = ts
                cell = s.bins.get(b)
                if cell is None:
                    s.bins[b] = BinCell({ttl: 1}, ts, ts)
                else:
                    t = cell.ttls
                    t[ttl] = t.get(ttl, 0) + 1
                    if ts < cell.first:
                        cell.first = ts
                    elif ts > cell.last:
                        cell.last = ts
            if ports is not None:
                key = (b << 24) | (proto << 16) | int_port
                ports[key] = ports.get(key, 0) + 1
            n += 1
        self.record_count += n
        return n

    def copy(self) -> "StateTable":
        out = StateTable(self.epoch_us, self.bin_width_us, self.track_ports)
        out.ips = {ip: s.copy() for ip, s in self.ips.items()}
        out.record_count = self.record_count
        out.port_counts = dict(self.port_counts)
        return out

    def ports_in_bins(self, lo: int, hi: int) -> Counter:
        """Packets per (proto, internal port) over bins lo..hi inclusive."""
        out: Counter = Counter()
        for key, c in self.port_counts.items():
            if lo <= key >> 24 <= hi:
                out[((key >> 16) & 0xFF, key & 0xFFFF)] += c
        return out

    def bins_range(self) -> tuple[int, int] | None:
        lo = hi = None
        for s in self.ips.values():
            for b in s.bins:
                if lo is None or b < lo:
                    lo = b
                if hi is None or b > hi:
                    hi = b
        return None if lo is None else (lo, hi)

    def by_family(self, fam: str) -> Iterator[tuple[str, IpState]]:
        for ip, s in self.ips.items():
            if family(ip) == fam:
                yield ip, s


def ingest(table: StateTable, rec: PacketRecord) -> StateTable:
    return table.ingest(rec)


def build_table(records: Iterable[PacketRecord], epoch_us: int | None = None,
                bin_width_us: int = DEFAULT_BIN_WIDTH_US, track_ports: bool = True) -> StateTable:
    table = StateTable(epoch_us, bin_width_us, track_ports)
    table.ingest_many(records)
    return table


def _merge_cell(into: BinCell, other: BinCell) -> None:
    t = into.ttls
    for ttl, c in other.ttls.items():
        t[ttl] = t.get(ttl, 0) + c
    into.first = min(into.first, other.first)
    into.last = max(into.last, other.last)


def merge(a: StateTable, b: StateTable) -> StateTable:
    """Combine two tables built over disjoint record sets. Inputs are not modified."""
    if a.bin_width_us != b.bin_width_us:
        raise ConfigMismatch(f"bin widths differ: {a.bin_width_us} vs {b.bin_width_us}")
    if a.epoch_us is not None and b.epoch_us is not None and a.epoch_us != b.epoch_us:
        raise ConfigMismatch(f"epochs differ: {a.epoch_us} vs {b.epoch_us}")
    out = a.copy()
    if out.epoch_us is None:
        out.epoch_us = b.epoch_us
    out.track_ports = a.track_ports or b.track_ports
    out.record_count += b.record_count
    for ip, sb in b.ips.items():
        sa = out.ips.get(ip)
        if sa is None:
            out.ips[ip] = sb.copy()
            continue
        sa.packet_count += sb.packet_count
        sa.first_seen = min(sa.first_seen, sb.first_seen)
        sa.last_seen = max(sa.last_seen, sb.last_seen)
        for bi, cell in sb.bins.items():
            mine = sa.bins.get(bi)
            if mine is None:
                sa.bins[bi] = cell.copy()
            else:
                _merge_cell(mine, cell)
    for key, c in b.port_counts.items():
        out.port_counts[key] = out.port_counts.get(key, 0) + c
    return out


def excise_bins(table: StateTable, bins: Iterable[int]) -> StateTable:
    """Copy of the table as if no record had fallen into ``bins``."""
    drop = set(bins)
    out = StateTable(table.epoch_us, table.bin_width_us, table.track_ports)
    if not drop:
        return table.copy()
    total = 0
    for ip, s in table.ips.items():
        kept = {b: c.copy() for b, c in s.bins.items() if b not in drop}
        if not kept:
            continue
        count = sum(c.packets for c in kept.values())
        first = min(c.first for c in kept.values())
        last = max(c.last for c in kept.values())
        out.ips[ip] = IpState(count, first, last, kept)
        total += count
    out.record_count = total
    out.port_counts = {k: c for k, c in table.port_counts.items() if k >> 24 not in drop}
    return out


# --- NDJSON snapshots -------------------------------------------------------

def dump_snapshot(table: StateTable, out: IO[str]) -> None:
    """Write a table as NDJSON: one metadata line, then one object per IP.

    Per IP: ``ip, packet_count, first_seen, last_seen, bins`` where ``bins``
    maps a bin index to ``[[ttl, count], ...]``; ``bin_span`` carries the
    per-bin first/last timestamps needed for exact excision.
    """
    meta = {
        "snapshot_version": SNAPSHOT_VERSION,
        "epoch_us": table.epoch_us,
        "bin_width_us": table.bin_width_us,
        "record_count": table.record_count,
        "track_ports": table.track_ports,
        "port_counts": [[k >> 24, (k >> 16) & 0xFF, k & 0xFFFF, c]
                        for k, c in sorted(table.port_counts.items())],
    }
    out.write(json.dumps(meta, separators=(",", ":")) + "\n")
    for ip in sorted(table.ips):
        s = table.ips[ip]
        obj = {
            "ip": ip,
            "packet_count": s.packet_count,
            "first_seen": s.first_seen,
            "last_seen": s.last_seen,
            "bins": {str(b): sorted([t, c] for t, c in s.bins[b].ttls.items()) for b in sorted(s.bins)},
            "bin_span": {str(b): [s.bins[b].first, s.bins[b].last] for b in sorted(s.bins)},
        }
        out.write(json.dumps(obj, separators=(",", ":")) + "\n")


def load_snapshot(src: IO[str]) -> StateTable:
    lines = iter(src)
    meta = json.loads(next(lines))
    if meta.get("snapshot_version") != SNAPSHOT_VERSION:
        raise ValueError(f"unsupported snapshot version {meta.get('snapshot_version')!r}")
    table = StateTable(meta["epoch_us"], meta["bin_width_us"], meta.get("track_ports", True))
    table.record_count = meta["record_count"]
    table.port_counts = {(b << 24) | (p << 16) | q: c for b, p, q, c in meta.get("port_counts", [])}
    for line in lines:
        if not line.strip():
            continue
        obj = json.loads(line)
        spans = obj.get("bin_span", {})
        bins = {}
        for b, pairs in obj["bins"].items():
            first, last = spans.get(b, (obj["first_seen"], obj["last_seen"]))
            bins[int(b)] = BinCell({t: c for t, c in pairs}, first, last)
        table.ips[obj["ip"]] = IpState(obj["packet_count"], obj["first_seen"], obj["last_seen"], bins)
    return table
