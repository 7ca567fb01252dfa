"""Packet observation records and the flat CSV format they travel in.

One row per observed packet::

    ts_us,ip,proto,ext_port,int_port,ttl

No quoting, LF line endings, an optional header row with exactly those names.
Addresses are canonicalised on parse (dotted quad for IPv4, RFC 5952 for IPv6)
and used as plain strings everywhere else in the package.
"""

from __future__ import annotations

import io
import ipaddress
from typing import IO, Iterable, Iterator, NamedTuple

COLUMNS = ("ts_us", "ip", "proto", "ext_port", "int_port", "ttl")
HEADER = ",".join(COLUMNS)

V4 = "v4"
V6 = "v6"

# canonical-form cache; bounded so a stream of unique spoofed sources cannot grow it forever
_CANON_CACHE: dict[str, str] = {}
_CANON_CACHE_MAX = 1 << 20


class ParseError(ValueError):
    """A record row could not be parsed.

    ``line`` is 1-based (None when parsing a bare string), ``column`` is the
    offending column name.
    """

    def __init__(self, message: str, line: int | None = None, column: str | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column {column}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(prefix + message)


class OutOfRange(ParseError):
    pass


class PacketRecord(NamedTuple):
    ts_us: int
    ip: str
    proto: int
    ext_port: int
    int_port: int
    ttl: int

    @property
    def family(self) -> str:
        return family(self.ip)

    @property
    def four_flow(self) -> "FourFlow":
        return FourFlow(self.ip, self.proto, self.ext_port, self.int_port)


class FourFlow(NamedTuple):
    """External IP, protocol and both ports; the internal address is never known."""

    ip: str
    proto: int
    ext_port: int
    int_port: int


def canonical_ip(text: str) -> str:
    """Return the canonical textual form of an IPv4 or IPv6 address."""
    try:
        return _CANON_CACHE[text]
    except KeyError:
        pass
    canon = str(ipaddress.ip_address(text.strip()))
    if len(_CANON_CACHE) >= _CANON_CACHE_MAX:
        _CANON_CACHE.clear()
    _CANON_CACHE[text] = canon
    return canon


def family(ip: str) -> str:
    """Address family of a canonical address string."""
    return V6 if ":" in ip else V4


def ip_key(ip: str) -> tuple[str, bytes]:
    """(family, packed bytes) for a canonical address; the byte form of an IpKey."""
    addr = ipaddress.ip_address(ip)
    return (V6 if addr.version == 6 else V4), addr.packed


def _int_field(value: str, column: str, lo: int, hi: int, line: int | None) -> int:
    try:
        n = int(value)
    except ValueError:
        raise ParseError(f"not an integer: {value!r}", line, column) from None
    if n < lo or n > hi:
        raise OutOfRange(f"{n} outside [{lo}, {hi}]", line, column)
    return n


def parse_record(line: str, lineno: int | None = None) -> PacketRecord:
    """Parse one CSV row into a validated record."""
    parts = line.rstrip("\r\n").split(",")
    if len(parts) != 6:
        raise ParseError(f"expected 6 columns, got {len(parts)}", lineno, None)
    ts_s, ip_s, proto_s, ext_s, int_s, ttl_s = parts
    try:
        ts = int(ts_s)
    except ValueError:
        raise ParseError(f"not an integer: {ts_s!r}", lineno, "ts_us") from None
    if ts < 0:
        raise OutOfRange(f"{ts} is negative", lineno, "ts_us")
    try:
        ip = canonical_ip(ip_s)
    except ValueError:
        raise ParseError(f"unparseable address {ip_s!r}", lineno, "ip") from None
    return PacketRecord(
        ts,
        ip,
        _int_field(proto_s, "proto", 0, 255, lineno),
        _int_field(ext_s, "ext_port", 0, 65535, lineno),
        _int_field(int_s, "int_port", 0, 65535, lineno),
        _int_field(ttl_s, "ttl", 0, 255, lineno),
    )


def format_record(rec: PacketRecord) -> str:
    """Serialize a record to its canonical CSV row (no line terminator)."""
    return f"{rec.ts_us},{rec.ip},{rec.proto},{rec.ext_port},{rec.int_port},{rec.ttl}"


def canonical_line(line: str) -> str:
    return format_record(parse_record(line))


class RecordReader:
    """Streaming iterator over the records of a CSV source.

    ``policy`` is ``"strict"`` (raise on the first bad row) or ``"skip"``
    (drop bad rows; ``skipped`` counts them and ``errors`` keeps the first few).
    """

    def __init__(self, source: IO[bytes] | IO[str] | Iterable[str], policy: str = "strict",
                 max_errors_kept: int = 100):
        if policy not in ("strict", "skip"):
            raise ValueError(f"unknown policy {policy!r}")
        self.source = source
        self.policy = policy
        self.skipped = 0
        self.errors: list[ParseError] = []
        self._max_errors_kept = max_errors_kept

    def _lines(self) -> Iterator[str]:
        src = self.source
        if isinstance(src, (io.RawIOBase, io.BufferedIOBase)) or "b" in getattr(src, "mode", ""):
            src = io.TextIOWrapper(src, encoding="utf-8", newline="")  # type: ignore[arg-type]
        for raw in src:
            if isinstance(raw, bytes):
                raw = raw.decode("utf-8")
            yield raw

    def __iter__(self) -> Iterator[PacketRecord]:
        for lineno, line in enumerate(self._lines(), start=1):
            if lineno == 1 and line.rstrip("\r\n") == HEADER:
                continue
            if not line.strip():
                continue
            try:
                yield parse_record(line, lineno)
            except ParseError as exc:
                if self.policy == "strict":
                    raise
                self.skipped += 1
                if len(self.errors) < self._max_errors_kept:
                    self.errors.append(exc)


def read_records(source, policy: str = "strict") -> RecordReader:
    return RecordReader(source, policy)


def write_records(records: Iterable[PacketRecord], out: IO[str], header: bool = True) -> int:
    n = 0
    if header:
        out.write(HEADER + "\n")
    for rec in records:
        out.write(format_record(rec) + "\n")
        n += 1
    return n
