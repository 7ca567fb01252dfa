"""Empirical TTL / Hop Count distributions and collision probabilities."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import IO

import numpy as np

from ttlscope.hopcount import HOP_COUNT
from ttlscope.records import family
from ttlscope.state import StateTable

TTL = "ttl"
HOP = "hop_count"
PER_IP = "per_ip"
PER_PACKET = "per_packet"

DEFAULT_PORTS = 65000


class EmptyTable(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class EmpiricalDistribution:
    domain: str
    counting: str
    p: np.ndarray

    def __post_init__(self):
        self.p.setflags(write=False)

    @classmethod
    def from_counts(cls, counts, domain: str = TTL, counting: str = PER_IP) -> "EmpiricalDistribution":
        arr = np.zeros(256, dtype=float)
        if isinstance(counts, dict):
            for v, c in counts.items():
                arr[v] += c
        else:
            a = np.asarray(counts, dtype=float)
            arr[: len(a)] = a
        total = arr.sum()
        if total <= 0:
            raise EmptyTable("no mass")
        return cls(domain, counting, arr / total)

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.p)

    def ecdf(self) -> np.ndarray:
        return np.cumsum(self.p)

    def to_csv(self, out: IO[str]) -> None:
        out.write("value,probability\n")
        for v in range(256):
            out.write(f"{v},{float(self.p[v])!r}\n")


def build(table: StateTable, domain: str = TTL, counting: str = PER_IP,
          fam: str | None = None) -> EmpiricalDistribution:
    """Distribution of TTLs or Hop Counts over the table.

    ``per_ip``: each IP contributes each of its distinct values once.
    ``per_packet``: each packet contributes its value.
    """
    if domain not in (TTL, HOP):
        raise ValueError(f"unknown domain {domain!r}")
    if counting not in (PER_IP, PER_PACKET):
        raise ValueError(f"unknown counting {counting!r}")
    counts = np.zeros(256, dtype=np.int64)
    for ip, s in table.items():
        if fam is not None and family(ip) != fam:
            continue
        if counting == PER_IP:
            vals = s.distinct_ttls
            if domain == HOP:
                vals = {HOP_COUNT[t] for t in vals}
            for v in vals:
                counts[v] += 1
        else:
            for t, c in s.ttl_histogram.items():
                counts[HOP_COUNT[t] if domain == HOP else t] += c
    if counts.sum() == 0:
        raise EmptyTable("no observations to build a distribution from")
    return EmpiricalDistribution(domain, counting, counts / counts.sum())


def _shift_product(p: np.ndarray, k: int) -> float:
    """sum_i p[i] * p[i+k]"""
    if k == 0:
        return float(np.dot(p, p))
    return float(np.dot(p[k:], p[:-k]))


def collision_exact(d: EmpiricalDistribution, n: int) -> float:
    """Chance that two draws are equal or exactly n apart.

    For n=0 only the same-value term is returned.
    """
    if not 0 <= n <= 255:
        raise ValueError("n outside [0, 255]")
    p = d.p
    same = _shift_product(p, 0)
    if n == 0:
        return same
    return same + 2.0 * _shift_product(p, n)


def collision_window(d: EmpiricalDistribution, n: int) -> float:
    """Chance that two draws differ by at most n (what a +-n filter accepts)."""
    if not 0 <= n <= 255:
        raise ValueError("n outside [0, 255]")
    p = d.p
    total = _shift_product(p, 0) + 2.0 * sum(_shift_product(p, k) for k in range(1, n + 1))
    if n == 255:
        # every pair of values lies within 255 of each other
        return 1.0
    return min(total, 1.0)


def flow_collision(n: int, ports: int = DEFAULT_PORTS) -> float:
    """Birthday-problem chance that n users pick a shared ephemeral port.

    1 - n! * C(ports, n) / ports**n, evaluated in log space.  Returns 1.0 when
    n > ports (see ``flow_collision_saturated``).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if ports < 1:
        raise ValueError("ports must be >= 1")
    if n > ports:
        return 1.0
    # n! C(P, n) / P**n = prod_{i<n} (1 - i/P); summing log1p terms keeps full precision
    log_no_collision = math.fsum(math.log1p(-i / ports) for i in range(1, n))
    return -math.expm1(log_no_collision)


def flow_collision_saturated(n: int, ports: int = DEFAULT_PORTS) -> bool:
    return n > ports


def top_k(d: EmpiricalDistribution, k: int) -> list[tuple[int, float]]:
    """Largest-share values, ties broken by the smaller value."""
    if k < 1:
        raise ValueError("k must be >= 1")
    items = [(v, float(d.p[v])) for v in np.flatnonzero(d.p)]
    items.sort(key=lambda it: (-it[1], it[0]))
    return items[:k]
