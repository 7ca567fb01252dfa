"""TTL stability decision tree, population report and amplitude metrics.

The tree fans out unremarkable IPs early::

    A  all IPs
    B1 single packet            | B2 more than one packet
    C1 one distinct TTL         | C2 several TTLs
    D1 one active bin           | D2 several active bins
    E1 section-stable           | E2 overlapping

An IP is section-stable when no two neighbouring active bins are both
mixbins (a mixbin holds more than one distinct TTL for the IP).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

from ttlscope.hopcount import HOP_COUNT
from ttlscope.records import V4, V6, family
from ttlscope.state import IpState, StateTable

B1 = "B1_SinglePacket"
C1 = "C1_SingleTTL"
D1 = "D1_MultiTTL_SingleBin"
E1 = "E1_SectionStable"
E2 = "E2_Overlapping"
LEAVES = (B1, C1, D1, E1, E2)

ACTIVITY = "activity"
WALLCLOCK = "wallclock"


@dataclass(frozen=True)
class StabilityClass:
    leaf: str
    hc_single: bool


def section_stable(bins: Sequence[frozenset[int] | set[int]],
                   indices: Sequence[int] | None = None) -> bool:
    """True iff no two adjacent bins are both mixbins.

    ``bins`` are the TTL sets of the IP's active bins in time order.  With
    ``indices`` given, bins count as adjacent only when their indices differ by
    one (wall-clock adjacency); otherwise neighbours in activity order are
    adjacent.
    """
    for k in range(1, len(bins)):
        if len(bins[k]) > 1 and len(bins[k - 1]) > 1:
            if indices is None or indices[k] - indices[k - 1] == 1:
                return False
    return True


def classify(s: IpState, adjacency: str = ACTIVITY) -> StabilityClass:
    ttls = s.distinct_ttls
    hc_single = len({HOP_COUNT[t] for t in ttls}) == 1
    if s.packet_count == 1:
        return StabilityClass(B1, hc_single)
    if len(ttls) == 1:
        return StabilityClass(C1, True)
    if len(s.bins) == 1:
        return StabilityClass(D1, hc_single)
    order = sorted(s.bins)
    sets = [s.bins[b].ttls.keys() for b in order]
    if adjacency == ACTIVITY:
        stable = section_stable(sets)
    elif adjacency == WALLCLOCK:
        stable = section_stable(sets, order)
    else:
        raise ValueError(f"unknown adjacency {adjacency!r}")
    return StabilityClass(E1 if stable else E2, hc_single)


def ttl_amplitude(s: IpState) -> int:
    ttls = s.distinct_ttls
    return max(ttls) - min(ttls)


def hc_amplitude(s: IpState) -> int:
    hcs = [HOP_COUNT[t] for t in s.distinct_ttls]
    return max(hcs) - min(hcs)


# --- population report ------------------------------------------------------

# Table rows in display order: (key, label, base) where base is "A" or "B2"
ROWS = (
    ("A", "A All", None),
    ("B1", "B1 Single-packet IPs", "A"),
    ("B2", "B2 IPs >1 packet", "B2"),
    ("C1", "C1 IPs with 1 TTL", "B2"),
    ("C2", "C2 IPs >1 TTL", "B2"),
    ("D1", "D1 IPs with 1 active bin", "B2"),
    ("D1_hc1", "  IPs with 1 HC", "B2"),
    ("D1_hcN", "  IPs with >1 HC", "B2"),
    ("D2", "D2 IPs with >1 active bin", "B2"),
    ("E1", "E1 section-stable TTLs", "B2"),
    ("E1_hc1", "  IPs with 1 HC", "B2"),
    ("E1_hcN", "  IPs with >1 HC", "B2"),
    ("E2", "E2 Overlapping TTLs", "B2"),
    ("E2_hc1", "  IPs with 1 HC", "B2"),
    ("E2_hcN", "  IPs with >1 HC", "B2"),
)

_LEAF_KEY = {B1: "B1", C1: "C1", D1: "D1", E1: "E1", E2: "E2"}


@dataclass
class StabilityReport:
    """Per-family counts for every row of the decision-tree table.

    Percentages: B1 against all IPs, everything below B2 against multi-packet
    IPs (B2 itself is therefore 100%).
    """

    counts: dict[str, dict[str, int]] = field(
        default_factory=lambda: {V4: _zero_counts(), V6: _zero_counts()})
    adjacency: str = ACTIVITY

    def add(self, fam: str, cls: StabilityClass) -> None:
        c = self.counts[fam]
        key = _LEAF_KEY[cls.leaf]
        c[key] += 1
        if key in ("D1", "E1", "E2"):
            c[f"{key}_hc1" if cls.hc_single else f"{key}_hcN"] += 1

    def finalize(self) -> "StabilityReport":
        for c in self.counts.values():
            c["D2"] = c["E1"] + c["E2"]
            c["C2"] = c["D1"] + c["D2"]
            c["B2"] = c["C1"] + c["C2"]
            c["A"] = c["B1"] + c["B2"]
        return self

    def percent(self, fam: str, key: str) -> float | None:
        base_key = dict((k, b) for k, _, b in ROWS)[key]
        if base_key is None:
            return None
        base = self.counts[fam][base_key]
        return 100.0 * self.counts[fam][key] / base if base else 0.0

    def reconciles(self) -> bool:
        for c in self.counts.values():
            if not (c["B1"] + c["B2"] == c["A"] and c["C1"] + c["C2"] == c["B2"]
                    and c["D1"] + c["D2"] == c["C2"] and c["E1"] + c["E2"] == c["D2"]
                    and c["D1_hc1"] + c["D1_hcN"] == c["D1"]
                    and c["E1_hc1"] + c["E1_hcN"] == c["E1"]
                    and c["E2_hc1"] + c["E2_hcN"] == c["E2"]):
                return False
        return True

    def to_dict(self) -> dict:
        rows = []
        for key, label, _ in ROWS:
            row = {"key": key, "category": label}
            for fam in (V4, V6):
                row[f"{fam}_count"] = self.counts[fam][key]
                pct = self.percent(fam, key)
                row[f"{fam}_percent"] = None if pct is None else round(pct, 4)
            rows.append(row)
        return {"adjacency": self.adjacency, "rows": rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["category", "ipv4_count", "ipv4_percent", "ipv6_count", "ipv6_percent"])
        for row in self.to_dict()["rows"]:
            w.writerow([row["category"].strip(), row["v4_count"], _fmt(row["v4_percent"]),
                        row["v6_count"], _fmt(row["v6_percent"])])
        return buf.getvalue()


def _fmt(x):
    return "" if x is None else f"{x:.2f}"


def _zero_counts() -> dict[str, int]:
    return {key: 0 for key, _, _ in ROWS}


def summarize(table: StateTable, adjacency: str = ACTIVITY) -> StabilityReport:
    report = StabilityReport(adjacency=adjacency)
    for ip, s in table.items():
        report.add(family(ip), classify(s, adjacency))
    return report.finalize()


def classify_table(table: StateTable, adjacency: str = ACTIVITY) -> dict[str, StabilityClass]:
    return {ip: classify(s, adjacency) for ip, s in table.items()}


def amplitude_rows(table: StateTable, adjacency: str = ACTIVITY) -> list[tuple[str, str, str, int, int]]:
    """(ip, family, leaf, ttl_amplitude, hc_amplitude) for every multi-packet IP."""
    rows = []
    for ip, s in table.items():
        if s.packet_count < 2:
            continue
        cls = classify(s, adjacency)
        rows.append((ip, family(ip), cls.leaf, ttl_amplitude(s), hc_amplitude(s)))
    return rows
