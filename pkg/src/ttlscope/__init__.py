"""Passive TTL / Hop-Count analysis toolkit.

Ingests per-packet TTL observations, classifies per-IP TTL stability, computes
collision probabilities, flags spoofed-flood anomalies and correlates passive
state with probe, subnet and BGP data.
"""

from ttlscope.hopcount import HopEstimate, estimate
from ttlscope.records import PacketRecord, ParseError, parse_record, read_records
from ttlscope.state import IpState, StateTable

__all__ = [
    "HopEstimate",
    "IpState",
    "PacketRecord",
    "ParseError",
    "StateTable",
    "estimate",
    "parse_record",
    "read_records",
]

__version__ = "0.1.0"
