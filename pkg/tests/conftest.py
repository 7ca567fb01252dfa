import pytest

from ttlscope.records import PacketRecord
from ttlscope.state import StateTable

S = 1_000_000  # one second in microseconds
BIN = 600 * S


def rec(ts_s=0, ip="203.0.113.7", ttl=50, proto=6, ext_port=443, int_port=52100):
    return PacketRecord(int(ts_s * S), ip, proto, ext_port, int_port, ttl)


def table_from(bins_by_ip, epoch=0):
    """Build a table from {ip: [[ttl, ...] per bin index 0, 1, ...]} (None skips a bin)."""
    t = StateTable(epoch_us=epoch)
    for ip, bins in bins_by_ip.items():
        for b, ttls in enumerate(bins):
            if ttls is None:
                continue
            for i, ttl in enumerate(ttls):
                t.ingest(PacketRecord(epoch + b * BIN + i * S, ip, 6, 443, 50000, ttl))
    return t


@pytest.fixture
def empty_table():
    return StateTable(epoch_us=0)


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
