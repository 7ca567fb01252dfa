import io

import pytest
from hypothesis import given, strategies as st

from ttlscope.records import (HEADER, OutOfRange, ParseError, canonical_line, format_record,
                              parse_record, read_records, V4, V6)


def test_parse_v4():
    r = parse_record("1454544000000000,203.0.113.7,6,443,52100,50")
    assert r.ttl == 50 and r.proto == 6 and r.family == V4
    assert r.ts_us == 1454544000000000 and r.ext_port == 443 and r.int_port == 52100


def test_parse_v6_canonicalises():
    r = parse_record("1454544000000000,2001:DB8:0:0::1,58,0,0,249")
    assert r.family == V6 and r.ttl == 249
    assert r.ip == "2001:db8::1"


@pytest.mark.parametrize("line,column", [
    ("1,203.0.113.7,6,443,52100,256", "ttl"),
    ("1,203.0.113.7,6,65536,52100,5", "ext_port"),
    ("1,203.0.113.7,6,443,-1,5", "int_port"),
    ("1,203.0.113.7,300,443,1,5", "proto"),
    ("-5,203.0.113.7,6,443,1,5", "ts_us"),
])
def test_out_of_range(line, column):
    with pytest.raises(OutOfRange) as exc:
        parse_record(line, 7)
    assert exc.value.column == column and exc.value.line == 7


@pytest.mark.parametrize("line,column", [
    ("x,203.0.113.7,6,443,52100,5", "ts_us"),
    ("1,203.0.113.999,6,443,52100,5", "ip"),
    ("1,203.0.113.7,tcp,443,52100,5", "proto"),
    ("1,203.0.113.7,6,443,52100", None),
])
def test_malformed(line, column):
    with pytest.raises(ParseError) as exc:
        parse_record(line, 3)
    assert exc.value.column == column
    assert "line 3" in str(exc.value)


def test_four_flow_has_no_internal_address():
    r = parse_record("1,203.0.113.7,17,53,40000,60")
    assert tuple(r.four_flow) == ("203.0.113.7", 17, 53, 40000)


def test_read_empty():
    assert list(read_records(io.BytesIO(b""))) == []


def test_read_with_header_in_order():
    data = HEADER + "\n1,10.0.0.1,6,1,2,64\n2,10.0.0.2,6,1,2,63\n3,10.0.0.3,6,1,2,62\n"
    recs = list(read_records(io.BytesIO(data.encode())))
    assert [r.ttl for r in recs] == [64, 63, 62]


def test_read_text_stream():
    recs = list(read_records(io.StringIO("1,10.0.0.1,6,1,2,64\n")))
    assert len(recs) == 1


def test_skip_policy_counts():
    data = b"1,10.0.0.1,6,1,2,64\n2,10.0.0.2,6,1,2,999\n3,10.0.0.3,6,1,2,62\n"
    reader = read_records(io.BytesIO(data), policy="skip")
    recs = list(reader)
    assert len(recs) == 2 and reader.skipped == 1
    assert reader.errors[0].line == 2 and reader.errors[0].column == "ttl"


def test_strict_policy_raises_with_position():
    data = b"1,10.0.0.1,6,1,2,64\n2,10.0.0.2,6,1,2,999\n"
    with pytest.raises(OutOfRange) as exc:
        list(read_records(io.BytesIO(data)))
    assert exc.value.line == 2


def test_reader_is_lazy():
    def lines():
        yield "1,10.0.0.1,6,1,2,64\n"
        raise AssertionError("consumed too far")

    it = iter(read_records(lines()))
    assert next(it).ttl == 64


v4 = st.integers(0, 2**32 - 1).map(lambda n: ".".join(str((n >> s) & 255) for s in (24, 16, 8, 0)))
v6 = st.lists(st.integers(0, 0xFFFF), min_size=8, max_size=8).map(
    lambda ws: ":".join(f"{w:X}" for w in ws))


@given(ts=st.integers(0, 2**62), ip=st.one_of(v4, v6), proto=st.integers(0, 255),
       ext=st.integers(0, 65535), intp=st.integers(0, 65535), ttl=st.integers(0, 255))
def test_round_trip(ts, ip, proto, ext, intp, ttl):
    line = f"{ts},{ip},{proto},{ext},{intp},{ttl}"
    parsed = parse_record(line)
    assert format_record(parsed) == canonical_line(line)
    assert parse_record(format_record(parsed)) == parsed
