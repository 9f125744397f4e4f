import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinevent.errors import (
    InvalidWindow,
    MalformedHeader,
    NonMonotonicTime,
    OutOfBounds,
    RejectedInvariant,
    TruncatedRecord,
)
from thinevent.events import (
    HEADER,
    Event,
    EventRecording,
    decode_binary,
    decode_csv,
    encode_binary,
    encode_csv,
    read_recording,
    slice_by_time,
    write_recording,
)


@st.composite
def recordings(draw, max_events=60):
    w = draw(st.integers(1, 300))
    h = draw(st.integers(1, 300))
    n = draw(st.integers(0, max_events))
    ts = sorted(draw(st.lists(st.integers(0, 2**62), min_size=n, max_size=n)))
    xs = draw(st.lists(st.integers(0, w - 1), min_size=n, max_size=n))
    ys = draw(st.lists(st.integers(0, h - 1), min_size=n, max_size=n))
    ps = draw(st.lists(st.sampled_from([1, -1]), min_size=n, max_size=n))
    return EventRecording(w, h, ts, xs, ys, ps)


def _header(w, h, n, magic=b"SKYS", version=1):
    return HEADER.pack(magic, version, w, h, n)


def _record(t, x, y, p):
    return struct.pack("<QHHBB", t, x, y, p, 0)


def test_empty_file_decodes_to_empty_recording(tmp_path):
    path = tmp_path / "empty.skys"
    path.write_bytes(_header(8, 8, 0))
    rec = read_recording(path)
    assert (rec.width, rec.height, len(rec)) == (8, 8, 0)


def test_two_records_decode_with_polarity():
    data = _header(8, 8, 2) + _record(10, 1, 2, 1) + _record(20, 3, 4, 0)
    rec = decode_binary(data)
    assert list(rec) == [Event(1, 2, 10, 1), Event(3, 4, 20, -1)]


def test_out_of_bounds_record():
    with pytest.raises(OutOfBounds):
        decode_binary(_header(8, 8, 1) + _record(0, 8, 0, 1))


def test_empty_recording_is_header_only():
    data = encode_binary(EventRecording.empty(8, 8))
    assert len(data) == HEADER.size == 18


def test_record_size():
    one = encode_binary(EventRecording(4, 4, [5], [1], [1], [1]))
    assert len(one) - HEADER.size == 14


def test_bad_magic_and_version():
    with pytest.raises(MalformedHeader):
        decode_binary(_header(8, 8, 0, magic=b"SKYZ"))
    with pytest.raises(MalformedHeader):
        decode_binary(_header(8, 8, 0, version=2))


def test_truncated_inputs():
    full = _header(8, 8, 2) + _record(10, 1, 2, 1) + _record(20, 3, 4, 0)
    for cut in (3, HEADER.size + 5, len(full) - 1):
        with pytest.raises(TruncatedRecord):
            decode_binary(full[:cut])


def test_trailing_garbage_rejected():
    with pytest.raises(MalformedHeader):
        decode_binary(_header(8, 8, 0) + b"\x00")


def test_non_monotonic_file():
    with pytest.raises(NonMonotonicTime):
        decode_binary(_header(8, 8, 2) + _record(20, 1, 1, 1) + _record(10, 1, 1, 1))


def test_write_rejects_invalid_recording(tmp_path):
    bad = EventRecording(8, 8, [20, 10], [0, 0], [0, 0], [1, 1], validate=False)
    path = tmp_path / "bad.skys"
    with pytest.raises(RejectedInvariant):
        write_recording(bad, path)
    assert not path.exists()


def test_constructor_validates():
    with pytest.raises(NonMonotonicTime):
        EventRecording(8, 8, [2, 1], [0, 0], [0, 0], [1, 1])
    with pytest.raises(RejectedInvariant):
        EventRecording(8, 8, [1], [0], [0], [0])


def test_equal_timestamps_keep_file_order():
    rec = EventRecording(4, 4, [5, 5, 5], [0, 1, 2], [0, 0, 0], [1, -1, 1])
    back = decode_binary(encode_binary(rec))
    assert back.x.tolist() == [0, 1, 2]


def test_duration():
    assert EventRecording.empty(2, 2).duration_us == 0
    assert EventRecording(2, 2, [7], [0], [0], [1]).duration_us == 0
    assert EventRecording(2, 2, [7, 19], [0, 1], [0, 0], [1, 1]).duration_us == 12


@settings(max_examples=60, deadline=None)
@given(recordings())
def test_binary_round_trip(rec):
    assert decode_binary(encode_binary(rec)) == rec


@settings(max_examples=40, deadline=None)
@given(recordings(max_events=30))
def test_csv_round_trip(rec):
    assert decode_csv(encode_csv(rec), rec.width, rec.height) == rec


def test_file_round_trip_both_formats(tmp_path):
    rec = EventRecording(16, 9, [0, 3, 3, 99], [0, 15, 2, 7], [8, 0, 4, 4], [1, -1, -1, 1])
    write_recording(rec, tmp_path / "a.skys")
    write_recording(rec, tmp_path / "a.csv")
    assert read_recording(tmp_path / "a.skys") == rec
    assert read_recording(tmp_path / "a.csv", width=16, height=9) == rec
    assert (tmp_path / "a.csv").read_text().splitlines()[:2] == ["t_us,x,y,polarity", "0,0,8,1"]


def test_csv_errors():
    with pytest.raises(MalformedHeader):
        decode_csv("t,x,y,p\n", 4, 4)
    with pytest.raises(MalformedHeader):
        decode_csv("t_us,x,y,polarity\n1,0,0,2\n", 4, 4)
    with pytest.raises(TruncatedRecord):
        decode_csv("t_us,x,y,polarity\n1,0,0\n", 4, 4)
    with pytest.raises(OutOfBounds):
        decode_csv("t_us,x,y,polarity\n1,4,0,1\n", 4, 4)


def test_slice_examples():
    rec = EventRecording(4, 4, [5, 10, 15], [0, 1, 2], [0, 0, 0], [1, 1, -1])
    assert slice_by_time(rec, 0, math.inf) == rec
    assert len(slice_by_time(rec, 10, 10)) == 0
    assert slice_by_time(rec, 5, 15).t.tolist() == [5, 10]
    with pytest.raises(InvalidWindow):
        slice_by_time(rec, 6, 5)


@settings(max_examples=60, deadline=None)
@given(recordings(), st.lists(st.integers(0, 2**62), min_size=3, max_size=3))
def test_slices_compose(rec, cuts):
    a, b, c = sorted(cuts)
    left = slice_by_time(rec, a, b)
    right = slice_by_time(rec, b, c)
    whole = slice_by_time(rec, a, c)
    assert np.array_equal(np.concatenate([left.t, right.t]), whole.t)
    assert np.array_equal(np.concatenate([left.x, right.x]), whole.x)
    assert np.array_equal(np.concatenate([left.p, right.p]), whole.p)
    assert (whole.width, whole.height) == (rec.width, rec.height)
