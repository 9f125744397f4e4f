"""Event records, recordings, and the binary / CSV event file formats.

Binary layout (little-endian)::

    header   magic "SKYS" | version u16 | width u16 | height u16 | count u64
    record   t u64 (us) | x u16 | y u16 | polarity u8 (1=+, 0=-) | pad u8

Events are held column-wise in numpy arrays; a recording is immutable once
built.
"""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import (
    FormatError,
    InvalidWindow,
    MalformedHeader,
    NonMonotonicTime,
    OutOfBounds,
    RejectedInvariant,
    TruncatedRecord,
)

MAGIC = b"SKYS"
VERSION = 1
HEADER = struct.Struct("<4sHHHQ")
RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "u1"), ("pad", "u1")]
)
CSV_HEADER = ("t_us", "x", "y", "polarity")

assert RECORD_DTYPE.itemsize == 14


@dataclass(frozen=True)
class Event:
    x: int
    y: int
    t: int
    polarity: int  # +1 or -1


class EventRecording:
    """Time-ordered event stream with sensor geometry.

    Columns are exposed as read-only arrays: ``t`` (int64 us), ``x``, ``y``
    (int32) and ``p`` (int8, +1/-1).
    """

    __slots__ = ("width", "height", "t", "x", "y", "p")

    def __init__(self, width, height, t=None, x=None, y=None, p=None, *, validate=True):
        self.width = int(width)
        self.height = int(height)
        cols = []
        for arr, dt in ((t, np.int64), (x, np.int32), (y, np.int32), (p, np.int8)):
            a = np.array([] if arr is None else arr, dtype=dt).reshape(-1)
            a.flags.writeable = False
            cols.append(a)
        self.t, self.x, self.y, self.p = cols
        n = len(self.t)
        if any(len(c) != n for c in cols):
            raise RejectedInvariant("event columns differ in length")
        if validate:
            self.check()

    @classmethod
    def from_events(cls, width: int, height: int, events: Sequence[Event]) -> "EventRecording":
        return cls(
            width,
            height,
            [e.t for e in events],
            [e.x for e in events],
            [e.y for e in events],
            [e.polarity for e in events],
        )

    @classmethod
    def empty(cls, width: int, height: int) -> "EventRecording":
        return cls(width, height)

    def check(self) -> None:
        """Raise if bounds, polarity, or ordering invariants are violated."""
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise RejectedInvariant(f"bad geometry {self.width}x{self.height}")
        if len(self.t) == 0:
            return
        if self.x.min() < 0 or self.x.max() >= self.width or self.y.min() < 0 or self.y.max() >= self.height:
            raise OutOfBounds("event coordinates outside sensor geometry")
        if self.t.min() < 0:
            raise RejectedInvariant("negative timestamp")
        if not np.all((self.p == 1) | (self.p == -1)):
            raise RejectedInvariant("polarity must be +1 or -1")
        if np.any(np.diff(self.t) < 0):
            raise NonMonotonicTime("timestamps decrease")

    def __len__(self) -> int:
        return len(self.t)

    def __iter__(self) -> Iterator[Event]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), int(self.t[i]), int(self.p[i]))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EventRecording):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.p, other.p)
        )

    def __repr__(self) -> str:
        return f"EventRecording({self.width}x{self.height}, {len(self)} events)"

    @property
    def duration_us(self) -> int:
        if len(self) <= 1:
            return 0
        return int(self.t[-1] - self.t[0])

    def select(self, keep: np.ndarray) -> "EventRecording":
        """Sub-recording of the events where ``keep`` is true (order preserved)."""
        return EventRecording(
            self.width, self.height, self.t[keep], self.x[keep], self.y[keep], self.p[keep],
            validate=False,
        )


def slice_by_time(rec: EventRecording, t_start: float, t_end: float) -> EventRecording:
    """Events with ``t_start <= t < t_end``; ``t_end`` may be ``math.inf``."""
    if t_start > t_end:
        raise InvalidWindow(f"t_start {t_start} > t_end {t_end}")
    lo = np.searchsorted(rec.t, t_start, side="left") if np.isfinite(t_start) else 0
    hi = np.searchsorted(rec.t, t_end, side="left") if np.isfinite(t_end) else len(rec)
    keep = np.zeros(len(rec), dtype=bool)
    keep[lo:hi] = True
    return rec.select(keep)


def _guess_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("binary", "csv"):
            raise ValueError(f"unknown event format {fmt!r}")
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def _check_writable(rec: EventRecording) -> None:
    try:
        rec.check()
    except FormatError as exc:
        raise RejectedInvariant(f"refusing to write invalid recording: {exc}") from exc


def encode_binary(rec: EventRecording) -> bytes:
    _check_writable(rec)
    header = HEADER.pack(MAGIC, VERSION, rec.width, rec.height, len(rec))
    records = np.zeros(len(rec), dtype=RECORD_DTYPE)
    records["t"] = rec.t
    records["x"] = rec.x
    records["y"] = rec.y
    records["p"] = rec.p > 0
    return header + records.tobytes()


def decode_binary(data: bytes) -> EventRecording:
    if len(data) < HEADER.size:
        raise TruncatedRecord(f"header needs {HEADER.size} bytes, got {len(data)}")
    magic, version, width, height, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise MalformedHeader(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedHeader(f"unsupported version {version}")
    if width == 0 or height == 0:
        raise MalformedHeader("zero sensor geometry")
    body = len(data) - HEADER.size
    need = count * RECORD_DTYPE.itemsize
    if body < need:
        raise TruncatedRecord(f"expected {count} records ({need} bytes), found {body} bytes")
    if body > need:
        raise MalformedHeader(f"{body - need} trailing bytes after {count} records")
    records = np.frombuffer(data, dtype=RECORD_DTYPE, count=count, offset=HEADER.size)
    if count and (records["p"].max() > 1 or records["pad"].any()):
        raise MalformedHeader("polarity byte must be 0/1 and pad byte 0")
    if count and records["t"].max() > np.iinfo(np.int64).max:
        raise MalformedHeader("timestamp exceeds int64 range")
    p = np.where(records["p"] == 1, 1, -1).astype(np.int8)
    return EventRecording(width, height, records["t"].astype(np.int64), records["x"], records["y"], p)


def encode_csv(rec: EventRecording) -> str:
    _check_writable(rec)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for t, x, y, p in zip(rec.t.tolist(), rec.x.tolist(), rec.y.tolist(), rec.p.tolist()):
        w.writerow((t, x, y, 1 if p > 0 else 0))
    return buf.getvalue()


def decode_csv(text: str, width: int, height: int) -> EventRecording:
    rows = csv.reader(io.StringIO(text))
    header = next(rows, None)
    if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
        raise MalformedHeader(f"CSV header must be {','.join(CSV_HEADER)}")
    ts, xs, ys, ps = [], [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise TruncatedRecord(f"line {lineno}: expected 4 fields, got {len(row)}")
        try:
            t, x, y, p = (int(v) for v in row)
        except ValueError as exc:
            raise MalformedHeader(f"line {lineno}: {exc}") from None
        if p not in (0, 1):
            raise MalformedHeader(f"line {lineno}: polarity must be 0 or 1")
        ts.append(t)
        xs.append(x)
        ys.append(y)
        ps.append(1 if p else -1)
    return EventRecording(width, height, ts, xs, ys, ps)


def read_recording(
    path: str | os.PathLike,
    format: str | None = None,
    width: int | None = None,
    height: int | None = None,
) -> EventRecording:
    """Read an event file. CSV files need ``width`` and ``height``."""
    path = Path(path)
    fmt = _guess_format(path, format)
    if fmt == "binary":
        return decode_binary(path.read_bytes())
    if width is None or height is None:
        raise ValueError("CSV recordings need width and height")
    return decode_csv(path.read_text(), width, height)


def write_recording(rec: EventRecording, path: str | os.PathLike, format: str | None = None) -> None:
    path = Path(path)
    fmt = _guess_format(path, format)
    # encode first so an invalid recording never leaves a partial file behind
    if fmt == "binary":
        path.write_bytes(encode_binary(rec))
    else:
        path.write_text(encode_csv(rec))
