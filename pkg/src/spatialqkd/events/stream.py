"""Binary event-stream container.

Layout (little-endian)::

    header   16 bytes  magic "PMQK" | version u16 | detector u8 | reserved u8 | record_count u64
    record   16 bytes  t_ps u64 | x u16 | y u16 | flags u8 | reserved 3 bytes

Timestamps are integer picoseconds and non-decreasing within a file.  Flag
bit 0 marks simulated background photons.
"""

from __future__ import annotations

import io
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterator, NamedTuple, Union

import numpy as np

MAGIC = b"PMQK"
VERSION = 1
HEADER = struct.Struct("<4sHBBQ")
HEADER_SIZE = HEADER.size
RECORD_SIZE = 16
FLAG_BACKGROUND = 0x01

RECORD_DTYPE = np.dtype(
    [("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("flags", "u1"), ("reserved", "V3")]
)
assert RECORD_DTYPE.itemsize == RECORD_SIZE

DETECTORS = ("alice_pos", "alice_mom", "bob_pos", "bob_mom")

Source = Union[str, os.PathLike, BinaryIO, bytes]


class EventFormatError(ValueError):
    """Base class for malformed streams; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class BadMagicError(EventFormatError):
    pass


class UnsupportedVersionError(EventFormatError):
    pass


class TruncatedStreamError(EventFormatError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"stream truncated: expected {expected} bytes, found {actual}", actual)
        self.expected = expected
        self.actual = actual


class TimestampRegressionError(EventFormatError):
    pass


class RecordCountMismatchError(EventFormatError):
    pass


class EventRecord(NamedTuple):
    t_ps: int
    x: int
    y: int
    flags: int = 0


@dataclass(frozen=True)
class EventStreamHeader:
    detector_id: int
    record_count: int
    version: int = VERSION

    def pack(self) -> bytes:
        return HEADER.pack(MAGIC, self.version, self.detector_id, 0, self.record_count)


def records_to_array(records) -> np.ndarray:
    if isinstance(records, np.ndarray) and records.dtype == RECORD_DTYPE:
        return records
    rows = list(records)
    arr = np.zeros(len(rows), dtype=RECORD_DTYPE)
    if rows:
        t, x, y, f = zip(*((r[0], r[1], r[2], r[3] if len(r) > 3 else 0) for r in rows))
        arr["t"] = np.array(t, dtype=np.uint64)
        arr["x"] = x
        arr["y"] = y
        arr["flags"] = f
    return arr


def make_records(t, x, y, flags=None) -> np.ndarray:
    """Structured record array from column arrays."""
    arr = np.zeros(len(t), dtype=RECORD_DTYPE)
    arr["t"] = t
    arr["x"] = x
    arr["y"] = y
    if flags is not None:
        arr["flags"] = flags
    return arr


def _first_regression(t: np.ndarray) -> int | None:
    bad = np.flatnonzero(t[1:] < t[:-1])
    return int(bad[0]) + 1 if bad.size else None


def write_stream(header: EventStreamHeader, records, sink) -> int:
    """Write ``header`` and ``records`` to a path or binary file; returns bytes written."""
    arr = records_to_array(records)
    if not 0 <= header.detector_id <= 255:
        raise ValueError("detector_id must fit in one byte")
    if header.version != VERSION:
        raise ValueError(f"cannot write version {header.version}")
    if header.record_count != len(arr):
        raise ValueError(f"header announces {header.record_count} records, got {len(arr)}")
    bad = _first_regression(arr["t"])
    if bad is not None:
        raise TimestampRegressionError(
            f"records not time-sorted at index {bad}", HEADER_SIZE + bad * RECORD_SIZE
        )
    payload = header.pack() + arr.tobytes()
    if isinstance(sink, (str, os.PathLike)):
        path = Path(sink)
        try:
            path.write_bytes(payload)
        except OSError as exc:
            raise OSError(f"cannot write event stream {path}: {exc}") from exc
    else:
        sink.write(payload)
    return len(payload)


def serialize(detector_id: int, records) -> bytes:
    arr = records_to_array(records)
    buf = io.BytesIO()
    write_stream(EventStreamHeader(detector_id, len(arr)), arr, buf)
    return buf.getvalue()


def _open(source: Source) -> tuple[BinaryIO, bool]:
    if isinstance(source, (bytes, bytearray, memoryview)):
        return io.BytesIO(bytes(source)), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), True
    return source, False


def _read_header(fh: BinaryIO) -> EventStreamHeader:
    raw = fh.read(HEADER_SIZE)
    if not MAGIC.startswith(raw[:4]) or (len(raw) >= 4 and raw[:4] != MAGIC):
        raise BadMagicError(f"bad magic {raw[:4]!r}, expected {MAGIC!r}", 0)
    if len(raw) < HEADER_SIZE:
        raise TruncatedStreamError(HEADER_SIZE, len(raw))
    magic, version, detector, reserved, count = HEADER.unpack(raw)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version}", 4)
    if reserved != 0:
        raise EventFormatError("non-zero reserved header byte", 7)
    return EventStreamHeader(detector, count, version)


def _remaining_size(fh: BinaryIO) -> int | None:
    try:
        pos = fh.tell()
        end = fh.seek(0, os.SEEK_END)
        fh.seek(pos)
        return end - pos
    except (OSError, AttributeError, io.UnsupportedOperation):
        return None


def iter_chunks(fh: BinaryIO, header: EventStreamHeader, chunk_records: int = 1 << 16) -> Iterator[np.ndarray]:
    """Validated record chunks, read with bounded memory."""
    remaining = header.record_count
    index = 0
    last_t = None
    while remaining:
        n = min(chunk_records, remaining)
        raw = fh.read(n * RECORD_SIZE)
        if len(raw) < n * RECORD_SIZE:
            actual = HEADER_SIZE + index * RECORD_SIZE + len(raw)
            raise TruncatedStreamError(HEADER_SIZE + header.record_count * RECORD_SIZE, actual)
        chunk = np.frombuffer(raw, dtype=RECORD_DTYPE)
        t = chunk["t"]
        if last_t is not None and t[0] < last_t:
            raise TimestampRegressionError("timestamp regression", HEADER_SIZE + index * RECORD_SIZE)
        bad = _first_regression(t)
        if bad is not None:
            raise TimestampRegressionError(
                "timestamp regression", HEADER_SIZE + (index + bad) * RECORD_SIZE
            )
        last_t = t[-1]
        index += n
        remaining -= n
        yield chunk
    extra = fh.read(1)
    if extra:
        raise RecordCountMismatchError(
            f"data beyond the {header.record_count} announced records",
            HEADER_SIZE + header.record_count * RECORD_SIZE,
        )


def parse_stream(source: Source) -> tuple[EventStreamHeader, Iterator[EventRecord]]:
    """Header plus a lazy, validating record iterator.

    Size problems are reported up front when the source is seekable;
    ordering problems surface during iteration.
    """
    fh, owned = _open(source)
    try:
        header = _read_header(fh)
        remaining = _remaining_size(fh)
        expected = HEADER_SIZE + header.record_count * RECORD_SIZE
        if remaining is not None:
            actual = HEADER_SIZE + remaining
            if actual < expected:
                raise TruncatedStreamError(expected, actual)
            if actual > expected:
                raise RecordCountMismatchError(
                    f"data beyond the {header.record_count} announced records", expected
                )
    except BaseException:
        if owned:
            fh.close()
        raise

    def records() -> Iterator[EventRecord]:
        try:
            for chunk in iter_chunks(fh, header):
                for t, x, y, f in zip(
                    chunk["t"].tolist(), chunk["x"].tolist(), chunk["y"].tolist(), chunk["flags"].tolist()
                ):
                    yield EventRecord(t, x, y, f)
        finally:
            if owned:
                fh.close()

    return header, records()


def read_stream(source: Source) -> tuple[EventStreamHeader, np.ndarray]:
    """Whole stream as a structured array (validated like :func:`parse_stream`)."""
    fh, owned = _open(source)
    try:
        header = _read_header(fh)
        remaining = _remaining_size(fh)
        if remaining is not None and remaining < header.record_count * RECORD_SIZE:
            raise TruncatedStreamError(
                HEADER_SIZE + header.record_count * RECORD_SIZE, HEADER_SIZE + remaining
            )
        chunks = list(iter_chunks(fh, header, chunk_records=1 << 20))
    finally:
        if owned:
            fh.close()
    arr = np.concatenate(chunks) if chunks else np.zeros(0, dtype=RECORD_DTYPE)
    return header, arr
