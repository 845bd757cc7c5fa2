"""Greedy nearest-in-time coincidence matching.

Both streams are walked with two pointers.  At every step the earlier of the
two head events is either paired with the other head (when the pair lies
inside the gate) or discarded.  Every event therefore joins at most one
coincidence, equal timestamps always pair, and swapping the stream labels
yields the same pairs with ``dt`` negated.

``tau_ns`` is the full gate width: a pair is accepted when
``|t_b - t_a| <= tau / 2`` (boundary inclusive), which keeps the accidental
rate at ``tau * S_a * S_b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .stream import DETECTORS, HEADER_SIZE, RECORD_SIZE, EventRecord, TimestampRegressionError


def gate_ticks(tau_ns: float) -> int:
    """Twice the accepted half-window in picoseconds (integer comparison ``2|dt| <= ticks``)."""
    if tau_ns < 0:
        raise ValueError("tau must be non-negative")
    return int(round(tau_ns * 1000.0))


def party(detector: int | str) -> str:
    name = DETECTORS[detector] if isinstance(detector, int) else detector
    return name.split("_")[0]


class Coincidence(NamedTuple):
    event_a: EventRecord
    event_b: EventRecord
    detector_a: int | None
    detector_b: int | None
    dt_ps: int  # t_b - t_a


def _checked(stream: Iterable, label: str) -> Iterator:
    last = None
    for n, rec in enumerate(stream):
        t = rec[0]
        if last is not None and t < last:
            raise TimestampRegressionError(
                f"stream {label} not time-sorted at record {n}", HEADER_SIZE + n * RECORD_SIZE
            )
        last = t
        yield rec


def match_coincidences(
    stream_a: Iterable[EventRecord],
    stream_b: Iterable[EventRecord],
    tau_ns: float,
    detector_a: int | None = None,
    detector_b: int | None = None,
) -> Iterator[Coincidence]:
    """Lazily pair two time-sorted record streams."""
    if detector_a is not None and detector_b is not None and party(detector_a) == party(detector_b):
        raise ValueError("coincidences are formed between different parties")
    ticks = gate_ticks(tau_ns)
    it_a = _checked(stream_a, "a")
    it_b = _checked(stream_b, "b")
    a = next(it_a, None)
    b = next(it_b, None)
    while a is not None and b is not None:
        dt = b[0] - a[0]
        if 2 * abs(dt) <= ticks:
            yield Coincidence(EventRecord(*a), EventRecord(*b), detector_a, detector_b, dt)
            a = next(it_a, None)
            b = next(it_b, None)
        elif dt > 0:
            a = next(it_a, None)
        else:
            b = next(it_b, None)
    # drain remaining input so ordering errors are not silently skipped
    for _ in it_a:
        pass
    for _ in it_b:
        pass


def match_arrays(ta: np.ndarray, tb: np.ndarray, tau_ns: float) -> tuple[np.ndarray, np.ndarray]:
    """Index arrays ``(ia, ib)`` of the pairs chosen by :func:`match_coincidences`."""
    ta = np.asarray(ta)
    tb = np.asarray(tb)
    for label, t in (("a", ta), ("b", tb)):
        bad = np.flatnonzero(t[1:] < t[:-1])
        if bad.size:
            n = int(bad[0]) + 1
            raise TimestampRegressionError(
                f"stream {label} not time-sorted at record {n}", HEADER_SIZE + n * RECORD_SIZE
            )
    ticks = gate_ticks(tau_ns)
    la = ta.astype(np.int64).tolist() if ta.size and ta.max() < 2**63 else [int(v) for v in ta]
    lb = tb.astype(np.int64).tolist() if tb.size and tb.max() < 2**63 else [int(v) for v in tb]
    na, nb = len(la), len(lb)
    out_a: list[int] = []
    out_b: list[int] = []
    i = j = 0
    while i < na and j < nb:
        dt = lb[j] - la[i]
        if 2 * abs(dt) <= ticks:
            out_a.append(i)
            out_b.append(j)
            i += 1
            j += 1
        elif dt > 0:
            i += 1
        else:
            j += 1
    return np.asarray(out_a, dtype=np.intp), np.asarray(out_b, dtype=np.intp)


@dataclass
class CoincidenceSet:
    """Columnar coincidences between one Alice detector and one Bob detector."""

    plane_a: str
    plane_b: str
    xa: np.ndarray
    ya: np.ndarray
    xb: np.ndarray
    yb: np.ndarray
    ta: np.ndarray
    dt: np.ndarray
    background: np.ndarray = field(default=None)  # either photon flagged as background

    def __post_init__(self) -> None:
        if self.background is None:
            self.background = np.zeros(len(self.xa), dtype=bool)

    def __len__(self) -> int:
        return int(len(self.xa))

    @property
    def matched_basis(self) -> bool:
        return self.plane_a == self.plane_b

    @classmethod
    def from_records(cls, plane_a: str, rec_a: np.ndarray, plane_b: str, rec_b: np.ndarray,
                     tau_ns: float, shift_ps: int = 0) -> "CoincidenceSet":
        """Match two record arrays; ``shift_ps`` delays stream b (accidental estimate)."""
        tb = rec_b["t"].astype(np.int64) + shift_ps
        ia, ib = match_arrays(rec_a["t"].astype(np.int64), tb, tau_ns)
        ea, eb = rec_a[ia], rec_b[ib]
        return cls(
            plane_a,
            plane_b,
            ea["x"].astype(np.int64),
            ea["y"].astype(np.int64),
            eb["x"].astype(np.int64),
            eb["y"].astype(np.int64),
            ea["t"].astype(np.int64),
            tb[ib] - ea["t"].astype(np.int64),
            ((ea["flags"] | eb["flags"]) & 1).astype(bool),
        )
