"""Protocol arithmetic: entropy, key rate, error rate, thresholds and sweeps."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .analytic import JointDetectionMatrix, MatrixSummary, ModelConfig, matrix_summary
from .layouts import LAYOUT_ORDER, generate_grid, merge_sweeps

SWEEP_HEADER = ("d", "layout", "qder", "threshold", "bits_per_photon", "sifted_rate", "bit_rate")

# Spacing ladders (pixels).  The current-detector ladder spans d ~ 20-750 in
# the default 4293-pixel region; the next-generation one reaches ~10^4 modes.
DEFAULT_SPACINGS = tuple(round(2.0 + 0.1 * i, 2) for i in range(101))
NEXT_GEN_SPACINGS = tuple(round(1.0 + 0.05 * i, 2) for i in range(41))


def _check_d(d: int) -> None:
    if int(d) != d or d < 2:
        raise ValueError(f"dimension must be an integer >= 2, got {d!r}")


def shannon_entropy_d(e: float, d: int) -> float:
    """``h_d(e) = -e log2(e/(d-1)) - (1-e) log2(1-e)`` with ``0 log 0 = 0``."""
    _check_d(d)
    if not 0.0 <= e <= 1.0:
        raise ValueError(f"error rate must lie in [0, 1], got {e!r}")
    h = 0.0
    if e > 0.0:
        h -= e * (math.log2(e) - math.log2(d - 1))
    if e < 1.0:
        h -= (1.0 - e) * math.log2(1.0 - e)
    return h


def key_rate(e: float, d: int) -> float:
    """Secret bits per sifted photon, ``log2(d) - 2 h_d(e)``."""
    return math.log2(d) - 2.0 * shannon_entropy_d(e, d)


def _qder_columns(diag: np.ndarray, colsum: np.ndarray) -> float:
    usable = colsum > 0
    if not np.any(usable):
        raise ValueError("matrix has no usable columns")
    e = 1.0 - float(np.mean(diag[usable] / colsum[usable]))
    return min(max(e, 0.0), 1.0)


def qder(matrix: JointDetectionMatrix, atol: float = 1e-9) -> float:
    """``1 - Tr(C)/d`` over the usable columns of the conditional matrix."""
    cond = matrix.conditional
    sums = cond[:, matrix.usable].sum(axis=0)
    if not np.allclose(sums, 1.0, rtol=0.0, atol=atol):
        raise ValueError("conditional matrix columns do not sum to 1")
    if not np.any(matrix.usable):
        raise ValueError("matrix has no usable columns")
    e = 1.0 - float(np.mean(np.diag(cond)[matrix.usable]))
    return min(max(e, 0.0), 1.0)


def qder_prediction(expected: JointDetectionMatrix, measured: JointDetectionMatrix) -> tuple[float, float]:
    """Model QDER on the measured matrix's usable columns and its sampling std.

    Each usable column ``c`` of the measurement is ``n_c`` multinomial draws,
    so its diagonal fraction has variance ``p_c (1 - p_c) / n_c`` with ``p_c``
    taken from the model.
    """
    if expected.d != measured.d:
        raise ValueError("matrices differ in dimension")
    use = measured.usable
    if not np.any(use):
        raise ValueError("measured matrix has no usable columns")
    p = np.diag(expected.conditional)[use]
    n = measured.counts.sum(axis=0)[use]
    e = 1.0 - float(p.mean())
    sigma = float(np.sqrt(np.sum(p * (1.0 - p) / n)) / use.sum())
    return e, sigma


def qder_from_summary(summary: MatrixSummary) -> float:
    return _qder_columns(summary.diag, summary.column_sums)


class ThresholdError(RuntimeError):
    pass


def security_threshold(d: int, tol: float = 1e-6, max_iter: int = 200) -> float:
    """Error rate at which the key rate vanishes, by bisection."""
    _check_d(d)
    lo, hi = 1e-9, (d - 1) / d - 1e-9
    if not (key_rate(lo, d) > 0 > key_rate(hi, d)):
        raise ThresholdError(f"key rate does not change sign on the bracket for d={d}")
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if key_rate(mid, d) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            return 0.5 * (lo + hi)
    raise ThresholdError(f"bisection did not converge in {max_iter} iterations")


@dataclass(frozen=True)
class QkdMetrics:
    d: int
    qder_e: float
    threshold_e: float
    bits_per_photon: float  # unclamped R(e)
    sifted_rate: float
    bit_rate: float  # max(0, R) * sifted_rate

    @classmethod
    def from_error(cls, d: int, e: float, sifted: float) -> "QkdMetrics":
        r = key_rate(e, d)
        return cls(d, e, security_threshold(d), r, sifted, max(0.0, r) * sifted)


def metrics_for_grid(grid, model: ModelConfig) -> QkdMetrics:
    s = matrix_summary(grid, model)
    return QkdMetrics.from_error(grid.d, qder_from_summary(s), s.total / s.acquisition_s)


@dataclass(frozen=True)
class SweepRow:
    layout: str
    spacing_px: float
    metrics: QkdMetrics

    @property
    def d(self) -> int:
        return self.metrics.d


def dimension_sweep(
    model: ModelConfig,
    layouts: Sequence[str] = LAYOUT_ORDER,
    spacings: Sequence[float] | dict[str, Sequence[float]] = DEFAULT_SPACINGS,
    d_max: int | None = None,
) -> list[SweepRow]:
    """Metrics per dimension across layouts and spacings, merged by lowest QDER.

    Spacings whose grid leaves fewer than two modes are skipped; ``d_max``
    drops grids larger than the given dimension.
    """
    raw = []
    for layout in layouts:
        ladder = spacings[layout] if isinstance(spacings, dict) else spacings
        seen: set[int] = set()
        for spacing in ladder:
            try:
                grid = generate_grid(layout, spacing, model.region)
            except ValueError:
                continue
            if grid.d in seen or (d_max is not None and grid.d > d_max):
                continue
            seen.add(grid.d)
            m = metrics_for_grid(grid, model)
            raw.append((grid.d, layout, SweepRow(layout, float(spacing), m)))
    merged = merge_sweeps(raw, key=lambda row: row.metrics.qder_e)
    return [row for _, _, row in merged]


def sweep_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_HEADER)
    for row in rows:
        m = row.metrics
        writer.writerow(
            [m.d, row.layout, f"{m.qder_e:.9g}", f"{m.threshold_e:.9g}", f"{m.bits_per_photon:.9g}",
             f"{m.sifted_rate:.9g}", f"{m.bit_rate:.9g}"]
        )
    return buf.getvalue()
