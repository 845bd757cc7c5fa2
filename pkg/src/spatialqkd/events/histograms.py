"""Sum/difference correlation histograms and Gaussian width fits."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import least_squares

from ..physics import OpticsParams, Plane, px_to_momentum_width, px_to_position_width
from .matching import CoincidenceSet

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class NoPeakError(ValueError):
    """Histogram has no distinguishable peak."""


@dataclass(frozen=True, eq=False)
class CorrelationHistogram:
    kind: str  # "sum" or "difference"
    coord: str  # "x" or "y"
    plane: str
    bin_width: float
    edges: np.ndarray
    counts: np.ndarray

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def narrow(self) -> bool:
        """Whether this axis carries the tight correlation for its plane."""
        return (self.kind == "difference") == (self.plane == "position")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.kind, self.coord, self.plane)


def histogram_values(values: np.ndarray, bin_width: float = 1.0, pad_bins: int = 3,
                     span: tuple[float, float] | None = None):
    """Counts on bins centred at multiples of ``bin_width``.

    The bin range covers the data plus ``pad_bins`` on each side, or the fixed
    ``span`` when given (values outside it are dropped).
    """
    values = np.asarray(values, dtype=float)
    if span is not None:
        lo = int(math.floor(span[0] / bin_width + 0.5))
        hi = int(math.floor(span[1] / bin_width + 0.5))
        pad_bins = 0
    elif values.size == 0:
        lo = hi = 0
    else:
        lo = int(math.floor(values.min() / bin_width + 0.5))
        hi = int(math.floor(values.max() / bin_width + 0.5))
    idx = np.arange(lo - pad_bins, hi + pad_bins + 2)
    edges = (idx - 0.5) * bin_width
    counts, _ = np.histogram(values, bins=edges)
    return edges, counts


def _offset_values(coincidences, center, true_only):
    cx, cy = center
    values: dict[tuple[str, str, str], list[np.ndarray]] = {}
    for cs in coincidences:
        if not cs.matched_basis:
            continue
        keep = ~cs.background if true_only else slice(None)
        for coord, a, b, c in (("x", cs.xa, cs.xb, cx), ("y", cs.ya, cs.yb, cy)):
            a = a[keep] - c
            b = b[keep] - c
            values.setdefault(("difference", coord, cs.plane_a), []).append(b - a)
            values.setdefault(("sum", coord, cs.plane_a), []).append(b + a)
    return {k: np.concatenate(v) for k, v in values.items()}


def build_histograms(
    coincidences: Iterable[CoincidenceSet],
    center: Sequence[int] = (64, 64),
    bin_width: float = 1.0,
    true_only: bool = False,
    accidentals: Iterable[CoincidenceSet] | None = None,
) -> dict[tuple[str, str, str], CorrelationHistogram]:
    """Histograms of ``bob -/+ alice`` pixel offsets for matched-basis coincidences.

    Offsets are taken from the beam centre so that the momentum sum measures
    ``k_s + k_i``.  Mismatched-basis sets are skipped.  ``true_only`` drops
    coincidences involving a photon flagged as background.  ``accidentals``
    (coincidences found with one stream delayed far outside the gate) are
    subtracted bin by bin on a common range; the counts then become
    net estimates and may be negative in sparse bins.
    """
    prompt = _offset_values(coincidences, center, true_only)
    delayed = _offset_values(accidentals, center, true_only) if accidentals is not None else None
    out = {}
    for key in sorted(prompt):
        v = prompt[key]
        if delayed is None:
            edges, counts = histogram_values(v, bin_width)
        else:
            dv = delayed.get(key, np.zeros(0))
            both = np.concatenate([v, dv])
            span = (float(both.min()) - 3 * bin_width, float(both.max()) + 3 * bin_width) if both.size else (0.0, 0.0)
            edges, counts = histogram_values(v, bin_width, span=span)
            _, acc = histogram_values(dv, bin_width, span=span)
            counts = counts - acc
        out[key] = CorrelationHistogram(key[0], key[1], key[2], bin_width, edges, counts)
    return out


@dataclass(frozen=True)
class GaussianFit:
    amplitude: float
    center: float
    width_px: float
    offset: float
    under_resolved: bool
    iterations: int


def _initial_guess(x: np.ndarray, y: np.ndarray, bin_width: float) -> np.ndarray:
    k = int(np.argmax(y))
    n_tail = max(1, len(y) // 10)
    tail = np.concatenate([y[:n_tail], y[-n_tail:]])
    c0 = float(tail.mean())
    a0 = float(y[k]) - c0
    cdf = np.cumsum(y)
    mu0 = float(x[np.searchsorted(cdf, 0.5 * cdf[-1])])
    above = np.flatnonzero(y - c0 >= 0.5 * a0)
    span = (x[above[-1]] - x[above[0]] + bin_width) if above.size else bin_width
    w0 = max(span / FWHM_PER_SIGMA, 0.25 * bin_width)
    return np.array([a0, mu0, w0, c0])


def fit_gaussian(hist: CorrelationHistogram, max_iter: int = 500, rtol: float = 1e-8) -> GaussianFit:
    """Least-squares fit of ``a exp(-(x-mu)^2 / (2 w^2)) + c`` to a histogram.

    Raises :class:`NoPeakError` when the highest bin is less than twice the
    median bin.  Fits narrower than one bin are flagged ``under_resolved``.
    """
    x = hist.centers
    y = hist.counts.astype(float)
    if len(y) < 5:
        raise ValueError("need at least 5 bins to fit")
    median = float(np.median(y))
    peak = float(y.max())
    if peak <= 0 or (median > 0 and peak / median < 2.0):
        raise NoPeakError(f"no peak: max/median = {peak / median if median else 0:.3g}")
    p0 = _initial_guess(x, y, hist.bin_width)

    def residual(p):
        a, mu, w, c = p
        return a * np.exp(-((x - mu) ** 2) / (2.0 * w * w)) + c - y

    scale = np.array([max(abs(p0[0]), 1.0), hist.bin_width, hist.bin_width, max(abs(p0[0]), 1.0)])
    res = least_squares(
        residual,
        p0,
        x_scale=scale,
        xtol=rtol,
        ftol=rtol,
        gtol=rtol,
        max_nfev=max_iter,
        method="lm",
    )
    a, mu, w, c = res.x
    w = abs(float(w))
    return GaussianFit(float(a), float(mu), w, float(c), w < hist.bin_width, int(res.nfev))


def fitted_widths(hists: dict, **kw) -> dict[tuple[str, str, str], GaussianFit]:
    return {key: fit_gaussian(h, **kw) for key, h in hists.items()}


def amplitude_width(fit_px: float, plane: Plane, optics: OpticsParams = OpticsParams()) -> float:
    """Physical amplitude width implied by a fitted intensity width."""
    if plane == "position":
        return px_to_position_width(fit_px, optics)
    return px_to_momentum_width(fit_px, optics)


def histograms_csv(hists: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "coord", "plane", "bin_center", "count"])
    for key, h in hists.items():
        for c, n in zip(h.centers, h.counts):
            w.writerow([h.kind, h.coord, h.plane, f"{c:g}", int(n)])
    return buf.getvalue()
