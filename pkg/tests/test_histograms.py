import math

import numpy as np
import pytest

from spatialqkd.events.histograms import (
    CorrelationHistogram,
    NoPeakError,
    amplitude_width,
    build_histograms,
    fit_gaussian,
    histogram_values,
    histograms_csv,
)
from spatialqkd.events.matching import CoincidenceSet


def make_set(plane_a, xa, ya, plane_b, xb, yb, background=None):
    n = len(xa)
    arr = lambda v: np.asarray(v, dtype=np.int64)
    return CoincidenceSet(plane_a, plane_b, arr(xa), arr(ya), arr(xb), arr(yb), np.zeros(n, np.int64),
                          np.zeros(n, np.int64), None if background is None else np.asarray(background))


def hist_from(values, span=None):
    edges, counts = histogram_values(values, 1.0, span=span)
    return CorrelationHistogram("difference", "x", "position", 1.0, edges, counts)


def test_perfect_position_correlation_is_single_bin():
    rng = np.random.default_rng(1)
    x = rng.integers(40, 90, 500)
    y = rng.integers(40, 90, 500)
    h = build_histograms([make_set("position", x, y, "position", x, y)])
    diff = h[("difference", "x", "position")]
    assert diff.counts.sum() == 500
    assert diff.counts[diff.centers == 0] == 500
    assert h[("sum", "x", "position")].total == 500


def test_momentum_sum_is_the_narrow_axis():
    rng = np.random.default_rng(2)
    kx = rng.integers(-20, 21, 300)
    h = build_histograms([make_set("momentum", 64 + kx, 64 + kx, "momentum", 64 - kx, 64 - kx)])
    s = h[("sum", "y", "momentum")]
    assert s.narrow and s.counts[s.centers == 0] == 300
    assert not h[("difference", "y", "momentum")].narrow


def test_mismatched_sets_are_skipped_and_background_filter():
    a = make_set("position", [60, 61], [60, 61], "momentum", [60, 61], [60, 61])
    b = make_set("position", [60, 61], [60, 61], "position", [60, 70], [60, 61], background=[False, True])
    h = build_histograms([a, b])
    assert set(k[2] for k in h) == {"position"}
    assert h[("difference", "x", "position")].total == 2
    assert build_histograms([b], true_only=True)[("difference", "x", "position")].total == 1


def test_accidental_subtraction():
    prompt = make_set("position", [64] * 10, [64] * 10, "position", [64] * 6 + [70] * 4, [64] * 10)
    delayed = make_set("position", [64] * 4, [64] * 4, "position", [70] * 4, [64] * 4)
    h = build_histograms([prompt], accidentals=[delayed])[("difference", "x", "position")]
    assert h.counts[h.centers == 0] == 6
    assert h.counts[h.centers == 6] == 0
    assert "difference,x,position,0,6" in histograms_csv({h.key: h})


def test_fit_recovers_gaussian_with_offset():
    rng = np.random.default_rng(3)
    n_peak, n_flat, mu, w = 900_000, 100_000, 3.0, 4.0
    vals = np.concatenate([rng.normal(mu, w, n_peak), rng.uniform(-40.5, 46.5, n_flat)])
    vals = vals[(vals > -40.5) & (vals < 46.5)]
    fit = fit_gaussian(hist_from(vals, span=(-40, 46)))
    assert fit.center == pytest.approx(mu, abs=0.02 * w)
    assert fit.width_px == pytest.approx(w, rel=0.02)
    assert fit.offset == pytest.approx(n_flat / 87, rel=0.02)
    assert fit.amplitude == pytest.approx(n_peak / (math.sqrt(2 * math.pi) * w), rel=0.02)
    assert not fit.under_resolved


def test_flat_histogram_has_no_peak():
    edges = np.arange(-10, 11) - 0.5
    h = CorrelationHistogram("sum", "x", "position", 1.0, edges, np.full(20, 50))
    with pytest.raises(NoPeakError):
        fit_gaussian(h)


def test_single_bin_is_under_resolved():
    edges = np.arange(-5, 6) - 0.5
    counts = np.zeros(10, dtype=int)
    counts[5] = 1000
    fit = fit_gaussian(CorrelationHistogram("difference", "x", "position", 1.0, edges, counts))
    assert fit.under_resolved and fit.width_px <= 1.0


def test_too_few_bins():
    h = CorrelationHistogram("sum", "x", "position", 1.0, np.arange(5) - 0.5, np.array([0, 9, 0, 0]))
    with pytest.raises(ValueError):
        fit_gaussian(h)


def test_amplitude_width_units():
    assert amplitude_width(0.90, "position") == pytest.approx(14.0, abs=0.05)
    assert amplitude_width(0.65, "momentum") == pytest.approx(6.5e-3, rel=0.01)
