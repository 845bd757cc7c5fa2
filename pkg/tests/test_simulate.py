import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from spatialqkd.analytic import DetectionParams
from spatialqkd.events.matching import CoincidenceSet
from spatialqkd.events.matrix import matrix_from_events
from spatialqkd.events.stream import DETECTORS, make_records, read_stream
from spatialqkd.layouts import beam_region, generate_grid
from spatialqkd.physics import MEASURED_WIDTHS, OpticsParams, SourceParams, width_to_px
from spatialqkd.qkd import qder, security_threshold
from spatialqkd.simulate import (
    SimConfig,
    deconvolved_widths,
    gate_efficiency,
    generate_background,
    route_and_detect,
    run_simulation,
    sample_pair,
    simulate_records,
    stream_path,
)

W = MEASURED_WIDTHS


def test_sample_pair_means_are_zero(rng):
    n = 100_000
    for plane in ("position", "momentum"):
        s, i = sample_pair(plane, W, rng, n)
        for coord in (s[:, 0], s[:, 1], i[:, 0], i[:, 1]):
            assert abs(coord.mean()) < 4 * coord.std() / math.sqrt(n)


def test_sample_pair_correlation_widths(rng):
    n = 1_000_000
    r_s, r_i = sample_pair("position", W, rng, n)
    assert np.std(r_s[:, 0] - r_i[:, 0]) == pytest.approx(W.delta_r / math.sqrt(2), rel=0.01)
    assert np.std(r_s[:, 1] + r_i[:, 1]) == pytest.approx(W.sigma_r / math.sqrt(2), rel=0.01)
    k_s, k_i = sample_pair("momentum", W, rng, n)
    assert np.std(k_s[:, 0] + k_i[:, 0]) == pytest.approx(W.delta_k / math.sqrt(2), rel=0.01)
    assert np.std(k_s[:, 1] - k_i[:, 1]) == pytest.approx(W.sigma_k / math.sqrt(2), rel=0.01)


def test_sample_pair_is_deterministic():
    a = sample_pair("momentum", W, np.random.default_rng(7), 10)
    b = sample_pair("momentum", W, np.random.default_rng(7), 10)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert sample_pair("position", W, np.random.default_rng(7))[0].shape == (2,)


def test_deconvolution_restores_pixel_level_widths(rng):
    cfg = SimConfig()
    w = deconvolved_widths(W, cfg.opt)
    n = 400_000
    for plane, target in (("position", W.delta_r), ("momentum", W.delta_k)):
        s, i = sample_pair(plane, w, rng, n)
        scale = 11.0 if plane == "position" else cfg.opt.pixel_pitch_um * 5 * 2 * math.pi / (0.81 * 300e3)
        ps, pi = np.floor(s / scale + 0.5), np.floor(i / scale + 0.5)
        narrow = ps[:, 0] - pi[:, 0] if plane == "position" else ps[:, 0] + pi[:, 0]
        assert narrow.std() == pytest.approx(width_to_px(target, plane), rel=0.01)


def _full_detection(**kw):
    det = DetectionParams(eta_s=0.5, eta_i=0.5, background_rate=0.0)
    return SimConfig(det=det, src=SourceParams(pair_rate=1e5), **kw)


def test_matched_basis_fraction_at_full_efficiency(rng):
    # negligible jitter so every true pair falls inside a 1 ns gate
    cfg = _full_detection(duration_s=1.0, opt=OpticsParams(timing_resolution_ns=1e-3))
    n = 200_000
    t = np.sort(rng.random(n)) * 1e12
    out, tally = route_and_detect(t, cfg, rng)
    assert tally["lost_efficiency"] == 0
    assert len(out["alice_pos"][0]) + len(out["bob_pos"][0]) == pytest.approx(n, rel=0.01)

    def rec(name):
        t_, x, y = out[name]
        o = np.argsort(t_, kind="stable")
        return make_records(t_[o], x[o], y[o])

    matched = sum(
        len(CoincidenceSet.from_records(p, rec(f"alice_{k}"), p, rec(f"bob_{k}"), 1.0))
        for p, k in (("position", "pos"), ("momentum", "mom"))
    )
    assert matched / n == pytest.approx(0.5, abs=4 * math.sqrt(0.25 / n))


def test_zero_efficiency_gives_no_events(rng):
    cfg = SimConfig(det=DetectionParams(eta_s=0.0, eta_i=0.0))
    out, tally = route_and_detect(np.arange(1000.0), cfg, rng)
    assert tally["detected"] == 0 and tally["lost_efficiency"] == 2000
    assert all(len(v[0]) == 0 for v in out.values())


def test_singles_rate_matches_efficiency_times_total_rate():
    cfg = SimConfig(duration_s=0.2, seed=11)
    _, summary = simulate_records(cfg)
    expected = cfg.det.eta_s * (cfg.pair_rate + cfg.background_rate) * cfg.duration_s
    for name in DETECTORS:
        assert summary.events_written[name] == pytest.approx(expected, rel=0.05)
    assert expected / cfg.duration_s == pytest.approx(3e5, rel=0.05)


def test_background_absent_without_rate(rng):
    t, x, y = generate_background(DetectionParams(background_rate=0.0), beam_region(), 10.0, rng)
    assert len(t) == 0


def test_background_counts_are_poisson():
    det = DetectionParams(eta_s=0.02, background_rate=500.0)
    mean = 0.02 * 500.0 * 10.0
    counts = [len(generate_background(det, beam_region(), 10.0, np.random.default_rng(s))[0]) for s in range(100)]
    k = np.arange(60, 141, 10)
    observed = np.histogram(counts, bins=np.concatenate([[0], k, [10**6]]))[0]
    cdf = stats.poisson.cdf(np.concatenate([k - 1, [10**6]]), mean)
    expected = 100 * np.diff(np.concatenate([[0.0], cdf]))
    keep = expected > 0
    chi2 = np.sum((observed[keep] - expected[keep]) ** 2 / expected[keep])
    assert stats.chi2.sf(chi2, keep.sum() - 1) > 0.01


def test_background_is_uniform_over_region(rng):
    reg = beam_region((64, 64), 500)
    det = DetectionParams(eta_s=1.0, background_rate=100_000.0)
    t, x, y = generate_background(det, reg, 1.0, rng)
    assert np.all(np.diff(t) >= 0)
    assert np.all(reg.contains(np.stack([x, y], axis=1)))
    pix = reg.pixels()
    key = {(int(a), int(b)): i for i, (a, b) in enumerate(pix)}
    counts = np.bincount([key[(int(a), int(b))] for a, b in zip(x, y)], minlength=len(pix))
    assert stats.chisquare(counts).pvalue > 0.01


def test_gate_efficiency_matches_monte_carlo(rng):
    sigma = 8.0 / 2.355
    dt = rng.normal(0, sigma, 400_000) - rng.normal(0, sigma, 400_000)
    assert gate_efficiency(20.0, 8.0) == pytest.approx(np.mean(np.abs(dt) <= 10.0), abs=0.002)


def test_zero_duration_writes_empty_streams(tmp_path):
    summary = run_simulation(SimConfig(duration_s=0.0), tmp_path)
    assert summary.pairs_generated == 0
    for name in DETECTORS:
        data = stream_path(tmp_path, name).read_bytes()
        assert len(data) == 16
        header, rec = read_stream(data)
        assert header.detector_id == DETECTORS.index(name) and len(rec) == 0


def test_same_seed_is_byte_identical(tmp_path):
    cfg = SimConfig(duration_s=0.05, seed=99, rate_scale=0.5)
    run_simulation(cfg, tmp_path / "a")
    run_simulation(cfg, tmp_path / "b")
    for name in DETECTORS:
        assert stream_path(tmp_path / "a", name).read_bytes() == stream_path(tmp_path / "b", name).read_bytes()
    run_simulation(replace(cfg, seed=100), tmp_path / "c")
    assert stream_path(tmp_path / "a", "alice_pos").read_bytes() != stream_path(tmp_path / "c", "alice_pos").read_bytes()


def test_worker_count_does_not_change_output():
    cfg = SimConfig(duration_s=0.06, seed=3, slice_s=0.01, rate_scale=0.2)
    one, s1 = simulate_records(cfg, workers=1)
    two, s2 = simulate_records(cfg, workers=2)
    assert s1 == s2
    assert all(np.array_equal(a, b) for a, b in zip(one, two))


def test_conservation_and_ordering():
    cfg = SimConfig(duration_s=0.1, seed=5, slice_s=0.03)
    streams, s = simulate_records(cfg)
    assert s.conserved
    assert 2 * s.pairs_generated == s.photons_detected + s.photons_lost_to_efficiency + s.photons_off_sensor
    assert sum(s.events_written.values()) == s.photons_detected + s.background_events
    for rec in streams:
        assert np.all(np.diff(rec["t"].astype(np.int64)) >= 0)
        assert rec["t"].max() <= int(cfg.duration_s * 1e12)
        assert rec["x"].max() < 128 and rec["y"].max() < 128
    assert sum(int((r["flags"] & 1).sum()) for r in streams) == s.background_events


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(split_ratio=0.0)
    with pytest.raises(ValueError):
        SimConfig(duration_s=-1)
    with pytest.raises(ValueError):
        SimConfig(det=DetectionParams(eta_s=0.8))
    with pytest.raises(ValueError):
        SimConfig(region=beam_region((10, 10), 4293))


def test_full_run_at_d90_is_secure():
    cfg = SimConfig(duration_s=1.0, seed=21)
    streams, _ = simulate_records(cfg)
    sets = [
        CoincidenceSet.from_records(pa, streams[ia], pb, streams[ib], cfg.det.tau_ns)
        for ia, pa in ((0, "position"), (1, "momentum"))
        for ib, pb in ((2, "position"), (3, "momentum"))
    ]
    grid = generate_grid("cartesian", 7.0, cfg.region)
    m, tally = matrix_from_events(sets, grid)
    assert 85 <= grid.d <= 95
    assert tally.binned > 0
    assert qder(m) < security_threshold(grid.d)
