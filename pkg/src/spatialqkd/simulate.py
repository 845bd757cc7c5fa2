"""Monte Carlo generation of time-tagged detection events.

Pairs are emitted as a homogeneous Poisson process at rate ``P``.  Each photon
is routed independently to the position detector (probability ``split_ratio``)
or the momentum detector, and survives with probability ``2 eta`` (``eta`` is
the per-beam efficiency at a balanced split, see :mod:`spatialqkd.analytic`).
Photons in the same plane share a correlated sample from the double-Gaussian
intensity; photons in different planes take independent marginal samples.

Coordinates are sampled with the pixel response removed: the camera adds a
uniform ``1/12 px^2`` per axis and photon, so the continuous sum and
difference variances are reduced by ``1/6 px^2`` before rounding.  Pixel-level
statistics then reproduce the configured (measured, pixel-inclusive) widths.
Disable with ``deconvolve_pixels=False``.

Bob's momentum events are written in the physical camera frame; the analysis
reflects them through the beam centre (:func:`spatialqkd.layouts.bob_mode_pixels`).

Time is cut into fixed slices; slice ``n`` draws from
``SeedSequence(seed, spawn_key=(n,))`` so outputs do not depend on how many
workers generate them.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import DetectionParams, ModelConfig
from .events.stream import DETECTORS, FLAG_BACKGROUND, RECORD_DTYPE, EventStreamHeader, write_stream
from .layouts import BeamRegion, beam_region
from .physics import (
    MEASURED_WIDTHS,
    CorrelationWidths,
    OpticsParams,
    Plane,
    SourceParams,
    pixel_scale,
    single_photon_std,
)

SQRT2 = math.sqrt(2.0)
PIXEL_VARIANCE = 1.0 / 12.0
FWHM_TO_STD = 1.0 / 2.355
PLANES: tuple[Plane, Plane] = ("position", "momentum")


@dataclass(frozen=True)
class SimConfig:
    src: SourceParams = field(default_factory=SourceParams)
    w: CorrelationWidths = MEASURED_WIDTHS
    opt: OpticsParams = field(default_factory=OpticsParams)
    det: DetectionParams = field(default_factory=DetectionParams)
    split_ratio: float = 0.5
    duration_s: float = 1.0
    seed: int = 0
    rate_scale: float = 1.0  # multiplies P and B together; tau is untouched
    region: BeamRegion = field(default_factory=beam_region)
    sensor_px: int = 128
    slice_s: float = 0.05
    deconvolve_pixels: bool = True

    def __post_init__(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if not self.duration_s >= 0:
            raise ValueError("duration_s must be non-negative")
        if not self.rate_scale > 0:
            raise ValueError("rate_scale must be positive")
        if not self.slice_s > 0:
            raise ValueError("slice_s must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for name in ("eta_s", "eta_i"):
            if getattr(self.det, name) > 0.5:
                raise ValueError(f"{name} > 0.5 cannot be realised with a 50:50 split")
        cx, cy = self.region.center
        r = self.region.radius_px
        if cx - r < 0 or cy - r < 0 or cx + r >= self.sensor_px or cy + r >= self.sensor_px:
            raise ValueError("beam region does not fit on the sensor")

    @property
    def pair_rate(self) -> float:
        return self.src.pair_rate * self.rate_scale

    @property
    def background_rate(self) -> float:
        return self.det.background_rate * self.rate_scale

    @property
    def n_slices(self) -> int:
        return int(math.ceil(self.duration_s / self.slice_s - 1e-12)) if self.duration_s > 0 else 0


def deconvolved_widths(w: CorrelationWidths, opt: OpticsParams) -> CorrelationWidths:
    """Continuous widths whose pixel-rounded statistics match ``w``."""
    vals = {}
    for plane, narrow, broad in (("position", "delta_r", "sigma_r"), ("momentum", "delta_k", "sigma_k")):
        scale = pixel_scale(plane, opt)
        for name in (narrow, broad):
            s2 = (getattr(w, name) / scale) ** 2 / 2.0 - 2.0 * PIXEL_VARIANCE
            if s2 <= 0:
                raise ValueError(f"{name} is narrower than the pixel response")
            vals[name] = math.sqrt(2.0 * s2) * scale
    return CorrelationWidths(**vals)


def sample_pair(plane: Plane, w: CorrelationWidths, rng: np.random.Generator, size: int | None = None):
    """Correlated photon coordinates ``(chi_s, chi_i)`` in physical units.

    Per axis the narrow coordinate (difference for position, sum for
    momentum) has std ``narrow / sqrt(2)`` and the broad one ``broad / sqrt(2)``.
    """
    shape = (2,) if size is None else (size, 2)
    narrow = rng.normal(0.0, w.narrow(plane) / SQRT2, shape)
    broad = rng.normal(0.0, w.broad(plane) / SQRT2, shape)
    if plane == "position":
        s, t = broad, narrow
    else:
        s, t = narrow, broad
    return (s + t) / 2.0, (s - t) / 2.0


def sample_marginal(plane: Plane, w: CorrelationWidths, rng: np.random.Generator, size: int) -> np.ndarray:
    return rng.normal(0.0, single_photon_std(w, plane), (size, 2))


def gate_efficiency(tau_ns: float, timing_resolution_ns: float) -> float:
    """Probability that a true pair's jittered ``|dt|`` stays within ``tau / 2``."""
    sigma = timing_resolution_ns * FWHM_TO_STD
    if sigma == 0:
        return 1.0
    # dt is the difference of two independent jitters: std sqrt(2) sigma
    return math.erf((tau_ns / 2.0) / (2.0 * sigma))


def matching_model(cfg: SimConfig, tau_ns: float | None = None) -> ModelConfig:
    """Analytic model describing what the simulator produces for ``cfg``."""
    tau = cfg.det.tau_ns if tau_ns is None else tau_ns
    det = replace(
        cfg.det,
        tau_ns=tau,
        background_rate=cfg.background_rate,
        acquisition_s=max(cfg.duration_s, 1e-12),
        pixels_n=cfg.region.pixel_count,
        gate_efficiency=gate_efficiency(tau, cfg.opt.timing_resolution_ns),
    )
    return ModelConfig(
        source=replace(cfg.src, pair_rate=cfg.pair_rate),
        widths=cfg.w,
        detection=det,
        optics=cfg.opt,
        region=cfg.region,
        split_ratio=cfg.split_ratio,
    )


@dataclass
class SliceResult:
    events: list  # one record array per detector
    pairs: int = 0
    detected: int = 0
    lost_efficiency: int = 0
    off_sensor: int = 0
    background: int = 0


def _to_pixels(chi: np.ndarray, plane: Plane, cfg: SimConfig) -> np.ndarray:
    return np.floor(np.asarray(cfg.region.center) + chi / pixel_scale(plane, cfg.opt) + 0.5).astype(np.int64)


def route_and_detect(t_ps: np.ndarray, cfg: SimConfig, rng: np.random.Generator,
                     widths: CorrelationWidths | None = None):
    """Route, detect and pixelate the photons of pairs emitted at ``t_ps``.

    Returns ``(per-detector (t, x, y) columns, tally dict)``.  Photons outside
    the sensor are dropped and counted in ``off_sensor``.
    """
    w = widths or (deconvolved_widths(cfg.w, cfg.opt) if cfg.deconvolve_pixels else cfg.w)
    n = len(t_ps)
    q = cfg.split_ratio
    pos = rng.random((2, n)) < q  # row 0 Alice (signal), row 1 Bob (idler)
    alive = rng.random((2, n)) < np.array([[2 * cfg.det.eta_s], [2 * cfg.det.eta_i]])
    tally = {"lost_efficiency": int(2 * n - alive.sum()), "off_sensor": 0, "detected": 0}

    keep = alive.any(axis=0)
    idx = np.flatnonzero(keep)
    m = len(idx)
    pa, pb = pos[0, idx], pos[1, idx]
    chi = np.zeros((2, m, 2))
    for plane, sel in (("position", pa & pb), ("momentum", ~pa & ~pb)):
        k = int(sel.sum())
        cs, ci = sample_pair(plane, w, rng, k)
        chi[0, sel], chi[1, sel] = cs, ci
    mixed = pa != pb
    for who, basis in ((0, pa), (1, pb)):
        for plane, flag in (("position", True), ("momentum", False)):
            sel = mixed & (basis == flag)
            chi[who, sel] = sample_marginal(plane, w, rng, int(sel.sum()))
    jitter = cfg.opt.timing_resolution_ns * 1000.0 * FWHM_TO_STD
    t_end = int(round(cfg.duration_s * 1e12))
    t_pair = t_ps[idx]

    out = {}
    for who, party in ((0, "alice"), (1, "bob")):
        dt = rng.normal(0.0, jitter, m) if jitter > 0 else np.zeros(m)
        t = np.clip(np.rint(t_pair + dt), 0, t_end).astype(np.int64)
        live = alive[who, idx]
        for plane, flag in (("position", True), ("momentum", False)):
            sel = live & (pos[who, idx] == flag)
            pix = _to_pixels(chi[who, sel], plane, cfg)
            on = np.all((pix >= 0) & (pix < cfg.sensor_px), axis=1)
            tally["off_sensor"] += int((~on).sum())
            tally["detected"] += int(on.sum())
            name = f"{party}_{'pos' if flag else 'mom'}"
            out[name] = (t[sel][on], pix[on, 0], pix[on, 1])
    return out, tally


def generate_background(det: DetectionParams, region: BeamRegion, duration_s: float,
                        rng: np.random.Generator, t0_s: float = 0.0, eta: float | None = None,
                        rate_scale: float = 1.0, weight: float = 1.0):
    """Poisson background for one detector: rate ``eta * B``, uniform over region pixels."""
    eta = det.eta_s if eta is None else eta
    mean = eta * det.background_rate * rate_scale * weight * duration_s
    n = int(rng.poisson(mean)) if mean > 0 else 0
    t = np.sort(np.floor((t0_s + rng.random(n) * duration_s) * 1e12)).astype(np.int64)
    pix = region.pixels()
    pick = pix[rng.integers(0, len(pix), n)] if n else np.zeros((0, 2), dtype=np.int64)
    return t, pick[:, 0], pick[:, 1]


def slice_seed(seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=(index,))


def simulate_slice(cfg: SimConfig, index: int) -> SliceResult:
    rng = np.random.default_rng(slice_seed(cfg.seed, index))
    t0 = index * cfg.slice_s
    dur = min(cfg.slice_s, cfg.duration_s - t0)
    n = int(rng.poisson(cfg.pair_rate * dur))
    t_pairs = np.sort(t0 + rng.random(n) * dur) * 1e12
    sig, tally = route_and_detect(t_pairs, cfg, rng)
    res = SliceResult([], pairs=n, **tally)
    q = cfg.split_ratio
    for name in DETECTORS:
        eta = cfg.det.eta_s if name.startswith("alice") else cfg.det.eta_i
        weight = 2 * q if name.endswith("pos") else 2 * (1 - q)
        tb, xb, yb = generate_background(cfg.det, cfg.region, dur, rng, t0, eta, cfg.rate_scale, weight)
        res.background += len(tb)
        ts, xs, ys = sig[name]
        rec = np.zeros(len(ts) + len(tb), dtype=RECORD_DTYPE)
        rec["t"] = np.concatenate([ts, tb])
        rec["x"] = np.concatenate([xs, xb])
        rec["y"] = np.concatenate([ys, yb])
        rec["flags"][len(ts):] = FLAG_BACKGROUND
        res.events.append(rec[np.argsort(rec["t"], kind="stable")])
    return res


@dataclass
class SimulationSummary:
    seed: int
    duration_s: float
    pairs_generated: int
    photons_detected: int
    photons_lost_to_efficiency: int
    photons_off_sensor: int
    background_events: int
    events_written: dict[str, int]

    @property
    def conserved(self) -> bool:
        return 2 * self.pairs_generated == (
            self.photons_detected + self.photons_lost_to_efficiency + self.photons_off_sensor
        )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def simulate_records(cfg: SimConfig, workers: int = 1) -> tuple[list[np.ndarray], SimulationSummary]:
    """Generate all four record arrays in memory."""
    indices = range(cfg.n_slices)
    if workers > 1 and cfg.n_slices > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(simulate_slice, [cfg] * cfg.n_slices, indices))
    else:
        parts = [simulate_slice(cfg, i) for i in indices]
    streams = []
    for d in range(len(DETECTORS)):
        chunks = [p.events[d] for p in parts]
        rec = np.concatenate(chunks) if chunks else np.zeros(0, dtype=RECORD_DTYPE)
        # jitter can push events across slice boundaries
        streams.append(rec[np.argsort(rec["t"], kind="stable")])
    summary = SimulationSummary(
        seed=cfg.seed,
        duration_s=cfg.duration_s,
        pairs_generated=sum(p.pairs for p in parts),
        photons_detected=sum(p.detected for p in parts),
        photons_lost_to_efficiency=sum(p.lost_efficiency for p in parts),
        photons_off_sensor=sum(p.off_sensor for p in parts),
        background_events=sum(p.background for p in parts),
        events_written={name: int(len(s)) for name, s in zip(DETECTORS, streams)},
    )
    return streams, summary


def stream_path(out_dir: str | os.PathLike, detector: str) -> Path:
    return Path(out_dir) / f"{detector}.pmqk"


def run_simulation(cfg: SimConfig, out_dir: str | os.PathLike, workers: int = 1) -> SimulationSummary:
    """Write one event stream per detector into ``out_dir``."""
    streams, summary = simulate_records(cfg, workers)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    for det_id, (name, rec) in enumerate(zip(DETECTORS, streams)):
        write_stream(EventStreamHeader(det_id, len(rec)), rec, stream_path(out, name))
    return summary

