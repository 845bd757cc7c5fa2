"""Closed-form joint detection matrix.

Each cell is the expected number of matched-basis coincidences between
Alice's mode ``a`` (column) and Bob's mode ``b`` (row) over the acquisition
time: correlated pairs (``alpha``) plus accidentals (``beta``), summed over
the position-position and momentum-momentum configurations.

Conventions
-----------
* ``eta_s``/``eta_i`` are per-beam system efficiencies quoted at a balanced
  50:50 basis split, i.e. they already contain the routing loss (singles per
  beam are ``eta * (P + B)``).  A split ratio ``q`` therefore weights the
  position configuration by ``(2q)^2`` and the momentum one by ``(2(1-q))^2``;
  both weights are 1 at the default ``q = 0.5``.
* ``tau_ns`` is the full coincidence gate; accidentals scale as ``tau * S1 * S2``.
* Pixel coordinates passed to :func:`alpha_term` / :func:`beta_term` are
  offsets from the beam centre in the *mode frame*: Bob's momentum pixel has
  already been reflected, so ``phi(k_s, -k_i)`` is evaluated and the
  correlation sits on the diagonal.
* ``refine = 1`` evaluates densities at pixel centres times pixel area (the
  default: the measured widths already include the camera's pixel response);
  ``refine = n`` averages over an ``n x n`` sub-pixel midpoint lattice.
"""

from __future__ import annotations

import io
import json
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterator

import numpy as np

from .layouts import BeamRegion, ModeGrid, beam_region
from .physics import (
    MEASURED_WIDTHS,
    CorrelationWidths,
    OpticsParams,
    Plane,
    SourceParams,
    biphoton_intensity_momentum,
    biphoton_intensity_position,
    marginal_pair_rate,
    pixel_scale,
    pixel_widths,
    scale_correlation_widths,
)


class UnusableModesWarning(UserWarning):
    """Some Alice modes collected no counts and were excluded."""


@dataclass(frozen=True)
class DetectionParams:
    eta_s: float = 0.02
    eta_i: float = 0.02
    tau_ns: float = 20.0
    background_rate: float = 6.75e6
    pixels_n: int | None = None  # None: use the beam region's pixel count
    acquisition_s: float = 1.0
    gate_efficiency: float = 1.0  # fraction of true pairs whose jittered dt falls in the gate

    def __post_init__(self) -> None:
        for name in ("eta_s", "eta_i"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1], got {v!r}")
        if not self.tau_ns >= 0:
            raise ValueError(f"tau_ns must be non-negative, got {self.tau_ns!r}")
        if not self.acquisition_s > 0:
            raise ValueError(f"acquisition_s must be positive, got {self.acquisition_s!r}")
        if not self.background_rate >= 0:
            raise ValueError(f"background_rate must be non-negative, got {self.background_rate!r}")
        if not 0 < self.gate_efficiency <= 1:
            raise ValueError(f"gate_efficiency must lie in (0, 1], got {self.gate_efficiency!r}")
        if self.pixels_n is not None and self.pixels_n < 1:
            raise ValueError(f"pixels_n must be >= 1, got {self.pixels_n!r}")

    def background_per_pixel(self, region: BeamRegion) -> float:
        n = self.pixels_n if self.pixels_n is not None else region.pixel_count
        return self.background_rate / n


@dataclass(frozen=True)
class NextGenParams:
    """Projected superconducting-nanowire camera."""

    eta: float = 0.3
    tau_ns: float = 0.1
    resolution_gain: float = 1.5
    timing_resolution_ns: float = 0.04

    def __post_init__(self) -> None:
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if not self.tau_ns > 0 or not self.resolution_gain > 0 or not self.timing_resolution_ns > 0:
            raise ValueError("tau_ns, resolution_gain and timing_resolution_ns must be positive")


@dataclass(frozen=True)
class ModelConfig:
    """Everything the analytic model needs for one operating point."""

    source: SourceParams = field(default_factory=SourceParams)
    widths: CorrelationWidths = MEASURED_WIDTHS
    detection: DetectionParams = field(default_factory=DetectionParams)
    optics: OpticsParams = field(default_factory=OpticsParams)
    region: BeamRegion = field(default_factory=beam_region)
    split_ratio: float = 0.5
    refine: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.split_ratio < 1:
            raise ValueError("split_ratio must lie in (0, 1)")
        if self.refine < 1:
            raise ValueError("refine must be >= 1")

    def basis_weight(self, plane: Plane) -> float:
        q = self.split_ratio if plane == "position" else 1.0 - self.split_ratio
        return (2.0 * q) ** 2


def next_generation(model: ModelConfig, ng: NextGenParams = NextGenParams()) -> ModelConfig:
    """Model with next-generation detector parameters substituted.

    Narrow correlation widths shrink by ``resolution_gain`` in pixel units and
    the usable mode aperture grows by the same factor in radius; efficiency
    and gate are replaced, everything else is inherited.
    """
    region = BeamRegion.from_radius(model.region.center, model.region.radius_px * ng.resolution_gain)
    det = replace(model.detection, eta_s=ng.eta, eta_i=ng.eta, tau_ns=ng.tau_ns, pixels_n=None)
    optics = replace(model.optics, timing_resolution_ns=ng.timing_resolution_ns)
    return replace(
        model,
        widths=scale_correlation_widths(model.widths, ng.resolution_gain),
        detection=det,
        optics=optics,
        region=region,
    )


def _subpixel_offsets(refine: int) -> np.ndarray:
    return (np.arange(refine) + 0.5) / refine - 0.5


def _pixel_pair_average(fn, chi_s, chi_i, refine: int) -> float:
    """Mean of ``fn`` over the two pixels' sub-pixel lattices (4D)."""
    o = _subpixel_offsets(refine)
    ox, oy = np.meshgrid(o, o, indexing="ij")
    sub = np.stack([ox.ravel(), oy.ravel()], axis=1)
    s = np.asarray(chi_s, dtype=float) + sub
    i = np.asarray(chi_i, dtype=float) + sub
    return float(np.mean(fn(s[:, None, :], i[None, :, :])))


def alpha_term(
    chi_s,
    chi_i,
    plane: Plane,
    src: SourceParams,
    w: CorrelationWidths,
    det: DetectionParams,
    optics: OpticsParams = OpticsParams(),
    refine: int = 1,
) -> float:
    """Expected correlated coincidences between two pixels over the acquisition."""
    scale = pixel_scale(plane, optics)
    if plane == "position":
        density = lambda a, b: biphoton_intensity_position(a * scale, b * scale, w)
    else:
        density = lambda a, b: biphoton_intensity_momentum(a * scale, -b * scale, w)
    mean = _pixel_pair_average(density, chi_s, chi_i, refine)
    k = det.eta_s * det.eta_i * det.gate_efficiency * src.pair_rate * det.acquisition_s
    return k * mean * scale**4


def pixel_pair_rate(chi, plane: Plane, src: SourceParams, w: CorrelationWidths,
                    optics: OpticsParams = OpticsParams(), refine: int = 1) -> float:
    """SPDC photon rate landing on one pixel (pairs/s)."""
    scale = pixel_scale(plane, optics)
    o = _subpixel_offsets(refine)
    ox, oy = np.meshgrid(o, o, indexing="ij")
    pts = (np.asarray(chi, dtype=float) + np.stack([ox.ravel(), oy.ravel()], axis=1)) * scale
    return float(np.mean(marginal_pair_rate(pts, plane, src, w))) * scale**2


def beta_term(
    chi_s,
    chi_i,
    plane: Plane,
    src: SourceParams,
    w: CorrelationWidths,
    det: DetectionParams,
    optics: OpticsParams = OpticsParams(),
    region: BeamRegion | None = None,
    refine: int = 1,
) -> float:
    """Expected accidental coincidences between two pixels over the acquisition."""
    region = region if region is not None else beam_region()
    b = det.background_per_pixel(region)
    ps = pixel_pair_rate(chi_s, plane, src, w, optics, refine) + b
    pi = pixel_pair_rate(chi_i, plane, src, w, optics, refine) + b
    return det.eta_s * det.eta_i * det.tau_ns * 1e-9 * ps * pi * det.acquisition_s


@dataclass(frozen=True, eq=False)
class JointDetectionMatrix:
    """Coincidence counts ``counts[bob_mode, alice_mode]`` and their column-normalized form.

    Columns without counts are marked unusable: their conditional column is
    zero and they are left out of the error rate.
    """

    counts: np.ndarray
    conditional: np.ndarray
    usable: np.ndarray

    @property
    def d(self) -> int:
        return int(self.counts.shape[0])

    @property
    def effective_d(self) -> int:
        return int(np.count_nonzero(self.usable))

    @classmethod
    def from_counts(cls, counts) -> "JointDetectionMatrix":
        counts = np.asarray(counts, dtype=float)
        if counts.ndim != 2 or counts.shape[0] != counts.shape[1]:
            raise ValueError("counts must be a square matrix")
        if counts.shape[0] < 2:
            raise ValueError("joint detection matrix needs d >= 2")
        if np.any(counts < 0) or not np.all(np.isfinite(counts)):
            raise ValueError("counts must be finite and non-negative")
        col = counts.sum(axis=0)
        usable = col > 0
        conditional = np.zeros_like(counts)
        conditional[:, usable] = counts[:, usable] / col[usable]
        if not np.all(usable):
            warnings.warn(
                f"{int(np.sum(~usable))} of {counts.shape[0]} modes have no counts and are excluded",
                UnusableModesWarning,
                stacklevel=2,
            )
        return cls(counts, conditional, usable)

    def to_csv(self, which: str = "counts") -> str:
        data = self.counts if which == "counts" else self.conditional
        buf = io.StringIO()
        buf.write(f"{self.d}\n")
        np.savetxt(buf, data, delimiter=",", fmt="%.12g")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "JointDetectionMatrix":
        lines = text.strip().splitlines()
        d = int(lines[0])
        counts = np.loadtxt(lines[1:], delimiter=",", ndmin=2)
        if counts.shape != (d, d):
            raise ValueError(f"expected a {d}x{d} matrix, found {counts.shape}")
        return cls.from_counts(counts)

    def to_json(self) -> str:
        return json.dumps(
            {
                "d": self.d,
                "counts": self.counts.tolist(),
                "conditional": self.conditional.tolist(),
                "usable": self.usable.tolist(),
            }
        )


class _PlaneTables:
    """Per-axis pixel-pair integrals for one plane on a grid's coordinate span."""

    def __init__(self, grid: ModeGrid, plane: Plane, model: ModelConfig):
        pw = pixel_widths(model.widths, plane, model.optics)
        off = grid.offsets()
        lo = int(off.min())
        coords = np.arange(lo, int(off.max()) + 1, dtype=float)
        o = _subpixel_offsets(model.refine)
        xs = (coords[:, None] + o[None, :])[:, None, :, None]
        xi = (coords[:, None] + o[None, :])[None, :, None, :]
        f = (2.0 / (math.pi * pw.narrow * pw.broad)) * np.exp(
            -((xs - xi) ** 2) / pw.narrow**2 - ((xs + xi) ** 2) / pw.broad**2
        )
        self.pair = f.mean(axis=(2, 3))
        s = pw.single_std
        x = coords[:, None] + o[None, :]
        self.single = (np.exp(-(x**2) / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)).mean(axis=1)
        self.ix = (off[:, 0] - lo).astype(np.intp)
        self.iy = (off[:, 1] - lo).astype(np.intp)


class _MatrixAssembler:
    def __init__(self, grid: ModeGrid, model: ModelConfig):
        if grid.d < 2:
            raise ValueError("degenerate grid: d < 2")
        det = model.detection
        self.d = grid.d
        self.T = det.acquisition_s
        self.planes = []
        eta2 = det.eta_s * det.eta_i
        bg = det.background_per_pixel(grid.region)
        for plane in ("position", "momentum"):
            t = _PlaneTables(grid, plane, model)
            p = model.source.pair_rate * t.single[t.ix] * t.single[t.iy]
            singles = p + bg
            self.planes.append(
                (
                    model.basis_weight(plane),
                    t,
                    eta2 * det.gate_efficiency * model.source.pair_rate * self.T,
                    eta2 * det.tau_ns * 1e-9 * self.T,
                    singles,
                )
            )

    def column_block(self, cols: slice) -> np.ndarray:
        """``counts[:, cols]``; every cell is summed in the same fixed order."""
        out = np.zeros((self.d, cols.stop - cols.start))
        for weight, t, k_alpha, k_beta, singles in self.planes:
            alpha = t.pair[t.ix[:, None], t.ix[None, cols]] * t.pair[t.iy[:, None], t.iy[None, cols]]
            beta = np.outer(singles, singles[cols])
            out += weight * (k_alpha * alpha + k_beta * beta)
        return out

    def blocks(self, size: int = 512) -> Iterator[tuple[slice, np.ndarray]]:
        for start in range(0, self.d, size):
            cols = slice(start, min(self.d, start + size))
            yield cols, self.column_block(cols)


def build_joint_matrix(grid_alice: ModeGrid, model: ModelConfig) -> JointDetectionMatrix:
    asm = _MatrixAssembler(grid_alice, model)
    counts = np.empty((asm.d, asm.d))
    for cols, block in asm.blocks():
        counts[:, cols] = block
    return JointDetectionMatrix.from_counts(counts)


@dataclass(frozen=True)
class MatrixSummary:
    """Diagonal, column sums and total of a joint matrix (no d x d storage)."""

    diag: np.ndarray
    column_sums: np.ndarray
    acquisition_s: float

    @property
    def d(self) -> int:
        return int(self.diag.shape[0])

    @property
    def total(self) -> float:
        return float(self.column_sums.sum())


def matrix_summary(grid_alice: ModeGrid, model: ModelConfig) -> MatrixSummary:
    asm = _MatrixAssembler(grid_alice, model)
    diag = np.empty(asm.d)
    colsum = np.empty(asm.d)
    for cols, block in asm.blocks():
        idx = np.arange(cols.start, cols.stop)
        diag[cols] = block[idx, idx - cols.start]
        colsum[cols] = block.sum(axis=0)
    return MatrixSummary(diag, colsum, asm.T)


def sifted_rate(grid_alice: ModeGrid, model: ModelConfig) -> float:
    """Matched-basis coincidences per second landing on mode-pixel pairs."""
    s = matrix_summary(grid_alice, model)
    return s.total / s.acquisition_s
