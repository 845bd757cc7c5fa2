"""Double-Gaussian biphoton model and camera unit conversions.

All widths stored in :class:`CorrelationWidths` are amplitude widths, i.e. the
``delta`` and ``sigma`` appearing in

    psi(r_s, r_i) ~ exp(-|r_s - r_i|^2 / (2 delta_r^2)) exp(-|r_s + r_i|^2 / (2 sigma_r^2))

so the squared modulus has ``exp(-|r_s - r_i|^2 / delta_r^2)``.  The per-axis
standard deviation of ``r_s - r_i`` under the intensity is ``delta_r / sqrt(2)``
and the same holds for every (narrow or broad) quadrature coordinate.  A single
photon coordinate ``r_s = (sum + diff) / 2`` therefore has per-axis intensity
std ``sqrt(delta^2 + sigma^2) / (2 sqrt(2))``.

Densities are normalized so that the squared modulus integrates to 1 over the
full 4D space; the pair rate ``P`` is then the only rate scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np

Plane = Literal["position", "momentum"]
PLANES: tuple[Plane, Plane] = ("position", "momentum")

SQRT2 = math.sqrt(2.0)


def _require_positive(**values: float) -> None:
    for name, value in values.items():
        if not (value > 0 and math.isfinite(value)):
            raise ValueError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class SourceParams:
    """Physical description of the SPDC source.

    Lengths follow the units used in the lab: pump width in micrometres,
    crystal length in millimetres, pump wavelength in nanometres.
    ``pair_rate`` is the pair rate per measurement plane (pairs/s).
    """

    pump_width_um: float = 480.0
    crystal_length_mm: float = 1.0
    pump_wavelength_nm: float = 405.0
    pair_rate: float = 8.25e6
    alpha_const: float = 0.455

    def __post_init__(self) -> None:
        _require_positive(
            pump_width_um=self.pump_width_um,
            crystal_length_mm=self.crystal_length_mm,
            pump_wavelength_nm=self.pump_wavelength_nm,
        )
        if not (self.pair_rate >= 0 and math.isfinite(self.pair_rate)):
            raise ValueError(f"pair_rate must be non-negative, got {self.pair_rate!r}")
        if not 0 < self.alpha_const < 1:
            raise ValueError(f"alpha_const must lie in (0, 1), got {self.alpha_const!r}")


@dataclass(frozen=True)
class CorrelationWidths:
    """Amplitude widths of the biphoton state.

    ``delta_r``/``sigma_r`` in micrometres, ``delta_k``/``sigma_k`` in inverse
    micrometres.
    """

    delta_r: float
    sigma_r: float
    delta_k: float
    sigma_k: float

    def __post_init__(self) -> None:
        _require_positive(
            delta_r=self.delta_r,
            sigma_r=self.sigma_r,
            delta_k=self.delta_k,
            sigma_k=self.sigma_k,
        )
        if not self.delta_r < self.sigma_r:
            raise ValueError("delta_r must be smaller than sigma_r")
        if not self.delta_k < self.sigma_k:
            raise ValueError("delta_k must be smaller than sigma_k")

    def narrow(self, plane: Plane) -> float:
        return self.delta_r if plane == "position" else self.delta_k

    def broad(self, plane: Plane) -> float:
        return self.sigma_r if plane == "position" else self.sigma_k


# Widths extracted from the camera data (0.90, 36.8, 0.65 and 34.5 px fits).
MEASURED_WIDTHS = CorrelationWidths(delta_r=14.0, sigma_r=573.0, delta_k=6.5e-3, sigma_k=0.34)


@dataclass(frozen=True)
class OpticsParams:
    """Imaging optics and camera.

    ``magnification`` magnifies the near field onto the camera and demagnifies
    the far field by the same factor.
    """

    pixel_pitch_um: float = 55.0
    magnification: float = 5.0
    focal_length_mm: float = 300.0
    spdc_wavelength_nm: float = 810.0
    timing_resolution_ns: float = 8.0

    def __post_init__(self) -> None:
        _require_positive(
            pixel_pitch_um=self.pixel_pitch_um,
            magnification=self.magnification,
            focal_length_mm=self.focal_length_mm,
            spdc_wavelength_nm=self.spdc_wavelength_nm,
            timing_resolution_ns=self.timing_resolution_ns,
        )


def compute_widths(src: SourceParams) -> CorrelationWidths:
    """Theoretical widths from pump width, crystal length and pump wavelength.

    The two narrow widths come from the source geometry and the broad widths
    follow from Fourier conjugacy (``sigma_k * delta_r = 2``,
    ``sigma_r * delta_k = 1/2``).
    """
    length_um = src.crystal_length_mm * 1e3
    wavelength_um = src.pump_wavelength_nm * 1e-3
    delta_k = 1.0 / (2.0 * src.pump_width_um)
    delta_r = math.sqrt(2.0 * src.alpha_const * length_um * wavelength_um / math.pi)
    return CorrelationWidths(
        delta_r=delta_r,
        sigma_r=1.0 / (2.0 * delta_k),
        delta_k=delta_k,
        sigma_k=2.0 / delta_r,
    )


def _pair_density(a, b, narrow: float, broad: float, anti: bool) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    near = a + b if anti else a - b
    far = a - b if anti else a + b
    norm = (2.0 / (math.pi * narrow * broad)) ** 2
    return norm * np.exp(
        -np.sum(near**2, axis=-1) / narrow**2 - np.sum(far**2, axis=-1) / broad**2
    )


def biphoton_intensity_position(r_s, r_i, w: CorrelationWidths) -> np.ndarray:
    """|psi(r_s, r_i)|^2 in um^-4; coordinates are 2-vectors along the last axis."""
    return _pair_density(r_s, r_i, w.delta_r, w.sigma_r, anti=False)


def biphoton_intensity_momentum(k_s, k_i, w: CorrelationWidths) -> np.ndarray:
    """|phi(k_s, k_i)|^2 in um^4; narrow in ``k_s + k_i`` (anticorrelated)."""
    return _pair_density(k_s, k_i, w.delta_k, w.sigma_k, anti=True)


def single_photon_std(w: CorrelationWidths, plane: Plane) -> float:
    """Per-axis std of one photon's coordinate under the intensity."""
    return math.hypot(w.narrow(plane), w.broad(plane)) / (2.0 * SQRT2)


def marginal_pair_rate(chi, plane: Plane, src: SourceParams, w: CorrelationWidths) -> np.ndarray:
    """Pair-rate density ``p(chi) = P |integral psi d^2 chi_i|^2`` normalized to ``P``.

    For the double Gaussian the squared amplitude marginal is an isotropic
    Gaussian of per-axis variance ``(delta^2 + sigma^2) / 8``.  Units are
    pairs/s per um^2 (position) or per um^-2 (momentum).
    """
    s = single_photon_std(w, plane)
    chi = np.asarray(chi, dtype=float)
    r2 = np.sum(chi**2, axis=-1)
    return src.pair_rate * np.exp(-r2 / (2.0 * s * s)) / (2.0 * math.pi * s * s)


def position_pixel_scale(o: OpticsParams) -> float:
    """Crystal-plane length (um) spanned by one camera pixel."""
    return o.pixel_pitch_um / o.magnification


def momentum_pixel_scale(o: OpticsParams) -> float:
    """Transverse wavenumber (um^-1) spanned by one camera pixel."""
    wavenumber = 2.0 * math.pi / (o.spdc_wavelength_nm * 1e-3)
    return o.pixel_pitch_um * o.magnification * wavenumber / (o.focal_length_mm * 1e3)


def pixel_scale(plane: Plane, o: OpticsParams) -> float:
    return position_pixel_scale(o) if plane == "position" else momentum_pixel_scale(o)


def px_to_position_width(w_px: float, o: OpticsParams = OpticsParams()) -> float:
    """Amplitude width (um) from a fitted intensity width in pixels."""
    if w_px < 0:
        raise ValueError("pixel width must be non-negative")
    return w_px * position_pixel_scale(o) * SQRT2


def px_to_momentum_width(w_px: float, o: OpticsParams = OpticsParams()) -> float:
    """Amplitude width (um^-1) from a fitted far-field intensity width in pixels."""
    if w_px < 0:
        raise ValueError("pixel width must be non-negative")
    return w_px * momentum_pixel_scale(o) * SQRT2


def width_to_px(width: float, plane: Plane, o: OpticsParams = OpticsParams()) -> float:
    """Inverse of the ``px_to_*_width`` conversions (intensity width in pixels)."""
    return width / (pixel_scale(plane, o) * SQRT2)


@dataclass(frozen=True)
class PixelWidths:
    """Amplitude widths of one plane expressed in camera pixels."""

    narrow: float
    broad: float

    @property
    def single_std(self) -> float:
        return math.hypot(self.narrow, self.broad) / (2.0 * SQRT2)


def pixel_widths(w: CorrelationWidths, plane: Plane, o: OpticsParams = OpticsParams()) -> PixelWidths:
    scale = pixel_scale(plane, o)
    return PixelWidths(narrow=w.narrow(plane) / scale, broad=w.broad(plane) / scale)


def scale_correlation_widths(w: CorrelationWidths, factor: float) -> CorrelationWidths:
    """Divide the narrow (correlation) widths by ``factor``; broad widths unchanged."""
    _require_positive(factor=factor)
    return CorrelationWidths(
        delta_r=w.delta_r / factor,
        sigma_r=w.sigma_r,
        delta_k=w.delta_k / factor,
        sigma_k=w.sigma_k,
    )
