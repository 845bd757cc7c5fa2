"""Mode-pixel layouts inside the illuminated beam region.

A mode is a single camera pixel.  Alice and Bob share the same layout; Bob's
mode pixel is the identity image of Alice's in the position basis and its
point reflection through the beam centre in the momentum basis (the far-field
anticorrelation then shows up on the diagonal).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Literal, Sequence, TypeVar

import numpy as np

Layout = Literal["cartesian", "angled45", "hex"]
LAYOUT_ORDER: tuple[Layout, ...] = ("cartesian", "angled45", "hex")

DEFAULT_CENTER = (64, 64)
DEFAULT_PIXEL_COUNT = 4293


class OutOfRegionError(ValueError):
    """A mapped pixel falls outside the receiving beam region."""


def _count_within(k: int) -> int:
    """Number of integer sites (dx, dy) with dx^2 + dy^2 <= k."""
    r = math.isqrt(k)
    dx = np.arange(-r, r + 1)
    return int(np.sum(2 * np.floor(np.sqrt(np.maximum(k - dx * dx, 0))).astype(int) + 1))


@dataclass(frozen=True)
class BeamRegion:
    """Disc of camera pixels within ``radius_px`` of an integer centre."""

    center: tuple[int, int]
    radius_px: float
    pixel_count: int

    @classmethod
    def from_radius(cls, center: Sequence[int], radius_px: float) -> "BeamRegion":
        if radius_px < 0:
            raise ValueError("radius must be non-negative")
        k = math.floor(radius_px * radius_px + 1e-9)
        cx, cy = (int(c) for c in center)
        return cls((cx, cy), float(radius_px), _count_within(k))

    def contains(self, pixels) -> np.ndarray:
        p = np.asarray(pixels)
        dx = p[..., 0] - self.center[0]
        dy = p[..., 1] - self.center[1]
        return dx * dx + dy * dy <= self.radius_px**2 + 1e-9

    def pixels(self) -> np.ndarray:
        """All region pixels, row-major (by y, then x)."""
        r = int(math.floor(self.radius_px))
        cx, cy = self.center
        ys, xs = np.mgrid[cy - r : cy + r + 1, cx - r : cx + r + 1]
        pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
        return pts[self.contains(pts)]


def beam_region(center: Sequence[int] = DEFAULT_CENTER, target_pixel_count: int = DEFAULT_PIXEL_COUNT) -> BeamRegion:
    """Smallest disc around ``center`` holding at least ``target_pixel_count`` pixels."""
    if target_pixel_count < 1:
        raise ValueError("target_pixel_count must be >= 1")
    half = int(math.sqrt(target_pixel_count / math.pi)) + 2
    while True:
        d = np.arange(-half, half + 1)
        r2 = np.sort((d[:, None] ** 2 + d[None, :] ** 2).ravel())
        k = int(r2[target_pixel_count - 1])
        # every site with r^2 <= k must lie inside the enumerated box
        if k < (half + 1) ** 2:
            break
        half *= 2
    return BeamRegion.from_radius(center, math.sqrt(k))


def _lattice_vectors(layout: Layout, spacing: float) -> tuple[np.ndarray, np.ndarray]:
    if layout == "cartesian":
        return np.array([spacing, 0.0]), np.array([0.0, spacing])
    if layout == "angled45":
        c = spacing / math.sqrt(2.0)
        return np.array([c, c]), np.array([-c, c])
    if layout == "hex":
        return np.array([spacing, 0.0]), np.array([spacing / 2.0, spacing * math.sqrt(3.0) / 2.0])
    raise ValueError(f"unknown layout {layout!r}")


@dataclass(frozen=True, eq=False)
class ModeGrid:
    layout: Layout
    spacing_px: float
    region: BeamRegion
    modes: np.ndarray  # (d, 2) integer pixel coordinates, row-major order

    @property
    def d(self) -> int:
        return int(self.modes.shape[0])

    def offsets(self) -> np.ndarray:
        """Mode coordinates relative to the beam centre."""
        return self.modes - np.asarray(self.region.center)

    def to_dict(self) -> dict:
        return {
            "layout": self.layout,
            "spacing_px": self.spacing_px,
            "center": list(self.region.center),
            "radius_px": self.region.radius_px,
            "modes": self.modes.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc: dict) -> "ModeGrid":
        missing = {"layout", "spacing_px", "center", "radius_px", "modes"} - set(doc)
        if missing:
            raise ValueError(f"grid document missing keys: {sorted(missing)}")
        if doc["layout"] not in LAYOUT_ORDER:
            raise ValueError(f"unknown layout {doc['layout']!r}")
        region = BeamRegion.from_radius(doc["center"], float(doc["radius_px"]))
        modes = np.asarray(doc["modes"], dtype=np.int64).reshape(-1, 2)
        grid = cls(doc["layout"], float(doc["spacing_px"]), region, modes)
        _validate(grid)
        return grid

    @classmethod
    def from_json(cls, text: str) -> "ModeGrid":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModeGrid):
            return NotImplemented
        return (
            self.layout == other.layout
            and self.spacing_px == other.spacing_px
            and self.region == other.region
            and np.array_equal(self.modes, other.modes)
        )


def _validate(grid: ModeGrid) -> None:
    if grid.d < 2:
        raise ValueError(f"grid must hold at least 2 modes, got {grid.d}")
    if not np.all(grid.region.contains(grid.modes)):
        raise ValueError("grid contains modes outside its beam region")
    if len(np.unique(grid.modes, axis=0)) != grid.d:
        raise ValueError("grid contains duplicate mode pixels")


def generate_grid(layout: Layout, spacing_px: float, region: BeamRegion) -> ModeGrid:
    """Lattice of mode pixels through the region centre, rounded to pixels.

    Raises ``ValueError`` when fewer than two distinct pixels survive.
    """
    if not spacing_px >= 1:
        raise ValueError("spacing_px must be >= 1 pixel")
    e1, e2 = _lattice_vectors(layout, spacing_px)
    # the smallest lattice row spacing is sqrt(3)/2 * s for hex
    n = int(math.ceil(region.radius_px / (spacing_px * math.sqrt(3.0) / 2.0))) + 2
    i, j = np.meshgrid(np.arange(-n, n + 1), np.arange(-n, n + 1), indexing="ij")
    pts = i.reshape(-1, 1) * e1 + j.reshape(-1, 1) * e2 + np.asarray(region.center, dtype=float)
    pix = np.floor(pts + 0.5).astype(np.int64)
    pix = pix[region.contains(pix)]
    pix = np.unique(pix, axis=0)
    pix = pix[np.lexsort((pix[:, 0], pix[:, 1]))]
    grid = ModeGrid(layout, float(spacing_px), region, pix)
    if grid.d < 2:
        raise ValueError(
            f"{layout} grid with spacing {spacing_px} px leaves only {grid.d} mode(s) in the region"
        )
    return grid


def bob_mode_pixels(alice_pixels, basis: str, region_bob: BeamRegion) -> np.ndarray:
    """Vectorised :func:`bob_mode_pixel`."""
    p = np.asarray(alice_pixels, dtype=np.int64)
    if basis == "position":
        out = p.copy()
    elif basis == "momentum":
        out = 2 * np.asarray(region_bob.center, dtype=np.int64) - p
    else:
        raise ValueError(f"unknown basis {basis!r}")
    inside = region_bob.contains(out)
    if not np.all(inside):
        bad = out[~inside].reshape(-1, 2)[0]
        raise OutOfRegionError(f"mapped pixel {tuple(int(v) for v in bad)} lies outside Bob's region")
    return out


def bob_mode_pixel(alice_pixel: Sequence[int], basis: str, region_bob: BeamRegion) -> tuple[int, int]:
    x, y = bob_mode_pixels(np.asarray(alice_pixel).reshape(1, 2), basis, region_bob)[0]
    return int(x), int(y)


T = TypeVar("T")


def merge_sweeps(results: Iterable[tuple[int, str, T]], key=lambda m: m.qder_e) -> list[tuple[int, str, T]]:
    """Keep, for every dimension, the entry with the lowest error rate.

    Ties are broken by layout order (cartesian, angled45, hex), then by input
    order.  Output is sorted by ascending ``d``.
    """
    best: dict[int, tuple[tuple, tuple[int, str, T]]] = {}
    for n, (d, layout, metrics) in enumerate(results):
        rank = (key(metrics), LAYOUT_ORDER.index(layout) if layout in LAYOUT_ORDER else len(LAYOUT_ORDER), n)
        if d not in best or rank < best[d][0]:
            best[d] = (rank, (d, layout, metrics))
    return [best[d][1] for d in sorted(best)]


def block_grid(side: int, spacing_px: int, region: BeamRegion) -> ModeGrid:
    """``side x side`` cartesian block of modes centred on the beam.

    Unlike :func:`generate_grid` this reaches any square ``d`` (a lattice
    through the centre only yields ``d = 1 mod 4``).  Even sides need an even
    spacing so the half-spacing offset stays on integer pixels.
    """
    if side < 2 or spacing_px < 1 or int(spacing_px) != spacing_px:
        raise ValueError("need side >= 2 and an integer spacing >= 1")
    if side % 2 == 0 and spacing_px % 2:
        raise ValueError("even block sides need an even spacing")
    half = (side - 1) * spacing_px / 2.0
    axis = np.arange(side) * spacing_px - half
    xs, ys = np.meshgrid(axis, axis)
    pix = (np.stack([xs.ravel(), ys.ravel()], axis=1) + np.asarray(region.center)).astype(np.int64)
    grid = ModeGrid("cartesian", float(spacing_px), region, pix)
    _validate(grid)
    return grid
