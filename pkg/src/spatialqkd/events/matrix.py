"""Measured joint detection matrices from matched-basis coincidences."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from ..analytic import JointDetectionMatrix
from ..layouts import BeamRegion, ModeGrid
from .matching import CoincidenceSet


@dataclass
class MatrixTally:
    """Where the offered coincidences went."""

    binned: int = 0
    off_mode: int = 0
    sifted_out: int = 0

    @property
    def offered(self) -> int:
        return self.binned + self.off_mode + self.sifted_out


def _mode_index(pixels: np.ndarray, modes: np.ndarray, width: int) -> np.ndarray:
    """Row of each pixel in ``modes`` or -1."""
    keys = modes[:, 1] * width + modes[:, 0]
    order = np.argsort(keys)
    sorted_keys = keys[order]
    q = pixels[:, 1] * width + pixels[:, 0]
    pos = np.searchsorted(sorted_keys, q)
    pos = np.minimum(pos, len(sorted_keys) - 1)
    hit = sorted_keys[pos] == q
    return np.where(hit, order[pos], -1)


def matrix_from_events(
    coincidences: Iterable[CoincidenceSet],
    grid: ModeGrid,
    region_bob: BeamRegion | None = None,
) -> tuple[JointDetectionMatrix, MatrixTally]:
    """Bin matched-basis coincidences into ``counts[bob_mode, alice_mode]``.

    Bob's momentum pixels are reflected through his beam centre so that the
    anticorrelated far-field pairs land on the diagonal.  Coincidences where
    either photon misses a mode pixel are tallied as ``off_mode``;
    mismatched-basis ones as ``sifted_out``.
    """
    region_bob = region_bob or grid.region
    modes = np.asarray(grid.modes, dtype=np.int64)
    width = int(max(modes.max(), 2 * max(region_bob.center)) + 2)
    counts = np.zeros((grid.d, grid.d))
    tally = MatrixTally()
    for cs in coincidences:
        n = len(cs)
        if not cs.matched_basis:
            tally.sifted_out += n
            continue
        if n == 0:
            continue
        pa = np.stack([cs.xa, cs.ya], axis=1).astype(np.int64)
        pb = np.stack([cs.xb, cs.yb], axis=1).astype(np.int64)
        if cs.plane_b == "momentum":
            pb = 2 * np.asarray(region_bob.center, dtype=np.int64) - pb
        ia = _safe_index(pa, modes, width)
        ib = _safe_index(pb, modes, width)
        ok = (ia >= 0) & (ib >= 0)
        np.add.at(counts, (ib[ok], ia[ok]), 1.0)
        tally.binned += int(ok.sum())
        tally.off_mode += int(n - ok.sum())
    return JointDetectionMatrix.from_counts(counts), tally


def _safe_index(pixels: np.ndarray, modes: np.ndarray, width: int) -> np.ndarray:
    valid = np.all((pixels >= 0) & (pixels < width), axis=1)
    out = np.full(len(pixels), -1, dtype=np.int64)
    if valid.any():
        out[valid] = _mode_index(pixels[valid], modes, width)
    return out
