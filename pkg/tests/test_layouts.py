import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spatialqkd.layouts import (
    LAYOUT_ORDER,
    BeamRegion,
    ModeGrid,
    OutOfRegionError,
    beam_region,
    block_grid,
    bob_mode_pixel,
    bob_mode_pixels,
    generate_grid,
    merge_sweeps,
)


def brute_count(radius):
    r = int(math.floor(radius))
    return sum(1 for x in range(-r, r + 1) for y in range(-r, r + 1) if x * x + y * y <= radius * radius + 1e-9)


def test_default_region():
    reg = beam_region()
    assert reg.pixel_count == 4293
    assert reg.radius_px == pytest.approx(37.0)
    assert len(reg.pixels()) == 4293


@given(st.floats(0.0, 30.0))
def test_region_count_matches_brute_force(radius):
    assert BeamRegion.from_radius((64, 64), radius).pixel_count == brute_count(radius)


@given(st.integers(1, 3000))
def test_beam_region_is_smallest_disc(target):
    reg = beam_region((0, 0), target)
    assert reg.pixel_count >= target
    smaller = BeamRegion.from_radius((0, 0), math.sqrt(max(reg.radius_px**2 - 1, 0)))
    assert smaller.pixel_count < target or reg.radius_px == 0


def test_cartesian_unit_spacing_small_disc():
    g = generate_grid("cartesian", 1.0, BeamRegion.from_radius((64, 64), 1.5))
    assert g.d == 9


def test_cartesian_unit_spacing_fills_region():
    reg = beam_region()
    assert generate_grid("cartesian", 1.0, reg).d == reg.pixel_count


@settings(max_examples=60, deadline=None)
@given(st.sampled_from(LAYOUT_ORDER), st.floats(1.0, 12.0))
def test_grid_invariants(layout, spacing):
    reg = beam_region()
    g = generate_grid(layout, spacing, reg)
    assert g.d >= 2
    assert np.all(reg.contains(g.modes))
    assert len(np.unique(g.modes, axis=0)) == g.d
    order = np.lexsort((g.modes[:, 0], g.modes[:, 1]))
    assert np.array_equal(order, np.arange(g.d))


@pytest.mark.parametrize("layout", LAYOUT_ORDER)
def test_grid_contains_centre_and_spacing(layout):
    reg = beam_region()
    g = generate_grid(layout, 6.0, reg)
    assert (64, 64) in {tuple(p) for p in g.modes.tolist()}
    diff = g.modes[:, None, :] - g.modes[None, :, :]
    dist = np.sqrt((diff**2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    # rounding moves each mode by at most sqrt(2)/2
    assert dist.min() >= 6.0 - math.sqrt(2)


@pytest.mark.parametrize("spacing", [2.0, 3.0, 4.5, 6.0, 8.0, 10.0])
def test_hex_packs_at_least_as_many_modes(spacing):
    reg = beam_region()
    assert generate_grid("hex", spacing, reg).d >= generate_grid("cartesian", spacing, reg).d


def test_degenerate_grid_raises():
    with pytest.raises(ValueError):
        generate_grid("cartesian", 50.0, BeamRegion.from_radius((64, 64), 10))
    with pytest.raises(ValueError):
        generate_grid("cartesian", 0.5, beam_region())
    with pytest.raises(ValueError):
        generate_grid("triangle", 2.0, beam_region())


def test_grid_json_round_trip():
    g = generate_grid("hex", 5.3, beam_region())
    assert ModeGrid.from_json(g.to_json()) == g


def test_grid_from_dict_validates():
    doc = generate_grid("cartesian", 5.0, beam_region()).to_dict()
    doc["modes"] = doc["modes"] + [[0, 0]]
    with pytest.raises(ValueError):
        ModeGrid.from_dict(doc)
    with pytest.raises(ValueError):
        ModeGrid.from_dict({"layout": "cartesian"})


def test_block_grid():
    g = block_grid(4, 10, beam_region())
    assert g.d == 16
    assert np.all(g.offsets().mean(axis=0) == 0)
    assert sorted(set(g.offsets()[:, 0].tolist())) == [-15, -5, 5, 15]
    with pytest.raises(ValueError):
        block_grid(4, 5, beam_region())


def test_bob_mode_mapping():
    reg = beam_region()
    assert bob_mode_pixel((70, 60), "position", reg) == (70, 60)
    assert bob_mode_pixel((70, 60), "momentum", reg) == (58, 68)
    g = generate_grid("angled45", 4.0, reg)
    back = bob_mode_pixels(bob_mode_pixels(g.modes, "momentum", reg), "momentum", reg)
    assert np.array_equal(back, g.modes)


def test_bob_mode_out_of_region():
    small = BeamRegion.from_radius((10, 10), 3)
    with pytest.raises(OutOfRegionError):
        bob_mode_pixel((64, 64), "position", small)
    with pytest.raises(ValueError):
        bob_mode_pixel((10, 10), "polarization", small)


def test_merge_prefers_lowest_error_then_layout_order():
    class M:
        def __init__(self, e):
            self.qder_e = e

    rows = [(10, "hex", M(0.1)), (10, "cartesian", M(0.2)), (12, "hex", M(0.3)),
            (12, "angled45", M(0.3)), (12, "cartesian", M(0.3)), (8, "hex", M(0.5))]
    merged = merge_sweeps(rows)
    assert [d for d, _, _ in merged] == [8, 10, 12]
    assert merged[1][1] == "hex"
    assert merged[2][1] == "cartesian"
