import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_rotation, random_unit
from irispad.errors import AllZeroWeights, DegenerateRegion, DimensionMismatch, EmptyRegion
from irispad.roi import AnnulusGeometry, SectorGrid, annulus_mask, sector_map
from irispad.score import (
    Variant, base_score, deviation_field, mean_normal, pixel_weights, population_variance, weighted_score,
)
from irispad.stereo import NormalField
from oracles import naive_base_score, naive_mean_normal, naive_weighted_score


def _field(rows):
    return NormalField.from_normals(np.asarray(rows, dtype=np.float64))


def test_mean_normal_examples():
    f = _field(np.broadcast_to([0, 0, 1.0], (3, 3, 3)))
    np.testing.assert_array_equal(mean_normal(f, np.ones((3, 3), bool)), [0, 0, 1])
    f = _field([[[1, 0, 0], [0, 1, 0]]])
    m = mean_normal(f, np.ones((1, 2), bool))
    np.testing.assert_allclose(m, [0.5, 0.5, 0.0])
    assert math.isclose(np.linalg.norm(m), math.sqrt(0.5))


def test_mean_normal_matches_oracle():
    rng = np.random.default_rng(0)
    n = random_unit(rng, (20, 30))
    mask = rng.uniform(size=(20, 30)) > 0.3
    expected, _ = naive_mean_normal(n.tolist(), mask.tolist())
    np.testing.assert_allclose(mean_normal(NormalField.from_normals(n), mask), expected, atol=1e-12, rtol=0)


def test_constant_field_scores_zero():
    f = _field(np.broadcast_to([0.2, 0.3, 0.9], (4, 5, 3)))
    s = base_score(f, np.ones((4, 5), bool))
    assert s.value == 0.0 and s.n_pixels == 20 and s.variant is Variant.BASE
    grid = SectorGrid(AnnulusGeometry.concentric(2.5, 2, 0.5, 2), 1, 2)
    assert weighted_score(f, np.ones((4, 5), bool), grid, [1.0, 1.0]).value == 0.0


def test_population_variance_hand_value():
    assert population_variance([0.0, 2.0]) == 1.0
    # two pixels always sit symmetrically about their mean, so d is constant
    f = _field([[[1, 0, 0], [-1, 0, 0]]])
    assert base_score(f, np.ones((1, 2), bool)).value == 0.0


def test_population_variance_of_distances():
    # n_bar = (0, 0, 0.5); distances: 0.5, 0.5, sqrt(1 + 0.25) twice
    f = _field([[[0, 0, 1], [0, 0, 1], [1, 0, 0], [-1, 0, 0]]])
    d = np.array([0.5, 0.5, math.sqrt(1.25), math.sqrt(1.25)])
    assert math.isclose(base_score(f, np.ones((1, 4), bool)).value, d.var(), rel_tol=1e-14)


def test_invalid_pixels_excluded():
    raw = np.zeros((2, 3, 3))
    raw[..., 2] = 1.0
    raw[0, 0] = 0.0
    f = NormalField.from_raw(raw)
    s = base_score(f, np.ones((2, 3), bool))
    assert s.n_pixels == 5 and s.value == 0.0


def test_region_errors():
    f = _field(np.broadcast_to([0, 0, 1.0], (2, 2, 3)))
    with pytest.raises(EmptyRegion):
        base_score(f, np.zeros((2, 2), bool))
    with pytest.raises(EmptyRegion):
        mean_normal(f, np.zeros((2, 2), bool))
    one = np.zeros((2, 2), bool)
    one[0, 0] = True
    with pytest.raises(DegenerateRegion):
        base_score(f, one)
    with pytest.raises(DimensionMismatch):
        base_score(f, np.ones((3, 2), bool))


def _geometry_and_grid(h, w, r, t, rng):
    ri = min(h, w) / 2 - 0.01
    rp = ri * rng.uniform(0.15, 0.5)
    geom = AnnulusGeometry.concentric(w / 2, h / 2, rp, ri)
    return SectorGrid(geom, r, t)


def _naive_pixel_weights(grid, weights, w, h):
    from irispad.roi import sector_index

    out = [[0.0] * w for _ in range(h)]
    for y in range(h):
        for x in range(w):
            ij = sector_index(grid, x, y)
            if ij is not None:
                out[y][x] = weights[ij[0] * grid.t + ij[1]]
    return out


def test_pixel_weights_match_sector_lookup():
    rng = np.random.default_rng(5)
    grid = _geometry_and_grid(14, 17, 2, 5, rng)
    weights = rng.uniform(size=10)
    got = pixel_weights(grid, weights, 17, 14)
    np.testing.assert_array_equal(got, _naive_pixel_weights(grid, weights, 17, 14))
    with pytest.raises(DimensionMismatch):
        pixel_weights(grid, weights[:3], 17, 14)


def test_scores_match_naive_oracles():
    rng = np.random.default_rng(42)
    for _ in range(25):
        h, w = rng.integers(4, 24, size=2)
        n = random_unit(rng, (h, w))
        mask = rng.uniform(size=(h, w)) > 0.25
        field = NormalField.from_normals(n)
        if mask.sum() >= 2:
            assert math.isclose(base_score(field, mask).value, naive_base_score(n.tolist(), mask.tolist()),
                                rel_tol=1e-12, abs_tol=1e-15)
        grid = _geometry_and_grid(h, w, 2, 3, rng)
        weights = rng.uniform(0, 2, size=6) * (rng.uniform(size=6) > 0.3)
        weights[0] = 1.0
        pw = _naive_pixel_weights(grid, weights, w, h)
        usable = [[mask[y][x] and pw[y][x] > 0 for x in range(w)] for y in range(h)]
        if not any(map(any, usable)):
            continue
        got = weighted_score(field, mask, grid, weights).value
        want = naive_weighted_score(n.tolist(), mask.tolist(), pw)
        assert math.isclose(got, want, rel_tol=1e-12, abs_tol=1e-15)


def test_uniform_weights_equal_variance_of_squared_deviation():
    rng = np.random.default_rng(9)
    n = random_unit(rng, (20, 20))
    n[..., 2] = np.abs(n[..., 2]) + 2
    field = NormalField.from_normals(n)
    grid = SectorGrid(AnnulusGeometry.concentric(10, 10, 3, 9.9), 2, 4)
    mask = annulus_mask(grid.geometry, 20, 20).bits
    got = weighted_score(field, mask, grid, np.full(8, 3.7)).value
    v = field.normals[mask]
    l = np.sum((v - v.mean(axis=0)) ** 2, axis=1)
    assert math.isclose(got, l.var(), rel_tol=1e-12)
    # and that statistic differs from the base score, which uses unsquared distances
    assert not math.isclose(got, base_score(field, mask).value, rel_tol=1e-3)


def test_single_sector_weight_equals_sector_alone():
    rng = np.random.default_rng(3)
    n = random_unit(rng, (24, 24))
    field = NormalField.from_normals(n)
    grid = SectorGrid(AnnulusGeometry.concentric(12, 12, 4, 11.9), 2, 3)
    mask = annulus_mask(grid.geometry, 24, 24).bits
    weights = np.zeros(6)
    weights[4] = 1.0
    got = weighted_score(field, mask, grid, weights)
    only = sector_map(grid, 24, 24) == 4
    v = field.normals[mask & only]
    l = np.sum((v - v.mean(axis=0)) ** 2, axis=1)
    assert got.n_pixels == v.shape[0]
    assert math.isclose(got.value, l.var(), rel_tol=1e-12)


def test_weight_errors():
    field = _field(np.broadcast_to([0, 0, 1.0], (8, 8, 3)))
    grid = SectorGrid(AnnulusGeometry.concentric(4, 4, 1, 3.9), 1, 2)
    mask = np.ones((8, 8), bool)
    with pytest.raises(AllZeroWeights):
        weighted_score(field, mask, grid, [0.0, 0.0])
    with pytest.raises(ValueError):
        weighted_score(field, mask, grid, [-1.0, 1.0])
    with pytest.raises(ValueError):
        weighted_score(field, mask, grid, [math.inf, 1.0])
    with pytest.raises(EmptyRegion):
        weighted_score(field, np.zeros((8, 8), bool), grid, [1.0, 1.0])


def test_deviation_field():
    rng = np.random.default_rng(4)
    field = NormalField.from_normals(random_unit(rng, (10, 10)))
    grid = SectorGrid(AnnulusGeometry.concentric(5, 5, 1, 4.9), 1, 2)
    mask = np.ones((10, 10), bool)
    dev = deviation_field(field, mask, grid, [1.0, 0.0])
    sel = np.isfinite(dev.deviations)
    np.testing.assert_array_equal(sel, sector_map(grid, 10, 10) == 0)
    np.testing.assert_allclose(dev.mean_normal, field.normals[sel].mean(axis=0), atol=1e-15)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rotation_invariance(seed):
    rng = np.random.default_rng(seed)
    n = random_unit(rng, (16, 16))
    R = random_rotation(rng)
    grid = SectorGrid(AnnulusGeometry.concentric(8, 8, 2, 7.9), 2, 3)
    mask = annulus_mask(grid.geometry, 16, 16).bits
    w = rng.uniform(0.1, 2, size=6)
    a, b = NormalField.from_normals(n), NormalField.from_normals(n @ R.T)
    assert abs(base_score(a, mask).value - base_score(b, mask).value) < 1e-12
    assert abs(weighted_score(a, mask, grid, w).value - weighted_score(b, mask, grid, w).value) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_raw_scaling_invariance(seed, alpha):
    rng = np.random.default_rng(seed)
    raw = random_unit(rng, (12, 12)) * rng.uniform(0.2, 1, size=(12, 12, 1))
    grid = SectorGrid(AnnulusGeometry.concentric(6, 6, 1.5, 5.9), 2, 2)
    mask = annulus_mask(grid.geometry, 12, 12).bits
    w = rng.uniform(0.1, 2, size=4)
    a, b = NormalField.from_raw(raw), NormalField.from_raw(alpha * raw)
    assert abs(base_score(a, mask).value - base_score(b, mask).value) < 1e-12
    assert abs(weighted_score(a, mask, grid, w).value - weighted_score(b, mask, grid, w).value) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    v = random_unit(rng, (1, 200))
    perm = rng.permutation(200)
    mask = np.ones((1, 200), bool)
    a = base_score(NormalField.from_normals(v), mask).value
    b = base_score(NormalField.from_normals(v[:, perm]), mask).value
    assert abs(a - b) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zero_iff_identical(seed):
    rng = np.random.default_rng(seed)
    n = np.broadcast_to(random_unit(rng, (1,)), (6, 6, 3)).copy()
    mask = np.ones((6, 6), bool)
    assert base_score(NormalField.from_normals(n), mask).value < 1e-28
    y, x = rng.integers(0, 6, size=2)
    n[y, x] = random_unit(rng, (1,))[0]
    if np.linalg.norm(n[y, x] - n[0 if y else 1, 0]) > 1e-3:
        assert base_score(NormalField.from_normals(n), mask).value > 0
