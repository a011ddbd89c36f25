import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import random_pair_rig, random_unit
from irispad.errors import DimensionMismatch, InvalidRig, NonFiniteInput, RankDeficient
from irispad.imageio import BinaryMask, GrayImage, ImagePair
from irispad.stereo import (
    LightRig, NormalField, component_images, estimate_normals, estimate_normals_multi, load_normal_field, load_rig,
    save_normal_field, save_rig, solve_pixel,
)
from irispad.synth import SurfaceSpec, generate
from irispad.roi import AnnulusGeometry
from oracles import lstsq_oracle


def test_identity_rig():
    rig = LightRig(np.eye(3))
    np.testing.assert_allclose(solve_pixel([0.3, 0.4, 0.5], rig), [0.3, 0.4, 0.5], atol=1e-15)


def test_two_axis_lights_minimum_norm():
    rig = LightRig([[1, 0, 0], [0, 1, 0]])
    n_hat = solve_pixel([0.6, 0.8], rig)
    np.testing.assert_allclose(n_hat, [0.6, 0.8, 0.0], atol=1e-15)
    np.testing.assert_allclose(n_hat / np.linalg.norm(n_hat), [0.6, 0.8, 0.0], atol=1e-15)


def test_in_span_recovery_k2():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        rig = LightRig(random_unit(rng, (2,)))
        a, b = rng.normal(size=2)
        truth = a * rig.directions[0] + b * rig.directions[1]
        got = solve_pixel(rig.directions @ truth, rig)
        assert np.linalg.norm(got - truth) <= 1e-9 * max(1.0, np.linalg.norm(truth))


@pytest.mark.parametrize("k", [3, 4, 5, 8])
def test_matches_normal_equation_oracle(k):
    rng = np.random.default_rng(k)
    for _ in range(200):
        rig = LightRig(random_unit(rng, (k,)))
        I = rng.uniform(0, 1, size=k) + rng.normal(0, 0.05, size=k)
        np.testing.assert_allclose(solve_pixel(I, rig), lstsq_oracle(rig.directions, I), atol=1e-9, rtol=0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3))
def test_linearity(seed, alpha):
    rng = np.random.default_rng(seed)
    rig = LightRig(random_unit(rng, (int(rng.integers(2, 6)),)))
    I = rng.uniform(0, 1, size=rig.k)
    a, b = solve_pixel(alpha * I, rig), alpha * solve_pixel(I, rig)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12 * alpha)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_minimum_norm_has_no_out_of_span_part(seed):
    rng = np.random.default_rng(seed)
    rig = LightRig(random_unit(rng, (2,)))
    cross = np.cross(*rig.directions)
    cross /= np.linalg.norm(cross)
    n_hat = solve_pixel(rng.uniform(0, 1, size=2), rig)
    assert abs(n_hat @ cross) < 1e-9


def test_residual_optimality():
    rng = np.random.default_rng(7)
    for _ in range(20):
        rig = LightRig(random_unit(rng, (6,)))
        I = rng.uniform(0, 1, size=6)
        n_hat = solve_pixel(I, rig)
        best = np.linalg.norm(rig.matrix @ n_hat - I)
        v = n_hat + rng.normal(0, 0.1, size=(1000, 3))
        assert np.all(np.linalg.norm(v @ rig.matrix.T - I, axis=1) >= best - 1e-12)


def test_rig_validation():
    with pytest.raises(InvalidRig):
        LightRig([[0, 0, 2], [1, 0, 0]])
    with pytest.raises(InvalidRig):
        LightRig([[0, 0, 1]])
    with pytest.raises(RankDeficient):
        LightRig([[0, 0, 1], [0, 0, -1]])
    with pytest.raises(RankDeficient):
        # three coplanar lights
        LightRig.from_vectors([[1, 0, 1], [-1, 0, 1], [0, 0, 1]])
    with pytest.raises(InvalidRig):
        LightRig.from_vectors([[0, 0, 1e-9], [1, 0, 0]])


def test_solve_pixel_input_checks(rig):
    with pytest.raises(DimensionMismatch):
        solve_pixel([0.1, 0.2, 0.3], rig)
    with pytest.raises(NonFiniteInput):
        solve_pixel([0.1, math.nan], rig)


def test_rig_json_round_trip(tmp_path):
    p = tmp_path / "rig.json"
    p.write_text('{"directions": [[-2, 0, 5], [2, 0, 5]]}')
    rig = load_rig(p)
    np.testing.assert_allclose(np.linalg.norm(rig.directions, axis=1), 1.0)
    save_rig(rig, tmp_path / "out.json")
    assert load_rig(tmp_path / "out.json") == rig


def test_bad_rig_json(tmp_path):
    p = tmp_path / "rig.json"
    p.write_text("{not json")
    with pytest.raises(InvalidRig):
        load_rig(p)
    p.write_text('{"lights": []}')
    with pytest.raises(InvalidRig):
        load_rig(p)


def _pair(left, right):
    m = BinaryMask(np.ones(np.shape(left), bool))
    return ImagePair(GrayImage(left), GrayImage(right), m, m)


def test_constant_pair_under_symmetric_rig(rig):
    img = np.full((5, 6), 140, np.uint8)
    field = estimate_normals(_pair(img, img), rig)
    assert field.valid.all()
    np.testing.assert_allclose(field.normals, np.broadcast_to([0, 0, 1], (5, 6, 3)), atol=1e-15)


def test_zero_pixel_is_invalid(rig):
    left = np.full((3, 3), 100, np.uint8)
    right = left.copy()
    left[1, 2] = right[1, 2] = 0
    field = estimate_normals(_pair(left, right), rig)
    assert not field.valid[1, 2]
    assert field.valid.sum() == 8
    np.testing.assert_array_equal(field.normals[1, 2], 0.0)


def test_field_invariants(rig):
    rng = np.random.default_rng(0)
    left = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    right = rng.integers(0, 256, (16, 16), dtype=np.uint8)
    field = estimate_normals(_pair(left, right), rig)
    v = field.valid
    np.testing.assert_allclose(np.linalg.norm(field.normals[v], axis=1), 1.0, atol=1e-12)
    raw = field.raw[v]
    np.testing.assert_allclose(field.normals[v], raw / np.linalg.norm(raw, axis=1, keepdims=True), atol=1e-15)
    np.testing.assert_allclose(field.raw[v], (np.stack([left, right], -1)[v] / 255.0) @ rig.pinv.T)


def test_pair_needs_two_lights():
    rig3 = LightRig(np.eye(3))
    img = np.zeros((2, 2), np.uint8)
    with pytest.raises(DimensionMismatch):
        estimate_normals(_pair(img, img), rig3)
    with pytest.raises(DimensionMismatch):
        estimate_normals_multi([img, img], rig3)
    with pytest.raises(DimensionMismatch):
        estimate_normals_multi([img, np.zeros((2, 3), np.uint8)], LightRig.symmetric())


def test_float_render_round_trip():
    """Unquantised Lambertian render recovers the in-span truth almost exactly."""
    rng = np.random.default_rng(11)
    errors = []
    for _ in range(10):
        rig = random_pair_rig(rng)
        n = random_unit(rng, (20, 20))
        n[..., 2] = np.abs(n[..., 2]) + 0.5
        n /= np.linalg.norm(n, axis=-1, keepdims=True)
        c = rng.uniform(0.3, 1.0, (20, 20))
        intensity = c[..., None] * (n @ rig.directions.T) * 255.0
        field = estimate_normals_multi([intensity[..., 0], intensity[..., 1]], rig)
        proj = n @ (rig.pinv @ rig.directions)   # projection onto span of the lights
        proj /= np.linalg.norm(proj, axis=-1, keepdims=True)
        cosang = np.clip(np.sum(proj * field.normals, axis=-1), -1, 1)
        errors.append(np.arccos(cosang).mean())
    assert np.mean(errors) < 1e-6




def test_nrm1_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    normals = random_unit(rng, (5, 7))
    valid = rng.uniform(size=(5, 7)) > 0.3
    field = NormalField.from_normals(normals, valid)
    p = tmp_path / "f.nrm"
    save_normal_field(field, p)
    data = p.read_bytes()
    assert data[:4] == b"NRM1"
    assert len(data) == 12 + 5 * 7 * 24 + 5
    back = load_normal_field(p)
    np.testing.assert_array_equal(back.valid, field.valid)
    np.testing.assert_array_equal(back.normals, field.normals)
    save_normal_field(back, tmp_path / "g.nrm")
    assert (tmp_path / "g.nrm").read_bytes() == data


def test_component_images():
    field = NormalField.from_normals(np.broadcast_to([0.0, -1.0, 1.0], (2, 2, 3)) / math.sqrt(2))
    x, y, z = component_images(field)
    assert x[0, 0] == 128 and y[0, 0] == round((1 - 1 / math.sqrt(2)) * 127.5)
    assert z[0, 0] == round((1 + 1 / math.sqrt(2)) * 127.5)
