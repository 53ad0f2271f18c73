import numpy as np
import pytest
from conftest import random_model
from hypothesis import given, settings
from hypothesis import strategies as st

from compensable import compensate as cp
from compensable import metrics
from compensable.photomodel import PhotometricModel, predict
from compensable.psa import loss_cs
from compensable.scene import SceneConfig, SceneGT, capture_bounds, make_scene


def _uniform(h, w, gain, bias, gamma=1.0):
    return PhotometricModel(np.full((h, w, 3), gain), np.full((h, w, 3), bias), np.eye(3), gamma)


def test_identity_inverse():
    t = np.random.default_rng(0).random((4, 4, 3))
    r = cp.invert_analytic(PhotometricModel.identity(4, 4), t)
    np.testing.assert_array_equal(r.unclamped, t)
    assert r.saturation_fraction == 0.0


def test_affine_inverse_examples():
    m = _uniform(2, 2, 0.5, 0.1)
    r = cp.invert_analytic(m, np.full((2, 2, 3), 0.6))
    np.testing.assert_allclose(r.unclamped, 1.0)
    np.testing.assert_allclose(r.projector_input, 1.0)
    r = cp.invert_analytic(m, np.full((2, 2, 3), 0.9))
    np.testing.assert_allclose(r.unclamped, 1.6)
    np.testing.assert_array_equal(r.projector_input, 1.0)
    assert r.saturation_fraction == 1.0


def test_inverse_rejects_bad_target():
    m = PhotometricModel.identity(2, 2)
    with pytest.raises(ValueError):
        cp.invert_analytic(m, np.full((2, 2, 3), np.nan))
    with pytest.raises(ValueError):
        cp.invert_analytic(m, np.zeros((3, 2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31), st.floats(-2.0, 3.0), st.floats(0.0, 2.0))
def test_analytic_roundtrip(seed, lo, span):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 6, 5)
    t = rng.uniform(lo, lo + span, (6, 5, 3))
    r = cp.invert_analytic(m, t)
    assert np.sqrt(np.mean((predict(m, r.unclamped) - t) ** 2)) < 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_result_invariants(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 5, 5)
    r = cp.invert_analytic(m, rng.uniform(-0.5, 1.5, (5, 5, 3)))
    np.testing.assert_array_equal(r.projector_input, np.clip(r.unclamped, 0, 1))
    outside = (r.unclamped < 0) | (r.unclamped > 1)
    assert r.saturation_fraction == pytest.approx(outside.mean())
    assert (r.saturation_fraction == 0) == (loss_cs(r.unclamped) == 0)


def test_brightening_never_reduces_saturation():
    m = random_model(np.random.default_rng(3), 6, 6)
    fracs = [cp.invert_analytic(m, np.full((6, 6, 3), v)).saturation_fraction
             for v in np.linspace(0.4, 1.5, 12)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))


def test_iterative_agrees_with_analytic():
    rng = np.random.default_rng(4)
    for _ in range(3):
        h = w = 8
        gain = rng.uniform(0.8, 1.2, (h, w, 3))
        bias = rng.uniform(-0.02, 0.02, (h, w, 3))
        m = PhotometricModel(gain, bias, 0.95 * np.eye(3) + 0.05 / 3, rng.uniform(0.9, 1.3))
        t = rng.uniform(0.2, 0.8, (h, w, 3))
        it = cp.invert_iterative(m, t, iters=500, step=0.5)
        an = cp.invert_analytic(m, t)
        assert metrics.rmse(it.unclamped, an.unclamped) < 1e-4


def test_iterative_trivial_cases():
    t = np.random.default_rng(5).random((3, 3, 3))
    r = cp.invert_iterative(PhotometricModel.identity(3, 3), t, iters=1, step=0.5)
    np.testing.assert_array_equal(r.unclamped, t)
    m = random_model(np.random.default_rng(6), 3, 3)
    np.testing.assert_array_equal(cp.invert_iterative(m, t, iters=5, step=0.0).unclamped, t)
    with pytest.raises(ValueError):
        cp.invert_iterative(m, t, iters=0, step=0.1)


def test_iterative_divergence_is_reported():
    m = random_model(np.random.default_rng(7), 4, 4)
    with pytest.raises(cp.DivergenceError):
        cp.invert_iterative(m, np.full((4, 4, 3), 0.9), iters=200, step=1e6)


def _linear_scene(rng, h=12, w=12):
    return SceneGT(albedo=rng.uniform(0.3, 1.0, (h, w, 3)), vignette=np.ones((h, w, 3)),
                   mix=np.eye(3), gamma_prj=1.0, gamma_cam=1.0, ambient=np.zeros(3))


def test_exact_model_reproduces_target():
    rng = np.random.default_rng(8)
    scene = _linear_scene(rng)
    model = PhotometricModel(scene.albedo, np.zeros(scene.shape), np.eye(3), 1.0)
    t = rng.uniform(0.0, 0.3, scene.shape)
    captured = cp.captured_compensation_gt(scene, cp.invert_analytic(model, t))
    assert metrics.psnr(captured, t) >= 40.0


def test_boundary_targets():
    scene = make_scene(SceneConfig(height=10, width=10, seed=2))
    i_minus, i_plus = capture_bounds(scene)
    # a model that matches the scene exactly on the upper boundary
    model = PhotometricModel(np.maximum(i_plus - i_minus, 1e-3), i_minus, np.eye(3), 1.0)
    r = cp.invert_analytic(model, i_plus)
    np.testing.assert_allclose(r.projector_input, 1.0)
    below = cp.invert_analytic(model, i_minus - 0.05)
    assert np.all(cp.captured_compensation_gt(scene, below) >= i_minus)


def test_captured_dims_mismatch():
    scene = _linear_scene(np.random.default_rng(9))
    r = cp.invert_analytic(PhotometricModel.identity(4, 4), np.zeros((4, 4, 3)))
    with pytest.raises(ValueError):
        cp.captured_compensation_gt(scene, r)
