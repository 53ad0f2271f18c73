import numpy as np
import pytest
from conftest import random_model, smooth_field
from hypothesis import given, settings
from hypothesis import strategies as st

from compensable import dataset
from compensable import photomodel as pm
from compensable.scene import DEFAULT_MIX


def _uniform_model(h, w, gain, bias, gamma=1.0, mix=None):
    return pm.PhotometricModel(np.full((h, w, 3), gain), np.full((h, w, 3), bias),
                               np.eye(3) if mix is None else mix, gamma)


def test_identity_predicts_input():
    x = np.random.default_rng(0).uniform(-0.5, 1.5, (5, 6, 3))
    np.testing.assert_array_equal(pm.predict(pm.PhotometricModel.identity(5, 6), x), x)


def test_affine_example():
    m = _uniform_model(3, 3, 0.5, 0.1)
    np.testing.assert_allclose(pm.predict(m, np.full((3, 3, 3), 0.6)), 0.4)


def test_signed_power_example():
    m = _uniform_model(1, 1, 1.0, 0.0, gamma=2.0)
    out = pm.predict(m, np.array([[[-0.5, 0.5, 0.0]]]))
    np.testing.assert_allclose(out[0, 0], [-0.25, 0.25, 0.0])


def test_predict_errors():
    m = pm.PhotometricModel.identity(4, 4)
    with pytest.raises(ValueError):
        pm.predict(m, np.zeros((4, 5, 3)))
    with pytest.raises(ValueError):
        pm.predict(m, np.full((4, 4, 3), np.inf))


@pytest.mark.parametrize("kwargs", [
    dict(gain=0.0),
    dict(gamma=0.4),
    dict(gamma=4.5),
    dict(mix=np.array([[1.0, 1.0, 0.0], [1.0, 1.0 + 1e-6, 0.0], [0.0, 0.0, 1.0]])),
])
def test_model_invariants(kwargs):
    base = dict(gain=np.ones((2, 2, 3)), bias=np.zeros((2, 2, 3)), mix=np.eye(3), gamma=1.0)
    if "gain" in kwargs:
        kwargs = dict(kwargs, gain=np.full((2, 2, 3), kwargs["gain"]))
    with pytest.raises(ValueError):
        pm.PhotometricModel(**{**base, **kwargs})


def test_vjp_identity_and_zero():
    m = pm.PhotometricModel.identity(3, 4)
    rng = np.random.default_rng(1)
    x, u = rng.random((3, 4, 3)), rng.standard_normal((3, 4, 3))
    np.testing.assert_array_equal(pm.predict_vjp(m, x, u), u)
    np.testing.assert_array_equal(pm.predict_vjp(random_model(rng, 3, 4), x, np.zeros_like(x)), 0.0)


def test_vjp_finite_differences(rng):
    m = random_model(rng, 8, 8)
    x = rng.uniform(-0.3, 1.3, (8, 8, 3))
    x[np.abs(x) < 0.05] = 0.2  # keep away from the kink of the signed power
    u = rng.standard_normal((8, 8, 3))
    g = pm.predict_vjp(m, x, u)
    h = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fd[idx] = (np.sum(u * pm.predict(m, x + e)) - np.sum(u * pm.predict(m, x - e))) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(-3.0, 3.0))
def test_vjp_linear_in_upstream(seed, alpha):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 4, 4)
    x, u = rng.random((4, 4, 3)), rng.standard_normal((4, 4, 3))
    np.testing.assert_allclose(pm.predict_vjp(m, x, alpha * u), alpha * pm.predict_vjp(m, x, u),
                               rtol=1e-12, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_predict_monotone(seed):
    rng = np.random.default_rng(seed)
    m = random_model(rng, 5, 5)
    x = rng.uniform(-1, 2, (5, 5, 3))
    x2 = x + rng.uniform(0, 0.5, x.shape)
    assert np.all(pm.predict(m, x) <= pm.predict(m, x2))


def _known_model_setup(model, n_train, n_test, seed=0):
    h, w, _ = model.shape

    def pairs(n, s, offset=0):
        xs = dataset.gen_inputs(n, seed=s, height=h, width=w, solid_offset=offset)
        return [(x, np.clip(pm.predict(model, x), 0, 1)) for x in xs]

    train = pairs(n_train, seed)
    test = pairs(n_test, seed + 1, dataset.category_counts(n_train)[0])
    z = np.zeros((h, w, 3))
    return dataset.Setup(z, z, z, train, test)


def test_fit_recovers_known_model():
    rng = np.random.default_rng(8)
    h = w = 32
    truth = pm.PhotometricModel(smooth_field(rng, h, w, 0.2, 1.0),
                                smooth_field(rng, h, w, 0.0, 0.05), DEFAULT_MIX, 2.0)
    setup = _known_model_setup(truth, 48, 8)
    model = pm.fit(setup, pm.FitConfig(iters=400, warmup_iters=300))
    assert pm.prediction_rmse(model, setup.test_pairs) < 0.01
    assert model.gamma == pytest.approx(2.0, abs=0.1)


def test_fit_identity_data():
    xs = dataset.gen_inputs(16, seed=1, height=32, width=32)
    tests = dataset.gen_inputs(4, seed=2, height=32, width=32)
    z = np.zeros((32, 32, 3))
    setup = dataset.Setup(z, z, z, [(x, x) for x in xs], [(x, x) for x in tests])
    model = pm.fit(setup, pm.FitConfig())
    x = np.random.default_rng(0).random((32, 32, 3))
    assert np.sqrt(np.mean((pm.predict(model, x) - x) ** 2)) < 1e-3


def test_fit_is_deterministic_and_respects_floor():
    rng = np.random.default_rng(9)
    truth = random_model(rng, 12, 12, gain_lo=0.0005)
    setup = _known_model_setup(truth, 8, 2)
    cfg = pm.FitConfig(iters=40, warmup_iters=20, seed=4)
    a, b = pm.fit(setup, cfg), pm.fit(setup, cfg)
    np.testing.assert_array_equal(a.gain, b.gain)
    np.testing.assert_array_equal(a.bias, b.bias)
    assert a.gamma == b.gamma
    assert a.gain.min() >= pm.GAIN_FLOOR
    assert np.all(np.isfinite(a.gain)) and np.all(np.isfinite(a.bias))


def test_fit_ssim_only_runs():
    rng = np.random.default_rng(10)
    setup = _known_model_setup(random_model(rng, 16, 16), 6, 2)
    model = pm.fit(setup, pm.FitConfig(loss_combo=("ssim",), iters=20, warmup_iters=0))
    assert np.all(np.isfinite(model.gain))


def test_fit_progress_and_warmup_switch():
    rng = np.random.default_rng(11)
    setup = _known_model_setup(random_model(rng, 16, 16), 6, 2)
    seen = []
    pm.fit(setup, pm.FitConfig(iters=6, warmup_iters=3), progress=lambda it, loss: seen.append(it))
    assert seen == list(range(6))


def test_fit_errors():
    rng = np.random.default_rng(12)
    setup = _known_model_setup(random_model(rng, 8, 8), 3, 1)
    with pytest.raises(ValueError, match="at least 4"):
        pm.fit(setup)
    with pytest.raises(ValueError):
        pm.FitConfig(loss_combo=()).validate()
    with pytest.raises(ValueError):
        pm.FitConfig(loss_combo=("l3",)).validate()
    with pytest.raises(ValueError):
        pm.FitConfig(iters=0).validate()


def test_divergence_reports_iteration():
    rng = np.random.default_rng(13)
    setup = _known_model_setup(random_model(rng, 8, 8), 4, 1)
    with pytest.raises(pm.DivergenceError) as info:
        pm.fit(setup, pm.FitConfig(iters=5, step=np.inf))
    assert info.value.iteration == 0


def test_model_save_load_roundtrip(tmp_path, rng):
    m = random_model(rng, 6, 5)
    pm.save_model(m, tmp_path)
    back = pm.load_model(tmp_path)
    np.testing.assert_allclose(back.gain, m.gain, rtol=1e-7)
    np.testing.assert_allclose(back.bias, m.bias, rtol=1e-7, atol=1e-9)
    np.testing.assert_array_equal(back.mix, m.mix)
    assert back.gamma == m.gamma
    doc = (tmp_path / "model.json").read_text()
    assert '"type": "ppaffine_gamma"' in doc


def test_load_model_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        pm.load_model(tmp_path)
    (tmp_path / "model.json").write_text('{"type": "other"}')
    with pytest.raises(ValueError, match="unsupported"):
        pm.load_model(tmp_path)
