import json
from functools import partial

import numpy as np
import pytest

from compensable import bench
from compensable.metrics import MetricsTriple
from compensable.photomodel import FitConfig, PhotometricModel
from compensable.psa import PSAConfig
from compensable.scene import SceneConfig, SceneGT, capture_bounds, capture_surface, make_scene


def _exact_linear_model(scene: SceneGT) -> PhotometricModel:
    return PhotometricModel(scene.albedo * scene.vignette,
                            scene.albedo * scene.vignette * scene.ambient, scene.mix, 1.0)


def _linear_scene(seed, h=16, w=16):
    rng = np.random.default_rng(seed)
    return SceneGT(albedo=rng.uniform(0.2, 1.0, (h, w, 3)), vignette=np.ones((h, w, 3)),
                   mix=np.eye(3), gamma_prj=1.0, gamma_cam=1.0, ambient=np.zeros(3))


def test_sim_accuracy_exact_model():
    scene = _linear_scene(0)
    i_minus, i_plus = capture_bounds(scene)
    rng = np.random.default_rng(1)
    targets = [i_minus + (i_plus - i_minus) * rng.random(scene.shape) for _ in range(3)]
    report = bench.eval_sim_accuracy(scene, _exact_linear_model(scene), targets)
    assert len(report.conditions) == 3
    assert all(c.metrics.psnr >= 40 for c in report.conditions)


def test_sim_accuracy_errors():
    scene = _linear_scene(0)
    with pytest.raises(ValueError):
        bench.eval_sim_accuracy(scene, _exact_linear_model(scene), [])
    with pytest.raises(ValueError):
        bench.eval_sim_accuracy(scene, PhotometricModel.identity(4, 4), [np.zeros((4, 4, 3))])


def test_synth_style_is_deterministic_and_in_range():
    surface = capture_surface(make_scene(SceneConfig(height=20, width=24, seed=3)))
    a, b = bench.synth_style(surface, 5), bench.synth_style(surface, 5)
    np.testing.assert_array_equal(a, b)
    assert a.shape == surface.shape and a.min() >= 0 and a.max() <= 1
    assert not np.array_equal(a, bench.synth_style(surface, 6))


def test_write_report_roundtrip(tmp_path):
    rep = bench.EvalReport("psa", config={"seeds": [1, 2]})
    for k in range(3):
        rep.conditions.append(bench.Condition("000", f"style_{k}", "pc,cs,ps",
                                              MetricsTriple(20.0 + k / 3, 0.1 / (k + 1), 0.7), k + 1, True))
    path = bench.write_report(rep, tmp_path / "r.json")
    doc = json.loads(path.read_text())
    assert doc["means"] == rep.means()
    assert doc["config"]["seeds"] == [1, 2]
    assert list(doc["conditions"][0]) == ["scene", "style", "loss_set", "psnr", "rmse", "ssim",
                                          "iterations", "converged"]
    assert bench.check_means(doc)


def test_write_report_needs_conditions(tmp_path):
    with pytest.raises(ValueError, match="no conditions"):
        bench.write_report(bench.EvalReport("psa"), tmp_path / "r.json")


def test_write_report_unwritable(tmp_path):
    rep = bench.EvalReport("sim", [bench.Condition("0", "t", "sim", MetricsTriple(1, 1, 1))])
    with pytest.raises(OSError):
        bench.write_report(rep, tmp_path / "missing" / "r.json")


@pytest.fixture(scope="module")
def small_study():
    scenes = [make_scene(SceneConfig(height=32, width=32, seed=s)) for s in range(2)]
    styles = [partial(bench.synth_style, seed=k) for k in range(2)]
    cfg = bench.PSAStudyConfig(fit=FitConfig(iters=60, warmup_iters=40), n_train=12, seed=4)
    loss_sets = [("pc",), ("cs", "ps"), ("pc", "cs", "ps")]
    return scenes, styles, loss_sets, cfg


def test_eval_psa_grid(small_study, tmp_path):
    scenes, styles, loss_sets, cfg = small_study
    rep = bench.eval_psa(scenes, styles, loss_sets, cfg)
    assert len(rep.conditions) == 2 * 2 * (1 + len(loss_sets))
    assert rep.labels() == ["none", "pc", "cs,ps", "pc,cs,ps"]
    assert all(c.iterations == 0 and c.converged is None for c in rep.select("none"))
    assert rep.config["seeds"] == [4, 5]
    doc = json.loads(bench.write_report(rep, tmp_path / "a.json").read_text())
    assert bench.check_means(doc)
    again = bench.eval_psa(scenes, styles, loss_sets, cfg)
    bench.write_report(again, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_eval_psa_feasible_styles_converge():
    scene = make_scene(SceneConfig(height=24, width=24, seed=1, albedo_min=0.6))
    model = _exact_linear_model(SceneGT(scene.albedo, scene.vignette, scene.mix, 1.0, 1.0,
                                        scene.ambient))
    i_minus, i_plus = capture_bounds(scene)
    feasible = 0.5 * (i_minus + i_plus)
    rep = bench.eval_psa([scene], [feasible], [("ps",), ("cs",), ("cs", "ps")],
                         bench.PSAStudyConfig(psa=PSAConfig()), models=[model])
    for label in ("ps", "cs", "cs,ps"):
        assert all(c.converged and c.iterations == 1 for c in rep.select(label))


def test_eval_psa_rejects_empty_inputs():
    with pytest.raises(ValueError):
        bench.eval_psa([], [np.zeros((4, 4, 3))], [("pc",)])
