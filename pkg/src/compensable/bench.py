"""Evaluation harness: simulation accuracy and adaptation on/off comparisons.

The "real" captures in every report are noise-free renders of the
ground-truth scene, which stand in for a physical camera.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .compensate import captured_compensation_gt, invert_analytic
from .dataset import build_setup
from .metrics import MetricsTriple, evaluate
from .photomodel import FitConfig, PhotometricModel, fit, predict, prediction_rmse
from .psa import PSAConfig, run_psa
from .scene import SceneGT, capture_bounds, capture_surface
from .seeding import stream

CAPTURE_NOTE = "captured images are noise-free renders of the ground-truth scene"
BASELINE = "none"
DEFAULT_LOSS_SETS = (("pc",), ("cs",), ("ps",), ("cs", "ps"), ("pc", "cs", "ps"))


def loss_set_label(loss_set) -> str:
    return ",".join(loss_set) if loss_set else BASELINE


@dataclass
class Condition:
    scene: str
    style: str
    loss_set: str
    metrics: MetricsTriple
    iterations: int = 0
    converged: bool | None = None

    def to_json(self) -> dict:
        return {
            "scene": self.scene,
            "style": self.style,
            "loss_set": self.loss_set,
            "psnr": self.metrics.psnr,
            "rmse": self.metrics.rmse,
            "ssim": self.metrics.ssim,
            "iterations": self.iterations,
            "converged": self.converged,
        }


@dataclass
class EvalReport:
    kind: str
    conditions: list[Condition] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def labels(self) -> list[str]:
        seen = []
        for c in self.conditions:
            if c.loss_set not in seen:
                seen.append(c.loss_set)
        return seen

    def select(self, label: str) -> list[Condition]:
        return [c for c in self.conditions if c.loss_set == label]

    def means(self) -> dict:
        out = {}
        for label in self.labels():
            rows = self.select(label)
            out[label] = {
                "psnr": float(np.mean([c.metrics.psnr for c in rows])),
                "rmse": float(np.mean([c.metrics.rmse for c in rows])),
                "ssim": float(np.mean([c.metrics.ssim for c in rows])),
                "iterations": float(np.mean([c.iterations for c in rows])),
                "count": len(rows),
            }
        return out

    def mean_iterations(self, label: str) -> float:
        return self.means()[label]["iterations"]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "note": CAPTURE_NOTE,
            "config": self.config,
            "conditions": [c.to_json() for c in self.conditions],
            "means": self.means(),
        }


def write_report(report: EvalReport, path) -> Path:
    if not report.conditions:
        raise ValueError("no conditions")
    path = Path(path)
    text = json.dumps(report.to_json(), indent=2, allow_nan=False) + "\n"
    path.write_text(text)
    return path


# --------------------------------------------------------------------------- simulation accuracy


def eval_sim_accuracy(scene: SceneGT, model: PhotometricModel, test_targets,
                      scene_id: str = "000") -> EvalReport:
    """Simulated vs ground-truth captured compensation for each target.

    Both sides see the clamped projector input, since that is what a
    projector can display.
    """
    targets = list(test_targets)
    if not targets:
        raise ValueError("eval_sim_accuracy needs at least one target")
    if model.shape != scene.shape:
        raise ValueError(f"model {model.shape} does not match scene {scene.shape}")
    report = EvalReport("sim", config={"scene": scene_id, "targets": len(targets)})
    for k, target in enumerate(targets):
        comp = invert_analytic(model, target)
        simulated = imgio.clamp01(predict(model, comp.projector_input))
        real = captured_compensation_gt(scene, comp)
        report.conditions.append(
            Condition(scene_id, f"target_{k:03d}", "sim", evaluate(simulated, real))
        )
    return report


# --------------------------------------------------------------------------- adaptation study


def synth_style(surface: np.ndarray, seed: int) -> np.ndarray:
    """A bright two-tone stylization that follows the surface texture.

    Stands in for a text-guided stylizer: a random palette is mapped over
    the surface luminance mixed with smooth noise.
    """
    surface = imgio.as_image(surface, "surface")
    h, w, _ = surface.shape
    rng = stream(seed, "style")
    lum = surface.mean(axis=2)
    span = lum.max() - lum.min()
    lum = (lum - lum.min()) / span if span > 1e-12 else np.zeros_like(lum)
    cells = int(rng.integers(3, 7))
    noise = imgio.upsample_bilinear(rng.random((cells, cells, 1)), h, w)[..., 0]
    t = 0.6 * lum + 0.4 * noise
    c0 = rng.uniform(0.35, 0.8, 3)
    c1 = rng.uniform(0.6, 1.0, 3)
    return np.clip(c0 + (c1 - c0) * t[..., None], 0.0, 1.0)


@dataclass(frozen=True)
class PSAStudyConfig:
    psa: PSAConfig = field(default_factory=PSAConfig)
    fit: FitConfig = field(default_factory=lambda: FitConfig(iters=200, warmup_iters=150))
    n_train: int = 48
    n_test: int = 4
    seed: int = 0


def fit_scene_model(scene: SceneGT, cfg: PSAStudyConfig, index: int) -> PhotometricModel:
    setup = build_setup(scene, cfg.n_train, cfg.n_test, seed=cfg.seed + index)
    return fit(setup, cfg.fit)


def _score(scene: SceneGT, comp, reference) -> MetricsTriple:
    return evaluate(captured_compensation_gt(scene, comp), reference)


def eval_psa(scenes, styles, loss_sets=DEFAULT_LOSS_SETS, cfg: PSAStudyConfig = PSAStudyConfig(),
             models=None, scene_ids=None) -> EvalReport:
    """Adaptation on/off over every (scene, style, loss set).

    ``styles`` holds either images or callables ``f(surface) -> image``;
    ``models`` defaults to a model fitted per scene on a synthetic setup.
    The no-adaptation baseline compensates the style directly and is
    labelled ``"none"``.
    """
    scenes, styles, loss_sets = list(scenes), list(styles), [tuple(s) for s in loss_sets]
    if not scenes or not styles or not loss_sets:
        raise ValueError("eval_psa needs nonempty scenes, styles and loss sets")
    if models is None:
        models = [fit_scene_model(s, cfg, k) for k, s in enumerate(scenes)]
    if len(models) != len(scenes):
        raise ValueError("one model per scene is required")
    scene_ids = list(scene_ids) if scene_ids is not None else [f"{k:03d}" for k in range(len(scenes))]
    report = EvalReport("psa", config={
        "seed": cfg.seed,
        "seeds": [cfg.seed + k for k in range(len(scenes))],
        "scenes": scene_ids,
        "styles": len(styles),
        "size": list(scenes[0].shape[:2]),
        "loss_sets": [loss_set_label(s) for s in loss_sets],
        "beta": cfg.psa.beta,
        "threshold_t": cfg.psa.threshold_t,
        "max_iters": cfg.psa.max_iters,
        "decay_every": cfg.psa.decay_every,
        "decay_factor": cfg.psa.decay_factor,
        "grid_size": cfg.psa.grid_size,
        "inverter": cfg.psa.inverter.kind,
        "n_train": cfg.n_train,
        "fit_iters": cfg.fit.iters,
    })
    for sid, scene, model in zip(scene_ids, scenes, models):
        i_minus, i_plus = capture_bounds(scene)
        surface = capture_surface(scene)
        for k, style in enumerate(styles):
            i0 = imgio.as_image(style(surface) if callable(style) else style, "style")
            name = f"style_{k:03d}"
            base = _score(scene, invert_analytic(model, i0), i0)
            report.conditions.append(Condition(sid, name, BASELINE, base))
            for loss_set in loss_sets:
                psa_cfg = PSAConfig(**{**cfg.psa.__dict__, "loss_set": loss_set})
                res = run_psa(model, i0, i_plus, i_minus, psa_cfg)
                report.conditions.append(Condition(
                    sid, name, loss_set_label(loss_set),
                    _score(scene, res.compensation, res.stylized),
                    res.iterations, res.converged,
                ))
    return report


def check_means(report_json: dict, tol: float = 1e-9) -> bool:
    """Recompute every mean from the listed conditions."""
    for label, mean in report_json["means"].items():
        rows = [c for c in report_json["conditions"] if c["loss_set"] == label]
        for key in ("psnr", "rmse", "ssim", "iterations"):
            if not math.isclose(np.mean([r[key] for r in rows]), mean[key], rel_tol=0, abs_tol=tol):
                return False
    return True
