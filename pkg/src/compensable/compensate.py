"""Projector compensation: invert a photometric model for a target appearance.

The analytic inverse undoes bias, gain, color mixing and the signed gamma
pixel by pixel. Values outside [0, 1] are kept in ``unclamped``; the
clamped copy is what a projector can actually display.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgio
from .photomodel import DivergenceError, PhotometricModel, spow, spow_deriv
from .scene import SceneGT, project_capture_gt

DERIV_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class CompensationResult:
    unclamped: np.ndarray
    projector_input: np.ndarray
    saturation_fraction: float

    @classmethod
    def from_unclamped(cls, unclamped: np.ndarray) -> "CompensationResult":
        unclamped = imgio.as_image(unclamped, "compensation")
        clamped = imgio.clamp01(unclamped)
        frac = float(np.mean((unclamped < 0.0) | (unclamped > 1.0)))
        return cls(unclamped, clamped, frac)


def _target(model: PhotometricModel, target) -> np.ndarray:
    target = imgio.as_image(target, "target")
    if target.shape != model.shape:
        raise ValueError(f"target {target.shape} does not match model {model.shape}")
    return target


def linear_radiance(model: PhotometricModel, target) -> np.ndarray:
    """``u = mix^-1 ((t - bias) / gain)`` per pixel, the pre-gamma projector light."""
    t = _target(model, target)
    return ((t - model.bias) / model.gain) @ np.linalg.inv(model.mix).T


def invert_analytic(model: PhotometricModel, target) -> CompensationResult:
    u = linear_radiance(model, target)
    return CompensationResult.from_unclamped(spow(u, 1.0 / model.gamma))


def invert_iterative(model: PhotometricModel, target, iters: int, step: float) -> CompensationResult:
    """Gradient descent on ``0.5 * |predict(x) - target|^2`` from ``x = target``.

    The objective is summed over channels per pixel rather than averaged over
    the whole image, so ``step`` does not depend on the image size.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if step < 0:
        raise ValueError("step must be >= 0")
    t = _target(model, target)
    x = t.copy()
    # overflow is caught by the finiteness check instead
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(iters):
            r = model.gain * (spow(x, model.gamma) @ model.mix.T) + model.bias - t
            if not np.all(np.isfinite(r)):
                raise DivergenceError("iterative inversion diverged", k)
            x = x - step * ((r * model.gain) @ model.mix) * spow_deriv(x, model.gamma, DERIV_FLOOR)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("iterative inversion diverged", iters)
    return CompensationResult.from_unclamped(x)


def captured_compensation_gt(scene: SceneGT, result: CompensationResult) -> np.ndarray:
    """Noise-free ground-truth capture of the displayable compensation image."""
    if result.projector_input.shape != scene.shape:
        raise ValueError(
            f"compensation {result.projector_input.shape} does not match scene {scene.shape}"
        )
    return project_capture_gt(scene, result.projector_input, with_noise=False)
