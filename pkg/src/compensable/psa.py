"""Surface adaptation of a stylized image so that it becomes compensable.

A small differentiable head ``theta`` edits an initial stylization ``i0``::

    I = i0 @ color_mat.T + color_bias + upsample(grid)

Each step compensates ``I`` with the photometric model, simulates projecting
the compensation, and descends along the normalized gradient of

* ``pc``: mean |predict(I*) - I|, the simulated consistency error,
* ``cs``: mean squared excess of the compensation ``I*`` outside [0, 1],
* ``ps``: mean squared excess of ``I`` outside the band [i_minus, i_plus].

All gradients are analytic; see the tests for finite-difference checks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import imgio
from .compensate import DERIV_FLOOR, CompensationResult, invert_analytic, invert_iterative
from .photomodel import PhotometricModel, predict, predict_vjp, spow, spow_deriv

log = logging.getLogger(__name__)

PSA_LOSSES = ("pc", "cs", "ps")
INVERTERS = ("analytic", "iterative")


@dataclass(frozen=True, eq=False)
class ThetaAdapt:
    color_mat: np.ndarray
    color_bias: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.color_mat, dtype=np.float64)
        bias = np.asarray(self.color_bias, dtype=np.float64)
        grid = np.asarray(self.grid, dtype=np.float64)
        if mat.shape != (3, 3) or bias.shape != (3,):
            raise ValueError("color_mat must be 3x3 and color_bias length 3")
        if grid.ndim != 3 or grid.shape[2] != 3 or min(grid.shape[:2]) < 1:
            raise ValueError(f"grid must be (G, G, 3), got {grid.shape}")
        for name, arr in (("color_mat", mat), ("color_bias", bias), ("grid", grid)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"theta {name} is not finite")
            object.__setattr__(self, name, arr)

    @classmethod
    def identity(cls, grid_size: int = 16) -> "ThetaAdapt":
        return cls(np.eye(3), np.zeros(3), np.zeros((grid_size, grid_size, 3)))

    def flat(self) -> np.ndarray:
        return np.concatenate([self.color_mat.ravel(), self.color_bias, self.grid.ravel()])

    def with_flat(self, vec: np.ndarray) -> "ThetaAdapt":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (12 + self.grid.size,):
            raise ValueError("flat parameter vector has the wrong length")
        return ThetaAdapt(vec[:9].reshape(3, 3), vec[9:12], vec[12:].reshape(self.grid.shape))


@dataclass(frozen=True)
class Inverter:
    """Compensation operator used inside the adaptation loop.

    ``analytic`` is the exact inverse of the model, which makes ``pc``
    vanish identically. ``iterative`` runs ``iters`` gradient steps from
    ``x = I`` and leaves a nonzero residual that ``pc`` measures.
    """

    kind: str = "analytic"
    iters: int = 10
    step: float = 0.5

    def validate(self) -> None:
        if self.kind not in INVERTERS:
            raise ValueError(f"unknown inverter {self.kind!r}; expected one of {INVERTERS}")
        if self.iters < 1:
            raise ValueError("inverter iters must be >= 1")
        if self.step < 0:
            raise ValueError("inverter step must be >= 0")

    def invert(self, model: PhotometricModel, target) -> CompensationResult:
        if self.kind == "analytic":
            return invert_analytic(model, target)
        return invert_iterative(model, target, self.iters, self.step)


@dataclass(frozen=True)
class PSAConfig:
    beta: float = 0.05
    decay_every: int = 50
    decay_factor: float = 5.0
    threshold_t: float = 1e-3
    max_iters: int = 200
    loss_set: tuple[str, ...] = PSA_LOSSES
    grid_size: int = 16
    inverter: Inverter = field(default_factory=Inverter)

    def validate(self) -> None:
        check_loss_set(self.loss_set)
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if self.decay_every < 1:
            raise ValueError("decay_every must be >= 1")
        if not self.decay_factor > 0:
            raise ValueError("decay_factor must be > 0")
        if self.threshold_t < 0:
            raise ValueError("threshold_t must be >= 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grid_size < 1:
            raise ValueError("grid_size must be >= 1")
        self.inverter.validate()

    def step_size(self, iteration: int) -> float:
        """Step used after the 1-based ``iteration``; decays at 50, 100, ..."""
        return self.beta / self.decay_factor ** (iteration // self.decay_every)


@dataclass(frozen=True)
class LossBreakdown:
    pc: float
    cs: float
    ps: float
    total: float


@dataclass(eq=False)
class PSAResult:
    theta: ThetaAdapt
    stylized: np.ndarray
    compensation: CompensationResult
    loss_history: list[LossBreakdown]
    iterations: int
    converged: bool
    reason: str


def check_loss_set(loss_set) -> tuple[str, ...]:
    loss_set = tuple(loss_set)
    if not loss_set:
        raise ValueError("loss_set must not be empty")
    unknown = sorted(set(loss_set) - set(PSA_LOSSES))
    if unknown:
        raise ValueError(f"unknown PSA losses: {unknown}")
    return loss_set


# --------------------------------------------------------------------------- style head


def _grid_weights(theta: ThetaAdapt, height: int, width: int):
    g_h, g_w, _ = theta.grid.shape
    return imgio.bilinear_weights(height, g_h), imgio.bilinear_weights(width, g_w)


def apply_style(i0, theta: ThetaAdapt) -> np.ndarray:
    """Unclamped adapted stylization of ``i0``."""
    i0 = imgio.as_image(i0, "i0")
    wh, ww = _grid_weights(theta, *i0.shape[:2])
    offset = imgio.separable_apply(wh, theta.grid, ww)
    return i0 @ theta.color_mat.T + theta.color_bias + offset


# --------------------------------------------------------------------------- losses


def _same(a, b, names):
    a = imgio.as_image(a, names[0])
    b = imgio.as_image(b, names[1])
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {names[0]} {a.shape} vs {names[1]} {b.shape}")
    return a, b


def loss_pc(i_hat_star, i) -> float:
    a, b = _same(i_hat_star, i, ("simulated", "target"))
    return float(np.mean(np.abs(a - b)))


def loss_cs(i_star_unclamped) -> float:
    x = imgio.as_image(i_star_unclamped, "compensation")
    return float(np.mean(np.maximum(x - 1.0, 0.0) ** 2) + np.mean(np.minimum(x, 0.0) ** 2))


def _check_band(i_plus, i_minus):
    if np.any(i_minus > i_plus):
        raise ValueError("band violation: i_minus exceeds i_plus somewhere")


def loss_ps(i, i_plus, i_minus) -> float:
    i, i_plus = _same(i, i_plus, ("image", "i_plus"))
    _, i_minus = _same(i, i_minus, ("image", "i_minus"))
    _check_band(i_plus, i_minus)
    return float(np.mean(np.maximum(i - i_plus, 0.0) ** 2)
                 + np.mean(np.minimum(i - i_minus, 0.0) ** 2))


# --------------------------------------------------------------------------- objective


class _Objective:
    """Losses of one adaptation instance and their gradient in theta."""

    def __init__(self, model, i0, i_plus, i_minus, loss_set, inverter: Inverter, grid_shape):
        self.model = model
        self.i0 = imgio.as_image(i0, "i0")
        if self.i0.shape != model.shape:
            raise ValueError(f"i0 {self.i0.shape} does not match model {model.shape}")
        self.i_plus = _same(self.i0, i_plus, ("i0", "i_plus"))[1]
        self.i_minus = _same(self.i0, i_minus, ("i0", "i_minus"))[1]
        _check_band(self.i_plus, self.i_minus)
        self.loss_set = check_loss_set(loss_set)
        inverter.validate()
        self.inverter = inverter
        h, w, _ = self.i0.shape
        self.wh = imgio.bilinear_weights(h, grid_shape[0])
        self.ww = imgio.bilinear_weights(w, grid_shape[1])
        self.mix_inv = np.linalg.inv(model.mix)
        self.n = self.i0.size

    def style(self, theta: ThetaAdapt) -> np.ndarray:
        offset = imgio.separable_apply(self.wh, theta.grid, self.ww)
        return self.i0 @ theta.color_mat.T + theta.color_bias + offset

    # inversion -----------------------------------------------------------

    def _invert(self, i):
        m = self.model
        if self.inverter.kind == "analytic":
            u = ((i - m.bias) / m.gain) @ self.mix_inv.T
            return spow(u, 1.0 / m.gamma), u
        xs = [i]
        x = i
        for _ in range(self.inverter.iters):
            r = predict(m, x) - i
            x = x - self.inverter.step * predict_vjp(m, x, r, floor=DERIV_FLOOR)
            xs.append(x)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError("iterative inversion diverged inside PSA")
        return x, xs

    def _invert_vjp(self, i, cache, d_x):
        m = self.model
        if self.inverter.kind == "analytic":
            du = d_x * spow_deriv(cache, 1.0 / m.gamma, DERIV_FLOOR)
            return (du @ self.mix_inv) / m.gain
        # reverse pass through the unrolled steps x <- x - eta * d(x) * s(x, i)
        eta, gam = self.inverter.step, m.gamma
        a = d_x
        d_i = np.zeros_like(i)
        w2 = m.gain * m.gain
        for x in reversed(cache[:-1]):
            ax = np.abs(x)
            axf = np.maximum(ax, DERIV_FLOOR)
            d = gam * axf ** (gam - 1.0)
            dd = np.where(ax >= DERIV_FLOOR, gam * (gam - 1.0) * axf ** (gam - 2.0) * np.sign(x), 0.0)
            s = (m.gain * (predict(m, x) - i)) @ m.mix
            da = d * a
            d_i += eta * m.gain * (da @ m.mix.T)
            a = a - eta * (dd * s * a + d * ((w2 * (da @ m.mix.T)) @ m.mix))
        return d_i + a

    # losses --------------------------------------------------------------

    def evaluate(self, theta: ThetaAdapt, with_grad: bool = False):
        i = self.style(theta)
        x, cache = self._invert(i)
        active = self.loss_set
        n = self.n
        pc = cs = ps = 0.0
        d_i = np.zeros_like(i)
        d_x = np.zeros_like(i)
        if "pc" in active:
            r = predict(self.model, x) - i
            pc = float(np.mean(np.abs(r)))
            sg = np.sign(r) / n
            d_x += predict_vjp(self.model, x, sg, floor=DERIV_FLOOR)
            d_i -= sg
        if "cs" in active:
            over = np.maximum(x - 1.0, 0.0)
            under = np.minimum(x, 0.0)
            cs = float(np.mean(over**2) + np.mean(under**2))
            d_x += 2.0 * (over + under) / n
        if "ps" in active:
            hi = np.maximum(i - self.i_plus, 0.0)
            lo = np.minimum(i - self.i_minus, 0.0)
            ps = float(np.mean(hi**2) + np.mean(lo**2))
            d_i += 2.0 * (hi + lo) / n
        losses = LossBreakdown(pc, cs, ps, pc + cs + ps)
        if not np.isfinite(losses.total):
            raise FloatingPointError("PSA loss is not finite")
        if not with_grad:
            return losses, None
        if np.any(d_x):
            d_i += self._invert_vjp(i, cache, d_x)
        grad = ThetaAdapt(
            color_mat=d_i.reshape(-1, 3).T @ self.i0.reshape(-1, 3),
            color_bias=d_i.sum(axis=(0, 1)),
            grid=imgio.separable_adjoint(self.wh, d_i, self.ww),
        )
        return losses, grad


def total_loss(model: PhotometricModel, i0, theta: ThetaAdapt, i_plus, i_minus,
               loss_set=PSA_LOSSES, inverter: Inverter = Inverter()) -> LossBreakdown:
    obj = _Objective(model, i0, i_plus, i_minus, loss_set, inverter, theta.grid.shape)
    return obj.evaluate(theta)[0]


def grad_theta(model: PhotometricModel, i0, theta: ThetaAdapt, i_plus, i_minus,
               loss_set=PSA_LOSSES, inverter: Inverter = Inverter()) -> ThetaAdapt:
    """Gradient of ``total_loss(...).total`` with respect to every theta entry.

    Hinge kinks and ``|r| = 0`` take the zero subgradient.
    """
    obj = _Objective(model, i0, i_plus, i_minus, loss_set, inverter, theta.grid.shape)
    return obj.evaluate(theta, with_grad=True)[1]


# --------------------------------------------------------------------------- loop


def run_psa(model: PhotometricModel, i0, i_plus, i_minus, cfg: PSAConfig = PSAConfig(),
            progress=None) -> PSAResult:
    """Normalized gradient descent on theta until the total loss is <= threshold.

    Each iteration records the loss at the current theta, stops if it is at
    or below the threshold or the iteration budget is spent, and otherwise
    steps by exactly ``cfg.step_size(iteration)`` in parameter space.
    """
    cfg.validate()
    theta = ThetaAdapt.identity(cfg.grid_size)
    obj = _Objective(model, i0, i_plus, i_minus, cfg.loss_set, cfg.inverter, theta.grid.shape)
    history: list[LossBreakdown] = []
    reason = "max_iters"
    while True:
        losses, grad = obj.evaluate(theta, with_grad=True)
        history.append(losses)
        it = len(history)
        if progress is not None:
            progress(it, losses)
        if losses.total <= cfg.threshold_t:
            reason = "converged"
            break
        if it >= cfg.max_iters:
            break
        g = grad.flat()
        norm = float(np.linalg.norm(g))
        if norm < 1e-12:
            reason = "stalled"
            break
        theta = theta.with_flat(theta.flat() - cfg.step_size(it) * g / norm)
    stylized = imgio.clamp01(obj.style(theta))
    log.debug("psa stopped after %d iterations (%s)", len(history), reason)
    return PSAResult(
        theta=theta,
        stylized=stylized,
        compensation=cfg.inverter.invert(model, stylized),
        loss_history=history,
        iterations=len(history),
        converged=reason == "converged",
        reason=reason,
    )
