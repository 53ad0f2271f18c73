"""Parametric project-and-capture simulator and its fitting procedure.

Per pixel ``p`` the model predicts the camera image of projector input ``x``::

    c_p = gain_p * (mix @ spow(x_p, gamma)) + bias_p

``spow`` is the signed power ``sign(u) * |u|**gamma`` so that unclamped
compensation images (values outside [0, 1]) remain valid inputs. The model
is fitted per setup; it does not generalize across surfaces.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .metrics import ssim_batch_and_grad

log = logging.getLogger(__name__)

GAIN_FLOOR = 1e-3
GAMMA_RANGE = (0.5, 4.0)
MAX_MIX_COND = 1e3
LOSS_NAMES = ("l1", "l2", "ssim")


class DivergenceError(RuntimeError):
    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} (iteration {iteration})")
        self.iteration = iteration


def spow(x, p):
    return np.sign(x) * np.abs(x) ** p


def spow_deriv(x, p, floor: float = 0.0):
    """d/dx of ``spow(x, p)``; ``floor`` bounds ``|x|`` away from zero for p < 1."""
    ax = np.abs(x)
    if floor > 0:
        ax = np.maximum(ax, floor)
    return p * ax ** (p - 1.0)


@dataclass(frozen=True, eq=False)
class PhotometricModel:
    gain: np.ndarray
    bias: np.ndarray
    mix: np.ndarray = field(default_factory=lambda: np.eye(3))
    gamma: float = 1.0

    def __post_init__(self):
        gain = imgio.as_image(self.gain, "gain")
        bias = imgio.as_image(self.bias, "bias")
        if gain.shape != bias.shape:
            raise ValueError("gain and bias dimensions differ")
        if gain.min() < GAIN_FLOOR:
            raise ValueError(f"gain below floor {GAIN_FLOOR}")
        mix = np.asarray(self.mix, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(mix)) or np.linalg.cond(mix) >= MAX_MIX_COND:
            raise ValueError("mix must be finite with condition number < 1e3")
        gamma = float(self.gamma)
        if not GAMMA_RANGE[0] <= gamma <= GAMMA_RANGE[1]:
            raise ValueError(f"gamma {gamma} outside {GAMMA_RANGE}")
        for name, arr in (("gain", gain), ("bias", bias), ("mix", mix)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def identity(cls, height: int, width: int) -> "PhotometricModel":
        return cls(np.ones((height, width, 3)), np.zeros((height, width, 3)), np.eye(3), 1.0)

    @property
    def shape(self):
        return self.gain.shape


def _check_input(model: PhotometricModel, x, name="input") -> np.ndarray:
    x = imgio.as_image(x, name)
    if x.shape != model.shape:
        raise ValueError(f"{name} {x.shape} does not match model {model.shape}")
    return x


def predict(model: PhotometricModel, x) -> np.ndarray:
    """Unclamped simulated capture of projector image ``x``."""
    x = _check_input(model, x)
    return model.gain * (spow(x, model.gamma) @ model.mix.T) + model.bias


def predict_vjp(model: PhotometricModel, x, upstream, floor: float = 0.0) -> np.ndarray:
    """Gradient of ``<upstream, predict(model, x)>`` with respect to ``x``.

    ``floor`` keeps the derivative finite at zero when gamma < 1.
    """
    x = _check_input(model, x)
    upstream = _check_input(model, upstream, "upstream")
    return ((upstream * model.gain) @ model.mix) * spow_deriv(x, model.gamma, floor)


# --------------------------------------------------------------------------- fitting


@dataclass(frozen=True)
class FitConfig:
    loss_combo: tuple[str, ...] = ("l1", "l2", "ssim")
    iters: int = 400
    step: float = 0.02
    warmup_iters: int = 300
    seed: int = 0
    batch_size: int = 8

    def validate(self) -> None:
        if not self.loss_combo:
            raise ValueError("loss_combo must not be empty")
        unknown = set(self.loss_combo) - set(LOSS_NAMES)
        if unknown:
            raise ValueError(f"unknown fit losses: {sorted(unknown)}")
        if self.iters < 1:
            raise ValueError("iters must be >= 1")
        if self.step <= 0:
            raise ValueError("step must be > 0")
        if self.warmup_iters < 0:
            raise ValueError("warmup_iters must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class _Adam:
    def __init__(self, shapes, b1=0.9, b2=0.999, eps=1e-8):
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.b1, self.b2, self.eps = b1, b2, eps
        self.t = 0

    def deltas(self, grads, lr):
        self.t += 1
        out = []
        for m, v, g in zip(self.m, self.v, grads):
            m *= self.b1
            m += (1 - self.b1) * g
            v *= self.b2
            v += (1 - self.b2) * g * g
            mhat = m / (1 - self.b1**self.t)
            vhat = v / (1 - self.b2**self.t)
            out.append(-lr * mhat / (np.sqrt(vhat) + self.eps))
        return out


def _stack(pairs, dtype=np.float32):
    x = np.stack([p[0] for p in pairs]).astype(dtype)
    y = np.stack([p[1] for p in pairs]).astype(dtype)
    return x, y


def _losses_and_grad(q, y, active):
    """Mean of the active data losses on clamped predictions, and d/dq."""
    r = q - y
    n = r.size
    values, grad = {}, np.zeros_like(q)
    if "l1" in active:
        values["l1"] = float(np.abs(r).mean())
        grad += np.sign(r) / n
    if "l2" in active:
        values["l2"] = float((r * r).mean())
        grad += 2.0 * r / n
    if "ssim" in active:
        per_image, g = ssim_batch_and_grad(q, y)
        values["ssim"] = float(1.0 - per_image.mean())
        grad -= g
    k = len(active)
    return sum(values.values()) / k, values, grad / k


def fit(setup, cfg: FitConfig = FitConfig(), progress=None) -> PhotometricModel:
    """Fit gain, bias, mix and gamma to the setup's training pairs.

    Adam on the mean of the selected losses between ``clamp01(predict(x))``
    and the captured image. The first ``warmup_iters`` iterations use l1+l2
    only; afterwards the full ``loss_combo`` is used.
    """
    cfg.validate()
    pairs = setup.train_pairs
    if len(pairs) < 4:
        raise ValueError(f"fit needs at least 4 training pairs, got {len(pairs)}")
    h, w, _ = pairs[0][0].shape
    xs, ys = _stack(pairs)
    positive = xs > 0
    logx = np.log(np.where(positive, xs, 1.0))

    gain = np.ones((h, w, 3))
    bias = np.zeros((h, w, 3))
    mix = np.eye(3)
    gamma = 2.2
    adam = _Adam([gain.shape, bias.shape, (3, 3), ()])
    rng = np.random.default_rng(cfg.seed)
    batch = min(cfg.batch_size, len(pairs))
    order = np.empty(0, dtype=int)
    warm_combo = ("l1", "l2")

    for it in range(cfg.iters):
        if len(order) < batch:
            order = np.concatenate([order, rng.permutation(len(pairs))])
        idx, order = order[:batch], order[batch:]
        active = warm_combo if it < cfg.warmup_iters else tuple(cfg.loss_combo)

        g32, b32, m32 = gain.astype(np.float32), bias.astype(np.float32), mix.astype(np.float32)
        lx = logx[idx]
        u = np.where(positive[idx], np.exp(np.float32(gamma) * lx), np.float32(0.0))
        z = u @ m32.T
        p = g32 * z + b32
        q = np.clip(p, 0.0, 1.0)
        loss, _, dq = _losses_and_grad(q, ys[idx], active)
        if not np.isfinite(loss):
            raise DivergenceError("fit loss is not finite", it)
        dp = dq * ((p > 0) & (p < 1))
        d_gain = (dp * z).sum(axis=0)
        d_bias = dp.sum(axis=0)
        dz = dp * g32
        d_mix = (dz.reshape(-1, 3).T.astype(np.float64) @ u.reshape(-1, 3).astype(np.float64))
        du = dz @ m32
        d_gamma = float(np.sum(du * u * lx, dtype=np.float64))

        lr = cfg.step * (0.05 + 0.95 * 0.5 * (1.0 + np.cos(np.pi * it / cfg.iters)))
        dg, db, dm, dga = adam.deltas(
            [d_gain.astype(np.float64), d_bias.astype(np.float64), d_mix, np.float64(d_gamma)], lr)
        gain = np.maximum(gain + dg, GAIN_FLOOR)
        bias = bias + db
        new_mix = mix + dm
        if np.all(np.isfinite(new_mix)) and np.linalg.cond(new_mix) < MAX_MIX_COND:
            mix = new_mix
        gamma = float(np.clip(gamma + float(dga), *GAMMA_RANGE))
        if not (np.all(np.isfinite(gain)) and np.all(np.isfinite(bias)) and np.isfinite(gamma)):
            raise DivergenceError("fit parameters are not finite", it)
        if progress is not None:
            progress(it, loss)
    log.debug("fit finished: gamma=%.4f", gamma)
    return PhotometricModel(gain, bias, mix, gamma)


def prediction_rmse(model: PhotometricModel, pairs) -> float:
    """Mean over pairs of RMSE between ``clamp01(predict(x))`` and the capture."""
    errs = [np.sqrt(np.mean((np.clip(predict(model, x), 0, 1) - y) ** 2)) for x, y in pairs]
    return float(np.mean(errs))


# --------------------------------------------------------------------------- persistence


def save_model(model: PhotometricModel, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    imgio.save_pfm(model.gain, directory / "gain.pfm")
    imgio.save_pfm(model.bias, directory / "bias.pfm")
    doc = {
        "type": "ppaffine_gamma",
        "gamma": model.gamma,
        "mix": [float(v) for v in model.mix.ravel()],
        "gain": "gain.pfm",
        "bias": "bias.pfm",
    }
    (directory / "model.json").write_text(json.dumps(doc, indent=2) + "\n")
    return directory


def load_model(directory) -> PhotometricModel:
    directory = Path(directory)
    path = directory / "model.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing model description: {path}")
    doc = json.loads(path.read_text())
    if doc.get("type") != "ppaffine_gamma":
        raise ValueError(f"{path}: unsupported model type {doc.get('type')!r}")
    return PhotometricModel(
        gain=imgio.load_pfm(directory / doc["gain"]),
        bias=imgio.load_pfm(directory / doc["bias"]),
        mix=np.array(doc["mix"], dtype=np.float64).reshape(3, 3),
        gamma=doc["gamma"],
    )
