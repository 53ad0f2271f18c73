"""PSNR, RMSE and SSIM for images with peak value 1.

SSIM follows the usual Wang et al. settings: 11x11 Gaussian window with
sigma 1.5, C1 = 0.01**2, C2 = 0.03**2, evaluated on the valid region only and
averaged over the three channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

PSNR_CAP = 99.0
SSIM_WIN = 11
SSIM_SIGMA = 1.5
C1 = 0.01**2
C2 = 0.03**2


@dataclass(frozen=True)
class MetricsTriple:
    psnr: float
    rmse: float
    ssim: float


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def rmse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def psnr(a, b) -> float:
    a, b = _pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse < 1e-12:
        return PSNR_CAP
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_taps(size: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(x**2) / (2.0 * sigma**2))
    return g / g.sum()


_CV_MAX_CHANNELS = 512


def _blur_same(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-bordered 'same' correlation over the spatial axes of ``(..., H, W, 3)``."""
    shape = x.shape
    h, w = shape[-3], shape[-2]
    flat = x.reshape(-1, h, w, shape[-1])
    planes = np.ascontiguousarray(flat.transpose(1, 2, 0, 3)).reshape(h, w, -1)
    out = np.empty_like(planes)
    for c0 in range(0, planes.shape[2], _CV_MAX_CHANNELS):
        chunk = np.ascontiguousarray(planes[:, :, c0:c0 + _CV_MAX_CHANNELS])
        res = cv2.sepFilter2D(chunk, -1, taps, taps, borderType=cv2.BORDER_CONSTANT)
        out[:, :, c0:c0 + _CV_MAX_CHANNELS] = res.reshape(h, w, -1)
    out = out.reshape(h, w, flat.shape[0], shape[-1]).transpose(2, 0, 1, 3)
    return out.reshape(shape)


def _valid_blur(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    r = len(taps) // 2
    return _blur_same(x, taps)[..., r:-r, r:-r, :]


def _full_blur(x: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_valid_blur`."""
    r = len(taps) // 2
    pad = [(0, 0)] * (x.ndim - 3) + [(r, r), (r, r), (0, 0)]
    # symmetric taps: correlation equals convolution
    return _blur_same(np.pad(x, pad), taps)


def _ssim_terms(x, y, taps):
    mx = _valid_blur(x, taps)
    my = _valid_blur(y, taps)
    exx = _valid_blur(x * x, taps)
    eyy = _valid_blur(y * y, taps)
    exy = _valid_blur(x * y, taps)
    a1 = 2.0 * mx * my + C1
    a2 = 2.0 * (exy - mx * my) + C2
    b1 = mx * mx + my * my + C1
    b2 = (exx - mx * mx) + (eyy - my * my) + C2
    return mx, my, a1, a2, b1, b2


def _check_window(shape):
    if shape[-3] < SSIM_WIN or shape[-2] < SSIM_WIN:
        raise ValueError(
            f"image {shape[-3]}x{shape[-2]} is smaller than the {SSIM_WIN}x{SSIM_WIN} SSIM window"
        )


def ssim(a, b) -> float:
    a, b = _pair(a, b)
    _check_window(a.shape)
    _, _, a1, a2, b1, b2 = _ssim_terms(a, b, gaussian_taps())
    return float(np.mean((a1 * a2) / (b1 * b2)))


def ssim_batch_and_grad(pred: np.ndarray, target: np.ndarray):
    """Per-image SSIM of a batch ``(N, H, W, 3)`` and the gradient of their mean w.r.t. ``pred``."""
    _check_window(pred.shape)
    taps = gaussian_taps()
    mx, my, a1, a2, b1, b2 = _ssim_terms(target, pred, taps)
    den = b1 * b2
    smap = a1 * a2 / den
    n = pred.shape[0]
    per_image = smap.reshape(n, -1).mean(axis=1)
    w = 1.0 / (n * smap[0].size)
    # partials of the SSIM map w.r.t. mu_pred, E[pred^2], E[target * pred]
    d_my = (2.0 * mx * a2 - 2.0 * mx * a1) / den - smap * (2.0 * my / b1 - 2.0 * my / b2)
    d_eyy = -smap / b2
    d_exy = 2.0 * a1 / den
    grad = (_full_blur(w * d_my, taps)
            + target * _full_blur(w * d_exy, taps)
            + 2.0 * pred * _full_blur(w * d_eyy, taps))
    return per_image, grad


def evaluate(a, b) -> MetricsTriple:
    return MetricsTriple(psnr=psnr(a, b), rmse=rmse(a, b), ssim=ssim(a, b))
