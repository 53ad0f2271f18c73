"""Image I/O and resampling.

Images are plain ``float64`` numpy arrays of shape ``(H, W, 3)``. Values are
nominally in [0, 1]; unclamped compensation images may leave that range and
can only be stored as PFM.
"""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
# PNG color types: 2 = RGB, 6 = RGBA
_PNG_RGB_TYPES = {2: "RGB", 6: "RGBA"}


def as_image(x, name: str = "image") -> np.ndarray:
    """Validate ``x`` as an H x W x 3 finite image and return it as float64."""
    img = np.asarray(x, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {img.shape}")
    if img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"{name} must be at least 1x1")
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    return img


def clamp01(x: np.ndarray) -> np.ndarray:
    return np.clip(x, 0.0, 1.0)


def _png_header(path: Path) -> tuple[int, int]:
    with open(path, "rb") as f:
        head = f.read(33)
    if len(head) < 33 or head[:8] != _PNG_SIGNATURE or head[12:16] != b"IHDR":
        raise ValueError(f"{path}: not a PNG file")
    return head[24], head[25]


def load_png(path) -> np.ndarray:
    """Load an 8- or 16-bit RGB/RGBA PNG as floats in [0, 1]; alpha is dropped."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing image file: {path}")
    depth, color_type = _png_header(path)
    if color_type not in _PNG_RGB_TYPES:
        raise ValueError(
            f"{path}: unsupported PNG color type {color_type} (only RGB and RGBA are read)"
        )
    if depth not in (8, 16):
        raise ValueError(f"{path}: unsupported PNG bit depth {depth}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ValueError(f"{path}: failed to decode PNG")
    rgb = raw[..., 2::-1] if raw.shape[2] == 4 else raw[..., ::-1]
    return rgb.astype(np.float64) / float(2**depth - 1)


def save_png(img: np.ndarray, path) -> None:
    """Write an in-range image as 8-bit RGB, rounding half up."""
    img = as_image(img)
    if img.min() < 0.0 or img.max() > 1.0:
        raise ValueError("save_png needs values in [0, 1]; clamp unclamped images first")
    q = np.floor(img * 255.0 + 0.5).astype(np.uint8)
    path = Path(path)
    ok = False
    try:
        ok = cv2.imwrite(str(path), np.ascontiguousarray(q[..., ::-1]),
                         [cv2.IMWRITE_PNG_COMPRESSION, 6])
    except cv2.error:
        ok = False
    if not ok:
        raise OSError(f"cannot write PNG: {path}")


def _read_line(f, path) -> str:
    buf = bytearray()
    while True:
        c = f.read(1)
        if not c:
            raise ValueError(f"{path}: malformed PFM header (unexpected end of file)")
        if c == b"\n":
            return buf.decode("ascii", errors="replace").strip()
        buf += c


def load_pfm(path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing PFM file: {path}")
    with open(path, "rb") as f:
        ident = _read_line(f, path)
        if ident == "Pf":
            raise ValueError(f"{path}: grayscale PFM unsupported")
        if ident != "PF":
            raise ValueError(f"{path}: malformed PFM header (identifier {ident!r})")
        dims = _read_line(f, path).split()
        try:
            width, height = (int(v) for v in dims)
            scale = float(_read_line(f, path))
        except ValueError as exc:
            raise ValueError(f"{path}: malformed PFM header") from exc
        if width < 1 or height < 1 or scale == 0.0:
            raise ValueError(f"{path}: malformed PFM header")
        payload = f.read()
    dtype = "<f4" if scale < 0 else ">f4"
    count = width * height * 3
    if len(payload) < 4 * count:
        raise ValueError(f"{path}: truncated PFM payload")
    data = np.frombuffer(payload, dtype=dtype, count=count).reshape(height, width, 3)
    # scanlines run bottom to top
    return data[::-1].astype(np.float64)


def save_pfm(img: np.ndarray, path) -> None:
    """Write float32 little-endian PFM (scale -1.0)."""
    img = as_image(img)
    h, w, _ = img.shape
    header = f"PF\n{w} {h}\n-1.0\n".encode("ascii")
    body = np.ascontiguousarray(img[::-1], dtype="<f4").tobytes()
    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(body)
    except OSError as exc:
        raise OSError(f"cannot write PFM: {path}") from exc


def bilinear_weights(n_out: int, n_in: int) -> np.ndarray:
    """Corner-aligned linear interpolation matrix of shape ``(n_out, n_in)``."""
    if n_out < 1 or n_in < 1:
        raise ValueError("sizes must be positive")
    r = np.zeros((n_out, n_in))
    if n_in == 1 or n_out == 1:
        r[:, 0] = 1.0
        return r
    pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(pos).astype(int), n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    r[rows, lo] = 1.0 - frac
    r[rows, lo + 1] += frac
    return r


def upsample_bilinear(src: np.ndarray, height: int, width: int) -> np.ndarray:
    """Resample ``src`` to ``height x width`` with corner-aligned bilinear sampling."""
    if height < 1 or width < 1:
        raise ValueError(f"target size must be positive, got {height}x{width}")
    src = np.asarray(src, dtype=np.float64)
    if src.shape[:2] == (height, width):
        return src.copy()
    ry = bilinear_weights(height, src.shape[0])
    rx = bilinear_weights(width, src.shape[1])
    return separable_apply(ry, src, rx)


def separable_apply(ry: np.ndarray, src: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """``out[i, j] = sum_hw ry[i, h] src[h, w] rx[j, w]`` for ``(h, w, c)`` arrays."""
    return rx @ np.tensordot(ry, src, axes=(1, 0))


def separable_adjoint(ry: np.ndarray, img: np.ndarray, rx: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`separable_apply` with respect to ``src``."""
    return np.tensordot(ry.T, rx.T @ img, axes=(1, 0))
