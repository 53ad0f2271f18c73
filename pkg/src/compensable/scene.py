"""Ground-truth synthetic projector-camera scene.

The scene plays the part of the physical project-and-capture process: a
projector input ``x`` is pushed through projector gamma, color crosstalk,
surface albedo, ambient light, vignetting and camera response::

    radiance = vignette * (albedo * (mix @ x**gamma_prj) + ambient * albedo)
    captured = clamp01(radiance**(1/gamma_cam) + noise)
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from . import imgio
from .seeding import stream

CROSSTALK = np.array([
    [0.6, 0.3, 0.1],
    [0.2, 0.6, 0.2],
    [0.1, 0.3, 0.6],
])
DEFAULT_MIX = 0.9 * np.eye(3) + 0.1 * CROSSTALK
SURFACE_GRAY = 0.5
TEXTURE_KINDS = ("blobs", "stripes", "mixed", "from-file")


@dataclass(frozen=True)
class SceneConfig:
    height: int = 256
    width: int = 256
    texture_kind: str = "mixed"
    albedo_min: float = 0.05
    albedo_max: float = 1.0
    noise_sigma: float = 0.01
    seed: int = 0
    texture_path: str | None = None
    ambient: tuple[float, float, float] = (0.02, 0.02, 0.02)
    gamma_prj: float = 2.2
    gamma_cam: float = 2.0

    def validate(self) -> None:
        if self.height < 1 or self.width < 1:
            raise ValueError("scene height and width must be >= 1")
        if not 0.0 <= self.albedo_min <= self.albedo_max <= 1.0:
            raise ValueError(
                f"invalid albedo bounds: need 0 <= albedo_min <= albedo_max <= 1, "
                f"got {self.albedo_min}, {self.albedo_max}"
            )
        if self.texture_kind not in TEXTURE_KINDS:
            raise ValueError(f"unknown texture kind {self.texture_kind!r}")
        if self.texture_kind == "from-file" and not self.texture_path:
            raise ValueError("texture kind 'from-file' needs texture_path")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if min(self.ambient) < 0:
            raise ValueError("ambient must be >= 0")
        if self.gamma_prj <= 0 or self.gamma_cam <= 0:
            raise ValueError("gammas must be > 0")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass(frozen=True, eq=False)
class SceneGT:
    albedo: np.ndarray
    vignette: np.ndarray
    mix: np.ndarray = field(default_factory=lambda: DEFAULT_MIX.copy())
    gamma_prj: float = 2.2
    gamma_cam: float = 2.0
    ambient: np.ndarray = field(default_factory=lambda: np.zeros(3))
    noise_sigma: float = 0.0

    def __post_init__(self):
        albedo = imgio.as_image(self.albedo, "albedo")
        vignette = imgio.as_image(self.vignette, "vignette")
        if albedo.shape != vignette.shape:
            raise ValueError("albedo and vignette dimensions differ")
        mix = np.asarray(self.mix, dtype=np.float64).reshape(3, 3)
        diag = np.abs(np.diag(mix))
        off = np.abs(mix).sum(axis=1) - diag
        if not np.all(np.diag(mix) > off):
            raise ValueError("mix must be row-diagonally dominant")
        for name, arr in (("albedo", albedo), ("vignette", vignette), ("mix", mix)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        amb = np.broadcast_to(np.asarray(self.ambient, dtype=np.float64), (3,)).copy()
        if np.any(amb < 0):
            raise ValueError("ambient must be >= 0")
        amb.setflags(write=False)
        object.__setattr__(self, "ambient", amb)
        if self.gamma_prj <= 0 or self.gamma_cam <= 0:
            raise ValueError("gammas must be > 0")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.albedo.shape


def _normalize(a: np.ndarray) -> np.ndarray:
    lo, hi = a.min(), a.max()
    if hi - lo < 1e-12:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def _blobs(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    yy = yy / max(h - 1, 1)
    xx = xx / max(w - 1, 1)
    out = np.zeros((h, w, 3))
    for _ in range(int(rng.integers(5, 10))):
        cy, cx = rng.random(2)
        s = rng.uniform(0.05, 0.22)
        amp = rng.uniform(-1.0, 1.0, 3)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        out += g[..., None] * amp
    return out


def _stripes(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    out = np.zeros((h, w, 3))
    for _ in range(int(rng.integers(2, 4))):
        angle = rng.uniform(0, np.pi)
        period = rng.uniform(0.08, 0.35) * max(h, w)
        phase = rng.uniform(0, 2 * np.pi)
        t = (np.cos(angle) * xx + np.sin(angle) * yy) * (2 * np.pi / period) + phase
        wave = np.tanh(3.0 * np.sin(t))
        out += wave[..., None] * rng.uniform(0.2, 1.0, 3)
    return out


def _broadband(rng, h, w):
    return gaussian_filter(rng.standard_normal((h, w, 3)), sigma=(1.0, 1.0, 0))


def procedural_albedo(cfg: SceneConfig) -> np.ndarray:
    h, w = cfg.height, cfg.width
    if cfg.albedo_min == cfg.albedo_max:
        return np.full((h, w, 3), float(cfg.albedo_min))
    rng = stream(cfg.seed, "albedo")
    if cfg.texture_kind == "blobs":
        field_ = _blobs(rng, h, w)
    elif cfg.texture_kind == "stripes":
        field_ = _stripes(rng, h, w)
    else:
        field_ = (_normalize(_blobs(rng, h, w))
                  + 0.5 * _normalize(_stripes(rng, h, w))
                  + 0.15 * _broadband(rng, h, w))
    return cfg.albedo_min + (cfg.albedo_max - cfg.albedo_min) * _normalize(field_)


def radial_vignette(height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    r2 = (yy - (height - 1) / 2.0) ** 2 + (xx - (width - 1) / 2.0) ** 2
    rmax2 = r2.max()
    v = 1.0 - 0.3 * (r2 / rmax2 if rmax2 > 0 else r2)
    return np.repeat(v[..., None], 3, axis=2)


def make_scene(cfg: SceneConfig) -> SceneGT:
    cfg.validate()
    if cfg.texture_kind == "from-file":
        tex = imgio.load_png(cfg.texture_path)
        if tex.shape[:2] != (cfg.height, cfg.width):
            tex = imgio.upsample_bilinear(tex, cfg.height, cfg.width)
        albedo = np.clip(tex, cfg.albedo_min, cfg.albedo_max)
    else:
        albedo = procedural_albedo(cfg)
    # float32-exact so the PFM copy in a setup directory is lossless
    return SceneGT(
        albedo=albedo.astype(np.float32).astype(np.float64),
        vignette=radial_vignette(cfg.height, cfg.width).astype(np.float32).astype(np.float64),
        mix=DEFAULT_MIX.copy(),
        gamma_prj=cfg.gamma_prj,
        gamma_cam=cfg.gamma_cam,
        ambient=np.asarray(cfg.ambient, dtype=np.float64),
        noise_sigma=cfg.noise_sigma,
    )


def project_capture_gt(scene: SceneGT, x, with_noise: bool = False, rng=None) -> np.ndarray:
    """Camera image of projector input ``x`` on the scene.

    Noise needs an explicit generator so that repeated calls stay reproducible.
    """
    x = imgio.as_image(x, "projector input")
    if x.shape != scene.shape:
        raise ValueError(f"projector input {x.shape} does not match scene {scene.shape}")
    if x.min() < 0.0 or x.max() > 1.0:
        raise ValueError("projector input must lie in [0, 1]")
    lit = np.power(x, scene.gamma_prj) @ scene.mix.T
    radiance = scene.vignette * scene.albedo * (lit + scene.ambient)
    captured = np.power(radiance, 1.0 / scene.gamma_cam)
    if with_noise and scene.noise_sigma > 0:
        if rng is None:
            raise ValueError("noisy capture needs an explicit random generator")
        captured = captured + rng.normal(0.0, scene.noise_sigma, size=captured.shape)
    return np.clip(captured, 0.0, 1.0)


def capture_bounds(scene: SceneGT) -> tuple[np.ndarray, np.ndarray]:
    """Captures under full-black and full-white projection: ``(i_minus, i_plus)``."""
    h, w, _ = scene.shape
    i_minus = project_capture_gt(scene, np.zeros((h, w, 3)))
    i_plus = project_capture_gt(scene, np.ones((h, w, 3)))
    return i_minus, i_plus


def capture_surface(scene: SceneGT) -> np.ndarray:
    h, w, _ = scene.shape
    return project_capture_gt(scene, np.full((h, w, 3), SURFACE_GRAY))


def write_scene_gt(scene: SceneGT, directory) -> None:
    directory = Path(directory)
    imgio.save_pfm(scene.albedo, directory / "albedo.pfm")
    imgio.save_pfm(scene.vignette, directory / "vignette.pfm")
    doc = {
        "mix": [float(v) for v in scene.mix.ravel()],
        "gamma_prj": float(scene.gamma_prj),
        "gamma_cam": float(scene.gamma_cam),
        "ambient": [float(v) for v in scene.ambient],
        "noise_sigma": float(scene.noise_sigma),
        "albedo": "albedo.pfm",
        "vignette": "vignette.pfm",
    }
    (directory / "scene_gt.json").write_text(json.dumps(doc, indent=2) + "\n")


def read_scene_gt(directory) -> SceneGT:
    directory = Path(directory)
    path = directory / "scene_gt.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing scene description: {path}")
    doc = json.loads(path.read_text())
    return SceneGT(
        albedo=imgio.load_pfm(directory / doc["albedo"]),
        vignette=imgio.load_pfm(directory / doc["vignette"]),
        mix=np.array(doc["mix"], dtype=np.float64).reshape(3, 3),
        gamma_prj=doc["gamma_prj"],
        gamma_cam=doc["gamma_cam"],
        ambient=np.array(doc["ambient"], dtype=np.float64),
        noise_sigma=doc["noise_sigma"],
    )
