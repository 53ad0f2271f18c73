"""Projector sampling images, captured setups, and their on-disk layout.

Layout of one setup directory::

    setup_<id>/manifest.json
    setup_<id>/surface.png, cam_min.png, cam_max.png
    setup_<id>/scene_gt.json (+ albedo.pfm, vignette.pfm)   synthetic only
    setup_<id>/{train,test}/{prj,cam}/NNNN.png

The sampling images are a procedural stand-in for a real projector sampling
corpus: solid colors, linear gradients, smooth noise and stripe/checker
patterns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import imgio
from .scene import SceneGT, capture_bounds, capture_surface, project_capture_gt, write_scene_gt
from .seeding import stream, stream_seed

# cube corners first (black, white), then the remaining corners, then mid-grays
SOLID_PALETTE = np.array([
    (0.0, 0.0, 0.0), (1.0, 1.0, 1.0),
    (1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0),
    (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0),
    (0.25, 0.25, 0.25), (0.5, 0.5, 0.5), (0.75, 0.75, 0.75),
])

MANIFEST_KEYS = ("id", "seed", "n_train", "n_test", "height", "width", "has_scene_gt")


def category_counts(n: int) -> tuple[int, int, int, int]:
    """Split ``n`` into solid / gradient / noise / pattern counts (20/20/30/30%)."""
    solid = int(round(0.2 * n))
    grad = int(round(0.2 * n))
    noise = int(round(0.3 * n))
    noise = min(noise, n - solid - grad)
    return solid, grad, noise, n - solid - grad - noise


def _gradient(rng, h, w):
    c0, c1 = rng.random(3), rng.random(3)
    if rng.random() < 0.5:
        t = np.linspace(0.0, 1.0, w)[None, :, None] * np.ones((h, 1, 1))
    else:
        t = np.linspace(0.0, 1.0, h)[:, None, None] * np.ones((1, w, 1))
    return c0 + (c1 - c0) * t


def _smooth_noise(rng, h, w):
    cells = int(rng.integers(3, 9))
    coarse = rng.random((cells, cells, 3))
    img = imgio.upsample_bilinear(coarse, h, w)
    lo, hi = img.min(axis=(0, 1)), img.max(axis=(0, 1))
    return (img - lo) / np.maximum(hi - lo, 1e-12)


def _pattern(rng, h, w):
    yy, xx = np.mgrid[0:h, 0:w]
    c0, c1 = rng.random(3), rng.random(3)
    if rng.random() < 0.5:
        cell = int(rng.integers(2, max(3, min(h, w) // 4 + 1)))
        t = ((yy // cell + xx // cell) % 2).astype(np.float64)
    else:
        t = np.zeros((h, w))
        for _ in range(2):
            freq = rng.uniform(1.0, 12.0)
            angle = rng.uniform(0, np.pi)
            u = (np.cos(angle) * xx / max(w, 1) + np.sin(angle) * yy / max(h, 1))
            t += 0.5 + 0.5 * np.sin(2 * np.pi * freq * u + rng.uniform(0, 2 * np.pi))
        t /= 2.0
    return c0 + (c1 - c0) * t[..., None]


def gen_inputs(n: int, seed: int, height: int = 256, width: int = 256,
               solid_offset: int = 0) -> list[np.ndarray]:
    """Deterministic projector sampling images in [0, 1].

    Solid colors walk ``SOLID_PALETTE`` starting at ``solid_offset``; the
    other categories draw from a generator seeded by ``seed``.
    """
    if n < 1:
        raise ValueError("gen_inputs needs n >= 1")
    rng = stream(seed, "inputs")
    n_solid, n_grad, n_noise, n_pat = category_counts(n)
    out = []
    for i in range(n_solid):
        color = SOLID_PALETTE[(solid_offset + i) % len(SOLID_PALETTE)]
        out.append(np.broadcast_to(color, (height, width, 3)).copy())
    out += [_gradient(rng, height, width) for _ in range(n_grad)]
    out += [_smooth_noise(rng, height, width) for _ in range(n_noise)]
    out += [_pattern(rng, height, width) for _ in range(n_pat)]
    return [np.clip(img, 0.0, 1.0) for img in out]


@dataclass(eq=False)
class Setup:
    surface: np.ndarray
    i_minus: np.ndarray
    i_plus: np.ndarray
    train_pairs: list[tuple[np.ndarray, np.ndarray]]
    test_pairs: list[tuple[np.ndarray, np.ndarray]]
    manifest: dict = field(default_factory=dict)
    scene: SceneGT | None = None

    @property
    def shape(self):
        return self.surface.shape


def build_setup(scene: SceneGT, n_train: int, n_test: int, seed: int,
                setup_id: str = "000") -> Setup:
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    h, w, _ = scene.shape
    train_in = gen_inputs(n_train, seed=stream_seed(seed, "train"), height=h, width=w)
    # test solids continue the palette so no test input repeats a training one
    test_in = gen_inputs(n_test, seed=stream_seed(seed, "test"), height=h, width=w,
                         solid_offset=category_counts(n_train)[0])
    noise_rng = stream(seed, "capture-noise")

    def capture(x):
        if x.shape != scene.shape:
            raise ValueError("generated input does not match scene dimensions")
        return project_capture_gt(scene, x, with_noise=True, rng=noise_rng)

    train = [(x, capture(x)) for x in train_in]
    test = [(x, capture(x)) for x in test_in]
    i_minus, i_plus = capture_bounds(scene)
    manifest = {
        "id": setup_id,
        "seed": int(seed),
        "n_train": n_train,
        "n_test": n_test,
        "height": h,
        "width": w,
        "has_scene_gt": True,
    }
    return Setup(capture_surface(scene), i_minus, i_plus, train, test, manifest, scene)


def _name(i: int) -> str:
    return f"{i:04d}.png"


def write_setup(setup: Setup, directory) -> Path:
    directory = Path(directory)
    for part in ("train", "test"):
        for kind in ("prj", "cam"):
            (directory / part / kind).mkdir(parents=True, exist_ok=True)
    imgio.save_png(setup.surface, directory / "surface.png")
    imgio.save_png(setup.i_minus, directory / "cam_min.png")
    imgio.save_png(setup.i_plus, directory / "cam_max.png")
    for part, pairs in (("train", setup.train_pairs), ("test", setup.test_pairs)):
        for i, (x, y) in enumerate(pairs):
            imgio.save_png(x, directory / part / "prj" / _name(i))
            imgio.save_png(y, directory / part / "cam" / _name(i))
    manifest = {k: setup.manifest[k] for k in MANIFEST_KEYS}
    manifest["n_train"] = len(setup.train_pairs)
    manifest["n_test"] = len(setup.test_pairs)
    manifest["has_scene_gt"] = setup.scene is not None
    if setup.scene is not None:
        write_scene_gt(setup.scene, directory)
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def read_manifest(directory) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise FileNotFoundError(f"missing manifest: {path}")
    manifest = json.loads(path.read_text())
    missing = [k for k in MANIFEST_KEYS if k not in manifest]
    if missing:
        raise ValueError(f"{path}: manifest lacks {', '.join(missing)}")
    return manifest


def read_setup(directory, load_scene: bool = True) -> Setup:
    directory = Path(directory)
    manifest = read_manifest(directory)
    pairs = {}
    for part in ("train", "test"):
        expected = manifest[f"n_{part}"]
        for kind in ("prj", "cam"):
            folder = directory / part / kind
            for i in range(expected):
                if not (folder / _name(i)).is_file():
                    raise FileNotFoundError(f"missing setup image: {folder / _name(i)}")
            found = len(list(folder.glob("*.png")))
            if found != expected:
                raise ValueError(
                    f"{folder}: manifest says {expected} images, found {found}"
                )
        pairs[part] = [
            (imgio.load_png(directory / part / "prj" / _name(i)),
             imgio.load_png(directory / part / "cam" / _name(i)))
            for i in range(expected)
        ]
    scene = None
    if manifest["has_scene_gt"] and load_scene:
        from .scene import read_scene_gt
        scene = read_scene_gt(directory)
    setup = Setup(
        surface=imgio.load_png(directory / "surface.png"),
        i_minus=imgio.load_png(directory / "cam_min.png"),
        i_plus=imgio.load_png(directory / "cam_max.png"),
        train_pairs=pairs["train"],
        test_pairs=pairs["test"],
        manifest=manifest,
        scene=scene,
    )
    shape = (manifest["height"], manifest["width"], 3)
    for x, y in setup.train_pairs + setup.test_pairs:
        if x.shape != shape or y.shape != shape:
            raise ValueError(f"{directory}: image size differs from manifest {shape[:2]}")
    return setup


def read_bounds(directory) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(surface, i_minus, i_plus)`` of a setup directory without its pairs."""
    directory = Path(directory)
    read_manifest(directory)
    return tuple(imgio.load_png(directory / name)
                 for name in ("surface.png", "cam_min.png", "cam_max.png"))
