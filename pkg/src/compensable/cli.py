"""Command-line entry point.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error. Every flag
is validated before any file is written.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable
from functools import partial
from pathlib import Path

from . import bench, dataset, imgio, photomodel, psa, scene
from .seeding import stream_seed

log = logging.getLogger("compensable")


class UsageError(ValueError):
    pass


# Each cmd_* validates its flags and returns the job to run, so nothing is
# written unless validation passed.
Job = Callable[[], int]


def _size(text: str) -> tuple[int, int]:
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--size must look like HxW, got {text!r}") from None
    return h, w


def _names(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise UsageError(message)


def _validated(obj, flag_hint: str):
    try:
        obj.validate()
    except ValueError as exc:
        raise UsageError(f"{flag_hint}: {exc}") from None
    return obj


def _dump(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, allow_nan=False) + "\n")


# --------------------------------------------------------------------------- gen-dataset


def _scene_config(args, index: int) -> scene.SceneConfig:
    h, w = args.size
    return scene.SceneConfig(
        height=h, width=w,
        texture_kind=args.texture,
        texture_path=args.texture_path,
        albedo_min=args.albedo_min,
        albedo_max=args.albedo_max,
        noise_sigma=args.noise_sigma,
        seed=stream_seed(args.seed, "scene", index),
    )


def cmd_gen_dataset(args) -> Job:
    _require(args.setups >= 1, "--setups: need n_setups >= 1")
    _require(args.train >= 1, "--train: need n_train >= 1")
    _require(args.test >= 1, "--test: need n_test >= 1")
    _require(min(args.size) >= 1, "--size: height and width must be >= 1")
    configs = [_validated(_scene_config(args, k), "scene flags") for k in range(args.setups)]
    if args.texture == "from-file" and not Path(args.texture_path).is_file():
        raise FileNotFoundError(f"--texture-path: no such file {args.texture_path}")

    def run():
        out = Path(args.out)
        for k, cfg in enumerate(configs):
            sid = f"{k:03d}"
            setup = dataset.build_setup(scene.make_scene(cfg), args.train, args.test,
                                        seed=stream_seed(args.seed, "setup", k), setup_id=sid)
            dataset.write_setup(setup, out / f"setup_{sid}")
            m = setup.manifest
            print(f"setup_{sid}: {m['n_train']} train, {m['n_test']} test, "
                  f"{m['height']}x{m['width']}, seed {m['seed']}")
        return 0
    return run


# --------------------------------------------------------------------------- fit


def cmd_fit(args) -> Job:
    losses = _names(args.loss)
    _require(bool(losses), "--loss: at least one of l1,l2,ssim is required")
    warmup = args.warmup if args.warmup is not None else min(args.iters * 3 // 4, 300)
    cfg = _validated(photomodel.FitConfig(
        loss_combo=losses, iters=args.iters, step=args.step, warmup_iters=warmup,
        seed=stream_seed(args.seed, "fit"), batch_size=args.batch), "fit flags")

    def run():
        setup = dataset.read_setup(args.dataset, load_scene=False)
        model = photomodel.fit(setup, cfg)
        out = photomodel.save_model(model, args.out)
        # report the model as stored on disk so later commands agree exactly
        stored = photomodel.load_model(out)
        train = photomodel.prediction_rmse(stored, setup.train_pairs)
        test = photomodel.prediction_rmse(stored, setup.test_pairs)
        print(f"gamma {stored.gamma:.6f}")
        print(f"train_rmse {train!r}")
        print(f"test_rmse {test!r}")
        return 0
    return run


# --------------------------------------------------------------------------- compensate


def cmd_compensate(args) -> Job:
    def run():
        from .compensate import invert_analytic

        model = photomodel.load_model(args.model)
        target = imgio.load_png(args.target)
        if target.shape != model.shape:
            print(f"error: target {target.shape[:2]} does not match model {model.shape[:2]}",
                  file=sys.stderr)
            return 1
        result = invert_analytic(model, target)
        imgio.save_png(result.projector_input, args.out_prj)
        if args.out_raw:
            imgio.save_pfm(result.unclamped, args.out_raw)
        print(f"saturation_fraction {result.saturation_fraction!r}")
        return 0
    return run


# --------------------------------------------------------------------------- adapt


def _psa_config(args, loss_set) -> psa.PSAConfig:
    return psa.PSAConfig(
        beta=args.beta,
        decay_every=args.decay_every,
        decay_factor=args.decay_factor,
        threshold_t=args.tau,
        max_iters=args.max_iters,
        loss_set=loss_set,
        grid_size=args.grid,
        inverter=psa.Inverter(args.inverter, args.inv_iters, args.inv_step),
    )


def cmd_adapt(args) -> Job:
    losses = _names(args.losses)
    _require(bool(losses), "--losses: at least one of pc,cs,ps is required")
    cfg = _validated(_psa_config(args, losses), "adapt flags")

    def run():
        model = photomodel.load_model(args.model)
        _, i_minus, i_plus = dataset.read_bounds(args.setup)
        i0 = imgio.load_png(args.style)
        for name, img in (("setup", i_plus), ("style", i0)):
            if img.shape != model.shape:
                raise ValueError(f"{name} size {img.shape[:2]} does not match model {model.shape[:2]}")
        result = psa.run_psa(model, i0, i_plus, i_minus, cfg)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        imgio.save_png(result.stylized, out / "stylized.png")
        imgio.save_png(result.compensation.projector_input, out / "compensation.png")
        imgio.save_pfm(result.compensation.unclamped, out / "raw.pfm")
        _dump(out / "history.json", {
            "iterations": result.iterations,
            "converged": result.converged,
            "reason": result.reason,
            "loss_set": list(cfg.loss_set),
            "threshold_t": cfg.threshold_t,
            "beta": cfg.beta,
            "history": [h.__dict__ for h in result.loss_history],
        })
        final = result.loss_history[-1]
        print(f"iterations {result.iterations}")
        print(f"converged {str(result.converged).lower()} ({result.reason})")
        print(f"loss pc={final.pc:.6g} cs={final.cs:.6g} ps={final.ps:.6g} total={final.total:.6g}")
        print(f"saturation_fraction {result.compensation.saturation_fraction!r}")
        return 0
    return run


# --------------------------------------------------------------------------- evaluate


def _setup_dirs(root: Path) -> list[Path]:
    if (root / "manifest.json").is_file():
        return [root]
    dirs = sorted(p for p in root.glob("setup_*") if p.is_dir())
    if not dirs:
        raise FileNotFoundError(f"no setup directories under {root}")
    return dirs


def cmd_evaluate(args) -> Job:
    if args.kind == "sim":
        _require(args.model is not None, "--model is required for --kind sim")
        return partial(_evaluate_sim, args)
    loss_sets = [_names(s) for s in args.loss_sets.split(";")]
    _require(all(loss_sets), "--loss-sets: empty loss set")
    _require(args.styles >= 1, "--styles: need at least one style")
    for ls in loss_sets:
        _validated(_psa_config(args, ls), "psa flags")
    fit_cfg = _validated(photomodel.FitConfig(
        iters=args.fit_iters, warmup_iters=args.fit_iters * 3 // 4,
        seed=stream_seed(args.seed, "fit")), "fit flags")
    return partial(_evaluate_psa, args, loss_sets, fit_cfg)


def _evaluate_sim(args) -> int:
    root = Path(args.dataset)
    setup = dataset.read_setup(root, load_scene=True)
    if setup.scene is None:
        raise ValueError(f"{root}: setup has no ground-truth scene")
    model = photomodel.load_model(args.model)
    report = bench.eval_sim_accuracy(setup.scene, model, [y for _, y in setup.test_pairs],
                                     scene_id=setup.manifest["id"])
    report.config["test_rmse"] = photomodel.prediction_rmse(model, setup.test_pairs)
    report.config["seed"] = setup.manifest["seed"]
    bench.write_report(report, args.report)
    means = report.means()["sim"]
    print(f"sim psnr {means['psnr']:.4f} rmse {means['rmse']:.6f} ssim {means['ssim']:.6f}")
    print(f"test_rmse {report.config['test_rmse']!r}")
    return 0


def _evaluate_psa(args, loss_sets, fit_cfg) -> int:
    dirs = _setup_dirs(Path(args.dataset))
    setups = [dataset.read_setup(d, load_scene=True) for d in dirs]
    if any(s.scene is None for s in setups):
        raise ValueError("every setup needs a ground-truth scene for --kind psa")
    models = []
    for d, s in zip(dirs, setups):
        if args.models:
            models.append(photomodel.load_model(Path(args.models) / d.name))
        else:
            models.append(photomodel.fit(s, fit_cfg))
    style_seeds = [stream_seed(args.seed, "style", k) for k in range(args.styles)]
    styles = [partial(bench.synth_style, seed=s) for s in style_seeds]
    study = bench.PSAStudyConfig(psa=_psa_config(args, loss_sets[0]), fit=fit_cfg,
                                 seed=args.seed)
    report = bench.eval_psa([s.scene for s in setups], styles, loss_sets, study, models=models,
                            scene_ids=[s.manifest["id"] for s in setups])
    report.config["seeds"] = [s.manifest["seed"] for s in setups]
    report.config["style_seeds"] = style_seeds
    report.config["n_train"] = [len(s.train_pairs) for s in setups]
    report.config["fit_seed"] = fit_cfg.seed
    report.config["models"] = "loaded" if args.models else "fitted"
    bench.write_report(report, args.report)
    for label, m in report.means().items():
        print(f"{label:>9}: psnr {m['psnr']:.4f} rmse {m['rmse']:.6f} ssim {m['ssim']:.6f} "
              f"iters {m['iterations']:.2f}")
    return 0


# --------------------------------------------------------------------------- parser


def _add_psa_flags(p, losses_flag: bool):
    p.add_argument("--tau", type=float, default=1e-3, help="loss threshold")
    p.add_argument("--beta", type=float, default=0.05, help="normalized step size")
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--decay-every", type=int, default=50)
    p.add_argument("--decay-factor", type=float, default=5.0)
    p.add_argument("--grid", type=int, default=16, help="offset grid resolution")
    p.add_argument("--inverter", choices=psa.INVERTERS, default="analytic")
    p.add_argument("--inv-iters", type=int, default=10)
    p.add_argument("--inv-step", type=float, default=0.5)
    if losses_flag:
        p.add_argument("--losses", default="pc,cs,ps")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="compensable", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=0, help="global seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-dataset", help="write synthetic setups")
    p.add_argument("--out", required=True)
    p.add_argument("--setups", type=int, default=1)
    p.add_argument("--train", type=int, default=48)
    p.add_argument("--test", type=int, default=10)
    p.add_argument("--size", type=_size, default=(256, 256))
    p.add_argument("--texture", choices=scene.TEXTURE_KINDS, default="mixed")
    p.add_argument("--texture-path")
    p.add_argument("--albedo-min", type=float, default=0.05)
    p.add_argument("--albedo-max", type=float, default=1.0)
    p.add_argument("--noise-sigma", type=float, default=0.01)
    p.set_defaults(handler=cmd_gen_dataset)

    p = sub.add_parser("fit", help="fit a photometric model to one setup")
    p.add_argument("--dataset", required=True, help="setup directory")
    p.add_argument("--out", required=True, help="model directory")
    p.add_argument("--loss", default="l1,l2,ssim")
    p.add_argument("--iters", type=int, default=400)
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--step", type=float, default=0.02)
    p.add_argument("--batch", type=int, default=8)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("compensate", help="compensate one target image")
    p.add_argument("--model", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--out-prj", required=True)
    p.add_argument("--out-raw")
    p.set_defaults(handler=cmd_compensate)

    p = sub.add_parser("adapt", help="adapt a stylization to a surface")
    p.add_argument("--model", required=True)
    p.add_argument("--setup", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--out", required=True)
    _add_psa_flags(p, losses_flag=True)
    p.set_defaults(handler=cmd_adapt)

    p = sub.add_parser("evaluate", help="write an evaluation report")
    p.add_argument("--kind", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--model", help="model directory (sim)")
    p.add_argument("--models", help="directory of per-setup models (psa); fitted if absent")
    p.add_argument("--styles", type=int, default=5)
    p.add_argument("--loss-sets", default="pc;cs;ps;cs,ps;pc,cs,ps",
                   help="semicolon-separated loss sets")
    p.add_argument("--fit-iters", type=int, default=200)
    _add_psa_flags(p, losses_flag=False)
    p.set_defaults(handler=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "evaluate" and args.kind not in ("sim", "psa"):
        print(f"error: --kind must be sim or psa, got {args.kind!r}", file=sys.stderr)
        return 2
    try:
        job = args.handler(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        return job()
    except (OSError, ValueError, RuntimeError, FloatingPointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
