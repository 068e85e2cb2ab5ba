#!/usr/bin/env python3
"""Command-line entry point: train, fit2d, render, diagnose, sweep, metrics."""
import argparse
import logging
import os
import sys
from dataclasses import asdict
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd

from hsplat import __version__
from hsplat.config import DEFAULT_CONFIG_PATH, build_train_config, load_config_file, parse_background, run_settings
from hsplat.defaults import (
    ABS_TAU_P_CHOICES,
    DEFAULT_DENSIFY_UNTIL,
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA_DSSIM,
    DEFAULT_TAU_P,
    DEFAULT_TAU_S,
)
from hsplat.errors import EXIT_IO, SplatError, UsageError
from hsplat.gaussians import GaussianCloud, memory_bytes
from hsplat.render.backward import gradient_scale
from hsplat.render.projection import ImagePlane
from hsplat.render.rasterizer import render_cloud
from hsplat.services import diagnostics, sweep
from hsplat.services.densify import STRATEGIES
from hsplat.services.scenes import SceneInputs, camera_scene, image_scene
from hsplat.services.trainer import TrainConfig, TrainResult, evaluate, train
from hsplat.utils.cameras import load_cameras
from hsplat.utils.file_io import write_csv, write_json
from hsplat.utils.image_io import load_image, save_png
from hsplat.utils.metrics import psnr, ssim
from hsplat.utils.ply_io import load_ply, save_ply
from hsplat.utils.synthetic import synthetic_scene

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Flag dests that double as flat config keys
TRAIN_FLAG_KEYS = (
    "iterations",
    "strategy",
    "tau_p",
    "tau_s",
    "densify_interval",
    "densify_from",
    "densify_until",
    "opacity_reset_interval",
    "split_count",
    "split_scale_divisor",
    "prune_opacity",
    "loss_lambda_dssim",
    "log_interval",
    "checkpoint_interval",
    "gradient_space",
    "background",
    "sh_degree",
    "n_init",
    "holdout_every",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(message)


def _common_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", type=str, default=None, help=f"Path to config YAML (default {DEFAULT_CONFIG_PATH})")
    parent.add_argument("--threads", type=int, help="Tile worker threads; results do not depend on it")
    parent.add_argument("--seed", type=int, help="Seed for initialisation, view order and split sampling")
    parent.add_argument("--out", type=str, help="Output directory")
    parent.add_argument(
        "--log-level",
        type=str,
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging level",
    )
    return parent


def _train_parent(thresholds: bool = True) -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--iterations", type=int, help=f"Total iterations (default {DEFAULT_ITERATIONS})")
    if thresholds:
        _threshold_flags(parent)
    return _schedule_flags(parent)


def _threshold_flags(parent: argparse.ArgumentParser) -> None:
    parent.add_argument("--strategy", choices=STRATEGIES, help="Split criterion: baseline (signed) or abs (homodirectional)")
    parent.add_argument(
        "--tau-p",
        dest="tau_p",
        type=float,
        help=f"Gradient threshold (default {DEFAULT_TAU_P}; abs runs use one of {', '.join(map(str, ABS_TAU_P_CHOICES))})",
    )
    parent.add_argument("--tau-s", dest="tau_s", type=float, help=f"Scale threshold as a fraction of extent (default {DEFAULT_TAU_S})")


def _schedule_flags(parent: argparse.ArgumentParser) -> argparse.ArgumentParser:
    parent.add_argument("--densify-interval", type=int, help="Iterations between densification steps")
    parent.add_argument("--densify-from", type=int, help="First iteration eligible for densification")
    parent.add_argument("--densify-until", type=int, help=f"Stop densifying at this iteration (default {DEFAULT_DENSIFY_UNTIL})")
    parent.add_argument("--opacity-reset-interval", type=int, help="Iterations between opacity resets (view3d only)")
    parent.add_argument("--split-count", type=int, help="Children per split")
    parent.add_argument("--split-scale-divisor", type=float, help="Scale divisor for split children")
    parent.add_argument("--prune-opacity", type=float, help="Prune Gaussians below this opacity")
    parent.add_argument(
        "--lambda-dssim",
        dest="loss_lambda_dssim",
        type=float,
        help=f"D-SSIM weight in the loss (default {DEFAULT_LAMBDA_DSSIM}; 0 for pure L1)",
    )
    parent.add_argument("--log-interval", type=int, help="Iterations between metrics rows")
    parent.add_argument("--checkpoint-interval", type=int, help="Iterations between PLY checkpoints (0 disables)")
    parent.add_argument("--gradient-space", choices=["pixel", "ndc"], help="Unit of the densification ledger")
    parent.add_argument("--background", type=str, help="Background colour as 'r,g,b' in [0, 1]")
    parent.add_argument("--random-background", action="store_true", default=None, help="Random background per iteration")
    parent.add_argument("--per-channel-abs", action="store_true", default=None, help="Absolute values per colour channel")
    parent.add_argument("--no-densify", dest="densify", action="store_false", default=None, help="Disable densification")
    parent.add_argument("--sh-degree", type=int, help="Spherical-harmonic degree of new clouds")
    return parent


def _scene_parent() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--cameras", type=str, help="Camera JSON (view3d)")
    parent.add_argument("--image", type=str, help="Target image (image2d)")
    parent.add_argument("--synthetic", action="store_true", help="Use the built-in synthetic multi-view scene")
    parent.add_argument("--ply", type=str, help="Initial or checkpoint PLY")
    parent.add_argument("--n-init", dest="n_init", type=int, help="Initial Gaussian count when no PLY is given")
    parent.add_argument("--holdout-every", type=int, help="Hold out every k-th camera for evaluation")
    return parent


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(description="Differentiable Gaussian splatting with homodirectional densification")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    common, training, scene = _common_parent(), _train_parent(), _scene_parent()

    p = subparsers.add_parser("train", parents=[common, training, scene], help="Multi-view training")
    p.set_defaults(func=cmd_train)

    p = subparsers.add_parser("fit2d", parents=[common, training], help="Fit Gaussians to a single image")
    p.add_argument("--image", type=str, required=True, help="Target image")
    p.add_argument("--ply", type=str, help="Initial PLY")
    p.add_argument("--n-init", dest="n_init", type=int, help="Grid initialisation count")
    p.add_argument("--single-gaussian", action="store_true", help="One Gaussian, densification off")
    p.add_argument("--diagnose", action="store_true", help="Write collision report and sign maps")
    p.add_argument("--top-k", type=int, default=4, help="Sign maps for the k largest Gaussians")
    p.set_defaults(func=cmd_fit2d)

    p = subparsers.add_parser("render", parents=[common], help="Render a PLY from cameras or as an image plane")
    p.add_argument("--ply", type=str, required=True, help="Cloud to render")
    p.add_argument("--cameras", type=str, help="Camera JSON")
    p.add_argument("--size", type=str, help="WIDTHxHEIGHT image plane (image2d clouds)")
    p.add_argument("--background", type=str, help="Background colour as 'r,g,b'")
    p.set_defaults(func=cmd_render)

    p = subparsers.add_parser("diagnose", parents=[common, scene], help="Collision report and selection masks")
    p.add_argument("--tau-p", dest="tau_values", type=float, nargs="+", help="Thresholds for selection masks")
    p.add_argument("--tau-s", dest="tau_s", type=float, help="Scale threshold")
    p.add_argument("--top-k", type=int, default=4, help="Sign maps for the k largest Gaussians")
    p.add_argument("--lambda-dssim", dest="loss_lambda_dssim", type=float, help="D-SSIM weight of the diagnostic loss")
    p.add_argument("--gradient-space", choices=["pixel", "ndc"], help="Unit of the densification ledger")
    p.set_defaults(func=cmd_diagnose)

    p = subparsers.add_parser(
        "sweep",
        parents=[common, _train_parent(thresholds=False), scene],
        help="Threshold sweep over (tau_p, tau_s, strategy)",
    )
    p.add_argument("--tau-p", dest="tau_p_values", type=float, nargs="+", help="tau_p values")
    p.add_argument("--tau-s", dest="tau_s_values", type=float, nargs="+", help="tau_s values")
    p.add_argument("--strategies", nargs="+", choices=STRATEGIES, help="Strategies to run")
    p.add_argument("--jobs", type=int, help="Parallel cell processes")
    p.set_defaults(func=cmd_sweep)

    p = subparsers.add_parser("metrics", parents=[common], help="PSNR and SSIM of two images")
    p.add_argument("--a", required=True, help="First image")
    p.add_argument("--b", required=True, help="Second image")
    p.set_defaults(func=cmd_metrics)
    return parser


def _overrides(args: argparse.Namespace) -> Dict[str, Any]:
    keys = TRAIN_FLAG_KEYS + ("seed", "threads", "out", "random_background", "per_channel_abs", "densify", "jobs")
    return {key: getattr(args, key, None) for key in keys}


def _settings(args: argparse.Namespace, regime: str):
    file_values = load_config_file(args.config or DEFAULT_CONFIG_PATH, required=bool(args.config))
    overrides = _overrides(args)
    return build_train_config(file_values, overrides, regime=regime), run_settings(file_values, overrides)


def _initial_cloud(args: argparse.Namespace) -> Optional[GaussianCloud]:
    if getattr(args, "ply", None):
        return load_ply(args.ply)
    return None


def _load_scene(args: argparse.Namespace, config: TrainConfig, run: Dict[str, Any]) -> SceneInputs:
    initial = _initial_cloud(args)
    if config.regime == "image2d":
        image = load_image(args.image)
        return image_scene(image, n_init=run["n_init"] or 1, sh_degree=run["sh_degree"], initial_cloud=initial,
                           name=os.path.splitext(os.path.basename(args.image))[0])
    if getattr(args, "synthetic", False):
        scene, _ = synthetic_scene(seed=config.seed, sh_degree=run["sh_degree"], holdout_every=run["holdout_every"])
        if initial is not None:
            scene.initial_cloud = initial
        return scene
    if not getattr(args, "cameras", None):
        raise UsageError("view3d needs --cameras or --synthetic")
    cameras = load_cameras(args.cameras)
    return camera_scene(
        cameras,
        initial_cloud=initial,
        n_init=run["n_init"] or 1000,
        seed=config.seed,
        sh_degree=run["sh_degree"],
        holdout_every=run["holdout_every"],
    )


def _regime(args: argparse.Namespace) -> str:
    return "image2d" if getattr(args, "image", None) and not getattr(args, "cameras", None) else "view3d"


def _write_run(result: TrainResult, scene: SceneInputs, config: TrainConfig, out_dir: str) -> Dict[str, Any]:
    os.makedirs(out_dir, exist_ok=True)
    write_csv(os.path.join(out_dir, "metrics.csv"), result.metrics)
    if result.densify_events:
        events = pd.DataFrame([asdict(event) for event in result.densify_events])
        write_csv(os.path.join(out_dir, "densify_events.csv"), events)
    save_ply(result.cloud, os.path.join(out_dir, "final.ply"))
    eval_views = scene.held_out or scene.views
    for training_view in eval_views:
        image, _, _ = render_cloud(result.cloud, training_view.view, config.background, config.threads)
        save_png(os.path.join(out_dir, "renders", f"{training_view.name}.png"), image)
    scores = evaluate(result.cloud, eval_views, background=config.background, threads=config.threads)
    summary = {
        "final_n": len(result.cloud),
        "bytes": memory_bytes(len(result.cloud), result.cloud.sh_degree),
        "psnr": scores["psnr"],
        "ssim": scores["ssim"],
        "strategy": config.densify.strategy,
        "tau_p": config.densify.tau_p,
        "tau_s": config.densify.tau_s,
        "totals": result.totals,
        "baseline_split_within_abs": all(e.baseline_split_within_abs for e in result.densify_events),
        "config": asdict(config),
    }
    write_json(os.path.join(out_dir, "summary.json"), summary)
    logger.info("Wrote %s (N=%d psnr=%.3f)", out_dir, summary["final_n"], summary["psnr"])
    return summary


def cmd_train(args: argparse.Namespace) -> int:
    config, run = _settings(args, _regime(args))
    scene = _load_scene(args, config, run)
    result = train(scene, config, out_dir=run["out"])
    _write_run(result, scene, config, run["out"])
    return 0


def cmd_fit2d(args: argparse.Namespace) -> int:
    if args.single_gaussian:
        args.n_init = 1
        args.densify = False
    config, run = _settings(args, "image2d")
    scene = _load_scene(args, config, run)
    result = train(scene, config, out_dir=run["out"])
    _write_run(result, scene, config, run["out"])
    if args.diagnose:
        report = diagnostics.collision_report(
            result.cloud,
            scene.views,
            top_k=args.top_k,
            out_dir=os.path.join(run["out"], "diagnose"),
            loss_lambda=config.loss_lambda_dssim,
            threads=config.threads,
            background=config.background,
        )
        logger.info("Collision median rho=%.3f weighted rho=%.3f", report.summary["median_rho"], report.summary["weighted_rho"])
    return 0


def _parse_size(text: str):
    try:
        width, height = (int(part) for part in text.lower().split("x"))
    except ValueError as exc:
        raise UsageError(f"--size must look like WIDTHxHEIGHT, got {text!r}") from exc
    return width, height


def cmd_render(args: argparse.Namespace) -> int:
    config, run = _settings(args, "view3d")
    cloud = load_ply(args.ply)
    background = config.background if args.background is None else parse_background(args.background)
    out_dir = run["out"]
    if args.cameras:
        for camera in load_cameras(args.cameras):
            image, _, _ = render_cloud(cloud, camera, background, config.threads)
            save_png(os.path.join(out_dir, f"camera_{camera.camera_id:03d}.png"), image)
    elif args.size:
        width, height = _parse_size(args.size)
        image, _, _ = render_cloud(cloud, ImagePlane(width, height), background, config.threads)
        save_png(os.path.join(out_dir, "render.png"), image)
    else:
        raise UsageError("render needs --cameras or --size")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    regime = _regime(args)
    config, run = _settings(args, regime)
    if not args.ply:
        raise UsageError("diagnose needs --ply")
    scene = _load_scene(args, config, run)
    view = scene.views[0].view
    summary = diagnostics.diagnose(
        scene.initial_cloud,
        scene.views,
        config.densify,
        scene.scene_extent,
        run["out"],
        tau_values=args.tau_values,
        top_k=args.top_k,
        loss_lambda=config.loss_lambda_dssim,
        threads=config.threads,
        gradient_scale=gradient_scale(config.gradient_space, view.width, view.height),
    )
    logger.info("Diagnosed %d gaussians over %d views", summary["gaussians"], summary["views"])
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    regime = _regime(args)
    config, run = _settings(args, regime)
    scene = _load_scene(args, config, run)
    sweep.threshold_sweep(
        scene,
        scene.initial_cloud,
        config,
        strategies=args.strategies or STRATEGIES,
        tau_p_values=args.tau_p_values or (config.densify.tau_p,),
        tau_s_values=args.tau_s_values or (config.densify.tau_s,),
        out_dir=run["out"],
        jobs=run["jobs"],
    )
    return 0


def _format_score(value: float) -> str:
    return "inf" if np.isinf(value) else str(round(float(value), 6))


def cmd_metrics(args: argparse.Namespace) -> int:
    a, b = load_image(args.a), load_image(args.b)
    print(f"psnr={_format_score(psnr(a, b))} ssim={_format_score(ssim(a, b))}")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=getattr(logging, args.log_level), format=LOG_FORMAT)
        return int(args.func(args) or 0)
    except SplatError as exc:
        print(f"error: {exc.reason}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {' '.join(str(exc).split())}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
