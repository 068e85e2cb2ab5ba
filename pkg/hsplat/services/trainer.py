"""Optimisation loop: render, loss, backward, Adam, densification cadence."""

import logging
import math
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from hsplat.defaults import (
    DEFAULT_ITERATIONS,
    DEFAULT_LAMBDA_DSSIM,
    DEFAULT_LOG_INTERVAL,
    DEFAULT_SEED,
    DEFAULT_THREADS,
    OPACITY_RESET_VALUE,
)
from hsplat.errors import ConfigError, DimensionMismatchError, NumericalError, UsageError
from hsplat.gaussians import GaussianCloud
from hsplat.render.backward import accumulate_ledger, backward, gradient_scale
from hsplat.render.projection import project_view
from hsplat.render.rasterizer import render
from hsplat.services import densify
from hsplat.services.densify import DensifyConfig
from hsplat.services.optimizer import GaussianOptimizer, LearningRates
from hsplat.services.scenes import REGIMES, SceneInputs, TrainingView
from hsplat.utils.metrics import dssim_with_grad, psnr, ssim
from hsplat.utils.ply_io import load_ply, save_ply

logger = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "iteration",
    "loss",
    "psnr",
    "num_gaussians",
    "split_count",
    "clone_count",
    "pruned_count",
    "strategy",
]
GRADIENT_SPACES = ("pixel", "ndc")


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = DEFAULT_ITERATIONS
    densify: DensifyConfig = field(default_factory=DensifyConfig)
    loss_lambda_dssim: float = DEFAULT_LAMBDA_DSSIM
    lr: LearningRates = field(default_factory=LearningRates)
    regime: str = "view3d"
    seed: int = DEFAULT_SEED
    log_interval: int = DEFAULT_LOG_INTERVAL
    checkpoint_interval: int = 0
    threads: int = DEFAULT_THREADS
    background: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    random_background: bool = False
    per_channel_abs: bool = False
    gradient_space: str = "pixel"

    def __post_init__(self) -> None:
        if int(self.iterations) < 0:
            raise ConfigError("iterations must be non-negative")
        if self.densify.enabled and int(self.iterations) < int(self.densify.densify_until):
            raise ConfigError(
                f"iterations ({self.iterations}) must be at least densify_until ({self.densify.densify_until})"
            )
        if not 0.0 <= float(self.loss_lambda_dssim) <= 1.0:
            raise ConfigError(f"loss_lambda_dssim must be in [0, 1], got {self.loss_lambda_dssim}")
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {', '.join(REGIMES)}, got {self.regime!r}")
        if self.gradient_space not in GRADIENT_SPACES:
            raise ConfigError(f"gradient_space must be one of {', '.join(GRADIENT_SPACES)}")
        if int(self.log_interval) < 1:
            raise ConfigError("log_interval must be at least 1")

    def with_densify(self, **changes: Any) -> "TrainConfig":
        return replace(self, densify=replace(self.densify, **changes))


@dataclass
class DensifyEvent:
    iteration: int
    split: int
    clone: int
    pruned: int
    num_before: int
    num_after: int
    baseline_split_within_abs: bool


@dataclass
class TrainResult:
    cloud: GaussianCloud
    metrics: pd.DataFrame
    densify_events: List[DensifyEvent] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)

    @property
    def totals(self) -> Dict[str, int]:
        return {
            "split": sum(e.split for e in self.densify_events),
            "clone": sum(e.clone for e in self.densify_events),
            "pruned": sum(e.pruned for e in self.densify_events),
        }


def loss(rendered: np.ndarray, target: np.ndarray, lam: float = 0.0) -> Tuple[float, np.ndarray]:
    """(1 - lam) * mean L1 + lam * D-SSIM, and its gradient w.r.t. ``rendered``."""
    rendered = np.asarray(rendered, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if rendered.shape != target.shape:
        raise DimensionMismatchError(f"image shapes differ: {rendered.shape} vs {target.shape}")
    residual = rendered - target
    value = (1.0 - lam) * float(np.abs(residual).mean())
    grad = (1.0 - lam) * np.sign(residual) / residual.size
    if lam > 0.0:
        dssim, dssim_grad = dssim_with_grad(rendered, target)
        value += lam * dssim
        grad = grad + lam * dssim_grad
    return value, grad


def checkpoint(cloud: GaussianCloud, path: str) -> None:
    save_ply(cloud, path)


def restore(path: str, sh_degree: Optional[int] = None) -> GaussianCloud:
    return load_ply(path, sh_degree=sh_degree)


def _view_schedule(rng: np.random.Generator, count: int):
    while True:
        for index in rng.permutation(count):
            yield int(index)


def _dump_and_abort(cloud: GaussianCloud, out_dir: Optional[str], iteration: int, reason: str):
    dump_path = None
    if out_dir:
        dump_path = os.path.join(out_dir, f"nonfinite_iteration_{iteration:05d}.ply")
        try:
            save_ply(cloud, dump_path)
        except Exception:
            logger.exception("Failed to write diagnostic dump %s", dump_path)
            dump_path = None
    logger.error("Aborting at iteration %d: %s (dump=%s)", iteration, reason, dump_path)
    raise NumericalError(f"{reason} at iteration {iteration}", dump_path=dump_path)


def train(scene: SceneInputs, config: TrainConfig, *, out_dir: Optional[str] = None) -> TrainResult:
    """Fit ``scene.initial_cloud`` (copied) to the scene's target views."""
    if not scene.views:
        raise UsageError("no training views")
    if scene.regime != config.regime:
        raise ConfigError(f"scene regime {scene.regime} does not match config regime {config.regime}")

    cloud = scene.initial_cloud.copy()
    rng = np.random.default_rng(config.seed)
    schedule = _view_schedule(rng, len(scene.views))
    optimizer = GaussianOptimizer(
        cloud, config.lr, spatial_scale=scene.scene_extent, max_steps=max(config.iterations, 1)
    )
    dcfg = config.densify
    image2d = config.regime == "image2d"
    rows: List[Dict[str, Any]] = []
    events: List[DensifyEvent] = []
    checkpoints: List[str] = []
    pending = {"split": 0, "clone": 0, "pruned": 0}

    for iteration in range(1, config.iterations + 1):
        optimizer.update_learning_rate(iteration)
        training_view: TrainingView = scene.views[next(schedule)]
        view = training_view.view
        background = rng.random(3) if config.random_background else np.asarray(config.background, dtype=np.float64)

        projected = project_view(cloud, view)
        image, artifacts = render(projected, view.width, view.height, background, threads=config.threads)
        value, image_grad = loss(image, training_view.target, config.loss_lambda_dssim)
        if not math.isfinite(value) or not np.all(np.isfinite(image_grad)):
            _dump_and_abort(cloud, out_dir, iteration, "non-finite loss")

        grads = backward(
            projected, artifacts, image_grad, view, per_channel_abs=config.per_channel_abs, threads=config.threads
        )
        if not grads.touched.any():
            logger.warning("Iteration %d: no gaussian contributed to view %s", iteration, training_view.name)
        optimizer.step(grads.parameter_gradients())
        cloud.normalize_rotations()

        if dcfg.enabled and iteration < dcfg.densify_until:
            accumulate_ledger(
                cloud, grads, scale=gradient_scale(config.gradient_space, view.width, view.height)
            )
            if iteration >= dcfg.densify_from and iteration % dcfg.densify_interval == 0:
                event = _densify_step(cloud, optimizer, scene, config, iteration)
                events.append(event)
                pending["split"] += event.split
                pending["clone"] += event.clone
                pending["pruned"] += event.pruned
            if not image2d and iteration % dcfg.opacity_reset_interval == 0:
                densify.reset_opacity(cloud, OPACITY_RESET_VALUE)
                optimizer.reset_moments("opacity_logits")
                logger.info("Iteration %d: opacity reset", iteration)

        if iteration % config.log_interval == 0 or iteration == config.iterations:
            score = psnr(np.clip(image, 0.0, 1.0), training_view.target)
            rows.append(
                {
                    "iteration": iteration,
                    "loss": value,
                    "psnr": score,
                    "num_gaussians": len(cloud),
                    "split_count": pending["split"],
                    "clone_count": pending["clone"],
                    "pruned_count": pending["pruned"],
                    "strategy": dcfg.strategy,
                }
            )
            pending = {"split": 0, "clone": 0, "pruned": 0}
            logger.info("it=%d loss=%.6f psnr=%.3f n=%d", iteration, value, score, len(cloud))

        if out_dir and config.checkpoint_interval and iteration % config.checkpoint_interval == 0:
            path = os.path.join(out_dir, "checkpoints", f"iteration_{iteration:05d}.ply")
            checkpoint(cloud, path)
            checkpoints.append(path)

    return TrainResult(
        cloud=cloud,
        metrics=pd.DataFrame(rows, columns=METRICS_COLUMNS),
        densify_events=events,
        checkpoints=checkpoints,
    )


def _densify_step(
    cloud: GaussianCloud,
    optimizer: GaussianOptimizer,
    scene: SceneInputs,
    config: TrainConfig,
    iteration: int,
) -> DensifyEvent:
    dcfg = config.densify
    image2d = config.regime == "image2d"
    view = scene.views[0].view
    select_kwargs = dict(
        scene_extent=scene.scene_extent,
        iteration=iteration,
        image_size=(view.width, view.height),
        size_guards=False if image2d else None,
    )
    report = densify.select(cloud, dcfg, **select_kwargs)
    other = densify.select(cloud, replace(dcfg, strategy="abs" if dcfg.strategy == "baseline" else "baseline"), **select_kwargs)
    baseline, absolute = (report, other) if dcfg.strategy == "baseline" else (other, report)
    within = bool(np.all(np.isin(baseline.split_ids, absolute.split_ids)))

    before = len(cloud)
    mapping = densify.apply(cloud, report, dcfg, seed=config.seed * 1_000_003 + iteration)
    optimizer.remap(mapping.survivors, mapping.num_new)
    return DensifyEvent(
        iteration=iteration,
        split=int(report.split_ids.size),
        clone=int(report.clone_ids.size),
        pruned=int(report.pruned_ids.size),
        num_before=before,
        num_after=len(cloud),
        baseline_split_within_abs=within,
    )


def evaluate(cloud: GaussianCloud, views: Sequence[TrainingView], *, background=None, threads: int = 1) -> Dict[str, float]:
    """Mean PSNR / SSIM of ``cloud`` over ``views``."""
    scores_psnr, scores_ssim = [], []
    for training_view in views:
        view = training_view.view
        image, _ = render(project_view(cloud, view), view.width, view.height, background, threads=threads)
        image = np.clip(image, 0.0, 1.0)
        scores_psnr.append(psnr(image, training_view.target))
        scores_ssim.append(ssim(image, training_view.target))
    return {"psnr": float(np.mean(scores_psnr)), "ssim": float(np.mean(scores_ssim))}
