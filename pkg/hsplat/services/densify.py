"""Adaptive density control: clone, split and prune selection and execution."""

import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.special import logit

from hsplat.defaults import (
    DEFAULT_DENSIFY_FROM,
    DEFAULT_DENSIFY_INTERVAL,
    DEFAULT_DENSIFY_UNTIL,
    DEFAULT_MAX_SCREEN_FRACTION,
    DEFAULT_MAX_WORLD_FRACTION,
    DEFAULT_OPACITY_RESET_INTERVAL,
    DEFAULT_PRUNE_OPACITY,
    DEFAULT_SPLIT_COUNT,
    DEFAULT_SPLIT_SCALE_DIVISOR,
    DEFAULT_TAU_P,
    DEFAULT_TAU_S,
)
from hsplat.errors import ConfigError
from hsplat.gaussians import GaussianCloud, GradientLedger, concat_clouds, quaternion_to_matrix
from hsplat.render.projection import View, project_view
from hsplat.render.rasterizer import render

logger = logging.getLogger(__name__)

STRATEGIES = ("baseline", "abs")
DIMMED_FACTOR = 0.3
SELECTED_COLOR = np.array([1.0, 1.0, 1.0])


@dataclass(frozen=True)
class DensifyConfig:
    tau_p: float = DEFAULT_TAU_P
    tau_s: float = DEFAULT_TAU_S
    strategy: str = "baseline"
    split_count: int = DEFAULT_SPLIT_COUNT
    split_scale_divisor: float = DEFAULT_SPLIT_SCALE_DIVISOR
    prune_opacity: float = DEFAULT_PRUNE_OPACITY
    densify_interval: int = DEFAULT_DENSIFY_INTERVAL
    densify_from: int = DEFAULT_DENSIFY_FROM
    densify_until: int = DEFAULT_DENSIFY_UNTIL
    opacity_reset_interval: int = DEFAULT_OPACITY_RESET_INTERVAL
    size_guards: bool = True
    max_screen_fraction: float = DEFAULT_MAX_SCREEN_FRACTION
    max_world_fraction: float = DEFAULT_MAX_WORLD_FRACTION
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {', '.join(STRATEGIES)}, got {self.strategy!r}")
        if not self.tau_p > 0:
            raise ConfigError(f"tau_p must be positive, got {self.tau_p}")
        if not self.tau_s > 0:
            raise ConfigError(f"tau_s must be positive, got {self.tau_s}")
        if int(self.split_count) < 2:
            raise ConfigError(f"split_count must be at least 2, got {self.split_count}")
        if not self.split_scale_divisor > 1:
            raise ConfigError(f"split_scale_divisor must exceed 1, got {self.split_scale_divisor}")
        if not 0 <= self.prune_opacity < 1:
            raise ConfigError(f"prune_opacity must be in [0, 1), got {self.prune_opacity}")
        if int(self.densify_interval) < 1:
            raise ConfigError("densify_interval must be at least 1")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SelectionReport:
    split_ids: np.ndarray
    clone_ids: np.ndarray
    pruned_ids: np.ndarray
    split_criterion_values: np.ndarray
    clone_criterion_values: np.ndarray
    strategy: str
    tau_p: float
    tau_s: float
    scene_extent: float
    num_gaussians: int
    mean_split_scale: float = 0.0

    def counts(self) -> Dict[str, int]:
        return {
            "split": int(self.split_ids.size),
            "clone": int(self.clone_ids.size),
            "pruned": int(self.pruned_ids.size),
            "gaussians": int(self.num_gaussians),
        }

    @property
    def selected_ids(self) -> np.ndarray:
        return np.union1d(self.split_ids, self.clone_ids)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "strategy": self.strategy,
            "tau_p": float(self.tau_p),
            "tau_s": float(self.tau_s),
            "scene_extent": float(self.scene_extent),
            "counts": self.counts(),
            "split_ids": self.split_ids.tolist(),
            "clone_ids": self.clone_ids.tolist(),
            "pruned_ids": self.pruned_ids.tolist(),
            "split_criterion_values": self.split_criterion_values.tolist(),
            "clone_criterion_values": self.clone_criterion_values.tolist(),
            "mean_split_scale": float(self.mean_split_scale),
        }


@dataclass
class DensifyMapping:
    """Row bookkeeping for optimizer-state surgery.

    ``survivors`` lists, in new row order, the old row of every Gaussian that
    was kept unchanged; the ``num_new`` rows after them are fresh.
    """

    survivors: np.ndarray
    num_new: int
    num_before: int

    @property
    def num_after(self) -> int:
        return int(self.survivors.size + self.num_new)


def average_gradients(ledger: GradientLedger) -> Tuple[np.ndarray, np.ndarray]:
    count = ledger.view_count.astype(np.float64)
    seen = count > 0
    avg_signed = np.zeros_like(count)
    avg_abs = np.zeros_like(count)
    avg_signed[seen] = ledger.signed_accum[seen] / count[seen]
    avg_abs[seen] = ledger.homodir_accum[seen] / count[seen]
    return avg_signed, avg_abs


def prune_mask(
    cloud: GaussianCloud,
    config: DensifyConfig,
    scene_extent: float,
    *,
    iteration: Optional[int] = None,
    image_size: Optional[Tuple[int, int]] = None,
    size_guards: Optional[bool] = None,
) -> np.ndarray:
    mask = cloud.opacities < config.prune_opacity
    guards = config.size_guards if size_guards is None else size_guards
    if guards and iteration is not None and iteration > config.opacity_reset_interval:
        mask |= cloud.scales.max(axis=1) > config.max_world_fraction * scene_extent
        if image_size is not None:
            mask |= cloud.ledger.max_screen_radius > config.max_screen_fraction * max(image_size)
    return mask


def select(
    cloud: GaussianCloud,
    config: DensifyConfig,
    *,
    scene_extent: float = 1.0,
    iteration: Optional[int] = None,
    image_size: Optional[Tuple[int, int]] = None,
    size_guards: Optional[bool] = None,
) -> SelectionReport:
    """Pick clone, split and prune sets from the current ledger. Pure read."""
    avg_signed, avg_abs = average_gradients(cloud.ledger)
    seen = cloud.ledger.view_count > 0
    max_scale = cloud.scales.max(axis=1) if len(cloud) else np.zeros(0)
    large = max_scale > config.tau_s * scene_extent
    pruned = prune_mask(
        cloud, config, scene_extent, iteration=iteration, image_size=image_size, size_guards=size_guards
    )

    criterion = avg_abs if config.strategy == "abs" else avg_signed
    clone = seen & ~large & ~pruned & (avg_signed > config.tau_p)
    split = seen & large & ~pruned & (criterion > config.tau_p)
    split_ids = np.nonzero(split)[0]
    return SelectionReport(
        split_ids=split_ids,
        clone_ids=np.nonzero(clone)[0],
        pruned_ids=np.nonzero(pruned)[0],
        split_criterion_values=criterion,
        clone_criterion_values=avg_signed,
        strategy=config.strategy,
        tau_p=config.tau_p,
        tau_s=config.tau_s,
        scene_extent=float(scene_extent),
        num_gaussians=len(cloud),
        mean_split_scale=float(max_scale[split_ids].mean()) if split_ids.size else 0.0,
    )


def apply(cloud: GaussianCloud, report: SelectionReport, config: DensifyConfig, seed: int = 0) -> DensifyMapping:
    """Execute a selection in place and reset the ledger.

    New row order: kept originals (old order), clones, then split children
    grouped child-major.
    """
    if report.num_gaussians != len(cloud):
        raise ConfigError("selection report does not match the cloud it is applied to")
    count = len(cloud)
    removed = np.zeros(count, dtype=bool)
    removed[report.pruned_ids] = True
    removed[report.split_ids] = True
    survivors = np.nonzero(~removed)[0]

    clones = cloud.take(report.clone_ids)
    parents = cloud.take(report.split_ids)
    children = _split_children(parents, config, seed)

    merged = concat_clouds(cloud.take(survivors), clones, children)
    merged.ledger = GradientLedger.zeros(len(merged))
    cloud.replace_rows(merged)

    logger.info(
        "densify strategy=%s split=%d clone=%d pruned=%d gaussians %d -> %d",
        report.strategy,
        report.split_ids.size,
        report.clone_ids.size,
        report.pruned_ids.size,
        count,
        len(cloud),
    )
    return DensifyMapping(survivors=survivors, num_new=len(clones) + len(children), num_before=count)


def _split_children(parents: GaussianCloud, config: DensifyConfig, seed: int) -> GaussianCloud:
    copies = int(config.split_count)
    children = parents.take(np.tile(np.arange(len(parents)), copies))
    if len(parents) == 0:
        return children
    rng = np.random.default_rng(seed)
    stds = np.tile(parents.scales, (copies, 1))
    samples = rng.normal(size=stds.shape) * stds
    rot = np.tile(quaternion_to_matrix(parents.rotations), (copies, 1, 1))
    offsets = np.einsum("nij,nj->ni", rot, samples)
    dtype = parents.positions.dtype
    children.positions = (children.positions.astype(np.float64) + offsets).astype(dtype)
    children.log_scales = (
        children.log_scales.astype(np.float64) - np.log(config.split_scale_divisor)
    ).astype(dtype)
    return children


def reset_opacity(cloud: GaussianCloud, value: float) -> None:
    """Clamp opacities to at most ``value`` (stored as logits)."""
    ceiling = logit(value)
    cloud.opacity_logits[:] = np.minimum(cloud.opacity_logits, ceiling).astype(cloud.opacity_logits.dtype)


def selection_mask(
    report: SelectionReport,
    cloud: GaussianCloud,
    view: View,
    *,
    which: str = "split",
    background=None,
    threads: int = 1,
) -> np.ndarray:
    """Render with selected Gaussians white and the rest dimmed."""
    if which == "split":
        chosen = report.split_ids
    elif which == "clone":
        chosen = report.clone_ids
    else:
        chosen = report.selected_ids
    projected = project_view(cloud, view)
    selected = np.isin(projected.source, chosen)
    rgb = np.where(selected[:, None], SELECTED_COLOR[None, :], DIMMED_FACTOR * projected.rgb)
    image, _ = render(projected.with_colors(rgb), view.width, view.height, background, threads=threads)
    return image
