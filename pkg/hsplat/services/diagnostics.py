"""Gradient-collision analysis and selection comparisons written as files."""

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure
import numpy as np
import pandas as pd

from hsplat.gaussians import GaussianCloud, memory_bytes
from hsplat.render.backward import ViewGradients, accumulate_ledger, backward, capture_pixel_gradients
from hsplat.render.projection import project_view
from hsplat.render.rasterizer import render
from hsplat.services import densify
from hsplat.services.densify import DensifyConfig
from hsplat.services.scenes import TrainingView
from hsplat.services.trainer import loss
from hsplat.utils.file_io import write_csv, write_json
from hsplat.utils.image_io import save_png, sign_map_rgb, write_pfm

logger = logging.getLogger(__name__)

COLLISION_COLUMNS = ["view", "gaussian", "footprint", "g_norm", "ghat_norm", "rho", "rho_x", "rho_y", "max_scale"]
FOOTPRINT_BINS = (1, 2, 4, 16, 64, 256, 1024, 4096, 2**62)
RHO_BINS = (0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0 + 1e-9)


@dataclass
class CollisionReport:
    table: pd.DataFrame
    summary: Dict[str, Any]
    sign_maps: List[str] = field(default_factory=list)
    view_gradients: List[ViewGradients] = field(default_factory=list)


def collision_ratio(signed: np.ndarray, homodir: np.ndarray) -> np.ndarray:
    """||g|| / ||g_hat||, defined as 1 where g_hat vanishes."""
    signed = np.asarray(signed, dtype=np.float64)
    homodir = np.asarray(homodir, dtype=np.float64)
    out = np.ones_like(homodir)
    nonzero = homodir > 0
    out[nonzero] = np.abs(signed[nonzero]) / homodir[nonzero]
    return out


def _view_gradients(cloud: GaussianCloud, tv: TrainingView, lam: float, threads: int, background=None):
    view = tv.view
    projected = project_view(cloud, view)
    image, artifacts = render(projected, view.width, view.height, background, threads=threads)
    _, image_grad = loss(image, tv.target, lam)
    grads = backward(projected, artifacts, image_grad, view, threads=threads)
    return projected, artifacts, image_grad, grads


def _joint_distribution(table: pd.DataFrame) -> Dict[str, Any]:
    if table.empty:
        return {"footprint_bins": list(FOOTPRINT_BINS[:-1]), "rho_bins": list(RHO_BINS[:-1]), "counts": []}
    counts, _, _ = np.histogram2d(
        table["footprint"].to_numpy(dtype=np.float64),
        table["rho"].to_numpy(dtype=np.float64),
        bins=[np.asarray(FOOTPRINT_BINS, dtype=np.float64), np.asarray(RHO_BINS)],
    )
    medians = []
    for low, high in zip(FOOTPRINT_BINS[:-1], FOOTPRINT_BINS[1:]):
        chunk = table[(table["footprint"] >= low) & (table["footprint"] < high)]
        medians.append(float(chunk["rho"].median()) if len(chunk) else None)
    return {
        "footprint_bins": [int(b) for b in FOOTPRINT_BINS[:-1]],
        "rho_bins": [float(b) for b in RHO_BINS[:-1]],
        "counts": counts.astype(int).tolist(),
        "median_rho_by_footprint": medians,
    }


def _scatter_plot(table: pd.DataFrame, path: str) -> None:
    fig = Figure(figsize=(5, 4), dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(1, 1, 1)
    if not table.empty:
        ax.scatter(table["footprint"], table["rho"], s=6, alpha=0.6)
        ax.set_xscale("log")
    ax.set_xlabel("footprint pixels")
    ax.set_ylabel("collision ratio ||g|| / ||g_hat||")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    fig.savefig(path)


def write_sign_maps(values: np.ndarray, out_dir: str, stem: str) -> List[str]:
    """Export an (H, W, 2) sub-gradient field as PFM plus red/green PNGs per axis."""
    os.makedirs(out_dir, exist_ok=True)
    pfm_path = os.path.join(out_dir, f"{stem}.pfm")
    write_pfm(pfm_path, values)
    paths = [pfm_path]
    for axis, label in enumerate(("x", "y")):
        png_path = os.path.join(out_dir, f"{stem}_{label}.png")
        save_png(png_path, sign_map_rgb(values[:, :, axis]))
        paths.append(png_path)
    return paths


def collision_report(
    cloud: GaussianCloud,
    views: Sequence[TrainingView],
    *,
    top_k: int = 4,
    out_dir: Optional[str] = None,
    loss_lambda: float = 0.0,
    threads: int = 1,
    background=None,
) -> CollisionReport:
    """Per-(view, Gaussian) footprint and gradient norms with collision ratios."""
    frames = []
    all_grads = []
    scales = cloud.scales.max(axis=1) if len(cloud) else np.zeros(0)
    for tv in views:
        _, _, _, grads = _view_gradients(cloud, tv, loss_lambda, threads, background)
        all_grads.append(grads)
        ids = np.nonzero(grads.touched)[0]
        signed = grads.signed_view2d[ids]
        homodir = grads.homodir_view2d[ids]
        frames.append(
            pd.DataFrame(
                {
                    "view": tv.name,
                    "gaussian": ids,
                    "footprint": grads.footprint_pixels[ids],
                    "g_norm": grads.signed_norm[ids],
                    "ghat_norm": grads.homodir_norm[ids],
                    "rho": collision_ratio(grads.signed_norm[ids], grads.homodir_norm[ids]),
                    "rho_x": collision_ratio(signed[:, 0], homodir[:, 0]),
                    "rho_y": collision_ratio(signed[:, 1], homodir[:, 1]),
                    "max_scale": scales[ids],
                },
                columns=COLLISION_COLUMNS,
            )
        )
    table = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=COLLISION_COLUMNS)

    weight = table["ghat_norm"].sum() if len(table) else 0.0
    summary = {
        "views": len(views),
        "gaussians": len(cloud),
        "rows": int(len(table)),
        "median_rho": float(table["rho"].median()) if len(table) else 1.0,
        "weighted_rho": float(table["g_norm"].sum() / weight) if weight > 0 else 1.0,
        "memory_bytes": memory_bytes(len(cloud), cloud.sh_degree),
        "joint": _joint_distribution(table),
    }

    sign_maps: List[str] = []
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_csv(os.path.join(out_dir, "collision.csv"), table)
        _scatter_plot(table, os.path.join(out_dir, "collision_scatter.png"))
        if views and top_k > 0:
            sign_maps = _export_top_sign_maps(cloud, views[0], all_grads[0], top_k, out_dir, loss_lambda, threads, background)
        summary["sign_maps"] = [os.path.basename(p) for p in sign_maps]
        write_json(os.path.join(out_dir, "collision_report.json"), summary)
    return CollisionReport(table=table, summary=summary, sign_maps=sign_maps, view_gradients=all_grads)


def _export_top_sign_maps(cloud, tv, grads, top_k, out_dir, loss_lambda, threads, background) -> List[str]:
    touched = np.nonzero(grads.touched)[0]
    if touched.size == 0:
        logger.warning("No gaussian contributed to %s; no sign maps written", tv.name)
        return []
    scales = cloud.scales.max(axis=1)[touched]
    ranked = touched[np.argsort(-scales, kind="stable")][:top_k]
    projected, artifacts, image_grad, _ = _view_gradients(cloud, tv, loss_lambda, threads, background)
    paths = []
    for gaussian_id in ranked:
        field_map = capture_pixel_gradients(projected, artifacts, image_grad, int(gaussian_id), threads=threads)
        paths.extend(write_sign_maps(field_map.values, os.path.join(out_dir, "sign_maps"), f"gaussian_{int(gaussian_id):06d}"))
    return paths


def warm_ledger(
    cloud: GaussianCloud,
    views: Sequence[TrainingView],
    *,
    loss_lambda: float = 0.0,
    threads: int = 1,
    background=None,
    scale: float = 1.0,
) -> GaussianCloud:
    """Copy of ``cloud`` whose ledger holds one pass over ``views`` (no optimisation)."""
    warmed = cloud.copy()
    warmed.ledger.reset()
    for tv in views:
        _, _, _, grads = _view_gradients(warmed, tv, loss_lambda, threads, background)
        accumulate_ledger(warmed, grads, scale=scale)
    return warmed


def compare_selections(cloud: GaussianCloud, config: DensifyConfig, scene_extent: float) -> Dict[str, Any]:
    """Split sets of both criteria on one ledger snapshot: sizes, overlap, mean scale."""
    signed = densify.select(cloud, replace(config, strategy="baseline"), scene_extent=scene_extent)
    homodir = densify.select(cloud, replace(config, strategy="abs"), scene_extent=scene_extent)
    overlap = np.intersect1d(signed.split_ids, homodir.split_ids)
    return {
        "tau_p": float(config.tau_p),
        "tau_s": float(config.tau_s),
        "baseline_split": int(signed.split_ids.size),
        "abs_split": int(homodir.split_ids.size),
        "overlap": int(overlap.size),
        "abs_only": int(homodir.split_ids.size - overlap.size),
        "clone": int(signed.clone_ids.size),
        "baseline_mean_scale": signed.mean_split_scale,
        "abs_mean_scale": homodir.mean_split_scale,
    }


def selection_masks(
    cloud: GaussianCloud,
    view_input: TrainingView,
    config: DensifyConfig,
    scene_extent: float,
    tau_values: Sequence[float],
    out_dir: str,
    *,
    threads: int = 1,
) -> List[Dict[str, Any]]:
    """One white-on-dimmed mask per (strategy, tau_p), plus the comparison rows."""
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for tau_p in tau_values:
        cell = replace(config, tau_p=float(tau_p))
        for strategy in densify.STRATEGIES:
            report = densify.select(cloud, replace(cell, strategy=strategy), scene_extent=scene_extent)
            mask = densify.selection_mask(report, cloud, view_input.view, threads=threads)
            path = os.path.join(out_dir, f"mask_{strategy}_tau{tau_p:g}.png")
            save_png(path, mask)
            write_json(path[:-4] + ".json", report.to_dict())
        row = compare_selections(cloud, cell, scene_extent)
        rows.append(row)
    return rows


def diagnose(
    cloud: GaussianCloud,
    views: Sequence[TrainingView],
    config: DensifyConfig,
    scene_extent: float,
    out_dir: str,
    *,
    tau_values: Optional[Sequence[float]] = None,
    top_k: int = 4,
    loss_lambda: float = 0.0,
    threads: int = 1,
    gradient_scale: float = 1.0,
) -> Dict[str, Any]:
    """Collision report, selection comparison and masks for one cloud snapshot."""
    report = collision_report(cloud, views, top_k=top_k, out_dir=out_dir, loss_lambda=loss_lambda, threads=threads)
    warmed = warm_ledger(cloud, views, loss_lambda=loss_lambda, threads=threads, scale=gradient_scale)
    taus = list(tau_values) if tau_values else [config.tau_p]
    comparisons = selection_masks(warmed, views[0], config, scene_extent, taus, os.path.join(out_dir, "masks"), threads=threads)
    summary = dict(report.summary)
    summary["selection"] = comparisons
    write_json(os.path.join(out_dir, "diagnose.json"), summary)
    return summary
