"""Threshold sweep: one training run per (tau_p, tau_s, strategy) cell."""

import itertools
import logging
import os
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd
from joblib import Parallel, delayed

from hsplat.defaults import DEFAULT_TAU_P, DEFAULT_TAU_S
from hsplat.gaussians import GaussianCloud, memory_bytes
from hsplat.render.backward import gradient_scale
from hsplat.services import densify
from hsplat.services.diagnostics import warm_ledger
from hsplat.services.scenes import SceneInputs
from hsplat.services.trainer import TrainConfig, evaluate, train
from hsplat.utils.file_io import write_csv
from hsplat.utils.image_io import save_png

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["tau_p", "tau_s", "strategy", "selected", "final_n", "psnr", "ssim", "bytes"]
DETAIL_COLUMNS = SWEEP_COLUMNS + ["split_total", "clone_total", "pruned_total"]


def _cell_name(strategy: str, tau_p: float, tau_s: float) -> str:
    return f"{strategy}_p{tau_p:g}_s{tau_s:g}"


def run_cell(
    scene: SceneInputs,
    start: GaussianCloud,
    config: TrainConfig,
    out_dir: Optional[str] = None,
) -> Dict[str, Any]:
    """Snapshot selection count on ``start``, then train from it and score the result."""
    dcfg = config.densify
    first = scene.views[0]
    scale = gradient_scale(config.gradient_space, first.view.width, first.view.height)
    warmed = warm_ledger(start, scene.views, loss_lambda=config.loss_lambda_dssim, threads=config.threads, scale=scale)
    report = densify.select(warmed, dcfg, scene_extent=scene.scene_extent)
    if out_dir:
        mask = densify.selection_mask(report, warmed, first.view, threads=config.threads)
        save_png(os.path.join(out_dir, "masks", _cell_name(dcfg.strategy, dcfg.tau_p, dcfg.tau_s) + ".png"), mask)

    result = train(replace(scene, initial_cloud=start), config)
    scores = evaluate(result.cloud, scene.held_out or scene.views, threads=config.threads)
    totals = result.totals
    row = {
        "tau_p": float(dcfg.tau_p),
        "tau_s": float(dcfg.tau_s),
        "strategy": dcfg.strategy,
        "selected": int(report.split_ids.size + report.clone_ids.size),
        "final_n": len(result.cloud),
        "psnr": scores["psnr"],
        "ssim": scores["ssim"],
        "bytes": memory_bytes(len(result.cloud), result.cloud.sh_degree),
        "split_total": totals["split"],
        "clone_total": totals["clone"],
        "pruned_total": totals["pruned"],
    }
    logger.info(
        "sweep cell %s selected=%d final_n=%d psnr=%.3f",
        _cell_name(dcfg.strategy, dcfg.tau_p, dcfg.tau_s),
        row["selected"],
        row["final_n"],
        row["psnr"],
    )
    return row


def threshold_sweep(
    scene: SceneInputs,
    start: GaussianCloud,
    base_config: TrainConfig,
    *,
    strategies: Sequence[str] = densify.STRATEGIES,
    tau_p_values: Sequence[float] = (DEFAULT_TAU_P,),
    tau_s_values: Sequence[float] = (DEFAULT_TAU_S,),
    out_dir: Optional[str] = None,
    jobs: int = 1,
) -> pd.DataFrame:
    """Run every cell (optionally in parallel processes) and return the sweep table.

    Rows come back in (tau_p, tau_s, strategy) order regardless of ``jobs``.
    """
    cells = [
        base_config.with_densify(tau_p=float(tau_p), tau_s=float(tau_s), strategy=strategy)
        for tau_p, tau_s, strategy in itertools.product(tau_p_values, tau_s_values, strategies)
    ]
    logger.info("Sweeping %d cells with %d job(s)", len(cells), jobs)
    rows: List[Dict[str, Any]] = Parallel(n_jobs=int(jobs))(
        delayed(run_cell)(scene, start, config, out_dir) for config in cells
    )
    details = pd.DataFrame(rows, columns=DETAIL_COLUMNS)
    for row in rows:
        if row["selected"] == 0:
            logger.warning("Cell %s selected nothing", _cell_name(row["strategy"], row["tau_p"], row["tau_s"]))
    if out_dir:
        write_csv(os.path.join(out_dir, "sweep.csv"), details[SWEEP_COLUMNS])
        write_csv(os.path.join(out_dir, "sweep_details.csv"), details)
    return details
