#!/usr/bin/env python3
"""
Freeze Golden Experiment Tables

Runs the desk-scale A/B and the threshold sweep once and writes the measured
tables to tests/golden/. The slow tests compare later runs against them.

Usage:
    python scripts/freeze_golden.py [--jobs 4]
"""

import argparse
import logging
import os
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from hsplat.services import experiments  # noqa: E402
from hsplat.utils.file_io import write_csv  # noqa: E402

logger = logging.getLogger("freeze_golden")


def main() -> int:
    parser = argparse.ArgumentParser(description="Measure and freeze the golden experiment tables")
    parser.add_argument("--out", default=str(REPO_ROOT / "tests" / "golden"), help="Golden directory")
    parser.add_argument("--jobs", type=int, default=1, help="Parallel sweep cells")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    outcome = experiments.ab_experiment()
    for (regime, strategy), events in outcome["events"].items():
        broken = [e.iteration for e in events if not e.baseline_split_within_abs]
        if broken:
            logger.error("%s %s run: baseline split set escaped abs at iterations %s", regime, strategy, broken)
            return 1
    write_csv(os.path.join(args.out, "ab.csv"), outcome["table"])

    sweep = experiments.sweep_experiment(jobs=args.jobs)
    write_csv(os.path.join(args.out, "sweep.csv"), sweep)

    table = outcome["table"]
    table = table[table["regime"] == "image2d"].set_index("strategy")
    logger.info(
        "A/B image2d: abs %.3f dB n=%d vs baseline %.3f dB n=%d",
        table.loc["abs", "psnr"],
        table.loc["abs", "final_n"],
        table.loc["baseline", "psnr"],
        table.loc["baseline", "final_n"],
    )
    logger.info("Golden tables written to %s", args.out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
