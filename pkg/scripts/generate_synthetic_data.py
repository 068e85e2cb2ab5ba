#!/usr/bin/env python3
"""
Generate Synthetic Data for hsplat

Writes a textured-plane multi-view scene (PNG targets, cameras.json and the
ground-truth PLY) plus the single-image targets used by fit2d.

Usage:
    python scripts/generate_synthetic_data.py --out data/synthetic --views 5 --size 64
"""

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parents[1]
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from hsplat.errors import SplatError  # noqa: E402
from hsplat.utils.cameras import save_cameras  # noqa: E402
from hsplat.utils.image_io import save_png  # noqa: E402
from hsplat.utils.ply_io import save_ply  # noqa: E402
from hsplat.utils.synthetic import natural_like_image, synthetic_scene, textured_image  # noqa: E402

logger = logging.getLogger("generate_synthetic_data")


def write_scene(out_dir: str, views: int, size: int, seed: int) -> None:
    scene, truth = synthetic_scene(views, size=size, seed=seed)
    image_dir = os.path.join(out_dir, "images")
    cameras = []
    for training_view in scene.views:
        path = os.path.join(image_dir, f"{training_view.name}.png")
        save_png(path, training_view.target)
        cameras.append(replace(training_view.view, image_path=os.path.abspath(path)))
    save_cameras(os.path.join(out_dir, "cameras.json"), cameras)
    save_ply(truth, os.path.join(out_dir, "truth.ply"))
    save_ply(scene.initial_cloud, os.path.join(out_dir, "init.ply"))
    logger.info("Wrote %d views and %d truth gaussians to %s", len(cameras), len(truth), out_dir)


def write_images(out_dir: str, size: int, seed: int) -> None:
    save_png(os.path.join(out_dir, "textured.png"), textured_image(size, size, seed=seed))
    save_png(os.path.join(out_dir, "photo.png"), natural_like_image(100, 65, seed=seed))


def main() -> int:
    parser = argparse.ArgumentParser(description="Generate synthetic targets for hsplat")
    parser.add_argument("--out", default="data/synthetic", help="Output directory")
    parser.add_argument("--views", type=int, default=5, help="Number of arc cameras")
    parser.add_argument("--size", type=int, default=64, help="Square view size in pixels")
    parser.add_argument("--texture-size", type=int, default=256, help="Side of the textured fit2d target")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        write_scene(args.out, args.views, args.size, args.seed)
        write_images(args.out, args.texture_size, args.seed)
    except SplatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
