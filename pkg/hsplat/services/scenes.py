"""Training inputs: target views plus an initial cloud, for both regimes."""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from hsplat.errors import DataError, UsageError
from hsplat.gaussians import GaussianCloud, num_sh_coeffs
from hsplat.render.projection import Camera, ImagePlane, View
from hsplat.render.spherical_harmonics import rgb_to_sh
from hsplat.utils.cameras import scene_extent as camera_extent
from hsplat.utils.image_io import load_image

logger = logging.getLogger(__name__)

REGIMES = ("view3d", "image2d")
INITIAL_OPACITY_3D = 0.1


@dataclass
class TrainingView:
    view: View
    target: np.ndarray
    name: str = "view"

    def __post_init__(self) -> None:
        expected = (int(self.view.height), int(self.view.width), 3)
        if self.target.shape != expected:
            raise DataError(f"target for {self.name} has shape {self.target.shape}, expected {expected}")


@dataclass
class SceneInputs:
    views: List[TrainingView]
    regime: str
    scene_extent: float
    initial_cloud: GaussianCloud
    held_out: List[TrainingView] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.regime not in REGIMES:
            raise UsageError(f"regime must be one of {', '.join(REGIMES)}")
        if not self.views:
            raise UsageError("no training views")


def image_extent(width: int, height: int) -> float:
    return float(math.hypot(width, height))


def grid_layout(count: int, width: int, height: int):
    cols = max(1, int(math.ceil(math.sqrt(count * width / height))))
    rows = max(1, int(math.ceil(count / cols)))
    return cols, rows


def init_image_grid(image: np.ndarray, count: int, *, sh_degree: int = 0, dtype=np.float32) -> GaussianCloud:
    """Stratified grid of isotropic Gaussians over an image.

    Each Gaussian's 3-sigma extent spans two cells; colour is the cell's mean pixel.
    """
    if count < 1:
        raise UsageError("n_init must be at least 1")
    height, width = image.shape[:2]
    cols, rows = grid_layout(count, width, height)
    cell_w, cell_h = width / cols, height / rows
    sigma = 2.0 * math.sqrt(cell_w * cell_h) / 3.0
    positions, colors = [], []
    for index in range(count):
        row, col = divmod(index, cols)
        x0, x1 = int(round(col * cell_w)), max(int(round((col + 1) * cell_w)), int(round(col * cell_w)) + 1)
        y0, y1 = int(round(row * cell_h)), max(int(round((row + 1) * cell_h)), int(round(row * cell_h)) + 1)
        patch = image[min(y0, height - 1):min(y1, height), min(x0, width - 1):min(x1, width)]
        positions.append(((col + 0.5) * cell_w - 0.5, (row + 0.5) * cell_h - 0.5, 0.0))
        colors.append(patch.reshape(-1, 3).mean(axis=0))
    coeffs = np.zeros((count, num_sh_coeffs(sh_degree), 3))
    coeffs[:, 0, :] = rgb_to_sh(np.asarray(colors))
    return GaussianCloud.create(
        positions=np.asarray(positions),
        log_scales=np.full((count, 3), math.log(sigma)),
        opacity_logits=np.zeros(count),
        color_coeffs=coeffs,
        sh_degree=sh_degree,
        dtype=dtype,
    )


def init_random_cloud(
    count: int,
    center,
    radius: float,
    *,
    seed: int = 0,
    sh_degree: int = 0,
    dtype=np.float32,
) -> GaussianCloud:
    """Uniform points in a cube, grey, opacity 0.1, scale from point spacing."""
    rng = np.random.default_rng(seed)
    positions = np.asarray(center, dtype=np.float64) + rng.uniform(-radius, radius, size=(count, 3))
    spacing = 2.0 * radius / max(count, 1) ** (1.0 / 3.0)
    logit = math.log(INITIAL_OPACITY_3D / (1.0 - INITIAL_OPACITY_3D))
    return GaussianCloud.create(
        positions=positions,
        log_scales=np.full((count, 3), math.log(0.5 * spacing)),
        opacity_logits=np.full(count, logit),
        color_coeffs=np.zeros((count, num_sh_coeffs(sh_degree), 3)),
        sh_degree=sh_degree,
        dtype=dtype,
    )


def image_scene(
    image: np.ndarray,
    *,
    n_init: int = 1,
    sh_degree: int = 0,
    initial_cloud: Optional[GaussianCloud] = None,
    name: str = "image",
) -> SceneInputs:
    height, width = image.shape[:2]
    cloud = initial_cloud if initial_cloud is not None else init_image_grid(image, n_init, sh_degree=sh_degree)
    return SceneInputs(
        views=[TrainingView(ImagePlane(width, height), np.asarray(image, dtype=np.float64), name)],
        regime="image2d",
        scene_extent=image_extent(width, height),
        initial_cloud=cloud,
    )


def camera_scene(
    cameras: Sequence[Camera],
    *,
    targets: Optional[Sequence[np.ndarray]] = None,
    initial_cloud: Optional[GaussianCloud] = None,
    n_init: int = 1000,
    seed: int = 0,
    sh_degree: int = 0,
    holdout_every: int = 0,
) -> SceneInputs:
    """Multi-view inputs; targets default to each camera's ``image_path``."""
    views = []
    for index, camera in enumerate(cameras):
        if targets is not None:
            target = np.asarray(targets[index], dtype=np.float64)
        elif camera.image_path:
            target = load_image(camera.image_path, size=(camera.width, camera.height))
        else:
            raise DataError(f"camera {camera.camera_id} has no image_path")
        views.append(TrainingView(camera, target, f"camera_{camera.camera_id:03d}"))

    held_out = []
    if holdout_every and len(views) > 1:
        held_out = [v for i, v in enumerate(views) if i % holdout_every == 0]
        views = [v for i, v in enumerate(views) if i % holdout_every != 0]

    extent = camera_extent(cameras)
    if initial_cloud is None:
        look = np.mean([c.center + c.rotation[2] * np.linalg.norm(c.center) for c in cameras], axis=0)
        initial_cloud = init_random_cloud(n_init, look, 0.5 * extent, seed=seed, sh_degree=sh_degree)
    return SceneInputs(
        views=views,
        regime="view3d",
        scene_extent=extent,
        initial_cloud=initial_cloud,
        held_out=held_out,
    )
