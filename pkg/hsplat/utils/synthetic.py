"""Seeded synthetic targets: textured images and a small multi-view plane scene."""

import logging
import math
from typing import List, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import logit

from hsplat.gaussians import GaussianCloud, num_sh_coeffs
from hsplat.render.projection import Camera
from hsplat.render.rasterizer import render_cloud
from hsplat.render.spherical_harmonics import rgb_to_sh
from hsplat.services.scenes import SceneInputs, camera_scene
from hsplat.utils.cameras import look_at

logger = logging.getLogger(__name__)

PLANE_HALF_SIZE = 1.0
PLANE_THICKNESS = 0.01
CAMERA_DISTANCE = 3.0


def textured_image(width: int = 256, height: int = 256, seed: int = 0) -> np.ndarray:
    """High-frequency colour noise over a smooth base, values in [0, 1]."""
    rng = np.random.default_rng(seed)
    base = gaussian_filter(rng.random((height, width, 3)), sigma=(height / 8.0, width / 8.0, 0))
    base = (base - base.min()) / max(float(np.ptp(base)), 1e-12)
    detail = gaussian_filter(rng.random((height, width, 3)), sigma=(0.7, 0.7, 0))
    detail = (detail - detail.mean()) / max(float(detail.std()), 1e-12)
    return np.clip(0.25 + 0.5 * base + 0.15 * detail, 0.0, 1.0)


def natural_like_image(width: int = 100, height: int = 65, seed: int = 0) -> np.ndarray:
    """Photo-like stand-in: sky gradient, horizon, a dark object and some texture."""
    rng = np.random.default_rng(seed)
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    u, v = x / max(width - 1, 1), y / max(height - 1, 1)
    image = np.empty((height, width, 3))
    image[..., 0] = 0.45 + 0.35 * v
    image[..., 1] = 0.6 + 0.2 * v
    image[..., 2] = 0.95 - 0.4 * v
    ground = v > 0.62 + 0.06 * np.sin(6.0 * u)
    image[ground] = (0.25, 0.45, 0.18)
    blob = ((u - 0.68) / 0.14) ** 2 + ((v - 0.5) / 0.22) ** 2 < 1.0
    image[blob] = (0.12, 0.1, 0.08)
    sun = (u - 0.2) ** 2 + (v - 0.2) ** 2 < 0.006
    image[sun] = (1.0, 0.95, 0.7)
    image += 0.05 * gaussian_filter(rng.standard_normal((height, width, 3)), sigma=(0.8, 0.8, 0))
    return np.clip(gaussian_filter(image, sigma=(0.6, 0.6, 0)), 0.0, 1.0)


def plane_cloud(
    texture: np.ndarray,
    grid: int,
    *,
    opacity: float = 0.9,
    scale_factor: float = 0.6,
    sh_degree: int = 0,
    jitter: float = 0.0,
    seed: int = 0,
) -> GaussianCloud:
    """``grid``×``grid`` flat Gaussians on z = 0 coloured by sampling ``texture``."""
    rng = np.random.default_rng(seed)
    spacing = 2.0 * PLANE_HALF_SIZE / grid
    coords = (np.arange(grid) + 0.5) * spacing - PLANE_HALF_SIZE
    gx, gy = np.meshgrid(coords, coords)
    count = grid * grid
    positions = np.stack([gx.ravel(), gy.ravel(), np.zeros(count)], axis=1)
    if jitter > 0:
        positions[:, :2] += rng.uniform(-jitter, jitter, size=(count, 2)) * spacing
    height, width = texture.shape[:2]
    cols = np.clip(((positions[:, 0] + PLANE_HALF_SIZE) / (2 * PLANE_HALF_SIZE) * width).astype(int), 0, width - 1)
    rows = np.clip(((PLANE_HALF_SIZE - positions[:, 1]) / (2 * PLANE_HALF_SIZE) * height).astype(int), 0, height - 1)
    coeffs = np.zeros((count, num_sh_coeffs(sh_degree), 3))
    coeffs[:, 0, :] = rgb_to_sh(texture[rows, cols])
    log_scales = np.empty((count, 3))
    log_scales[:, :2] = math.log(scale_factor * spacing)
    log_scales[:, 2] = math.log(PLANE_THICKNESS)
    return GaussianCloud.create(
        positions=positions,
        log_scales=log_scales,
        opacity_logits=np.full(count, float(logit(opacity))),
        color_coeffs=coeffs,
        sh_degree=sh_degree,
    )


def arc_cameras(num_views: int, size: int, *, spread: float = 0.5) -> List[Camera]:
    """Cameras on a horizontal arc facing the plane from -z."""
    focal = 1.1 * size
    cameras = []
    angles = np.linspace(-spread, spread, num_views) if num_views > 1 else np.zeros(1)
    for index, angle in enumerate(angles):
        eye = (CAMERA_DISTANCE * math.sin(angle), 0.3, -CAMERA_DISTANCE * math.cos(angle))
        cameras.append(
            Camera(
                world_to_camera=look_at(eye, (0.0, 0.0, 0.0)),
                fx=focal,
                fy=focal,
                cx=size / 2.0,
                cy=size / 2.0,
                width=size,
                height=size,
                camera_id=index,
            )
        )
    return cameras


def synthetic_scene(
    num_views: int = 5,
    *,
    size: int = 64,
    truth_grid: int = 24,
    init_grid: int = 4,
    seed: int = 0,
    sh_degree: int = 0,
    holdout_every: int = 0,
) -> Tuple[SceneInputs, GaussianCloud]:
    """Textured plane seen from an arc; returns the scene (sparse large init) and the ground truth."""
    texture = textured_image(128, 128, seed=seed)
    truth = plane_cloud(texture, truth_grid, sh_degree=sh_degree)
    cameras = arc_cameras(num_views, size)
    targets = [np.clip(render_cloud(truth, camera)[0], 0.0, 1.0) for camera in cameras]
    initial = plane_cloud(
        np.full_like(texture, 0.5), init_grid, opacity=0.5, scale_factor=0.8, sh_degree=sh_degree, jitter=0.2, seed=seed
    )
    logger.info("Synthetic scene: %d views %dx%d, %d truth / %d initial gaussians", num_views, size, size, len(truth), len(initial))
    scene = camera_scene(cameras, targets=targets, initial_cloud=initial, seed=seed, sh_degree=sh_degree, holdout_every=holdout_every)
    return scene, truth
