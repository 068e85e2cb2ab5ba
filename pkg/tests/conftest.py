from pathlib import Path
import math
import sys

import numpy as np
import pytest


ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from hsplat.gaussians import GaussianCloud  # noqa: E402
from hsplat.render.projection import Camera, ImagePlane  # noqa: E402
from hsplat.render.spherical_harmonics import rgb_to_sh  # noqa: E402


IMAGE_SIZE = 32


def _random_quaternions(rng, count):
    q = rng.normal(size=(count, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _logit(p):
    return np.log(p / (1.0 - p))


def build_identity_scene(seed, count=10):
    """Smooth scene for finite differences: every 1/255 contour lies outside the image."""
    rng = np.random.default_rng(seed)
    positions = np.empty((count, 3))
    positions[:, :2] = rng.uniform(8.0, 24.0, size=(count, 2))
    positions[:, 2] = rng.permutation(count) + rng.uniform(0.1, 0.4, size=count)
    cloud = GaussianCloud.create(
        positions=positions,
        log_scales=np.log(rng.uniform(16.0, 22.0, size=(count, 3))),
        rotations=_random_quaternions(rng, count),
        opacity_logits=_logit(rng.uniform(0.1, 0.45, size=count)),
        color_coeffs=rgb_to_sh(rng.uniform(0.2, 0.8, size=(count, 3)))[:, None, :],
        dtype=np.float64,
    )
    return cloud, ImagePlane(IMAGE_SIZE, IMAGE_SIZE)


def build_perspective_scene(seed, count=10):
    rng = np.random.default_rng(seed)
    positions = np.empty((count, 3))
    positions[:, :2] = rng.uniform(-0.4, 0.4, size=(count, 2))
    positions[:, 2] = 3.0 + 2.0 * (rng.permutation(count) + rng.uniform(0.2, 0.8, size=count)) / count
    cloud = GaussianCloud.create(
        positions=positions,
        log_scales=np.log(rng.uniform(2.0, 2.6, size=(count, 3))),
        rotations=_random_quaternions(rng, count),
        opacity_logits=_logit(rng.uniform(0.1, 0.45, size=count)),
        color_coeffs=rgb_to_sh(rng.uniform(0.2, 0.8, size=(count, 3)))[:, None, :],
        dtype=np.float64,
    )
    camera = Camera(
        world_to_camera=np.eye(4),
        fx=40.0,
        fy=40.0,
        cx=IMAGE_SIZE / 2.0,
        cy=IMAGE_SIZE / 2.0,
        width=IMAGE_SIZE,
        height=IMAGE_SIZE,
    )
    return cloud, camera


def build_random_cloud(seed, count, width, height, *, sh_degree=0):
    """Mixed small and large splats with the full opacity range, for rasterizer checks."""
    rng = np.random.default_rng(seed)
    positions = np.empty((count, 3))
    positions[:, 0] = rng.uniform(-4.0, width + 4.0, size=count)
    positions[:, 1] = rng.uniform(-4.0, height + 4.0, size=count)
    positions[:, 2] = rng.uniform(0.0, 10.0, size=count)
    coeffs = np.zeros((count, (sh_degree + 1) ** 2, 3))
    coeffs[:, 0, :] = rgb_to_sh(rng.uniform(0.0, 1.0, size=(count, 3)))
    return GaussianCloud.create(
        positions=positions,
        log_scales=rng.uniform(math.log(0.3), math.log(max(width, height) / 4.0), size=(count, 3)),
        rotations=_random_quaternions(rng, count),
        opacity_logits=rng.uniform(-4.0, 6.0, size=count),
        color_coeffs=coeffs,
        sh_degree=sh_degree,
        dtype=np.float64,
    )


@pytest.fixture()
def identity_scene():
    return build_identity_scene


@pytest.fixture()
def perspective_scene():
    return build_perspective_scene


@pytest.fixture()
def random_cloud():
    return build_random_cloud


@pytest.fixture()
def small_image():
    rng = np.random.default_rng(7)
    return rng.uniform(0.0, 1.0, size=(24, 24, 3))


@pytest.fixture()
def single_splat():
    """One float64 Gaussian builder in identity space."""

    def build(mean, scale, opacity, rgb=(0.8, 0.8, 0.8), depth=1.0):
        return GaussianCloud.create(
            positions=[[mean[0], mean[1], depth]],
            log_scales=np.log([[scale, scale, scale]]),
            opacity_logits=[_logit(opacity)],
            color_coeffs=rgb_to_sh(np.asarray([rgb]))[:, None, :],
            dtype=np.float64,
        )

    return build
