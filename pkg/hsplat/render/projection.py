"""World-to-screen projection of Gaussians (perspective EWA and identity)."""

import logging
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np
from scipy.special import expit

from hsplat.defaults import ALPHA_MIN, FRUSTUM_SLACK, LOW_PASS_DILATION, NEAR_PLANE
from hsplat.errors import CameraError, UsageError
from hsplat.gaussians import GaussianCloud, quaternion_to_matrix
from hsplat.render.spherical_harmonics import eval_colors

logger = logging.getLogger(__name__)

IDENTITY_VIEW_DIR = np.array([0.0, 0.0, 1.0])
ORTHONORMAL_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Camera:
    world_to_camera: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = NEAR_PLANE
    camera_id: int = 0
    image_path: Optional[str] = None

    def __post_init__(self) -> None:
        matrix = np.asarray(self.world_to_camera, dtype=np.float64)
        if matrix.shape == (16,):
            matrix = matrix.reshape(4, 4)
        if matrix.shape != (4, 4) or not np.all(np.isfinite(matrix)):
            raise CameraError(f"camera {self.camera_id}: world_to_camera must be 16 finite numbers")
        rotation = matrix[:3, :3]
        if np.max(np.abs(rotation @ rotation.T - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise CameraError(f"camera {self.camera_id}: rotation block is not orthonormal")
        if not (self.fx > 0 and self.fy > 0):
            raise CameraError(f"camera {self.camera_id}: focal lengths must be positive")
        if int(self.width) < 1 or int(self.height) < 1:
            raise CameraError(f"camera {self.camera_id}: width and height must be at least 1")
        object.__setattr__(self, "world_to_camera", matrix)
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    def with_principal_point(self, cx: float, cy: float) -> "Camera":
        return Camera(
            world_to_camera=self.world_to_camera,
            fx=self.fx,
            fy=self.fy,
            cx=cx,
            cy=cy,
            width=self.width,
            height=self.height,
            near=self.near,
            camera_id=self.camera_id,
            image_path=self.image_path,
        )


@dataclass(frozen=True)
class ImagePlane:
    """Identity-projection view used for pure 2D image fitting."""

    width: int
    height: int


View = Union[Camera, ImagePlane]


@dataclass(frozen=True)
class ProjectedGaussian:
    mean2d: np.ndarray
    conic: np.ndarray
    depth: float
    rgb: np.ndarray
    opacity: float
    radius: int
    source: int


@dataclass
class ProjectedGaussians:
    """Screen-space footprints of one view, stored column-wise.

    Rows are the surviving Gaussians in gaussian-id order. The trailing fields
    keep the intermediate quantities the backward pass differentiates through.
    """

    mean2d: np.ndarray
    conic: np.ndarray
    depth: np.ndarray
    rgb: np.ndarray
    opacity: np.ndarray
    radius: np.ndarray
    source: np.ndarray
    pixel_rect: np.ndarray
    num_source: int
    width: int
    height: int
    mode: str = "identity"
    camera: Optional[Camera] = None
    sh_degree: int = 0
    num_coeffs: int = 1
    cov2d: Optional[np.ndarray] = None
    cov3d: Optional[np.ndarray] = None
    rotation_matrices: Optional[np.ndarray] = None
    unit_quaternions: Optional[np.ndarray] = None
    quaternion_norms: Optional[np.ndarray] = None
    scales: Optional[np.ndarray] = None
    camera_means: Optional[np.ndarray] = None
    jacobian: Optional[np.ndarray] = None
    jacobian_clamped: Optional[np.ndarray] = None
    sh_values: Optional[np.ndarray] = None
    color_unclamped: Optional[np.ndarray] = None
    extras: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.source.shape[0])

    def __getitem__(self, row: int) -> ProjectedGaussian:
        return ProjectedGaussian(
            mean2d=self.mean2d[row].copy(),
            conic=self.conic[row].copy(),
            depth=float(self.depth[row]),
            rgb=self.rgb[row].copy(),
            opacity=float(self.opacity[row]),
            radius=int(self.radius[row]),
            source=int(self.source[row]),
        )

    def __iter__(self) -> Iterator[ProjectedGaussian]:
        for row in range(len(self)):
            yield self[row]

    def row_of(self, gaussian_id: int) -> Optional[int]:
        hits = np.nonzero(self.source == int(gaussian_id))[0]
        return int(hits[0]) if hits.size else None

    def with_colors(self, rgb: np.ndarray) -> "ProjectedGaussians":
        """Shallow copy with replaced per-row colours (selection masks)."""
        clone = ProjectedGaussians(**{name: getattr(self, name) for name in self.__dataclass_fields__})
        clone.rgb = np.asarray(rgb, dtype=np.float64).reshape(len(self), 3)
        return clone


def footprint_radius(cov2d: np.ndarray, opacity: np.ndarray) -> np.ndarray:
    """Conservative pixel radius: 3 sigma or the 1/255 alpha contour, whichever is larger."""
    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    det = a * c - b * b
    mid = 0.5 * (a + c)
    lambda_max = mid + np.sqrt(np.maximum(0.1, mid * mid - det))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_ratio = np.log(np.maximum(opacity / ALPHA_MIN, 1.0))
    alpha_extent = np.sqrt(2.0 * lambda_max * log_ratio)
    return np.ceil(np.maximum(3.0 * np.sqrt(lambda_max), alpha_extent)).astype(np.int64)


def _empty_projection(cloud: GaussianCloud, width: int, height: int, mode: str, camera=None) -> ProjectedGaussians:
    return ProjectedGaussians(
        mean2d=np.zeros((0, 2)),
        conic=np.zeros((0, 3)),
        depth=np.zeros(0),
        rgb=np.zeros((0, 3)),
        opacity=np.zeros(0),
        radius=np.zeros(0, dtype=np.int64),
        source=np.zeros(0, dtype=np.int64),
        pixel_rect=np.zeros((0, 4), dtype=np.int64),
        num_source=len(cloud),
        width=int(width),
        height=int(height),
        mode=mode,
        camera=camera,
        sh_degree=cloud.sh_degree,
        num_coeffs=cloud.color_coeffs.shape[1],
    )


def _finish(
    cloud: GaussianCloud,
    ids: np.ndarray,
    mean2d: np.ndarray,
    cov2d: np.ndarray,
    depth: np.ndarray,
    view_dirs: np.ndarray,
    width: int,
    height: int,
    extras: dict,
) -> ProjectedGaussians:
    opacity = expit(cloud.opacity_logits[ids].astype(np.float64))
    radius = footprint_radius(cov2d, opacity)

    x0 = np.maximum(np.ceil(mean2d[:, 0] - radius), 0)
    x1 = np.minimum(np.floor(mean2d[:, 0] + radius), width - 1)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - radius), 0)
    y1 = np.minimum(np.floor(mean2d[:, 1] + radius), height - 1)
    keep = (x0 <= x1) & (y0 <= y1) & (opacity >= ALPHA_MIN) & np.all(np.isfinite(mean2d), axis=1)

    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] ** 2
    conic = np.stack([cov2d[:, 1, 1] / det, -cov2d[:, 0, 1] / det, cov2d[:, 0, 0] / det], axis=1)

    coeffs = cloud.color_coeffs[ids].astype(np.float64)
    rgb, basis, unclamped = eval_colors(coeffs, view_dirs, cloud.sh_degree)

    def pick(values):
        return None if values is None else values[keep]

    return ProjectedGaussians(
        mean2d=mean2d[keep],
        conic=conic[keep],
        depth=depth[keep],
        rgb=rgb[keep],
        opacity=opacity[keep],
        radius=radius[keep],
        source=ids[keep],
        pixel_rect=np.stack([x0, y0, x1, y1], axis=1)[keep].astype(np.int64),
        num_source=len(cloud),
        width=int(width),
        height=int(height),
        mode=extras.pop("mode"),
        camera=extras.pop("camera", None),
        sh_degree=cloud.sh_degree,
        num_coeffs=cloud.color_coeffs.shape[1],
        cov2d=cov2d[keep],
        sh_values=basis[keep],
        color_unclamped=unclamped[keep],
        **{name: pick(value) for name, value in extras.items()},
    )


def _shape_terms(cloud: GaussianCloud, ids: np.ndarray) -> dict:
    quats = cloud.rotations[ids].astype(np.float64)
    norms = np.linalg.norm(quats, axis=1)
    unit = quats / norms[:, None]
    rot = quaternion_to_matrix(unit)
    scales = np.exp(cloud.log_scales[ids].astype(np.float64))
    m = rot * scales[:, None, :]
    return {
        "cov3d": m @ np.transpose(m, (0, 2, 1)),
        "rotation_matrices": rot,
        "unit_quaternions": unit,
        "quaternion_norms": norms,
        "scales": scales,
    }


def project(cloud: GaussianCloud, camera: Camera) -> ProjectedGaussians:
    """Perspective projection with the EWA local-affine covariance."""
    if len(cloud) == 0:
        return _empty_projection(cloud, camera.width, camera.height, "perspective", camera)

    world = cloud.positions.astype(np.float64)
    cam_means = world @ camera.rotation.T + camera.translation
    ids = np.nonzero(cam_means[:, 2] > camera.near)[0]
    if ids.size == 0:
        return _empty_projection(cloud, camera.width, camera.height, "perspective", camera)
    t = cam_means[ids]
    tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]

    mean2d = np.stack([camera.fx * tx / tz + camera.cx, camera.fy * ty / tz + camera.cy], axis=1)

    lim_x = FRUSTUM_SLACK * 0.5 * camera.width / camera.fx
    lim_y = FRUSTUM_SLACK * 0.5 * camera.height / camera.fy
    ratio_x = tx / tz
    ratio_y = ty / tz
    clamped = np.stack([np.abs(ratio_x) > lim_x, np.abs(ratio_y) > lim_y], axis=1)
    ratio_x = np.clip(ratio_x, -lim_x, lim_x)
    ratio_y = np.clip(ratio_y, -lim_y, lim_y)

    jac = np.zeros((ids.size, 2, 3), dtype=np.float64)
    jac[:, 0, 0] = camera.fx / tz
    jac[:, 0, 2] = -camera.fx * ratio_x / tz
    jac[:, 1, 1] = camera.fy / tz
    jac[:, 1, 2] = -camera.fy * ratio_y / tz

    shape = _shape_terms(cloud, ids)
    transform = jac @ camera.rotation
    cov2d = transform @ shape["cov3d"] @ np.transpose(transform, (0, 2, 1))
    cov2d = cov2d + LOW_PASS_DILATION * np.eye(2)

    view_dirs = world[ids] - camera.center
    view_dirs = view_dirs / np.maximum(np.linalg.norm(view_dirs, axis=1, keepdims=True), 1e-12)

    extras = dict(shape)
    extras.update(
        mode="perspective",
        camera=camera,
        camera_means=t,
        jacobian=jac,
        jacobian_clamped=clamped,
    )
    return _finish(cloud, ids, mean2d, cov2d, tz.copy(), view_dirs, camera.width, camera.height, extras)


def project_identity(cloud: GaussianCloud, width: int, height: int) -> ProjectedGaussians:
    """Identity projection: x, y are pixel coordinates, z only orders blending."""
    if int(width) < 1 or int(height) < 1:
        raise UsageError("image plane must be at least 1x1")
    if len(cloud) == 0:
        return _empty_projection(cloud, width, height, "identity")
    ids = np.arange(len(cloud), dtype=np.int64)
    positions = cloud.positions.astype(np.float64)
    shape = _shape_terms(cloud, ids)
    cov2d = shape["cov3d"][:, :2, :2] + LOW_PASS_DILATION * np.eye(2)
    view_dirs = np.tile(IDENTITY_VIEW_DIR, (len(cloud), 1))
    extras = dict(shape)
    extras["mode"] = "identity"
    return _finish(cloud, ids, positions[:, :2].copy(), cov2d, positions[:, 2].copy(), view_dirs, width, height, extras)


def project_view(cloud: GaussianCloud, view: View) -> ProjectedGaussians:
    if isinstance(view, Camera):
        return project(cloud, view)
    if isinstance(view, ImagePlane):
        return project_identity(cloud, view.width, view.height)
    raise UsageError(f"unsupported view type {type(view).__name__}")


def view_size(view: View):
    return int(view.width), int(view.height)
