"""Scene representation: Gaussian parameters plus densification accumulators."""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import expit

from hsplat.defaults import MAX_SH_DEGREE
from hsplat.errors import DimensionMismatchError, UsageError

logger = logging.getLogger(__name__)

PARAMETER_FIELDS = ("positions", "log_scales", "rotations", "opacity_logits", "color_coeffs")


def num_sh_coeffs(degree: int) -> int:
    return (int(degree) + 1) ** 2


def floats_per_gaussian(sh_degree: int) -> int:
    return 3 + 3 + 4 + 1 + 3 * num_sh_coeffs(sh_degree)


def memory_bytes(num_gaussians: int, sh_degree: int) -> int:
    """Parameter storage for ``num_gaussians`` float32 Gaussians."""
    return int(num_gaussians) * floats_per_gaussian(sh_degree) * 4


def quaternion_to_matrix(quaternions: np.ndarray) -> np.ndarray:
    """Rotation matrices for (w, x, y, z) quaternions, shape (N, 4) -> (N, 3, 3).

    Inputs are normalised first, so q and -q map to the same matrix.
    """
    q = np.asarray(quaternions, dtype=np.float64).reshape(-1, 4)
    norms = np.linalg.norm(q, axis=1, keepdims=True)
    q = q / np.where(norms > 0.0, norms, 1.0)
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    rot = np.empty((q.shape[0], 3, 3), dtype=np.float64)
    rot[:, 0, 0] = 1.0 - 2.0 * (y * y + z * z)
    rot[:, 0, 1] = 2.0 * (x * y - w * z)
    rot[:, 0, 2] = 2.0 * (x * z + w * y)
    rot[:, 1, 0] = 2.0 * (x * y + w * z)
    rot[:, 1, 1] = 1.0 - 2.0 * (x * x + z * z)
    rot[:, 1, 2] = 2.0 * (y * z - w * x)
    rot[:, 2, 0] = 2.0 * (x * z - w * y)
    rot[:, 2, 1] = 2.0 * (y * z + w * x)
    rot[:, 2, 2] = 1.0 - 2.0 * (x * x + y * y)
    return rot


def covariances_from_params(log_scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    rot = quaternion_to_matrix(rotations)
    scales = np.exp(np.asarray(log_scales, dtype=np.float64).reshape(-1, 3))
    m = rot * scales[:, None, :]
    return m @ np.transpose(m, (0, 2, 1))


@dataclass
class GradientLedger:
    signed_accum: np.ndarray
    homodir_accum: np.ndarray
    view_count: np.ndarray
    max_screen_radius: np.ndarray

    @classmethod
    def zeros(cls, count: int) -> "GradientLedger":
        return cls(
            signed_accum=np.zeros(count, dtype=np.float64),
            homodir_accum=np.zeros(count, dtype=np.float64),
            view_count=np.zeros(count, dtype=np.int64),
            max_screen_radius=np.zeros(count, dtype=np.float64),
        )

    def __len__(self) -> int:
        return int(self.view_count.shape[0])

    def take(self, indices: np.ndarray) -> "GradientLedger":
        return GradientLedger(
            signed_accum=self.signed_accum[indices].copy(),
            homodir_accum=self.homodir_accum[indices].copy(),
            view_count=self.view_count[indices].copy(),
            max_screen_radius=self.max_screen_radius[indices].copy(),
        )

    def reset(self) -> None:
        self.signed_accum[:] = 0.0
        self.homodir_accum[:] = 0.0
        self.view_count[:] = 0
        self.max_screen_radius[:] = 0.0


@dataclass
class GaussianCloud:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    color_coeffs: np.ndarray
    sh_degree: int = 0
    ledger: Optional[GradientLedger] = field(default=None)

    def __post_init__(self) -> None:
        if not 0 <= int(self.sh_degree) <= MAX_SH_DEGREE:
            raise UsageError(f"sh degree must be in 0..{MAX_SH_DEGREE}, got {self.sh_degree}")
        self.sh_degree = int(self.sh_degree)
        count = self.positions.shape[0]
        expected = {
            "positions": (count, 3),
            "log_scales": (count, 3),
            "rotations": (count, 4),
            "opacity_logits": (count,),
            "color_coeffs": (count, num_sh_coeffs(self.sh_degree), 3),
        }
        for name, shape in expected.items():
            actual = getattr(self, name).shape
            if actual != shape:
                raise DimensionMismatchError(f"{name} has shape {actual}, expected {shape}")
        if self.ledger is None:
            self.ledger = GradientLedger.zeros(count)
        elif len(self.ledger) != count:
            raise DimensionMismatchError(f"ledger has {len(self.ledger)} rows, cloud has {count}")

    @classmethod
    def create(
        cls,
        positions,
        log_scales,
        rotations=None,
        opacity_logits=None,
        color_coeffs=None,
        *,
        sh_degree: int = 0,
        dtype=np.float32,
    ) -> "GaussianCloud":
        """Build a cloud from array-likes; missing groups get neutral values."""
        positions = np.asarray(positions, dtype=dtype).reshape(-1, 3)
        count = positions.shape[0]
        log_scales = np.asarray(log_scales, dtype=dtype).reshape(count, 3)
        if rotations is None:
            rotations = np.tile(np.array([1.0, 0.0, 0.0, 0.0]), (count, 1))
        if opacity_logits is None:
            opacity_logits = np.zeros(count)
        if color_coeffs is None:
            color_coeffs = np.zeros((count, num_sh_coeffs(sh_degree), 3))
        return cls(
            positions=np.ascontiguousarray(positions),
            log_scales=np.ascontiguousarray(log_scales),
            rotations=np.ascontiguousarray(np.asarray(rotations, dtype=dtype).reshape(count, 4)),
            opacity_logits=np.ascontiguousarray(np.asarray(opacity_logits, dtype=dtype).reshape(count)),
            color_coeffs=np.ascontiguousarray(
                np.asarray(color_coeffs, dtype=dtype).reshape(count, num_sh_coeffs(sh_degree), 3)
            ),
            sh_degree=sh_degree,
        )

    @classmethod
    def empty(cls, sh_degree: int = 0, dtype=np.float32) -> "GaussianCloud":
        return cls.create(np.zeros((0, 3)), np.zeros((0, 3)), sh_degree=sh_degree, dtype=dtype)

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def dtype(self):
        return self.positions.dtype

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales.astype(np.float64))

    @property
    def opacities(self) -> np.ndarray:
        return expit(self.opacity_logits.astype(np.float64))

    def covariances(self) -> np.ndarray:
        return covariances_from_params(self.log_scales, self.rotations)

    def normalize_rotations(self) -> None:
        norms = np.linalg.norm(self.rotations.astype(np.float64), axis=1, keepdims=True)
        degenerate = norms[:, 0] <= 0.0
        if np.any(degenerate):
            logger.warning("Resetting %d degenerate quaternions to identity", int(degenerate.sum()))
        normalized = self.rotations / np.where(norms > 0.0, norms, 1.0)
        normalized[degenerate] = np.array([1.0, 0.0, 0.0, 0.0])
        self.rotations[:] = normalized.astype(self.rotations.dtype)

    def take(self, indices) -> "GaussianCloud":
        """Row subset (with ledger rows) as a new cloud."""
        indices = np.asarray(indices, dtype=np.int64)
        return GaussianCloud(
            positions=self.positions[indices].copy(),
            log_scales=self.log_scales[indices].copy(),
            rotations=self.rotations[indices].copy(),
            opacity_logits=self.opacity_logits[indices].copy(),
            color_coeffs=self.color_coeffs[indices].copy(),
            sh_degree=self.sh_degree,
            ledger=self.ledger.take(indices),
        )

    def copy(self) -> "GaussianCloud":
        return self.take(np.arange(len(self)))

    def astype(self, dtype) -> "GaussianCloud":
        clone = self.copy()
        for name in PARAMETER_FIELDS:
            setattr(clone, name, getattr(clone, name).astype(dtype))
        return clone

    def replace_rows(self, other: "GaussianCloud") -> None:
        """Swap every array for ``other``'s in place; used after densification."""
        if other.sh_degree != self.sh_degree:
            raise DimensionMismatchError("sh degree differs between clouds")
        for name in PARAMETER_FIELDS:
            setattr(self, name, getattr(other, name))
        self.ledger = other.ledger


def concat_clouds(first: GaussianCloud, *rest: GaussianCloud) -> GaussianCloud:
    clouds = (first,) + rest
    return GaussianCloud(
        positions=np.concatenate([c.positions for c in clouds]),
        log_scales=np.concatenate([c.log_scales for c in clouds]),
        rotations=np.concatenate([c.rotations for c in clouds]),
        opacity_logits=np.concatenate([c.opacity_logits for c in clouds]),
        color_coeffs=np.concatenate([c.color_coeffs for c in clouds]),
        sh_degree=first.sh_degree,
        ledger=GradientLedger(
            signed_accum=np.concatenate([c.ledger.signed_accum for c in clouds]),
            homodir_accum=np.concatenate([c.ledger.homodir_accum for c in clouds]),
            view_count=np.concatenate([c.ledger.view_count for c in clouds]),
            max_screen_radius=np.concatenate([c.ledger.max_screen_radius for c in clouds]),
        ),
    )


def covariance3d(cloud: GaussianCloud, index: int) -> np.ndarray:
    """World-space covariance R S S^T R^T of one Gaussian."""
    if not 0 <= int(index) < len(cloud):
        raise UsageError(f"gaussian index {index} out of range for {len(cloud)} gaussians")
    return covariances_from_params(cloud.log_scales[index], cloud.rotations[index])[0]


def reset_ledger(cloud: GaussianCloud) -> None:
    cloud.ledger.reset()
