"""Real spherical harmonics up to degree 3, using the 3D-GS sign convention."""

from typing import Tuple

import numpy as np

from hsplat.defaults import MAX_SH_DEGREE
from hsplat.errors import UsageError

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

COLOR_OFFSET = 0.5


def sh_basis(directions: np.ndarray, degree: int) -> np.ndarray:
    """Basis values for unit directions, (M, 3) -> (M, (degree + 1) ** 2)."""
    if not 0 <= int(degree) <= MAX_SH_DEGREE:
        raise UsageError(f"sh degree must be in 0..{MAX_SH_DEGREE}, got {degree}")
    dirs = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    count = dirs.shape[0]
    basis = np.empty((count, (int(degree) + 1) ** 2), dtype=np.float64)
    basis[:, 0] = C0
    if degree < 1:
        return basis
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    basis[:, 1] = -C1 * y
    basis[:, 2] = C1 * z
    basis[:, 3] = -C1 * x
    if degree < 2:
        return basis
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    basis[:, 4] = C2[0] * xy
    basis[:, 5] = C2[1] * yz
    basis[:, 6] = C2[2] * (2.0 * zz - xx - yy)
    basis[:, 7] = C2[3] * xz
    basis[:, 8] = C2[4] * (xx - yy)
    if degree < 3:
        return basis
    basis[:, 9] = C3[0] * y * (3.0 * xx - yy)
    basis[:, 10] = C3[1] * xy * z
    basis[:, 11] = C3[2] * y * (4.0 * zz - xx - yy)
    basis[:, 12] = C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
    basis[:, 13] = C3[4] * x * (4.0 * zz - xx - yy)
    basis[:, 14] = C3[5] * z * (xx - yy)
    basis[:, 15] = C3[6] * x * (xx - 3.0 * yy)
    return basis


def eval_colors(coeffs: np.ndarray, directions: np.ndarray, degree: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Decode RGB for many Gaussians.

    Returns ``(rgb, basis, unclamped)``; ``unclamped`` marks channels that did
    not hit the zero floor and therefore pass gradient.
    """
    coeffs = np.asarray(coeffs, dtype=np.float64)
    count_needed = (int(degree) + 1) ** 2
    basis = sh_basis(directions, degree)
    raw = np.einsum("nk,nkc->nc", basis, coeffs[:, :count_needed, :]) + COLOR_OFFSET
    unclamped = raw > 0.0
    return np.where(unclamped, raw, 0.0), basis, unclamped


def eval_color(coeffs: np.ndarray, view_dir: np.ndarray, degree: int) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    rgb, _, _ = eval_colors(coeffs[None, ...], np.asarray(view_dir)[None, :], degree)
    return rgb[0]


def color_backward(d_rgb: np.ndarray, basis: np.ndarray, unclamped: np.ndarray, num_coeffs: int) -> np.ndarray:
    """Gradient w.r.t. coefficients given gradient w.r.t. decoded colour."""
    masked = np.where(unclamped, d_rgb, 0.0)
    grad = np.zeros((d_rgb.shape[0], num_coeffs, 3), dtype=np.float64)
    used = basis.shape[1]
    grad[:, :used, :] = basis[:, :, None] * masked[:, None, :]
    return grad


def rgb_to_sh(rgb) -> np.ndarray:
    return (np.asarray(rgb, dtype=np.float64) - COLOR_OFFSET) / C0


def sh_to_rgb(dc) -> np.ndarray:
    return np.asarray(dc, dtype=np.float64) * C0 + COLOR_OFFSET
