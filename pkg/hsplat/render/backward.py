"""Analytic backward pass with signed and homodirectional view-space gradients."""

import logging
from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from hsplat.errors import (
    DimensionMismatchError,
    GaussianNotInViewError,
    NumericalError,
    StaleArtifactsError,
)
from hsplat.gaussians import GaussianCloud
from hsplat.render.projection import ProjectedGaussians, View
from hsplat.render.rasterizer import RenderArtifacts, evaluate_tile, run_tiles
from hsplat.render.spherical_harmonics import color_backward

logger = logging.getLogger(__name__)


@dataclass
class ViewGradients:
    d_positions: np.ndarray
    d_log_scales: np.ndarray
    d_rotations: np.ndarray
    d_opacity_logits: np.ndarray
    d_color_coeffs: np.ndarray
    signed_view2d: np.ndarray
    homodir_view2d: np.ndarray
    touched: np.ndarray
    screen_radius: np.ndarray
    footprint_pixels: np.ndarray
    width: int
    height: int

    def __len__(self) -> int:
        return int(self.touched.shape[0])

    @property
    def signed_norm(self) -> np.ndarray:
        return np.linalg.norm(self.signed_view2d, axis=1)

    @property
    def homodir_norm(self) -> np.ndarray:
        return np.linalg.norm(self.homodir_view2d, axis=1)

    def parameter_gradients(self) -> dict:
        return {
            "positions": self.d_positions,
            "log_scales": self.d_log_scales,
            "rotations": self.d_rotations,
            "opacity_logits": self.d_opacity_logits,
            "color_coeffs": self.d_color_coeffs,
        }


@dataclass
class PixelGradientMap:
    """Per-pixel sub-gradient dL_j/dmu of one Gaussian, shape (H, W, 2)."""

    gaussian_id: int
    values: np.ndarray

    def signed_sum(self) -> np.ndarray:
        return self.values.reshape(-1, 2).sum(axis=0)

    def absolute_sum(self) -> np.ndarray:
        return np.abs(self.values).reshape(-1, 2).sum(axis=0)

    def support(self) -> np.ndarray:
        return np.any(self.values != 0.0, axis=2)


@dataclass
class _TileGradients:
    ids: np.ndarray
    d_mean2d: np.ndarray
    d_conic: np.ndarray
    d_opacity: np.ndarray
    d_rgb: np.ndarray
    homodir: np.ndarray
    footprint: np.ndarray
    px: np.ndarray
    py: np.ndarray
    capture: Optional[np.ndarray]


def _check_inputs(projected: ProjectedGaussians, artifacts: RenderArtifacts, image_grad: np.ndarray, view: Optional[View]):
    if len(projected) != artifacts.num_projected:
        raise StaleArtifactsError()
    if (projected.width, projected.height) != (artifacts.width, artifacts.height):
        raise StaleArtifactsError()
    if view is not None and (int(view.width), int(view.height)) != (artifacts.width, artifacts.height):
        raise StaleArtifactsError()
    grad = np.asarray(image_grad, dtype=np.float64)
    if grad.shape != (artifacts.height, artifacts.width, 3):
        raise DimensionMismatchError(
            f"image gradient has shape {grad.shape}, expected {(artifacts.height, artifacts.width, 3)}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericalError("image gradient is not finite")
    return grad


def _tile_backward(
    projected: ProjectedGaussians,
    artifacts: RenderArtifacts,
    image_grad: np.ndarray,
    tile: int,
    per_channel_abs: bool,
    capture_row: Optional[int],
) -> Optional[_TileGradients]:
    ids = artifacts.tile_contributors(tile)
    if ids.size == 0:
        return None
    px, py = artifacts.tile_pixels(tile)
    ev = evaluate_tile(projected, ids, px, py)
    if not np.allclose(ev.final_transmittance, artifacts.final_transmittance[py, px], rtol=0.0, atol=1e-12):
        raise StaleArtifactsError("projection changed after render")
    d_color = image_grad[py, px]
    colors = projected.rgb[ids]

    # Colour seen behind each contributor, rebuilt back to front.
    behind = np.empty((ids.size, px.size, 3), dtype=np.float64)
    accum = np.broadcast_to(artifacts.background, (px.size, 3)).copy()
    for row in range(ids.size - 1, -1, -1):
        behind[row] = accum
        alpha = ev.alpha[row][:, None]
        accum = colors[row][None, :] * alpha + (1.0 - alpha) * accum

    d_alpha_channels = d_color[None, :, :] * ev.transmittance[:, :, None] * (colors[:, None, :] - behind)
    d_alpha = d_alpha_channels.sum(axis=2)
    weights = ev.alpha * ev.transmittance
    d_rgb = (weights[:, :, None] * d_color[None, :, :]).sum(axis=1)

    opacity = projected.opacity[ids][:, None]
    gaussian = np.where(ev.alpha_unclamped, ev.gaussian, 0.0)
    d_gauss = d_alpha * opacity * gaussian
    d_opacity = (d_alpha * gaussian).sum(axis=1)

    a = projected.conic[ids, 0][:, None]
    b = projected.conic[ids, 1][:, None]
    c = projected.conic[ids, 2][:, None]
    dx, dy = ev.dx, ev.dy
    slope_x = -(a * dx + b * dy)
    slope_y = -(b * dx + c * dy)
    sub_x = d_gauss * slope_x
    sub_y = d_gauss * slope_y

    if per_channel_abs:
        channel_weight = np.abs(d_alpha_channels).sum(axis=2)
        homodir = np.stack(
            [
                (channel_weight * np.abs(opacity * gaussian * slope_x)).sum(axis=1),
                (channel_weight * np.abs(opacity * gaussian * slope_y)).sum(axis=1),
            ],
            axis=1,
        )
    else:
        homodir = np.stack([np.abs(sub_x).sum(axis=1), np.abs(sub_y).sum(axis=1)], axis=1)

    d_conic = np.stack(
        [
            (d_gauss * (-0.5 * dx * dx)).sum(axis=1),
            (d_gauss * (-dx * dy)).sum(axis=1),
            (d_gauss * (-0.5 * dy * dy)).sum(axis=1),
        ],
        axis=1,
    )

    capture = None
    if capture_row is not None:
        hits = np.nonzero(ids == capture_row)[0]
        if hits.size:
            capture = np.stack([sub_x[hits[0]], sub_y[hits[0]]], axis=1)

    return _TileGradients(
        ids=ids,
        d_mean2d=np.stack([sub_x.sum(axis=1), sub_y.sum(axis=1)], axis=1),
        d_conic=d_conic,
        d_opacity=d_opacity,
        d_rgb=d_rgb,
        homodir=homodir,
        footprint=ev.blended.sum(axis=1),
        px=px,
        py=py,
        capture=capture,
    )


def _reduce_tiles(
    projected: ProjectedGaussians,
    artifacts: RenderArtifacts,
    image_grad: np.ndarray,
    per_channel_abs: bool,
    threads: int,
    capture_row: Optional[int] = None,
):
    count = len(projected)
    totals = {
        "d_mean2d": np.zeros((count, 2)),
        "d_conic": np.zeros((count, 3)),
        "d_opacity": np.zeros(count),
        "d_rgb": np.zeros((count, 3)),
        "homodir": np.zeros((count, 2)),
        "footprint": np.zeros(count, dtype=np.int64),
    }
    capture = np.zeros((artifacts.height, artifacts.width, 2)) if capture_row is not None else None

    def worker(tile: int):
        return _tile_backward(projected, artifacts, image_grad, tile, per_channel_abs, capture_row)

    results: List[Optional[_TileGradients]] = run_tiles(worker, artifacts.num_tiles, threads)
    for part in results:
        if part is None:
            continue
        # ids are unique within a tile, so fancy-index accumulation is exact.
        for name, total in totals.items():
            total[part.ids] += getattr(part, name)
        if capture is not None and part.capture is not None:
            capture[part.py, part.px] = part.capture
    return totals, capture


def _covariance_backward(projected: ProjectedGaussians, d_conic: np.ndarray) -> np.ndarray:
    """dL/dSigma2d from dL/d(a, b, c) of the conic."""
    a, b, c = projected.conic[:, 0], projected.conic[:, 1], projected.conic[:, 2]
    conic = np.stack([np.stack([a, b], axis=1), np.stack([b, c], axis=1)], axis=1)
    half_b = 0.5 * d_conic[:, 1]
    grad_conic = np.stack(
        [np.stack([d_conic[:, 0], half_b], axis=1), np.stack([half_b, d_conic[:, 2]], axis=1)], axis=1
    )
    return -conic @ grad_conic @ conic


def _quaternion_backward(unit: np.ndarray, norms: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    w, x, y, z = unit[:, 0], unit[:, 1], unit[:, 2], unit[:, 3]
    zero = np.zeros_like(w)

    def mat(rows):
        return 2.0 * np.stack([np.stack(r, axis=1) for r in rows], axis=1)

    d_w = mat([[zero, -z, y], [z, zero, -x], [-y, x, zero]])
    d_x = mat([[zero, y, z], [y, -2.0 * x, -w], [z, w, -2.0 * x]])
    d_y = mat([[-2.0 * y, x, w], [x, zero, z], [-w, z, -2.0 * y]])
    d_z = mat([[-2.0 * z, -w, x], [w, -2.0 * z, y], [x, y, zero]])
    d_unit = np.stack([(d_rot * d).sum(axis=(1, 2)) for d in (d_w, d_x, d_y, d_z)], axis=1)
    radial = (unit * d_unit).sum(axis=1, keepdims=True)
    return (d_unit - unit * radial) / norms[:, None]


def _projection_backward(projected: ProjectedGaussians, totals: dict) -> dict:
    count = len(projected)
    d_cov2d = _covariance_backward(projected, totals["d_conic"])
    d_mean2d = totals["d_mean2d"]
    d_means = np.zeros((count, 3))

    if projected.mode == "perspective":
        camera = projected.camera
        rotation = camera.rotation
        jac = projected.jacobian
        transform = jac @ rotation
        cov3d = projected.cov3d
        d_cov3d = np.transpose(transform, (0, 2, 1)) @ d_cov2d @ transform
        d_transform = 2.0 * d_cov2d @ transform @ cov3d
        d_jac = d_transform @ rotation.T

        t = projected.camera_means
        tx, ty, tz = t[:, 0], t[:, 1], t[:, 2]
        fx, fy = camera.fx, camera.fy
        d_t = np.zeros((count, 3))
        d_t[:, 0] = d_mean2d[:, 0] * fx / tz
        d_t[:, 1] = d_mean2d[:, 1] * fy / tz
        d_t[:, 2] = -d_mean2d[:, 0] * fx * tx / tz**2 - d_mean2d[:, 1] * fy * ty / tz**2
        d_t[:, 2] += -d_jac[:, 0, 0] * fx / tz**2 - d_jac[:, 1, 1] * fy / tz**2

        clamped_x = projected.jacobian_clamped[:, 0]
        clamped_y = projected.jacobian_clamped[:, 1]
        # J02 = -fx * tx / tz^2 unless the frustum clamp froze tx / tz.
        d_t[:, 0] += np.where(clamped_x, 0.0, -d_jac[:, 0, 2] * fx / tz**2)
        d_t[:, 2] += d_jac[:, 0, 2] * np.where(clamped_x, -jac[:, 0, 2] / tz, 2.0 * fx * tx / tz**3)
        d_t[:, 1] += np.where(clamped_y, 0.0, -d_jac[:, 1, 2] * fy / tz**2)
        d_t[:, 2] += d_jac[:, 1, 2] * np.where(clamped_y, -jac[:, 1, 2] / tz, 2.0 * fy * ty / tz**3)
        d_means = d_t @ rotation
    else:
        d_cov3d = np.zeros((count, 3, 3))
        d_cov3d[:, :2, :2] = d_cov2d
        d_means[:, :2] = d_mean2d

    rot = projected.rotation_matrices
    scales = projected.scales
    m = rot * scales[:, None, :]
    d_cov3d = 0.5 * (d_cov3d + np.transpose(d_cov3d, (0, 2, 1)))
    d_m = 2.0 * d_cov3d @ m
    d_scales = (d_m * rot).sum(axis=1)
    d_rot = d_m * scales[:, None, :]

    opacity = projected.opacity
    return {
        "positions": d_means,
        "log_scales": d_scales * scales,
        "rotations": _quaternion_backward(projected.unit_quaternions, projected.quaternion_norms, d_rot),
        "opacity_logits": totals["d_opacity"] * opacity * (1.0 - opacity),
        "color_coeffs": color_backward(
            totals["d_rgb"], projected.sh_values, projected.color_unclamped, projected.num_coeffs
        ),
    }


def backward(
    projected: ProjectedGaussians,
    artifacts: RenderArtifacts,
    image_grad: np.ndarray,
    view: Optional[View] = None,
    *,
    per_channel_abs: bool = False,
    threads: int = 1,
) -> ViewGradients:
    """Gradients of the loss w.r.t. every cloud parameter for one rendered view."""
    grad = _check_inputs(projected, artifacts, image_grad, view)
    totals, _ = _reduce_tiles(projected, artifacts, grad, per_channel_abs, threads)

    n = projected.num_source
    source = projected.source
    out = ViewGradients(
        d_positions=np.zeros((n, 3)),
        d_log_scales=np.zeros((n, 3)),
        d_rotations=np.zeros((n, 4)),
        d_opacity_logits=np.zeros(n),
        d_color_coeffs=np.zeros((n, projected.num_coeffs, 3)),
        signed_view2d=np.zeros((n, 2)),
        homodir_view2d=np.zeros((n, 2)),
        touched=np.zeros(n, dtype=bool),
        screen_radius=np.zeros(n),
        footprint_pixels=np.zeros(n, dtype=np.int64),
        width=artifacts.width,
        height=artifacts.height,
    )
    if len(projected) == 0:
        return out

    touched = totals["footprint"] > 0
    params = _projection_backward(projected, totals)
    for name, values in params.items():
        values = np.where(touched.reshape((-1,) + (1,) * (values.ndim - 1)), values, 0.0)
        getattr(out, "d_" + name)[source] = values
    out.signed_view2d[source] = np.where(touched[:, None], totals["d_mean2d"], 0.0)
    out.homodir_view2d[source] = np.where(touched[:, None], totals["homodir"], 0.0)
    out.touched[source] = touched
    out.screen_radius[source] = np.where(touched, projected.radius, 0)
    out.footprint_pixels[source] = totals["footprint"]
    if not touched.any():
        logger.debug("No gaussian contributed to a %dx%d view", artifacts.width, artifacts.height)
    return out


def capture_pixel_gradients(
    projected: ProjectedGaussians,
    artifacts: RenderArtifacts,
    image_grad: np.ndarray,
    target: int,
    *,
    threads: int = 1,
) -> PixelGradientMap:
    """Dense per-pixel signed sub-gradient field of Gaussian ``target``."""
    grad = _check_inputs(projected, artifacts, image_grad, None)
    row = projected.row_of(target)
    if row is None:
        raise GaussianNotInViewError()
    totals, capture = _reduce_tiles(projected, artifacts, grad, False, threads, capture_row=row)
    if totals["footprint"][row] == 0:
        raise GaussianNotInViewError()
    return PixelGradientMap(gaussian_id=int(target), values=capture)


def accumulate_ledger(cloud: GaussianCloud, grads: ViewGradients, *, scale: float = 1.0) -> None:
    """Add one view's gradient norms to the densification ledger."""
    if len(grads) != len(cloud):
        raise StaleArtifactsError()
    ledger = cloud.ledger
    touched = grads.touched
    ledger.signed_accum[touched] += grads.signed_norm[touched] * scale
    ledger.homodir_accum[touched] += grads.homodir_norm[touched] * scale
    ledger.view_count[touched] += 1
    ledger.max_screen_radius[touched] = np.maximum(ledger.max_screen_radius[touched], grads.screen_radius[touched])


def gradient_scale(gradient_space: str, width: int, height: int) -> float:
    """Multiplier that turns pixel-unit view gradients into the requested space."""
    if gradient_space == "ndc":
        return 0.5 * max(int(width), int(height))
    return 1.0
