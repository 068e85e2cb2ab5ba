"""PSNR and SSIM (valid-region Gaussian window), plus D-SSIM with its gradient."""

import math
from typing import Tuple

import numpy as np
import torch
import torch.nn.functional as F

from hsplat.defaults import SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from hsplat.errors import DimensionMismatchError, UsageError


def _check_pair(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10 log10(1 / MSE) over all channels; identical images give ``inf``."""
    a, b = _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    kernel = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    return np.outer(kernel, kernel)


def _to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, C) array -> (1, C, H, W) float64 tensor."""
    if image.ndim == 2:
        image = image[:, :, None]
    return torch.from_numpy(np.ascontiguousarray(np.transpose(image, (2, 0, 1))))[None]


def _ssim_map(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    channels = x.shape[1]
    window = torch.from_numpy(gaussian_window())[None, None].expand(channels, 1, -1, -1).contiguous()
    mu_x = F.conv2d(x, window, groups=channels)
    mu_y = F.conv2d(y, window, groups=channels)
    mu_x2, mu_y2, mu_xy = mu_x * mu_x, mu_y * mu_y, mu_x * mu_y
    sigma_x2 = F.conv2d(x * x, window, groups=channels) - mu_x2
    sigma_y2 = F.conv2d(y * y, window, groups=channels) - mu_y2
    sigma_xy = F.conv2d(x * y, window, groups=channels) - mu_xy
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    numerator = (2.0 * mu_xy + c1) * (2.0 * sigma_xy + c2)
    denominator = (mu_x2 + mu_y2 + c1) * (sigma_x2 + sigma_y2 + c2)
    return numerator / denominator


def _check_window(image: np.ndarray) -> None:
    if image.shape[0] < SSIM_WINDOW or image.shape[1] < SSIM_WINDOW:
        raise UsageError(f"image {image.shape[1]}x{image.shape[0]} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, per channel then averaged."""
    a, b = _check_pair(a, b)
    _check_window(a)
    with torch.no_grad():
        value = _ssim_map(_to_tensor(a), _to_tensor(b)).mean()
    return float(value.item())


def dssim_with_grad(rendered: np.ndarray, target: np.ndarray) -> Tuple[float, np.ndarray]:
    """(1 - SSIM) / 2 and its gradient w.r.t. ``rendered`` via autograd."""
    rendered, target = _check_pair(rendered, target)
    _check_window(rendered)
    x = _to_tensor(rendered).clone().requires_grad_(True)
    y = _to_tensor(target)
    value = (1.0 - _ssim_map(x, y).mean()) / 2.0
    value.backward()
    grad = x.grad[0].numpy()
    if rendered.ndim == 2:
        return float(value.item()), grad[0]
    return float(value.item()), np.ascontiguousarray(np.transpose(grad, (1, 2, 0)))
