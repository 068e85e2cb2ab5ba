"""Adam over the cloud's numpy arrays, with row surgery after densification."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np
import torch

from hsplat.defaults import (
    ADAM_EPS,
    FEATURE_LR,
    FEATURE_REST_LR_DIVISOR,
    OPACITY_LR,
    POSITION_LR_DELAY_MULT,
    POSITION_LR_FINAL,
    POSITION_LR_INIT,
    ROTATION_LR,
    SCALING_LR,
)
from hsplat.errors import ConfigError
from hsplat.gaussians import GaussianCloud

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LearningRates:
    positions_init: float = POSITION_LR_INIT
    positions_final: float = POSITION_LR_FINAL
    positions_delay_mult: float = POSITION_LR_DELAY_MULT
    positions_delay_steps: int = 0
    log_scales: float = SCALING_LR
    rotations: float = ROTATION_LR
    opacity_logits: float = OPACITY_LR
    color_coeffs: float = FEATURE_LR

    def __post_init__(self) -> None:
        for name in ("positions_init", "positions_final", "log_scales", "rotations", "opacity_logits", "color_coeffs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"learning rate {name} must be non-negative")


def expon_lr(
    step: int,
    lr_init: float,
    lr_final: float,
    max_steps: int,
    *,
    delay_steps: int = 0,
    delay_mult: float = 1.0,
) -> float:
    """Log-linear decay from ``lr_init`` to ``lr_final`` with an optional sine warmup."""
    if step < 0 or (lr_init == 0.0 and lr_final == 0.0):
        return 0.0
    if delay_steps > 0:
        delay_rate = delay_mult + (1.0 - delay_mult) * math.sin(0.5 * math.pi * min(max(step / delay_steps, 0.0), 1.0))
    else:
        delay_rate = 1.0
    t = min(max(step / max(max_steps, 1), 0.0), 1.0)
    if lr_init <= 0.0 or lr_final <= 0.0:
        return delay_rate * (lr_init * (1.0 - t) + lr_final * t)
    return delay_rate * math.exp(math.log(lr_init) * (1.0 - t) + math.log(lr_final) * t)


def _group_arrays(cloud: GaussianCloud) -> Dict[str, np.ndarray]:
    arrays = {
        "positions": cloud.positions,
        "log_scales": cloud.log_scales,
        "rotations": cloud.rotations,
        "opacity_logits": cloud.opacity_logits,
        "color_dc": cloud.color_coeffs[:, :1, :],
    }
    if cloud.color_coeffs.shape[1] > 1:
        arrays["color_rest"] = cloud.color_coeffs[:, 1:, :]
    return arrays


def _group_gradients(grads: Dict[str, np.ndarray]) -> Dict[str, np.ndarray]:
    out = {name: grads[name] for name in ("positions", "log_scales", "rotations", "opacity_logits")}
    out["color_dc"] = grads["color_coeffs"][:, :1, :]
    out["color_rest"] = grads["color_coeffs"][:, 1:, :]
    return out


class GaussianOptimizer:
    """torch Adam whose parameters alias the cloud's arrays.

    Steps write straight into the cloud. After ``densify.apply`` swaps the
    arrays, ``remap`` rebuilds parameters and carries surviving moments.
    """

    def __init__(self, cloud: GaussianCloud, rates: LearningRates, *, spatial_scale: float = 1.0, max_steps: int = 1):
        self.cloud = cloud
        self.rates = rates
        self.spatial_scale = float(spatial_scale)
        self.max_steps = int(max_steps)
        base = {
            "positions": rates.positions_init * self.spatial_scale,
            "log_scales": rates.log_scales,
            "rotations": rates.rotations,
            "opacity_logits": rates.opacity_logits,
            "color_dc": rates.color_coeffs,
            "color_rest": rates.color_coeffs / FEATURE_REST_LR_DIVISOR,
        }
        groups = [
            {"params": [self._wrap(array)], "lr": base[name], "name": name}
            for name, array in _group_arrays(cloud).items()
        ]
        self._optimizer = torch.optim.Adam(groups, lr=0.0, eps=ADAM_EPS, foreach=False)

    @staticmethod
    def _wrap(array: np.ndarray) -> torch.nn.Parameter:
        return torch.nn.Parameter(torch.from_numpy(array), requires_grad=True)

    def _groups(self):
        return {group["name"]: group for group in self._optimizer.param_groups}

    def update_learning_rate(self, iteration: int) -> float:
        lr = expon_lr(
            iteration,
            self.rates.positions_init * self.spatial_scale,
            self.rates.positions_final * self.spatial_scale,
            self.max_steps,
            delay_steps=self.rates.positions_delay_steps,
            delay_mult=self.rates.positions_delay_mult,
        )
        self._groups()["positions"]["lr"] = lr
        return lr

    def learning_rate(self, name: str) -> float:
        return float(self._groups()[name]["lr"])

    def step(self, grads: Dict[str, np.ndarray]) -> None:
        """One Adam step from float64 numpy gradients keyed like cloud fields."""
        per_group = _group_gradients(grads)
        for name, group in self._groups().items():
            param = group["params"][0]
            grad = np.ascontiguousarray(per_group[name], dtype=param.detach().numpy().dtype)
            if grad.shape != tuple(param.shape):
                raise ConfigError(f"gradient for {name} has shape {grad.shape}, expected {tuple(param.shape)}")
            param.grad = torch.from_numpy(grad)
        self._optimizer.step()
        self._optimizer.zero_grad(set_to_none=True)

    def moments(self, name: str) -> Tuple[np.ndarray, np.ndarray]:
        param = self._groups()[name]["params"][0]
        state = self._optimizer.state.get(param)
        if not state:
            zeros = np.zeros(tuple(param.shape))
            return zeros, zeros.copy()
        return state["exp_avg"].detach().numpy().copy(), state["exp_avg_sq"].detach().numpy().copy()

    def reset_moments(self, name: str) -> None:
        param = self._groups()[name]["params"][0]
        state = self._optimizer.state.get(param)
        if state:
            state["exp_avg"].zero_()
            state["exp_avg_sq"].zero_()

    def remap(self, survivors: np.ndarray, num_new: int) -> None:
        """Rebind every group to the cloud's new arrays.

        Rows listed in ``survivors`` keep their moments; ``num_new`` trailing
        rows start from zero.
        """
        index = torch.from_numpy(np.asarray(survivors, dtype=np.int64))
        arrays = _group_arrays(self.cloud)
        for name, group in self._groups().items():
            old = group["params"][0]
            fresh = self._wrap(arrays[name])
            state = self._optimizer.state.pop(old, None)
            if state:
                for key in ("exp_avg", "exp_avg_sq"):
                    kept = state[key].index_select(0, index)
                    pad = torch.zeros((num_new,) + tuple(kept.shape[1:]), dtype=kept.dtype)
                    state[key] = torch.cat((kept, pad), dim=0).contiguous()
                self._optimizer.state[fresh] = state
            group["params"][0] = fresh
