"""Flow-matching objective, shifted logit-normal timesteps and the Euler sampler.

Convention: ``x0`` is data, ``x1`` is standard normal noise,
``xt = (1 - t) * x0 + t * x1`` and the network regresses the velocity
``x0 - x1``. Sampling integrates from t=1 (noise) down to t=0 (data).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class ShiftConfig:
    alpha_base: float = 1.0
    reference_token_count: int = 256
    alpha_floor: float = 1.0
    logit_mean: float = 0.0
    logit_std: float = 1.0

    def __post_init__(self):
        if self.alpha_base < 0 or self.reference_token_count <= 0:
            raise ValueError("alpha_base must be >= 0 and reference_token_count > 0")
        if self.alpha_floor < 1:
            raise ValueError("alpha_floor must be >= 1")

    def alpha(self, tokens: int) -> float:
        if tokens <= 0:
            raise ValueError("token count must be positive")
        return max(self.alpha_floor, self.alpha_base * tokens / self.reference_token_count)


def shift_timestep(t, alpha: float):
    """Map t -> alpha*t / (1 + (alpha-1)*t); works on scalars and arrays.

    ``alpha`` in (0, 1) is allowed so the map can be inverted with ``1/alpha``.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > 1) or not np.all(np.isfinite(arr)):
        raise ValueError("t must lie in [0, 1]")
    out = alpha * arr / (1.0 + (alpha - 1.0) * arr)
    return float(out) if out.ndim == 0 else out


def sample_timestep(rng: np.random.Generator, shift: ShiftConfig, tokens: int, size=None):
    u = rng.normal(shift.logit_mean, shift.logit_std, size=size)
    t0 = 1.0 / (1.0 + np.exp(-u))
    return shift_timestep(t0, shift.alpha(tokens))


@dataclass
class FlowSample:
    x0: np.ndarray
    x1: np.ndarray
    t: float | np.ndarray
    xt: np.ndarray
    target: np.ndarray


def make_training_pair(x0, rng: np.random.Generator, t, x1: Optional[np.ndarray] = None) -> FlowSample:
    """Build ``(xt, target)``; ``t`` may be a scalar or one value per leading batch entry."""
    x0 = np.asarray(x0)
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0) or np.any(t_arr > 1):
        raise ValueError("t must lie in [0, 1]")
    if x1 is None:
        x1 = rng.standard_normal(x0.shape).astype(x0.dtype if x0.dtype.kind == "f" else np.float64)
    tb = t_arr.reshape(t_arr.shape + (1,) * (x0.ndim - t_arr.ndim))
    xt = ((1.0 - tb) * x0 + tb * x1).astype(x1.dtype)
    return FlowSample(x0=x0, x1=x1, t=t, xt=xt, target=(x0 - x1).astype(x1.dtype))


def fm_loss(prediction, target) -> Tensor:
    """Mean squared velocity error."""
    prediction = T.as_tensor(prediction)
    target = T.as_tensor(target, like=prediction)
    if prediction.shape != target.shape:
        raise ValueError(f"prediction shape {prediction.shape} != target shape {target.shape}")
    diff = prediction - target
    return T.mean(T.mul(diff, diff))


def timestep_grid(steps: int, alpha: float = 1.0) -> np.ndarray:
    """Descending grid t_steps=1, ..., t_0=0 after the shift."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    k = np.arange(steps, -1, -1, dtype=np.float64) / steps
    return np.asarray(shift_timestep(k, alpha))


VelocityFn = Callable[[np.ndarray, float, int], np.ndarray]


def euler_sample(model: Callable[[np.ndarray, float], np.ndarray], x1: np.ndarray, steps: int,
                 alpha: float = 1.0, guidance_hook: Optional[VelocityFn] = None) -> np.ndarray:
    """Integrate dx/dt = -v from t=1 to t=0 with plain Euler steps.

    ``guidance_hook(x, t, step)`` (1-based step) replaces the bare model call
    when given, so classifier-free guidance can compose several evaluations.
    """
    grid = timestep_grid(steps, alpha)
    x = np.array(x1, copy=True)
    for step in range(1, steps + 1):
        t_cur, t_next = float(grid[step - 1]), float(grid[step])
        v = guidance_hook(x, t_cur, step) if guidance_hook is not None else model(x, t_cur)
        v = np.asarray(v.data if isinstance(v, Tensor) else v)
        if v.shape != x.shape:
            raise ValueError(f"model output shape {v.shape} != state shape {x.shape}")
        x = x + (t_cur - t_next) * v
    return x
