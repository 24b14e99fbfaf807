"""Classifier-free guidance: single and decoupled image/text scales, oscillation, dynamic scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np


@dataclass(frozen=True)
class GuidanceConfig:
    g_img: float = 3.0
    g_txt: float = 7.5
    mode: str = "decoupled"  # or "single"
    oscillation: bool = False
    warmup_steps: int = 10
    dynamic: str = "off"  # or "linear"
    steps: int = 50

    def __post_init__(self):
        if self.mode not in ("single", "decoupled"):
            raise ValueError(f"unknown guidance mode {self.mode!r}")
        if self.dynamic not in ("off", "linear"):
            raise ValueError(f"unknown dynamic schedule {self.dynamic!r}")
        for g in (self.g_img, self.g_txt):
            if not math.isfinite(g) or g < 0:
                raise ValueError("guidance scales must be finite and >= 0")
        if self.steps < 1 or not 0 <= self.warmup_steps <= self.steps:
            raise ValueError("need steps >= 1 and 0 <= warmup_steps <= steps")

    @property
    def evals_per_step(self) -> int:
        return 3 if self.mode == "decoupled" else 2


def cfg_single(v_uncond, v_full, g):
    return v_uncond + g * (v_full - v_uncond)


def cfg_decoupled(v_uncond, v_img, v_full, g_img_eff, g_txt):
    """``v_u + g_img*(v_img - v_u) + g_txt*(v_full - v_img)``; ``g_img_eff`` may broadcast per frame."""
    v_uncond, v_img, v_full = (np.asarray(v) for v in (v_uncond, v_img, v_full))
    if not (v_uncond.shape == v_img.shape == v_full.shape):
        raise ValueError(f"branch shapes differ: {v_uncond.shape}, {v_img.shape}, {v_full.shape}")
    return v_uncond + g_img_eff * (v_img - v_uncond) + g_txt * (v_full - v_img)


def image_guidance_schedule(config: GuidanceConfig, step: int, frame_index: int, v_count: int,
                            s_count: Optional[int] = None) -> float:
    """Effective image guidance for a 1-based ``step`` and 0-based latent ``frame_index``.

    Linear law: 1 at the first frame, rising to ``g_img`` at the last frame, and
    fading back to 1 as the step index reaches ``s_count``. Oscillation then sets
    even steps after the warmup window to 1.
    """
    s_count = config.steps if s_count is None else s_count
    if not 1 <= step <= s_count:
        raise IndexError(f"step {step} outside [1, {s_count}]")
    if not 0 <= frame_index < v_count:
        raise IndexError(f"frame {frame_index} outside [0, {v_count})")
    base = config.g_img
    if config.dynamic == "linear":
        frame_frac = frame_index / (v_count - 1) if v_count > 1 else 0.0
        step_frac = 1.0 - (step - 1) / (s_count - 1) if s_count > 1 else 1.0
        base = 1.0 + (config.g_img - 1.0) * frame_frac * step_frac
    if config.oscillation and step > config.warmup_steps and step % 2 == 0:
        return 1.0
    return base


def frame_scales(config: GuidanceConfig, step: int, v_count: int, s_count: Optional[int] = None) -> np.ndarray:
    return np.array([image_guidance_schedule(config, step, f, v_count, s_count) for f in range(v_count)])


def schedule_grid(config: GuidanceConfig, v_count: int, s_count: Optional[int] = None) -> np.ndarray:
    """(steps, frames) matrix of effective image guidance."""
    s_count = config.steps if s_count is None else s_count
    return np.stack([frame_scales(config, s, v_count, s_count) for s in range(1, s_count + 1)])


# model(x_in, t, text) -> velocity with the same (k, t, h, w) layout as the noisy latent
BranchModel = Callable[[np.ndarray, float, object], np.ndarray]


def guided_velocity(model: BranchModel, x: np.ndarray, t: float, step: int, config: GuidanceConfig,
                    text, null_text, cond_input: Callable[[np.ndarray, bool], np.ndarray],
                    s_count: Optional[int] = None) -> np.ndarray:
    """Compose the guided velocity for the noisy latent ``x`` (k, t, h, w).

    ``cond_input(x, with_image)`` builds the model input with or without the image
    condition. Decoupled mode evaluates (null text, no image), (null text, image) and
    (text, image); single mode evaluates only the first and last.
    """
    x_plain = cond_input(x, False)
    x_img = cond_input(x, True)
    v_u = np.asarray(model(x_plain, t, null_text))
    v_f = np.asarray(model(x_img, t, text))
    if config.mode == "single":
        return cfg_single(v_u, v_f, config.g_txt)
    v_i = np.asarray(model(x_img, t, null_text))
    scales = frame_scales(config, step, x.shape[1], s_count).reshape(1, -1, 1, 1)
    return cfg_decoupled(v_u, v_i, v_f, scales, config.g_txt)
