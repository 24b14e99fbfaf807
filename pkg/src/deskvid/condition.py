"""Image/video conditioning by channel concatenation plus a frame mask."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np


@dataclass(frozen=True)
class ConditionSpec:
    frames: frozenset[int] = field(default_factory=frozenset)
    latent: Optional[np.ndarray] = None
    dropout: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.dropout <= 1.0:
            raise ValueError(f"dropout must lie in [0, 1], got {self.dropout}")
        object.__setattr__(self, "frames", frozenset(int(f) for f in self.frames))

    @property
    def is_empty(self) -> bool:
        return not self.frames or self.latent is None


def first_frame(latent: np.ndarray, dropout: float = 0.0) -> ConditionSpec:
    """Image-to-video: condition on latent frame 0 of ``latent`` (k, t, h, w)."""
    return ConditionSpec(frozenset({0}), np.asarray(latent), dropout)


def build_condition_input(noisy: np.ndarray, spec: ConditionSpec) -> np.ndarray:
    """Stack ``[noisy (k) | condition (k) | mask (1)]`` along channels -> (2k+1, t, h, w).

    The noisy channels are passed through untouched, conditioned frames included.
    """
    noisy = np.asarray(noisy)
    if noisy.ndim != 4:
        raise ValueError(f"noisy latent must be (k, t, h, w), got {noisy.shape}")
    k, t, h, w = noisy.shape
    cond = np.zeros_like(noisy)
    mask = np.zeros((1, t, h, w), dtype=noisy.dtype)
    if not spec.is_empty:
        src = np.asarray(spec.latent)
        if src.ndim != 4 or src.shape[0] != k or src.shape[2:] != (h, w):
            raise ValueError(f"condition latent {src.shape} does not match noisy latent {noisy.shape}")
        for f in sorted(spec.frames):
            if not 0 <= f < t or f >= src.shape[1]:
                raise IndexError(f"conditioned frame {f} outside latent temporal extent {t}")
            cond[:, f] = src[:, f]
            mask[:, f] = 1.0
    return np.concatenate([noisy, cond, mask], axis=0)


def apply_condition_dropout(spec: ConditionSpec, rng: np.random.Generator) -> ConditionSpec:
    """Drop to the empty (text-to-video) condition with probability ``spec.dropout``."""
    # always draw so the stream position does not depend on the outcome
    if rng.random() < spec.dropout:
        return replace(spec, frames=frozenset(), latent=None)
    return spec


def append_motion_score(caption: str, score: float) -> str:
    if not math.isfinite(score) or score < 0:
        raise ValueError(f"motion score must be finite and non-negative, got {score}")
    # half-up so 2.5 -> 3 (Python's round() would give 2)
    return f"{caption} motion score: {int(math.floor(score + 0.5))}."
