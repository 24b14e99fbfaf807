"""Moving-square toy videos and a seeded MMDiT training loop on them.

The toy trains directly on pixel-space clips treated as latents (k channels,
t frames), so no autoencoder sits in the loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .condition import ConditionSpec, apply_condition_dropout, append_motion_score, build_condition_input
from .flow import ShiftConfig, fm_loss, make_training_pair, sample_timestep
from .mmdit import MMDiT, ModelConfig, TextEmbedding
from .tensor import OptimizerState, adamw_step

DIRECTIONS = {"right": (0, 1), "left": (0, -1), "down": (1, 0), "up": (-1, 0)}


def moving_square(direction: str, start: tuple[int, int], size: int = 3, speed: int = 1,
                  frames: int = 2, hw: int = 8, channels: int = 1) -> np.ndarray:
    """(channels, frames, hw, hw) clip in [-1, 1]: a bright square drifting on a dark field."""
    dy, dx = DIRECTIONS[direction]
    out = -np.ones((channels, frames, hw, hw))
    for f in range(frames):
        y = (start[0] + dy * speed * f) % hw
        x = (start[1] + dx * speed * f) % hw
        ys = (np.arange(size) + y) % hw
        xs = (np.arange(size) + x) % hw
        out[:, f, ys[:, None], xs[None, :]] = 1.0
    return out


def random_clip(rng: np.random.Generator, frames: int = 2, hw: int = 8, channels: int = 1):
    direction = list(DIRECTIONS)[rng.integers(len(DIRECTIONS))]
    speed = int(rng.integers(1, 3))
    start = (int(rng.integers(hw)), int(rng.integers(hw)))
    clip = moving_square(direction, start, speed=speed, frames=frames, hw=hw, channels=channels)
    caption = append_motion_score(f"a square moving {direction}", float(speed))
    return clip, caption


def tiny_config(channels: int = 1, **kw) -> ModelConfig:
    base = dict(double_layers=1, single_layers=1, dim=32, ffn_dim=64, heads=4, patch=(1, 2, 2),
                in_channels=2 * channels + 1, out_channels=channels, text_dim=32, max_text_tokens=8)
    base.update(kw)
    return ModelConfig(**base)


@dataclass
class ToyBatch:
    inputs: np.ndarray  # (B, 2k+1, t, h, w)
    t: np.ndarray
    target: np.ndarray  # (B, k, t, h, w)
    texts: list[TextEmbedding]


def make_batch(model: MMDiT, rng: np.random.Generator, batch: int, frames: int = 2, hw: int = 8,
               cond_dropout: float = 0.125, text_dropout: float = 0.1, shift: ShiftConfig = ShiftConfig()) -> ToyBatch:
    k = model.config.out_channels
    inputs, targets, texts, ts = [], [], [], []
    tokens = frames * hw * hw // model.config.patch_volume
    for _ in range(batch):
        clip, caption = random_clip(rng, frames, hw, k)
        t = float(sample_timestep(rng, shift, tokens))
        pair = make_training_pair(clip, rng, t)
        spec = apply_condition_dropout(ConditionSpec(frozenset({0}), clip, cond_dropout), rng)
        if rng.random() < text_dropout:
            caption = ""
        inputs.append(build_condition_input(pair.xt, spec))
        targets.append(pair.target)
        texts.append(model.embed(caption))
        ts.append(t)
    return ToyBatch(np.stack(inputs), np.array(ts), np.stack(targets), texts)


def batch_loss(model: MMDiT, b: ToyBatch):
    return fm_loss(model.forward(b.inputs, b.t, b.texts), b.target)


@dataclass
class TrainResult:
    model: MMDiT
    losses: list[float]
    eval_before: float
    eval_after: float
    grad_norms: list[float] = field(default_factory=list)

    @property
    def reduction(self) -> float:
        return 1.0 - self.eval_after / self.eval_before


def train_toy(config: ModelConfig | None = None, steps: int = 300, batch: int = 8, lr: float = 3e-3,
              seed: int = 0, frames: int = 2, hw: int = 8, eval_size: int = 64, dtype: str = "float32",
              log_every: int = 0) -> TrainResult:
    """AdamW with betas (0.9, 0.999), eps 1e-15, global clip 1 and no weight decay.

    Progress is measured on a fixed held-out batch drawn from its own seed stream.
    """
    config = config or tiny_config()
    root = np.random.SeedSequence(seed)
    init_ss, data_ss, eval_ss = root.spawn(3)
    with T.precision(dtype):
        model = MMDiT(config, seed=int(init_ss.generate_state(1)[0]))
        eval_batch = make_batch(model, np.random.default_rng(eval_ss), eval_size, frames, hw)
        eval_before = float(batch_loss(model, eval_batch).data)
        rng = np.random.default_rng(data_ss)
        opt = OptimizerState(lr=lr, beta1=0.9, beta2=0.999, eps=1e-15, clip=1.0)
        losses, norms = [], []
        for i in range(steps):
            b = make_batch(model, rng, batch, frames, hw)
            loss = batch_loss(model, b)
            for p in model.weights.values():
                p.zero_grad()
            T.backward(loss)
            grads = {k: p.grad for k, p in model.weights.items() if p.grad is not None}
            adamw_step(model.weights, grads, opt)
            losses.append(float(loss.data))
            norms.append(opt.last_grad_norm)
            if log_every and (i + 1) % log_every == 0:
                print(f"step {i + 1:5d}  loss {np.mean(losses[-log_every:]):.4f}")
        eval_after = float(batch_loss(model, eval_batch).data)
    return TrainResult(model, losses, eval_before, eval_after, norms)
