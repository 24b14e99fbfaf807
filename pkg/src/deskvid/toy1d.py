"""One-dimensional flow-matching toy: a small MLP learns to transport N(0,1) to a Gaussian."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .flow import ShiftConfig, euler_sample, fm_loss, make_training_pair, sample_timestep
from .tensor import OptimizerState, Tensor, adamw_step


def _features(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), x.shape)
    return np.stack([x, t, np.sin(np.pi * t), np.cos(np.pi * t)], axis=-1)


@dataclass
class MLP1D:
    """Two weight layers: [x, t, sin(pi t), cos(pi t)] -> hidden (SiLU) -> velocity."""

    hidden: int = 64
    seed: int = 0
    params: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            rng = np.random.default_rng(self.seed)
            self.params = {
                "w1": Tensor(rng.normal(0, 1 / np.sqrt(4), (4, self.hidden)), requires_grad=True),
                "b1": Tensor(np.zeros(self.hidden), requires_grad=True),
                "w2": Tensor(rng.normal(0, 1 / np.sqrt(self.hidden), (self.hidden, 1)), requires_grad=True),
                "b2": Tensor(np.zeros(1), requires_grad=True),
            }

    def forward(self, x: np.ndarray, t) -> Tensor:
        p = self.params
        h = T.silu(T.linear(_features(x, t), p["w1"], p["b1"]))
        return T.reshape(T.linear(h, p["w2"], p["b2"]), x.shape)

    def __call__(self, x: np.ndarray, t) -> np.ndarray:
        return self.forward(np.asarray(x, dtype=np.float64), t).data


def train_gaussian(mean: float = 3.0, std: float = 0.5, steps: int = 1500, batch: int = 256,
                   lr: float = 1e-2, seed: int = 0, hidden: int = 64) -> tuple[MLP1D, list[float]]:
    rng = np.random.default_rng(seed)
    shift = ShiftConfig()
    with T.precision("float64"):
        model = MLP1D(hidden=hidden, seed=seed)
        opt = OptimizerState(lr=lr)
        losses = []
        for _ in range(steps):
            x0 = rng.normal(mean, std, batch)
            t = sample_timestep(rng, shift, tokens=1, size=batch)
            pair = make_training_pair(x0, rng, t)
            loss = fm_loss(model.forward(pair.xt, t), pair.target)
            for p in model.params.values():
                p.zero_grad()
            T.backward(loss)
            adamw_step(model.params, {k: p.grad for k, p in model.params.items()}, opt)
            losses.append(float(loss.data))
    return model, losses


def sample_gaussian(model: MLP1D, n: int, steps: int = 50, seed: int = 1) -> np.ndarray:
    x1 = np.random.default_rng(seed).standard_normal(n)
    with T.precision("float64"):
        return euler_sample(model, x1, steps)
