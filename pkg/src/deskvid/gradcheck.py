"""Central finite-difference checks of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass
class GradCheckReport:
    op: str
    shapes: list[tuple[int, ...]]
    dtype: str
    max_rel_error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance


def _split_first(x):
    a, b = T.split(x, [1, x.shape[-1] - 1], axis=-1)
    return T.concat([T.scale(a, 2.0), b], axis=-1)


# name -> (function of input tensors, default input shapes)
OPS: dict[str, tuple[Callable[..., Tensor], list[tuple[int, ...]]]] = {
    "matmul": (T.matmul, [(3, 3), (3, 3)]),
    "add": (T.add, [(2, 3), (3,)]),
    "mul": (T.mul, [(2, 3), (2, 1)]),
    "scale": (lambda x: T.scale(x, -1.7), [(2, 3)]),
    "silu": (T.silu, [(2, 4)]),
    "gelu": (T.gelu, [(2, 4)]),
    "softmax": (T.softmax, [(4,)]),
    "rms_norm": (T.rms_norm, [(2, 8)]),
    "reshape": (lambda x: T.reshape(x, (3, 4)), [(2, 6)]),
    "permute": (lambda x: T.permute(x, (2, 0, 1)), [(2, 3, 4)]),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "split": (_split_first, [(2, 5)]),
    "sum": (lambda x: T.sum_(x, axis=1), [(3, 4)]),
    "mean": (lambda x: T.mean(x, axis=0, keepdims=True), [(3, 4)]),
}


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max absolute deviation normalized by the larger gradient magnitude."""
    denom = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), 1e-12)
    return float(np.max(np.abs(analytic - numeric))) / denom


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float, indices=None) -> np.ndarray:
    """Central differences of the scalar ``f`` w.r.t. entries of ``arr`` (perturbed in place)."""
    out = np.zeros(arr.shape, dtype=np.float64)
    flat = arr.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out.reshape(-1)[i] = (fp - fm) / (2 * h)
    return out


def _default_step(dtype) -> float:
    return 1e-6 if np.dtype(dtype) == np.float64 else 1e-2


def grad_check(op_name: str, shapes: Sequence[tuple[int, ...]] | None = None, tolerance: float = 1e-3,
               dtype: str = "float32", seed: int = 0) -> GradCheckReport:
    if op_name not in OPS:
        raise KeyError(f"unknown op {op_name!r}; registered: {sorted(OPS)}")
    fn, default_shapes = OPS[op_name]
    shapes = [tuple(s) for s in (shapes or default_shapes)]
    rng = np.random.default_rng(seed)
    with T.precision(dtype):
        inputs = [Tensor(rng.uniform(-1, 1, s), requires_grad=True) for s in shapes]
        out_shape = fn(*inputs).shape
        proj = rng.uniform(-1, 1, out_shape)

        def loss() -> Tensor:
            return T.sum_(T.mul(fn(*inputs), proj))

        T.backward(loss())
        h = _default_step(dtype)
        worst = 0.0
        for x in inputs:
            num = numeric_grad(lambda: float(loss().data), x.data, h)
            worst = max(worst, relative_error(x.grad.astype(np.float64), num))
    return GradCheckReport(op_name, list(shapes), dtype, worst, tolerance)


def check_all(dtype: str = "float64", tolerance: float = 1e-5, seed: int = 0) -> list[GradCheckReport]:
    return [grad_check(name, tolerance=tolerance, dtype=dtype, seed=seed) for name in OPS]


def check_model(config=None, dtype: str = "float64", tolerance: float = 1e-5, entries: int = 4,
                seed: int = 0) -> list[GradCheckReport]:
    """Finite-difference check of fm_loss through an MMDiT, one report per parameter tensor.

    Analytic gradients are taken in ``dtype``; central differences always run on a
    float64 replica of the same weights and inputs, over ``entries`` random
    coordinates per parameter. The output projection is randomly initialized so
    every upstream parameter receives gradient.
    """
    from .flow import fm_loss
    from .mmdit import MMDiT, ModelConfig, init_weights

    config = config or ModelConfig(double_layers=1, single_layers=1, dim=32, ffn_dim=64, heads=4)
    rng = np.random.default_rng(seed)
    c = config.in_channels
    pt, ph, pw = config.patch
    x = rng.uniform(-1, 1, (2, c, pt * 2, ph * 2, pw * 2))
    target = rng.uniform(-1, 1, (2, config.out_channels) + x.shape[2:])
    t = np.array([0.25, 0.8])
    captions = ["a small red square", ""]

    with T.precision(dtype):
        model = MMDiT(config, init_weights(config, seed, zero_out=False))
        texts = [model.embed(cap) for cap in captions]
        T.backward(fm_loss(model.forward(x, t, texts), target))
        analytic = {k: p.grad.astype(np.float64) for k, p in model.weights.items()}

    with T.precision("float64"):
        ref = MMDiT(config, {k: Tensor(p.data, dtype=np.float64) for k, p in model.weights.items()})

        def loss() -> float:
            return float(fm_loss(ref.forward(x, t, texts), target).data)

        reports = []
        for name, p in ref.weights.items():
            idx = rng.choice(p.data.size, size=min(entries, p.data.size), replace=False)
            num = numeric_grad(loss, p.data, 1e-6, indices=idx).reshape(-1)[idx]
            err = relative_error(analytic[name].reshape(-1)[idx], num)
            reports.append(GradCheckReport(f"mmdit:{name}", [p.shape], dtype, err, tolerance))
    return reports
