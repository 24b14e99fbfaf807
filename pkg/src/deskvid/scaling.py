"""Inference-time search: branch the sampler state with small noise, score lookahead previews, keep the best.

Videos handed to verifiers are (C, T, H, W) arrays in [-1, 1].
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .datapipe import aesthetic_proxy, laplacian
from .flow import timestep_grid

METRICS = ("subject_consistency", "background_consistency", "motion_smoothness",
           "dynamic_degree", "aesthetic_quality", "imaging_quality")


@dataclass(frozen=True)
class ScalingConfig:
    injection_steps: tuple[int, ...] = ()
    seeds: int = 1
    variations: int = 1
    lookahead: int = 2
    weights: tuple[float, ...] = (1.0,) * 6
    noise_scale: float = 0.1  # relative to the state's standard deviation
    continue_from: str = "branch"  # or "lookahead"

    def __post_init__(self):
        object.__setattr__(self, "injection_steps", tuple(sorted({int(s) for s in self.injection_steps})))
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if self.seeds < 1 or self.variations < 1 or self.lookahead < 1:
            raise ValueError("seeds, variations and lookahead must be >= 1")
        if len(self.weights) != len(METRICS) or min(self.weights) < 0 or sum(self.weights) <= 0:
            raise ValueError(f"need {len(METRICS)} non-negative verifier weights with a positive sum")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.continue_from not in ("branch", "lookahead"):
            raise ValueError(f"unknown continuation {self.continue_from!r}")

    def check_steps(self, total_steps: int) -> None:
        bad = [s for s in self.injection_steps if not 1 <= s <= total_steps]
        if bad:
            raise ValueError(f"injection steps {bad} outside [1, {total_steps}]")

    @classmethod
    def one_hot(cls, metric: str, **kw) -> "ScalingConfig":
        w = [0.0] * len(METRICS)
        w[METRICS.index(metric)] = 1.0
        return cls(weights=tuple(w), **kw)


@dataclass
class VerifierScore:
    subject_consistency: float
    background_consistency: float
    motion_smoothness: float
    dynamic_degree: float
    aesthetic_quality: float
    imaging_quality: float
    total: float = 0.0

    def values(self) -> np.ndarray:
        return np.array([getattr(self, m) for m in METRICS])

    def weighted(self, weights: Sequence[float]) -> "VerifierScore":
        w = np.asarray(weights, dtype=float)
        self.total = float(self.values() @ w / w.sum())
        return self


# ------------------------------------------------------------------ verifiers


def _to_unit_gray(video: np.ndarray) -> np.ndarray:
    """(C, T, H, W) in [-1, 1] -> (T, H, W) in [0, 1]."""
    v = np.asarray(video, dtype=np.float64)
    if v.ndim != 4:
        raise ValueError(f"video must be (C, T, H, W), got {v.shape}")
    return np.clip((v.mean(axis=0) + 1) / 2, 0.0, 1.0)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na < 1e-12 and nb < 1e-12:
        return 1.0
    if na < 1e-12 or nb < 1e-12:
        return 0.0
    return float(np.clip(a @ b / (na * nb), 0.0, 1.0))


def _adjacent_similarity(features: np.ndarray) -> float:
    if len(features) < 2:
        return 1.0
    return float(np.mean([_cosine(features[i], features[i + 1]) for i in range(len(features) - 1)]))


def _center_features(g: np.ndarray) -> np.ndarray:
    """Central half of each frame average-pooled to at most 4x4 cells, (T, cells)."""
    t, h, w = g.shape
    c = g[:, h // 4 : h - h // 4, w // 4 : w - w // 4]
    ys = [y for y in np.array_split(np.arange(c.shape[1]), 4) if len(y)]
    xs = [x for x in np.array_split(np.arange(c.shape[2]), 4) if len(x)]
    return np.stack([c[:, y][:, :, x].mean(axis=(1, 2)) for y in ys for x in xs], axis=1)


def _border_features(g: np.ndarray) -> np.ndarray:
    t, h, w = g.shape
    by, bx = max(1, h // 8), max(1, w // 8)
    strips = [g[:, :by], g[:, h - by :], g[:, :, :bx], g[:, :, w - bx :]]
    return np.stack([s.mean(axis=(1, 2)) for s in strips], axis=1)


def motion_smoothness(g: np.ndarray) -> float:
    if len(g) < 3:
        return 1.0
    return float(1.0 - np.mean(np.diff(g, n=2, axis=0) ** 2) / 4.0)


def dynamic_degree(g: np.ndarray) -> float:
    if len(g) < 2:
        return 0.0
    return float(np.mean(np.abs(np.diff(g, axis=0))))


def imaging_quality(g: np.ndarray) -> float:
    if min(g.shape[1:]) < 3:
        return 0.0
    v = float(np.mean([laplacian(f).var() for f in g]))
    return v / (v + 0.01)


def aesthetic_quality(g: np.ndarray) -> float:
    idx = sorted({0, (len(g) - 1) // 2, len(g) - 1})
    return float(np.mean([aesthetic_proxy(np.rint(g[i] * 255)[..., None]) for i in idx]) / 10.0)


def score_video(video: np.ndarray, weights: Sequence[float] = (1.0,) * 6) -> VerifierScore:
    g = _to_unit_gray(video)
    s = VerifierScore(
        subject_consistency=_adjacent_similarity(_center_features(g)),
        background_consistency=_adjacent_similarity(_border_features(g)),
        motion_smoothness=motion_smoothness(g),
        dynamic_degree=dynamic_degree(g),
        aesthetic_quality=aesthetic_quality(g),
        imaging_quality=imaging_quality(g),
    )
    return s.weighted(weights)


def verify_candidates(videos: Sequence[np.ndarray], weights: Sequence[float]) -> tuple[list[VerifierScore], int]:
    """Scores per candidate and the winning index (ties go to the lowest index)."""
    if not videos:
        raise ValueError("no candidates to verify")
    scores = [score_video(v, weights) for v in videos]
    return scores, int(np.argmax([s.total for s in scores]))


# ------------------------------------------------------------------ branching


def branch_candidates(state: np.ndarray, rng: np.random.Generator, variations: int, noise_scale: float) -> list[np.ndarray]:
    """Candidate 0 is ``state`` itself; the rest add N(0, noise_scale^2) noise."""
    if variations < 1:
        raise ValueError("variations must be >= 1")
    state = np.asarray(state)
    out = [state.copy()]
    for _ in range(variations - 1):
        out.append(state + noise_scale * rng.standard_normal(state.shape).astype(state.dtype))
    return out


def initial_noise(shape: Sequence[int], seed: int, index: int = 0) -> np.ndarray:
    return np.random.default_rng([seed, index]).standard_normal(tuple(shape))


# hook(x, t, step) -> velocity; typically a guided velocity combining several model calls
StepFn = Callable[[np.ndarray, float, int], np.ndarray]


@dataclass
class ScalingResult:
    sample: np.ndarray
    trace: list[dict]
    evaluations: int
    chosen_seed: int = 0
    seed_scores: list[float] = field(default_factory=list)


def _denoise_one(velocity: StepFn, x: np.ndarray, grid: np.ndarray, step: int) -> tuple[np.ndarray, np.ndarray]:
    """One Euler step; returns (next state, x0 estimate)."""
    t_cur, t_next = float(grid[step - 1]), float(grid[step])
    v = np.asarray(velocity(x, t_cur, step))
    if v.shape != x.shape:
        raise ValueError(f"velocity shape {v.shape} != state shape {x.shape}")
    return x + (t_cur - t_next) * v, x + t_cur * v


def _run_seed(velocity: StepFn, x1: np.ndarray, steps: int, config: ScalingConfig, alpha: float,
              decode: Callable[[np.ndarray], np.ndarray], rng: np.random.Generator, seed_index: int,
              trace: list[dict]) -> np.ndarray:
    grid = timestep_grid(steps, alpha)
    x = np.array(x1, copy=True)
    replay: list[tuple[np.ndarray, np.ndarray]] = []  # cached (state, x0 estimate) along the winner's path
    step = 1
    while step <= steps:
        if step in config.injection_steps:
            # candidate 0 is x itself, so its lookahead starts with whatever the cache already holds
            cached, replay = replay, []
            scale = config.noise_scale * float(np.std(x))
            cands = branch_candidates(x, rng, config.variations, scale)
            depth = min(config.lookahead, steps - step + 1)
            paths, previews = [], []
            for i, c in enumerate(cands):
                y, path = c, []
                for j in range(step, step + depth):
                    k = j - step
                    if i == 0 and k < len(cached):
                        y, x0_hat = cached[k]
                    else:
                        y, x0_hat = _denoise_one(velocity, y, grid, j)
                    path.append((y, x0_hat))
                paths.append(path)
                previews.append(decode(x0_hat))
            scores, win = verify_candidates(previews, config.weights)
            trace.append({
                "seed": seed_index, "step": step, "depth": depth, "chosen": win,
                "totals": [s.total for s in scores], "scores": [asdict(s) for s in scores],
            })
            if config.continue_from == "lookahead":
                x, step = paths[win][-1][0], step + depth
                continue
            # continue from the winning branched state; its lookahead steps are deterministic replays
            x, replay = cands[win], list(paths[win])
        if replay:
            x = replay.pop(0)[0]
        else:
            x, _ = _denoise_one(velocity, x, grid, step)
        step += 1
    return x


def scaled_sample(velocity: StepFn, shape: Sequence[int], steps: int, config: ScalingConfig, seed: int = 0,
                  alpha: float = 1.0, decode: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                  evals_per_step: int = 1) -> ScalingResult:
    """Search over ``config.seeds`` initial noises with branching at the injection steps.

    ``velocity`` is called once per denoising step; ``evals_per_step`` converts those
    calls to model evaluations (3 for decoupled guidance). With several seeds the final
    decoded samples are scored and the best one is returned.
    """
    config.check_steps(steps)
    decode = decode or (lambda z: z)
    calls = 0

    def counted(x, t, step):
        nonlocal calls
        calls += 1
        return velocity(x, t, step)

    trace: list[dict] = []
    finals = []
    for i in range(config.seeds):
        rng = np.random.default_rng([seed, i, 1])
        finals.append(_run_seed(counted, initial_noise(shape, seed, i), steps, config, alpha, decode, rng, i, trace))
    chosen, seed_scores = 0, []
    if config.seeds > 1:
        scores, chosen = verify_candidates([decode(f) for f in finals], config.weights)
        seed_scores = [s.total for s in scores]
    return ScalingResult(finals[chosen], trace, calls * evals_per_step, chosen, seed_scores)


def scaling_cost(config: ScalingConfig, total_steps: int, evals_per_step: int = 3) -> int:
    """Model evaluations: seeds * (steps + sum over injections of (V - 1) * depth) * evals per step.

    ``depth`` is the lookahead clipped at the last step, min(d, steps - s + 1); it equals d
    whenever the window fits. Exact for the default "branch" continuation.
    """
    config.check_steps(total_steps)
    extra = sum((config.variations - 1) * min(config.lookahead, total_steps - s + 1) for s in config.injection_steps)
    return config.seeds * (total_steps + extra) * evals_per_step


# ------------------------------------------------------------------ toy model


@dataclass
class MixtureVelocity:
    """Exact flow-matching velocity when the data are a finite set of template videos.

    With x_t = (1 - t) x0 + t x1 the posterior over templates is a softmax of
    -|x_t - (1 - t) mu_i|^2 / (2 t^2), and v = (E[x0 | x_t] - x_t) / t.
    """

    templates: np.ndarray  # (N, C, T, H, W)
    prior: Optional[np.ndarray] = None

    def __post_init__(self):
        self.templates = np.asarray(self.templates, dtype=np.float64)
        n = len(self.templates)
        p = np.full(n, 1.0 / n) if self.prior is None else np.asarray(self.prior, dtype=float)
        self.log_prior = np.log(p / p.sum())

    def posterior(self, x: np.ndarray, t: float) -> np.ndarray:
        d = ((x[None] - (1 - t) * self.templates) ** 2).reshape(len(self.templates), -1).sum(axis=1)
        logits = self.log_prior - d / (2 * t * t)
        w = np.exp(logits - logits.max())
        return w / w.sum()

    def __call__(self, x: np.ndarray, t: float, step: int = 0) -> np.ndarray:
        if t <= 0:
            raise ValueError("velocity undefined at t = 0")
        w = self.posterior(x, t)
        mean = np.tensordot(w, self.templates, axes=1)
        return (mean - x) / t


def toy_templates(frames: int = 8, hw: int = 16) -> np.ndarray:
    """Smooth, jerky and static square videos, (N, 1, T, H, W) in [-1, 1]."""
    def clip(xs):
        v = -np.ones((1, frames, hw, hw))
        for f, x0 in enumerate(xs):
            v[0, f, hw // 2 - 2 : hw // 2 + 2, int(x0) % hw : int(x0) % hw + 4] = 1.0
        return v

    smooth = clip([2 + f for f in range(frames)])
    jerky = clip([2 + (5 if f % 2 else 0) + f // 2 for f in range(frames)])
    static = clip([6] * frames)
    return np.stack([smooth, jerky, static])


def trace_jsonl(trace: Sequence[dict]) -> list[str]:
    return [json.dumps({"seed": r["seed"], "step": r["step"], "chosen": r["chosen"], "totals": r["totals"],
                        "scores": r["scores"]}, sort_keys=True) for r in trace]

