"""Multi-bucket assignment, batch-size search and the training cost model.

The bucket tables' "Max # of Frames" column is read as the maximum number of
tokens per sample; :func:`bucket_token_cap` reproduces every cell from the
autoencoder ratios and DiT patch size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import ROUND_DOWN, Decimal
from typing import Callable, Iterable, Optional, Protocol, Sequence

import numpy as np

from .dcae import HUNYUAN, CompressionSpec, token_count


def resolution_px(label: str) -> int:
    if not label.endswith("px"):
        raise ValueError(f"resolution label must look like '256px', got {label!r}")
    return int(label[:-2])


def grid_frames(frame_hi: int, spec: CompressionSpec) -> int:
    """Largest frame count <= ``frame_hi`` that the spec's temporal grid accepts."""
    if spec.causal:
        t = frame_hi - (frame_hi - 1) % spec.d_t
    else:
        t = frame_hi - frame_hi % spec.d_t
    if t < 1:
        raise ValueError(f"no valid frame count <= {frame_hi} for d_t={spec.d_t}")
    return t


def bucket_token_cap(frame_hi: int, resolution: str, spec: CompressionSpec = HUNYUAN) -> int:
    px = resolution_px(resolution)
    return token_count(grid_frames(frame_hi, spec), px, px, spec)


@dataclass(frozen=True)
class Bucket:
    resolution: str
    frame_lo: int
    frame_hi: int
    batch_size: int
    token_cap: int = 0
    cp: int = 1
    throughput: Optional[str] = None  # reference metadata only

    def __post_init__(self):
        if not 1 <= self.frame_lo <= self.frame_hi:
            raise ValueError(f"invalid frame range [{self.frame_lo}, {self.frame_hi}]")
        if self.batch_size < 1 or self.cp < 1:
            raise ValueError("batch size and cp degree must be >= 1")

    @property
    def label(self) -> str:
        frames = str(self.frame_lo) if self.frame_lo == self.frame_hi else f"{self.frame_lo}-{self.frame_hi}"
        return f"{self.resolution}/{frames}"

    def contains(self, frames: int) -> bool:
        return self.frame_lo <= frames <= self.frame_hi


def _bucket(res, lo, hi, bs, cp=1, thr=None, spec=HUNYUAN):
    return Bucket(res, lo, hi, bs, bucket_token_cap(hi, res, spec), cp, thr)


# Batch-size tables for stages 1-2 (CP 1) and stage 3 (CP 4), HunyuanVideo VAE with patch 1x2x2.
STAGE12_BUCKETS = [
    _bucket("256px", 5, 33, 12, thr="12.7 videos/s"),
    _bucket("256px", 37, 65, 6, thr="6.3 videos/s"),
    _bucket("256px", 69, 97, 4, thr="4.2 videos/s"),
    _bucket("256px", 101, 129, 3, thr="3.2 videos/s"),
    _bucket("256px", 1, 1, 45, thr="47.6 images/s"),
    _bucket("768px", 1, 1, 13, thr="13.8 images/s"),
    _bucket("1024px", 1, 1, 7, thr="7.4 images/s"),
]
STAGE3_BUCKETS = [
    _bucket("768px", 5, 33, 6, cp=4, thr="0.25 videos/s"),
    _bucket("768px", 37, 65, 4, cp=4, thr="0.17 videos/s"),
    _bucket("768px", 69, 97, 3, cp=4, thr="0.13 videos/s"),
    _bucket("768px", 101, 129, 2, cp=4, thr="0.08 videos/s"),
    _bucket("768px", 1, 1, 38, cp=4, thr="1.60 images/s"),
]
# one entry per table row, in table order
REFERENCE_TOKEN_CAPS = [2304, 4352, 6400, 8448, 256, 2304, 4096, 20736, 39168, 57600, 76032, 2304]


def check_buckets(buckets: Sequence[Bucket]) -> None:
    by_res: dict[str, list[Bucket]] = {}
    for b in buckets:
        by_res.setdefault(b.resolution, []).append(b)
    for res, group in by_res.items():
        group = sorted(group, key=lambda b: b.frame_lo)
        for a, b in zip(group, group[1:]):
            if b.frame_lo <= a.frame_hi:
                raise ValueError(f"overlapping buckets at {res}: {a.label} and {b.label}")


def assign_bucket(frames: int, height: int, width: int, buckets: Sequence[Bucket]) -> Optional[Bucket]:
    """Bucket for a sample, or None when no frame range fits.

    The sample's resolution class is the bucket resolution whose square area is
    closest to ``height * width``, so non-square aspect ratios share a class.
    """
    check_buckets(buckets)
    if not buckets:
        return None
    side = math.sqrt(height * width)
    resolutions = sorted({b.resolution for b in buckets}, key=resolution_px)
    res = min(resolutions, key=lambda r: (abs(resolution_px(r) - side), resolution_px(r)))
    for b in buckets:
        if b.resolution == res and b.contains(frames):
            return b
    return None


def plan_batches(samples: Sequence[dict], buckets: Sequence[Bucket], seed: int = 0) -> tuple[list[dict], list[dict]]:
    """Group samples into per-bucket batches, shuffled per bucket, then interleaved round-robin.

    ``samples`` need keys id, frames, height, width. Returns (batches, rejected).
    """
    rng = np.random.default_rng(seed)
    members: dict[str, list[str]] = {}
    order: list[Bucket] = []
    rejected = []
    for s in samples:
        b = assign_bucket(int(s["frames"]), int(s["height"]), int(s["width"]), buckets)
        if b is None:
            rejected.append({"id": s["id"], "reason": "no bucket"})
            continue
        if b.label not in members:
            members[b.label] = []
            order.append(b)
        members[b.label].append(s["id"])
    queues = []
    for b in sorted(order, key=lambda b: (resolution_px(b.resolution), b.frame_lo)):
        ids = list(members[b.label])
        rng.shuffle(ids)
        queues.append([(b, ids[i : i + b.batch_size]) for i in range(0, len(ids), b.batch_size)])
    batches = []
    while any(queues):
        for q in queues:
            if q:
                b, ids = q.pop(0)
                batches.append({"index": len(batches), "bucket": b.label, "resolution": b.resolution,
                                "token_cap": b.token_cap, "batch_size": b.batch_size, "cp": b.cp, "ids": ids})
    return batches, rejected


# --------------------------------------------------------------- batch search


class CostModel(Protocol):
    memory_cap: float

    def memory(self, tokens: float, batch: int) -> float: ...
    def step_time(self, tokens: float, batch: int) -> float: ...
    def encode_forward_time(self, tokens: float, batch: int) -> float: ...
    def backward_time(self, tokens: float, batch: int) -> float: ...


@dataclass
class LinearCostModel:
    """Affine-in-batch model; attention makes per-sample cost quadratic in tokens when ``quad`` > 0."""

    memory_cap: float
    mem_fixed: float = 0.0
    mem_per_token: float = 1.0
    enc_per_token: float = 1.0
    fwd_per_token: float = 1.0
    bwd_per_token: float = 2.0
    quad: float = 0.0
    overhead: float = 0.0

    def _work(self, tokens, per_token):
        return per_token * tokens + self.quad * tokens * tokens

    def memory(self, tokens, batch):
        return self.mem_fixed + batch * self.mem_per_token * tokens

    def encode_forward_time(self, tokens, batch):
        return self.overhead + batch * (self._work(tokens, self.enc_per_token) + self._work(tokens, self.fwd_per_token))

    def backward_time(self, tokens, batch):
        return self.overhead + batch * self._work(tokens, self.bwd_per_token)

    def step_time(self, tokens, batch):
        return self.encode_forward_time(tokens, batch) + self.backward_time(tokens, batch)


def _largest_true(pred: Callable[[int], bool], hi: int) -> int:
    """Largest b in [1, hi] with pred(b), for predicates true on a prefix; 0 if none."""
    if not pred(1):
        return 0
    lo, hi_ = 1, hi
    while lo < hi_:
        mid = (lo + hi_ + 1) // 2
        if pred(mid):
            lo = mid
        else:
            hi_ = mid - 1
    return lo


@dataclass
class BatchSearchResult:
    tokens: list[float]
    batch_sizes: list[int]
    reference_index: int
    binding: list[str] = field(default_factory=list)


def search_batch_sizes(configs: Sequence[float], model: CostModel, max_batch: int = 512,
                       cp: int = 1) -> BatchSearchResult:
    """Three-step search over token counts (one entry per configuration).

    1. The highest-token configuration gets the largest batch that fits in memory.
    2. Every other configuration gets the largest batch that fits in memory and whose
       step time does not exceed the reference step time.
    3. Its encode+forward time and backward time must also stay within the reference's.

    With context parallelism ``cp`` each device sees ``tokens / cp`` tokens.
    """
    if not configs:
        raise ValueError("need at least one configuration")
    if cp < 1:
        raise ValueError("cp degree must be >= 1")
    tokens = [float(c) / cp for c in configs]
    ref = int(np.argmax(tokens))
    rt = tokens[ref]
    bs_ref = _largest_true(lambda b: model.memory(rt, b) <= model.memory_cap, max_batch)
    if bs_ref == 0:
        raise ValueError(f"reference configuration ({rt:g} tokens) does not fit in memory at batch size 1")
    limits = {
        "time": model.step_time(rt, bs_ref),
        "encode_forward": model.encode_forward_time(rt, bs_ref),
        "backward": model.backward_time(rt, bs_ref),
    }
    checks = {
        "memory": lambda c, b: model.memory(c, b) <= model.memory_cap,
        "time": lambda c, b: model.step_time(c, b) <= limits["time"],
        "encode_forward": lambda c, b: model.encode_forward_time(c, b) <= limits["encode_forward"],
        "backward": lambda c, b: model.backward_time(c, b) <= limits["backward"],
    }
    sizes, binding = [], []
    for i, c in enumerate(tokens):
        if i == ref:
            sizes.append(bs_ref)
            binding.append("memory" if bs_ref < max_batch else "max_batch")
            continue
        per = {k: _largest_true(lambda b, f=f: f(c, b), max_batch) for k, f in checks.items()}
        best = min(per.values())
        if best == 0:
            raise ValueError(f"configuration {c:g} tokens infeasible at batch size 1")
        sizes.append(best)
        binding.append(min(per, key=lambda k: (per[k], list(checks).index(k))) if best < max_batch else "max_batch")
    return BatchSearchResult(tokens, sizes, ref, binding)


# ----------------------------------------------------------------- cost model


@dataclass(frozen=True)
class StageSpec:
    name: str
    dataset: str
    cp: int
    iterations: int
    gpus: int
    gpu_days: float
    price_per_gpu_hour: float = 2.0
    wall_days: Optional[float] = None

    def __post_init__(self):
        if min(self.cp, self.iterations, self.gpus) < 1 or self.gpu_days <= 0 or self.price_per_gpu_hour <= 0:
            raise ValueError(f"stage {self.name!r}: all numeric fields must be positive")
        if self.wall_days is not None and not math.isclose(self.gpus * self.wall_days, self.gpu_days):
            raise ValueError(f"stage {self.name!r}: {self.gpus} GPUs x {self.wall_days} days != {self.gpu_days} GPU-days")


REFERENCE_STAGES = [
    StageSpec("256px T2V", "70M", 1, 85_000, 224, 2240, wall_days=10),
    StageSpec("256px T/I2V", "10M", 1, 13_000, 192, 384, wall_days=2),
    StageSpec("768px T/I2V", "5M", 4, 13_000, 192, 1536, wall_days=8),
]


def stage_cost(stage: StageSpec) -> float:
    return stage.gpu_days * 24 * stage.price_per_gpu_hour


def format_kusd(usd: float) -> str:
    """Dollar amount in thousands, truncated to 0.1k (107,520 -> '$107.5k', 199,680 -> '$199.6k')."""
    k = (Decimal(str(usd)) / 1000).quantize(Decimal("0.1"), rounding=ROUND_DOWN)
    return f"${k}k"


def cost_table(stages: Iterable[StageSpec]) -> list[dict]:
    rows = []
    for s in stages:
        usd = stage_cost(s)
        rows.append({"stage": s.name, "dataset": s.dataset, "cp": s.cp, "iterations": s.iterations,
                     "gpus": s.gpus, "gpu_days": s.gpu_days, "usd": usd, "usd_k": format_kusd(usd)})
    total = sum(r["usd"] for r in rows)
    rows.append({"stage": "Total", "dataset": "", "cp": "", "iterations": "", "gpus": "",
                 "gpu_days": sum(r["gpu_days"] for r in rows), "usd": total, "usd_k": format_kusd(total)})
    return rows
