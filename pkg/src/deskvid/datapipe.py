"""Video curation: admission gates, shot segmentation, five clip scores, tiered filtering and dataset stats.

Clips live in a raw container: a 24-byte little-endian header (magic ``b"DVC1"``,
T, H, W, C as uint32, fps as float32) followed by uint8 pixels stored planar as
(T, C, H, W). Metadata is JSON lines with id, path, caption, fps, codec_profile
and bpp per clip.
"""

from __future__ import annotations

import json
import math
import re
import struct
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

MAGIC = b"DVC1"
HEADER = struct.Struct("<4s4If")
LUMA = np.array([0.299, 0.587, 0.114])
SCORE_NAMES = ("aesthetic", "motion", "blur", "ocr", "jitter")


# ------------------------------------------------------------------ container


def write_clip(path, frames: np.ndarray, fps: float) -> None:
    """Write (T, H, W, C) uint8 frames."""
    frames = np.asarray(frames)
    if frames.dtype != np.uint8 or frames.ndim != 4:
        raise ValueError(f"frames must be uint8 (T, H, W, C), got {frames.dtype} {frames.shape}")
    t, h, w, c = frames.shape
    with open(path, "wb") as f:
        f.write(HEADER.pack(MAGIC, t, h, w, c, fps))
        f.write(np.ascontiguousarray(frames.transpose(0, 3, 1, 2)).tobytes())


def read_clip(path) -> tuple[np.ndarray, float]:
    """Returns (T, H, W, C) uint8 frames and the stored frame rate."""
    raw = Path(path).read_bytes()
    if len(raw) < HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, t, h, w, c, fps = HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = np.frombuffer(raw, dtype=np.uint8, offset=HEADER.size)
    if body.size != t * h * w * c:
        raise ValueError(f"{path}: expected {t * h * w * c} pixel bytes, found {body.size}")
    return body.reshape(t, c, h, w).transpose(0, 2, 3, 1), float(fps)


def read_metadata(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


# --------------------------------------------------------------------- config


@dataclass(frozen=True)
class TierThresholds:
    aesthetic_min: float
    motion_min: float
    motion_max: float
    blur_min: float  # Laplacian variance; lower means blurrier
    ocr_max: float  # text area fraction
    jitter_max: float  # mean global shift in pixels


@dataclass(frozen=True)
class FilterConfig:
    tiers: tuple[TierThresholds, ...] = (
        TierThresholds(2.5, 0.15, 30.0, 50.0, 0.30, 1.5),
        TierThresholds(4.0, 0.55, 25.0, 400.0, 0.10, 0.25),
        TierThresholds(6.0, 0.90, 20.0, 2500.0, 0.03, 0.05),
    )
    min_duration: float = 2.0
    min_bpp: float = 0.02
    min_fps: float = 16.0
    aspect_range: tuple[float, float] = (1 / 3, 3.0)
    banned_profiles: tuple[str, ...] = ("Constrained Baseline",)
    max_clip_seconds: float = 8.0
    min_clip_seconds: float = 2.0
    fps_cap: float = 30.0
    max_long_side: int = 1080
    scene_threshold: float = 0.3
    blur_frames: int = 5
    ocr_confidence: float = 0.7

    def __post_init__(self):
        if not self.tiers:
            raise ValueError("need at least one tier")
        for a, b in zip(self.tiers, self.tiers[1:]):
            if not (b.aesthetic_min >= a.aesthetic_min and b.motion_min >= a.motion_min
                    and b.motion_max <= a.motion_max and b.blur_min >= a.blur_min
                    and b.ocr_max <= a.ocr_max and b.jitter_max <= a.jitter_max):
                raise ValueError("tiers must be ordered loose to strict")

    @classmethod
    def from_dict(cls, d: dict) -> "FilterConfig":
        d = dict(d)
        if "tiers" in d:
            d["tiers"] = tuple(TierThresholds(**t) for t in d["tiers"])
        if "aspect_range" in d:
            d["aspect_range"] = tuple(d["aspect_range"])
        if "banned_profiles" in d:
            d["banned_profiles"] = tuple(d["banned_profiles"])
        return cls(**d)


@dataclass
class ClipRecord:
    id: str
    source_id: str
    duration: float
    fps: float
    width: int
    height: int
    bpp: float
    codec_profile: str
    caption: str
    start_frame: int = 0
    aesthetic: Optional[float] = None
    motion: Optional[float] = None
    blur: Optional[float] = None
    blur_votes: Optional[int] = None
    ocr: Optional[float] = None
    jitter: Optional[float] = None
    tier: int = 0
    reason: str = ""

    @property
    def aspect(self) -> float:
        return self.height / self.width

    @property
    def scored(self) -> bool:
        return all(getattr(self, n) is not None for n in SCORE_NAMES)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# -------------------------------------------------------------- preprocessing

ADMIT_FIELDS = ("duration", "bpp", "fps", "width", "height", "codec_profile")


def preprocess_admit(meta: dict, config: FilterConfig = FilterConfig()) -> tuple[bool, str]:
    """(admitted, reason); the reason names the first violated rule, empty when admitted."""
    missing = [k for k in ADMIT_FIELDS if meta.get(k) is None]
    if missing:
        raise KeyError(f"metadata missing fields: {missing}")
    if meta["duration"] < config.min_duration:
        return False, "duration"
    if meta["bpp"] < config.min_bpp:
        return False, "bpp"
    if meta["fps"] < config.min_fps:
        return False, "fps"
    aspect = meta["height"] / meta["width"]
    lo, hi = config.aspect_range
    if not lo <= aspect <= hi:
        return False, "aspect"
    if meta["codec_profile"] in config.banned_profiles:
        return False, "profile"
    return True, ""


def conform(frames: np.ndarray, fps: float, config: FilterConfig = FilterConfig()) -> tuple[np.ndarray, float]:
    """Cap the frame rate by dropping frames and the long side by nearest-neighbour resize."""
    if fps > config.fps_cap:
        n = int(math.floor(len(frames) * config.fps_cap / fps))
        idx = np.minimum((np.arange(max(n, 1)) * fps / config.fps_cap).astype(int), len(frames) - 1)
        frames, fps = frames[idx], config.fps_cap
    h, w = frames.shape[1:3]
    if max(h, w) > config.max_long_side:
        s = config.max_long_side / max(h, w)
        nh, nw = max(1, round(h * s)), max(1, round(w * s))
        rows = (np.arange(nh) * h // nh)
        cols = (np.arange(nw) * w // nw)
        frames = frames[:, rows][:, :, cols]
    return frames, fps


def luma(frames: np.ndarray) -> np.ndarray:
    """Float luma in 8-bit units; accepts (..., H, W, 3) or (..., H, W, 1)."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[-1] == 1:
        return frames[..., 0]
    return frames @ LUMA


def segment_clips(frames: np.ndarray, fps: float, threshold: float = 0.3, max_len: float = 8.0,
                  min_len: float = 2.0) -> list[tuple[int, int]]:
    """Half-open frame spans: cut at scene changes, chop into ``max_len`` pieces, drop pieces under ``min_len``.

    A scene change precedes frame i when mean |Y_i - Y_{i-1}| / 255 exceeds ``threshold``.
    """
    n = len(frames)
    if n == 0:
        return []
    y = luma(frames)
    diffs = np.abs(np.diff(y, axis=0)).mean(axis=(1, 2)) / 255.0 if n > 1 else np.zeros(0)
    cuts = [0] + [i + 1 for i in np.flatnonzero(diffs > threshold)] + [n]
    max_frames = int(round(max_len * fps))
    min_frames = int(round(min_len * fps))
    spans = []
    for a, b in zip(cuts, cuts[1:]):
        for s in range(a, b, max_frames):
            e = min(s + max_frames, b)
            if e - s >= min_frames:
                spans.append((s, e))
    return spans


# --------------------------------------------------------------------- scores


def aesthetic_proxy(frame: np.ndarray) -> float:
    """Luma histogram entropy rescaled to [0, 10]."""
    y = np.clip(np.rint(luma(frame)), 0, 255).astype(np.int64)
    p = np.bincount(y.ravel(), minlength=256) / y.size
    p = p[p > 0]
    return float(10.0 * -(p * np.log2(p)).sum() / 8.0)


def laplacian(y: np.ndarray) -> np.ndarray:
    """3x3 [[0,1,0],[1,-4,1],[0,1,0]] response over the valid interior."""
    return y[:-2, 1:-1] + y[2:, 1:-1] + y[1:-1, :-2] + y[1:-1, 2:] - 4 * y[1:-1, 1:-1]


def laplacian_variance(frame: np.ndarray) -> float:
    y = luma(frame)
    if min(y.shape) < 3:
        return 0.0
    return float(laplacian(y).var())


def sample_indices(n_frames: int, count: int) -> np.ndarray:
    """``count`` evenly spaced indices; short clips repeat their last frame."""
    return np.rint(np.linspace(0, n_frames - 1, count)).astype(int)


def blur_score(frames: np.ndarray, threshold: float, count: int = 5) -> tuple[float, int]:
    """(median Laplacian variance over the sampled frames, number of frames voting blurry)."""
    v = np.array([laplacian_variance(frames[i]) for i in sample_indices(len(frames), count)])
    return float(np.median(v)), int((v < threshold).sum())


def motion_score(frames: np.ndarray) -> float:
    """Mean absolute luma change between consecutive frames, in 8-bit units."""
    if len(frames) < 2:
        return 0.0
    return float(np.abs(np.diff(luma(frames), axis=0)).mean())


def global_shift(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """Integer translation of luma image ``b`` relative to ``a`` by phase correlation."""
    fa, fb = np.fft.fft2(a - a.mean()), np.fft.fft2(b - b.mean())
    cross = fb * np.conj(fa)
    mag = np.abs(cross)
    if mag.max() < 1e-9:
        return 0, 0
    r = np.fft.ifft2(cross / np.sqrt(np.maximum(mag, 1e-12))).real
    dy, dx = np.unravel_index(int(np.argmax(r)), r.shape)
    h, w = r.shape
    return int(dy - h if dy > h // 2 else dy), int(dx - w if dx > w // 2 else dx)


def jitter_score(frames: np.ndarray) -> float:
    """Mean magnitude of the frame-to-frame global shift."""
    if len(frames) < 2:
        return 0.0
    y = luma(frames)
    return float(np.mean([math.hypot(*global_shift(y[i], y[i + 1])) for i in range(len(y) - 1)]))


Box = tuple[int, int, int, int]  # y0, x0, y1, x1


def tile_text_detector(frame: np.ndarray, tile: int = 8, contrast: float = 96.0) -> list[tuple[Box, float]]:
    """Crude text finder: tiles dense in strong horizontal luma edges.

    Confidence is the fraction of horizontally adjacent pixel pairs in the tile whose
    luma differs by at least ``contrast``.
    """
    y = luma(frame)
    edges = np.abs(np.diff(y, axis=1)) >= contrast
    out = []
    h, w = y.shape
    for r in range(0, h - tile + 1, tile):
        for c in range(0, w - tile + 1, tile):
            conf = float(edges[r : r + tile, c : c + tile - 1].mean())
            if conf > 0:
                out.append(((r, c, r + tile, c + tile), conf))
    return out


def text_area_fraction(detections: Iterable[tuple[Box, float]], height: int, width: int,
                       min_confidence: float = 0.7) -> float:
    """Union area of confident boxes over the frame area."""
    mask = np.zeros((height, width), dtype=bool)
    for (y0, x0, y1, x1), conf in detections:
        if conf > min_confidence:
            mask[max(y0, 0) : y1, max(x0, 0) : x1] = True
    return float(mask.mean())


@dataclass
class Scorers:
    """Per-frame scorers; swap in real models (CLIP aesthetic head, an OCR net) here."""

    aesthetic: Callable[[np.ndarray], float] = aesthetic_proxy
    text_detector: Callable[[np.ndarray], list] = tile_text_detector
    motion: Callable[[np.ndarray], float] = motion_score
    jitter: Callable[[np.ndarray], float] = jitter_score


def key_frames(n: int) -> list[int]:
    return sorted({0, (n - 1) // 2, n - 1})


def score_clip(record: ClipRecord, frames: np.ndarray, config: FilterConfig = FilterConfig(),
               scorers: Scorers = Scorers()) -> ClipRecord:
    """Fill the five scores of ``record`` in place and return it."""
    if len(frames) == 0:
        raise ValueError("cannot score an empty clip")
    h, w = frames.shape[1:3]
    kf = key_frames(len(frames))
    record.aesthetic = float(np.mean([scorers.aesthetic(frames[i]) for i in kf]))
    record.motion = float(scorers.motion(frames))
    # the vote uses the loosest threshold; stricter tiers compare the median directly
    record.blur, record.blur_votes = blur_score(frames, config.tiers[0].blur_min, config.blur_frames)
    record.ocr = max(text_area_fraction(scorers.text_detector(frames[i]), h, w, config.ocr_confidence) for i in kf)
    record.jitter = float(scorers.jitter(frames))
    return record


def tier_violation(record: ClipRecord, t: TierThresholds) -> str:
    """Name of the first score outside the tier's bounds, or '' if it passes."""
    if not record.scored:
        raise ValueError(f"record {record.id} is not scored")
    if record.aesthetic < t.aesthetic_min:
        return "aesthetic"
    if not t.motion_min <= record.motion <= t.motion_max:
        return "motion"
    if record.blur < t.blur_min:
        return "blur"
    if record.ocr > t.ocr_max:
        return "ocr"
    if record.jitter > t.jitter_max:
        return "jitter"
    return ""


def filter_tier(records: Sequence[ClipRecord], config: FilterConfig, tier: int) -> tuple[list[ClipRecord], list[tuple[str, str]]]:
    """(kept records, [(id, reason)] removed) for the 1-based ``tier``."""
    if not 1 <= tier <= len(config.tiers):
        raise IndexError(f"tier {tier} outside [1, {len(config.tiers)}]")
    kept, removed = [], []
    for r in records:
        reason = tier_violation(r, config.tiers[tier - 1])
        if reason:
            removed.append((r.id, reason))
        else:
            kept.append(r)
    return kept, removed


def highest_tier(record: ClipRecord, config: FilterConfig) -> tuple[int, str]:
    """Strictest tier passed (0 if none) and the reason it fails the next one."""
    for k, t in enumerate(config.tiers):
        reason = tier_violation(record, t)
        if reason:
            return k, reason
    return len(config.tiers), ""


@dataclass
class CurationResult:
    records: list[ClipRecord]
    rejected: list[dict] = field(default_factory=list)

    def tier_ids(self, tier: int) -> list[str]:
        return [r.id for r in self.records if r.tier >= tier]


def curate(meta_path, config: FilterConfig = FilterConfig(), scorers: Scorers = Scorers()) -> CurationResult:
    """Admit, conform, segment and score every clip listed in the metadata file."""
    meta_path = Path(meta_path)
    records, rejected = [], []
    for meta in read_metadata(meta_path):
        clip_path = Path(meta["path"])
        if not clip_path.is_absolute():
            clip_path = meta_path.parent / clip_path
        frames, stored_fps = read_clip(clip_path)
        fps = float(meta.get("fps") or stored_fps)
        info = dict(meta, duration=len(frames) / fps, width=frames.shape[2], height=frames.shape[1], fps=fps)
        ok, reason = preprocess_admit(info, config)
        if not ok:
            rejected.append({"id": meta["id"], "reason": reason})
            continue
        frames, fps = conform(frames, fps, config)
        spans = segment_clips(frames, fps, config.scene_threshold, config.max_clip_seconds, config.min_clip_seconds)
        if not spans:
            rejected.append({"id": meta["id"], "reason": "segment"})
        for k, (a, b) in enumerate(spans):
            rec = ClipRecord(
                id=f"{meta['id']}-s{k}", source_id=meta["id"], duration=float((b - a) / fps), fps=fps,
                width=int(frames.shape[2]), height=int(frames.shape[1]), bpp=float(meta["bpp"]),
                codec_profile=meta["codec_profile"], caption=meta.get("caption", ""), start_frame=a,
            )
            score_clip(rec, frames[a:b], config, scorers)
            rec.tier, rec.reason = highest_tier(rec, config)
            records.append(rec)
    return CurationResult(records, rejected)


# ---------------------------------------------------------------------- stats

AESTHETIC_EDGES = np.arange(0.0, 10.5, 0.5)
DURATION_EDGES = np.array([2.0, 4.0, 6.0, 8.0])
ASPECT_EDGES = np.array([1 / 3, 0.5, 0.75, 1.0, 1.34, 2.0, 3.0])
WORD_EDGES = np.array([0, 25, 50, 75, 100, 150, 200, np.inf])
LONG_CAPTION_WORDS = 75


def tokenize(caption: str) -> list[str]:
    return re.sub(r"[^\w\s]", " ", caption.lower()).split()


def word_frequencies(captions: Iterable[str]) -> list[tuple[str, int]]:
    counts = Counter(w for c in captions for w in tokenize(c))
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))


def right_closed_histogram(values, edges) -> list[int]:
    """Counts over (e0, e1], (e1, e2], ... with the first bin also taking e0."""
    idx = np.searchsorted(edges, np.asarray(values, dtype=float), side="left") - 1
    idx = np.where(np.asarray(values) == edges[0], 0, idx)
    return [int((idx == i).sum()) for i in range(len(edges) - 1)]


def _hist(values, edges) -> list[int]:
    # numpy's last bin is closed, matching [6, 8] for durations
    return [int(c) for c in np.histogram(np.asarray(values, dtype=float), bins=edges)[0]]


def stats_report(records: Sequence[ClipRecord], top_words: int = 50) -> dict:
    """Histograms of aesthetic score, duration, aspect ratio and caption length, plus word counts."""
    if not records:
        raise ValueError("stats_report needs at least one record")
    aesthetic = [r.aesthetic for r in records if r.aesthetic is not None]
    words = [len(tokenize(r.caption)) for r in records]
    freq = word_frequencies(r.caption for r in records)
    return {
        "count": len(records),
        "aesthetic": {"edges": AESTHETIC_EDGES.tolist(), "counts": _hist(aesthetic, AESTHETIC_EDGES)},
        "duration": {"edges": DURATION_EDGES.tolist(), "counts": _hist([r.duration for r in records], DURATION_EDGES)},
        "aspect": {"edges": ASPECT_EDGES.tolist(), "counts": _hist([r.aspect for r in records], ASPECT_EDGES)},
        "caption_words": {
            "edges": [float(e) if np.isfinite(e) else "inf" for e in WORD_EDGES],
            "counts": right_closed_histogram(words, WORD_EDGES),
            "fraction_over_75": sum(w > LONG_CAPTION_WORDS for w in words) / len(words),
        },
        "word_frequency": [[w, c] for w, c in freq[:top_words]],
        "vocabulary_size": len(freq),
    }
