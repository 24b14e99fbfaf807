"""Seeded synthetic clip corpus with planted defects and known ground truth.

Each clip is a textured background with a drifting square. Defective clips get one
planted fault: a metadata fault caught at admission, a hard fault removed by tier 1,
or a marginal fault that survives tier 1 but is removed by tier 2 or tier 3.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .datapipe import write_clip

SIZE = 32
FPS = 16.0
FRAMES = 48

# defect kind -> tier that removes it (0 = admission, -1 = never; "cut" is clean footage with a scene change)
DEFECTS = {
    "short": 0, "low_bpp": 0, "low_fps": 0, "aspect": 0, "profile": 0,
    "flat": 1, "static": 1, "wild": 1, "blur": 1, "text": 1, "jitter": 1,
    "flat_mid": 2, "slow": 2, "blur_mid": 2, "text_mid": 2, "jitter_mid": 2,
    "flat_low": 3, "crawl": 3, "blur_low": 3, "text_low": 3, "jitter_low": 3,
    "cut": -1,
}
WORDS = ("a small square drifts across a textured gray field under soft light while the camera "
         "holds still and the background shows fine grain with subtle color variation").split()


@dataclass
class SynthClip:
    id: str
    defect: str
    removed_at: int  # 0 admission, k tier k, -1 never


def texture(rng: np.random.Generator, h: int, w: int, levels: int = 0) -> np.ndarray:
    base = gaussian_filter(rng.normal(0, 1, (h, w)), 0.7, mode="wrap")
    base = 128 + 40 * base / base.std()
    if levels:
        edges = np.quantile(base, np.linspace(0, 1, levels + 1)[1:-1])
        base = 40 + np.digitize(base, edges) * (176 / max(levels - 1, 1))
    return base


def render(rng: np.random.Generator, defect: str = "", frames: int = FRAMES, h: int = SIZE, w: int = SIZE) -> np.ndarray:
    """(T, H, W, 3) uint8 clip for one defect kind ('' for a clean clip)."""
    levels = {"flat": 2, "flat_mid": 5, "flat_low": 12}.get(defect, 0)
    blur = {"blur": 2.5, "blur_mid": 1.2, "blur_low": 0.8}.get(defect, 0.0)
    speed = {"static": 0, "slow": 0.35, "crawl": 0.6}.get(defect, 1.0)
    bg = texture(rng, h, w, levels)
    dy, dx = [(0, 1), (1, 0), (0, -1), (-1, 0)][rng.integers(4)]
    y0, x0 = rng.integers(h), rng.integers(w)
    side = max(2, round(6 * h * w / 1024))  # keeps the moving area fraction fixed
    clip = np.empty((frames, h, w))
    for f in range(frames):
        img = bg.copy()
        if speed:
            step = int(np.floor(speed * f))
            ys = (y0 + dy * step + np.arange(side)) % h
            xs = (x0 + dx * step + np.arange(side)) % w
            img[np.ix_(ys, xs)] = 235.0
        if defect == "wild":
            img = 128 + 45 * rng.normal(0, 1, (h, w))
        clip[f] = gaussian_filter(img, blur, mode="wrap") if blur else img
    text_tiles = {"text": (3, 3), "text_mid": (2, 1), "text_low": (1, 1)}.get(defect)
    if text_tiles:
        th, tw = text_tiles[0] * 8, text_tiles[1] * 8
        stripes = np.where(np.arange(tw) % 2 == 0, 20.0, 235.0)
        clip[:, :th, :tw] = stripes[None, None, :]
    if defect == "jitter":
        for f in range(1, frames):
            clip[f] = np.roll(clip[f], tuple(rng.integers(-3, 4, size=2)), axis=(0, 1))
    period = {"jitter_mid": 2, "jitter_low": 8}.get(defect)
    if period:
        # one-pixel camera bump that toggles every ``period`` frames
        for f in range(frames):
            clip[f] = np.roll(clip[f], (f // period) % 2, axis=1)
    if defect == "cut":
        # hard scene change two seconds before the end
        clip[frames - int(2 * FPS):] = np.clip(clip[frames - int(2 * FPS):] - 100, 0, 255)
    tint = np.array([1.0, 0.97, 0.92])
    return np.clip(np.rint(clip[..., None] * tint), 0, 255).astype(np.uint8)


def caption(rng: np.random.Generator) -> str:
    n = int(rng.choice([8, 20, 40, 60, 80, 120]))
    words = [WORDS[i] for i in rng.integers(len(WORDS), size=n)]
    return " ".join(words).capitalize() + "."


def make_corpus(out_dir, n_clips: int = 60, seed: int = 0) -> list[SynthClip]:
    """Write clips plus ``metadata.jsonl`` and ``ground_truth.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    kinds = list(DEFECTS) + [""] * max(0, n_clips - len(DEFECTS))
    kinds = kinds[:n_clips]
    order = rng.permutation(len(kinds))
    clips, meta_lines = [], []
    for i, k in enumerate(order):
        defect = kinds[k]
        cid = f"clip{i:03d}"
        frames, h, w, fps = FRAMES, SIZE, SIZE, FPS
        if defect == "short":
            frames = 24
        if defect == "aspect":
            h, w = 8, 40
        if defect == "low_fps":
            fps = 12.0
        if not defect:
            # clean clips vary in length and shape so the stats report has spread
            frames = int(rng.choice([48, 80, 112]))
            h, w = [(32, 32), (24, 40), (40, 24), (32, 48)][rng.integers(4)]
        if defect == "cut":
            frames = 192
        data = render(rng, defect, frames, h, w)
        write_clip(out / f"{cid}.dvc", data, fps)
        meta_lines.append({
            "id": cid, "path": f"{cid}.dvc", "caption": caption(rng), "fps": fps,
            "codec_profile": "Constrained Baseline" if defect == "profile" else "High",
            "bpp": 0.01 if defect == "low_bpp" else round(float(rng.uniform(0.05, 0.3)), 4),
        })
        clips.append(SynthClip(cid, defect, DEFECTS.get(defect, -1)))
    with open(out / "metadata.jsonl", "w") as f:
        for m in meta_lines:
            f.write(json.dumps(m, sort_keys=True) + "\n")
    truth = {c.id: {"defect": c.defect, "removed_at": c.removed_at} for c in clips}
    (out / "ground_truth.json").write_text(json.dumps(truth, indent=1, sort_keys=True) + "\n")
    return clips
