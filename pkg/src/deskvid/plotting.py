"""Report figures. Everything renders to PNG files through the Agg backend with fixed metadata."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no Software/date keys so reruns are byte-identical
    fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def _bar_hist(ax, edges, counts, title, xlabel):
    labels = [f"{a:g}" if not isinstance(a, str) else a for a in edges[:-1]]
    ax.bar(range(len(counts)), counts, color="#4c72b0", width=0.85)
    ax.set_xticks(range(len(counts)))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("clips")


def stats_figure(report: dict, path) -> Path:
    """Four-panel histogram figure for a stats report."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(2, 2, figsize=(8, 6), constrained_layout=True)
        _bar_hist(axes[0, 0], report["aesthetic"]["edges"], report["aesthetic"]["counts"], "Aesthetic score", "score (bin start)")
        _bar_hist(axes[0, 1], report["duration"]["edges"], report["duration"]["counts"], "Duration", "seconds (bin start)")
        _bar_hist(axes[1, 0], report["aspect"]["edges"], report["aspect"]["counts"], "Aspect ratio (h/w)", "ratio (bin start)")
        _bar_hist(axes[1, 1], report["caption_words"]["edges"], report["caption_words"]["counts"], "Caption length", "words (bin start)")
        return _save(fig, path)


def cost_figure(rows: Sequence[dict], path) -> Path:
    stages = [r for r in rows if r["stage"] != "Total"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
        ks = [r["usd"] / 1000 for r in stages]
        ax.bar([r["stage"] for r in stages], ks, color="#55a868")
        for i, r in enumerate(stages):
            ax.annotate(r["usd_k"], (i, ks[i]), ha="center", va="bottom", fontsize=8)
        ax.set_ylabel("cost (thousand USD)")
        ax.set_title(f"Training cost per stage, total {rows[-1]['usd_k']}")
        return _save(fig, path)


def guidance_figure(grid: np.ndarray, path, title: str = "Image guidance scale") -> Path:
    """Heatmap of effective image guidance, steps by latent frames."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
        im = ax.imshow(grid.T, aspect="auto", origin="lower", cmap="viridis",
                       extent=(0.5, grid.shape[0] + 0.5, -0.5, grid.shape[1] - 0.5))
        ax.grid(False)
        fig.colorbar(im, ax=ax, label="scale")
        ax.set_xlabel("denoising step")
        ax.set_ylabel("latent frame")
        ax.set_title(title)
        return _save(fig, path)


def loss_figure(losses: Sequence[float], path, window: int = 20) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
        ax.plot(np.arange(1, len(losses) + 1), losses, color="#c0c0c0", lw=0.8, label="batch")
        if len(losses) >= window:
            smooth = np.convolve(losses, np.ones(window) / window, mode="valid")
            ax.plot(np.arange(window, len(losses) + 1), smooth, color="#c44e52", lw=1.5, label=f"mean of {window}")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("flow-matching loss")
        ax.legend(frameon=False)
        return _save(fig, path)


def batch_size_figure(tokens: Sequence[float], sizes: Sequence[int], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
        ax.plot(tokens, sizes, "o-", color="#8172b2")
        ax.set_xlabel("tokens per sample")
        ax.set_ylabel("batch size")
        ax.set_title("Searched batch size per bucket")
        return _save(fig, path)


def trace_figure(trace: Sequence[dict], path) -> Path:
    """Candidate totals at each injection step with the chosen one marked."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(constrained_layout=True)
        for i, r in enumerate(trace):
            totals = r["totals"]
            ax.scatter([i] * len(totals), totals, color="#999999", s=14)
            ax.scatter([i], [totals[r["chosen"]]], color="#dd8452", s=40, marker="*")
        ax.set_xticks(range(len(trace)))
        ax.set_xticklabels([f"s{r['seed']}:{r['step']}" for r in trace], fontsize=7)
        ax.set_xlabel("seed:step")
        ax.set_ylabel("verifier total")
        ax.set_title("Candidate scores per decision")
        return _save(fig, path)


def frames_figure(video: np.ndarray, path, title: str = "") -> Path:
    """Strip of frames from a (C, T, H, W) video in [-1, 1]."""
    v = np.clip((np.asarray(video).mean(axis=0) + 1) / 2, 0, 1)
    t = v.shape[0]
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, t, figsize=(1.2 * t, 1.6), constrained_layout=True, squeeze=False)
        for i, ax in enumerate(axes[0]):
            ax.imshow(v[i], cmap="gray", vmin=0, vmax=1, interpolation="nearest")
            ax.set_axis_off()
            ax.set_title(str(i), fontsize=7)
        if title:
            fig.suptitle(title, fontsize=9)
        return _save(fig, path)
