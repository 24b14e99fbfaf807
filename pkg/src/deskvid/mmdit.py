"""Miniature dual-stream / single-stream diffusion transformer.

Token layout inside joint attention is ``[text tokens | video tokens]``. Text
tokens sit at rotary position (0, 0, 0); video tokens carry their
(t, h, w) patch-grid coordinates.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor


def default_rope_split(head_dim: int) -> tuple[int, int, int]:
    """Split ``head_dim`` about 2:3:3 over (t, h, w), every part even."""
    if head_dim % 2 or head_dim < 6:
        raise ValueError(f"head_dim must be even and >= 6, got {head_dim}")
    d_t = max(2, 2 * round(head_dim * 2 / 16))
    rest = head_dim - d_t
    d_h = 2 * math.ceil(rest / 4)
    d_w = rest - d_h
    if d_w < 2:
        d_t, d_h, d_w = 2, 2, head_dim - 4
    return d_t, d_h, d_w


@dataclass(frozen=True)
class ModelConfig:
    double_layers: int = 1
    single_layers: int = 1
    dim: int = 32
    ffn_dim: int = 64
    heads: int = 4
    patch: tuple[int, int, int] = (1, 1, 1)
    in_channels: int = 4
    out_channels: int = 4
    text_dim: int = 32
    pooled_dim: Optional[int] = None
    time_freq_dim: int = 32
    max_text_tokens: int = 8
    rope_split: Optional[tuple[int, int, int]] = None
    rope_theta: float = 10000.0

    def __post_init__(self):
        if self.dim <= 0 or self.dim % 2:
            raise ValueError("dim must be a positive even integer")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")
        split = self.split
        if sum(split) != self.head_dim or any(s % 2 for s in split):
            raise ValueError(f"rope split {split} must be even parts summing to head_dim {self.head_dim}")
        if self.double_layers < 0 or self.single_layers < 0:
            raise ValueError("layer counts must be non-negative")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads

    @property
    def split(self) -> tuple[int, int, int]:
        return tuple(self.rope_split) if self.rope_split else default_rope_split(self.head_dim)

    @property
    def pooled(self) -> int:
        return self.pooled_dim or self.text_dim

    @property
    def patch_volume(self) -> int:
        return int(np.prod(self.patch))

    @property
    def in_patch_dim(self) -> int:
        return self.in_channels * self.patch_volume

    @property
    def out_patch_dim(self) -> int:
        return self.out_channels * self.patch_volume


# Appendix-scale reference: 19 double / 38 single blocks, width 3072, FFN 12288, 24 heads,
# patch 1x2x2 over the 16-channel HunyuanVideo latent with I2V channel concat (2k+1 = 33),
# T5-XXL token width 4096 and CLIP pooled width 768.
FULL_SIZE_CONFIG = ModelConfig(double_layers=19, single_layers=38, dim=3072, ffn_dim=12288, heads=24,
                           patch=(1, 2, 2), in_channels=33, out_channels=16, text_dim=4096,
                           pooled_dim=768, time_freq_dim=256)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, f = cfg.dim, cfg.ffn_dim
    s: dict[str, tuple[int, ...]] = {
        "img_in.w": (cfg.in_patch_dim, d), "img_in.b": (d,),
        "txt_in.w": (cfg.text_dim, d), "txt_in.b": (d,),
        "time_in.w1": (cfg.time_freq_dim, d), "time_in.b1": (d,),
        "time_in.w2": (d, d), "time_in.b2": (d,),
        "vec_in.w": (cfg.pooled, d), "vec_in.b": (d,),
        "txt_null": (1, cfg.text_dim),
    }
    for i in range(cfg.double_layers):
        for stream in ("img", "txt"):
            p = f"double{i}.{stream}"
            s.update({
                f"{p}.mod.w": (d, 6 * d), f"{p}.mod.b": (6 * d,),
                f"{p}.qkv.w": (d, 3 * d), f"{p}.qkv.b": (3 * d,),
                f"{p}.proj.w": (d, d), f"{p}.proj.b": (d,),
                f"{p}.fc1.w": (d, f), f"{p}.fc1.b": (f,),
                f"{p}.fc2.w": (f, d), f"{p}.fc2.b": (d,),
            })
    for i in range(cfg.single_layers):
        p = f"single{i}"
        s.update({
            f"{p}.mod.w": (d, 3 * d), f"{p}.mod.b": (3 * d,),
            f"{p}.lin1.w": (d, 3 * d + f), f"{p}.lin1.b": (3 * d + f,),
            f"{p}.lin2.w": (d + f, d), f"{p}.lin2.b": (d,),
        })
    s.update({
        "final.mod.w": (d, 2 * d), "final.mod.b": (2 * d,),
        "final.out.w": (d, cfg.out_patch_dim), "final.out.b": (cfg.out_patch_dim,),
    })
    return s


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count."""
    d, f, L_d, L_s = cfg.dim, cfg.ffn_dim, cfg.double_layers, cfg.single_layers
    embed = (cfg.in_patch_dim + 1) * d + (cfg.text_dim + 1) * d + (cfg.time_freq_dim + 1) * d \
        + (d + 1) * d + (cfg.pooled + 1) * d + cfg.text_dim
    per_stream = 6 * d * d + 6 * d + 3 * d * d + 3 * d + d * d + d + 2 * d * f + f + d
    per_single = 3 * d * d + 3 * d + d * (3 * d + f) + 3 * d + f + (d + f) * d + d
    final = 2 * d * d + 2 * d + (d + 1) * cfg.out_patch_dim
    return embed + L_d * 2 * per_stream + L_s * per_single + final


def init_weights(cfg: ModelConfig, seed: int = 0, zero_out: bool = True) -> dict[str, Tensor]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith(".b") or name.endswith(".b1") or name.endswith(".b2"):
            arr = np.zeros(shape)
        elif name == "txt_null":
            arr = rng.normal(0, 1 / math.sqrt(shape[1]), shape)
        elif name.startswith("final.out") and zero_out:
            arr = np.zeros(shape)
        else:
            gain = 0.5 if ".mod." in name else 1.0
            arr = rng.normal(0, gain / math.sqrt(shape[0]), shape)
        out[name] = Tensor(arr, requires_grad=True, name=name)
    return out


# ----------------------------------------------------------------- patchify


def patchify(latent, patch: Sequence[int]) -> tuple[Tensor, np.ndarray]:
    """(C, T, H, W) or (B, C, T, H, W) -> tokens (..., n, C*pt*ph*pw) and grid positions (n, 3)."""
    x = T.as_tensor(latent.tensor if hasattr(latent, "tensor") else latent)
    batched = x.ndim == 5
    if not batched:
        x = T.reshape(x, (1,) + x.shape)
    b, c, t, h, w = x.shape
    pt, ph, pw = patch
    if t % pt or h % ph or w % pw:
        raise ValueError(f"latent extents {(t, h, w)} not divisible by patch {tuple(patch)}")
    gt, gh, gw = t // pt, h // ph, w // pw
    y = T.reshape(x, (b, c, gt, pt, gh, ph, gw, pw))
    y = T.permute(y, (0, 2, 4, 6, 1, 3, 5, 7))
    y = T.reshape(y, (b, gt * gh * gw, c * pt * ph * pw))
    pos = np.stack(np.meshgrid(np.arange(gt), np.arange(gh), np.arange(gw), indexing="ij"), -1).reshape(-1, 3)
    if not batched:
        y = T.reshape(y, y.shape[1:])
    return y, pos


def unpatchify(tokens, patch: Sequence[int], grid: Sequence[int], channels: int) -> Tensor:
    """Inverse of :func:`patchify`; ``grid`` is the latent (T, H, W)."""
    x = T.as_tensor(tokens)
    batched = x.ndim == 3
    if not batched:
        x = T.reshape(x, (1,) + x.shape)
    b = x.shape[0]
    pt, ph, pw = patch
    t, h, w = grid
    gt, gh, gw = t // pt, h // ph, w // pw
    y = T.reshape(x, (b, gt, gh, gw, channels, pt, ph, pw))
    y = T.permute(y, (0, 4, 1, 5, 2, 6, 3, 7))
    y = T.reshape(y, (b, channels, t, h, w))
    return y if batched else T.reshape(y, y.shape[1:])


# --------------------------------------------------------------------- rope


def rope_angles(positions: np.ndarray, split: Sequence[int], theta: float = 10000.0) -> np.ndarray:
    """Per-token rotation angles (n, head_dim/2), one block of frequencies per axis."""
    positions = np.asarray(positions, dtype=np.float64)
    parts = []
    for axis, d in enumerate(split):
        freqs = theta ** (-np.arange(0, d, 2, dtype=np.float64) / d)
        parts.append(positions[:, axis : axis + 1] * freqs[None, :])
    return np.concatenate(parts, axis=1)


def _rotate(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    hd = x.shape[-1]
    pairs = T.reshape(x, x.shape[:-1] + (hd // 2, 2))
    a, b = T.split(pairs, [1, 1], axis=-1)
    rot = T.reshape(T.concat([T.scale(b, -1.0), a], axis=-1), x.shape)
    return T.add(T.mul(x, cos.astype(x.dtype)), T.mul(rot, sin.astype(x.dtype)))


def rope_tables(positions: np.ndarray, split: Sequence[int], theta: float = 10000.0):
    ang = np.repeat(rope_angles(positions, split, theta), 2, axis=1)
    return np.cos(ang), np.sin(ang)


def rope3d(x, positions: np.ndarray, split: Sequence[int], theta: float = 10000.0) -> Tensor:
    """Axial rotary embedding on a (..., n, head_dim) query/key tensor."""
    x = T.as_tensor(x)
    if sum(split) != x.shape[-1] or any(s % 2 for s in split):
        raise ValueError(f"rope split {tuple(split)} must be even and sum to head_dim {x.shape[-1]}")
    if len(positions) != x.shape[-2]:
        raise ValueError(f"{len(positions)} positions for {x.shape[-2]} tokens")
    cos, sin = rope_tables(positions, split, theta)
    return _rotate(x, cos, sin)


# -------------------------------------------------------------- text embedder


@dataclass
class TextEmbedding:
    tokens: np.ndarray
    pooled: np.ndarray
    is_null: bool = False
    words: tuple[str, ...] = ()


def _token_vector(token: str, dim: int) -> np.ndarray:
    seed = int.from_bytes(hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest(), "little")
    v = np.random.default_rng(seed).standard_normal(dim)
    return v / np.linalg.norm(v)


def toy_text_embed(caption: str, dim: int) -> TextEmbedding:
    """Deterministic caption embedding: whitespace tokens, one hashed unit vector per token.

    An empty caption yields ``is_null=True``; the model substitutes its learned null token.
    """
    words = tuple(caption.split())
    if not words:
        return TextEmbedding(np.zeros((1, dim)), np.zeros(dim), is_null=True)
    tokens = np.stack([_token_vector(w, dim) for w in words])
    return TextEmbedding(tokens, tokens.mean(axis=0), words=words)


# ------------------------------------------------------------------ forward


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64)) * 1000.0
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def _lin(x, w: Mapping[str, Tensor], prefix: str) -> Tensor:
    return T.add(T.matmul(x, w[prefix + ".w"]), w[prefix + ".b"])


def _modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    return T.add(T.mul(T.rms_norm(x), T.add(scale, 1.0)), shift)


def _heads(x: Tensor, heads: int) -> Tensor:
    b, n, d = x.shape
    return T.permute(T.reshape(x, (b, n, heads, d // heads)), (0, 2, 1, 3))


def _merge(x: Tensor) -> Tensor:
    b, h, n, hd = x.shape
    return T.reshape(T.permute(x, (0, 2, 1, 3)), (b, n, h * hd))


def _attention(q: Tensor, k: Tensor, v: Tensor, cos, sin) -> Tensor:
    q = _rotate(T.rms_norm(q), cos, sin)
    k = _rotate(T.rms_norm(k), cos, sin)
    scores = T.scale(T.matmul(q, T.permute(k, (0, 1, 3, 2))), 1.0 / math.sqrt(q.shape[-1]))
    return T.matmul(T.softmax(scores), v)


def model_forward(cfg: ModelConfig, w: Mapping[str, Tensor], x_tokens, positions: np.ndarray,
                  text_tokens, pooled, t) -> Tensor:
    """Velocity tokens (B, n, out_patch_dim) for video tokens (B, n, in_patch_dim)."""
    x = T.as_tensor(x_tokens)
    txt = T.as_tensor(text_tokens, like=x)
    pooled = T.as_tensor(pooled, like=x)
    if x.ndim != 3 or x.shape[-1] != cfg.in_patch_dim:
        raise ValueError(f"video tokens must be (B, n, {cfg.in_patch_dim}), got {x.shape}")
    if txt.ndim != 3 or txt.shape[-1] != cfg.text_dim or txt.shape[0] != x.shape[0]:
        raise ValueError(f"text tokens must be (B, m, {cfg.text_dim}), got {txt.shape}")
    if pooled.shape != (x.shape[0], cfg.pooled):
        raise ValueError(f"pooled text must be (B, {cfg.pooled}), got {pooled.shape}")
    if len(positions) != x.shape[1]:
        raise ValueError(f"{len(positions)} positions for {x.shape[1]} video tokens")
    b, n, _ = x.shape
    m = txt.shape[1]
    d, heads = cfg.dim, cfg.heads

    img = _lin(x, w, "img_in")
    tx = _lin(txt, w, "txt_in")
    temb = timestep_embedding(np.broadcast_to(np.asarray(t, dtype=np.float64), (b,)), cfg.time_freq_dim)
    temb = T.Tensor(temb, dtype=x.dtype)
    vec = T.add(T.matmul(T.silu(T.add(T.matmul(temb, w["time_in.w1"]), w["time_in.b1"])), w["time_in.w2"]),
                w["time_in.b2"])
    vec = T.add(vec, _lin(pooled, w, "vec_in"))
    svec = T.reshape(T.silu(vec), (b, 1, d))

    all_pos = np.concatenate([np.zeros((m, 3), dtype=np.int64), np.asarray(positions)], axis=0)
    cos, sin = rope_tables(all_pos, cfg.split, cfg.rope_theta)

    for i in range(cfg.double_layers):
        streams = {"txt": tx, "img": img}
        mods, qkvs = {}, {}
        for s, h in streams.items():
            p = f"double{i}.{s}"
            mods[s] = T.split(_lin(svec, w, p + ".mod"), [d] * 6, axis=-1)
            sh1, sc1 = mods[s][0], mods[s][1]
            q, k, v = T.split(_lin(_modulate(h, sh1, sc1), w, p + ".qkv"), [d, d, d], axis=-1)
            qkvs[s] = (_heads(q, heads), _heads(k, heads), _heads(v, heads))
        q = T.concat([qkvs["txt"][0], qkvs["img"][0]], axis=2)
        k = T.concat([qkvs["txt"][1], qkvs["img"][1]], axis=2)
        v = T.concat([qkvs["txt"][2], qkvs["img"][2]], axis=2)
        att_txt, att_img = T.split(_merge(_attention(q, k, v, cos, sin)), [m, n], axis=1)
        for s, att in (("txt", att_txt), ("img", att_img)):
            p = f"double{i}.{s}"
            sh1, sc1, g1, sh2, sc2, g2 = mods[s]
            h = T.add(streams[s], T.mul(g1, _lin(att, w, p + ".proj")))
            ff = _lin(T.gelu(_lin(_modulate(h, sh2, sc2), w, p + ".fc1")), w, p + ".fc2")
            streams[s] = T.add(h, T.mul(g2, ff))
        tx, img = streams["txt"], streams["img"]

    if cfg.single_layers:
        h = T.concat([tx, img], axis=1)
        for i in range(cfg.single_layers):
            p = f"single{i}"
            sh, sc, g = T.split(_lin(svec, w, p + ".mod"), [d, d, d], axis=-1)
            q, k, v, mlp = T.split(_lin(_modulate(h, sh, sc), w, p + ".lin1"), [d, d, d, cfg.ffn_dim], axis=-1)
            att = _merge(_attention(_heads(q, heads), _heads(k, heads), _heads(v, heads), cos, sin))
            out = _lin(T.concat([att, T.gelu(mlp)], axis=-1), w, p + ".lin2")
            h = T.add(h, T.mul(g, out))
        img = T.split(h, [m, n], axis=1)[1]

    sh, sc = T.split(_lin(svec, w, "final.mod"), [d, d], axis=-1)
    return _lin(_modulate(img, sh, sc), w, "final.out")


def text_batch(embeds: Sequence[TextEmbedding], weights: Mapping[str, Tensor], max_tokens: int):
    """Stack captions into (B, max_tokens, D) tokens and (B, D) pooled, padding with the null token."""
    null = weights["txt_null"]
    dim = null.shape[1]
    tok_rows, pooled_rows = [], []
    for e in embeds:
        k = 0 if e.is_null else min(len(e.tokens), max_tokens)
        parts = []
        if k:
            parts.append(T.Tensor(e.tokens[:k], dtype=null.dtype))
        if max_tokens - k:
            parts.append(T.mul(np.ones((max_tokens - k, 1), dtype=null.dtype), null))
        tok_rows.append(T.reshape(T.concat(parts, axis=0) if len(parts) > 1 else parts[0], (1, max_tokens, dim)))
        if e.is_null:
            pooled_rows.append(null)
        else:
            pooled_rows.append(T.Tensor(e.pooled[None, :], dtype=null.dtype))
    tokens = T.concat(tok_rows, axis=0) if len(tok_rows) > 1 else tok_rows[0]
    pooled = T.concat(pooled_rows, axis=0) if len(pooled_rows) > 1 else pooled_rows[0]
    return tokens, pooled


@dataclass
class MMDiT:
    """Config + weights with a latent-in / velocity-out convenience API."""

    config: ModelConfig
    weights: dict[str, Tensor] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if not self.weights:
            self.weights = init_weights(self.config, self.seed)

    def embed(self, caption: str) -> TextEmbedding:
        return toy_text_embed(caption, self.config.text_dim)

    def forward(self, latents, t, texts: Sequence[TextEmbedding]) -> Tensor:
        """``latents``: (B, C_in, T, H, W); returns velocity (B, C_out, T, H, W)."""
        cfg = self.config
        lat = T.as_tensor(latents)
        tokens, pos = patchify(lat, cfg.patch)
        txt, pooled = text_batch(texts, self.weights, cfg.max_text_tokens)
        out = model_forward(cfg, self.weights, tokens, pos, txt, pooled, t)
        return unpatchify(out, cfg.patch, lat.shape[2:], cfg.out_channels)

    def velocity(self, latent: np.ndarray, t: float, text: TextEmbedding) -> np.ndarray:
        """Single-sample numpy convenience wrapper (no graph kept)."""
        x = np.asarray(latent)[None]
        return self.forward(x, np.array([t]), [text]).data[0]
