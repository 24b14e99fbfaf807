"""Video DC-AE building blocks, the token-count model and the AE loss combiner.

Videos and latents are channel-first ``(c, t, h, w)``. The shortcut paths are
parameter-free space-time pixel (un)shuffles with channel averaging or
duplication; learned paths are pointwise channel mixes after the shuffle,
which is equivalent to a strided convolution whose kernel equals the factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class CompressionSpec:
    d_t: int = 4
    d_h: int = 32
    d_w: int = 32
    p_t: int = 1
    p_h: int = 1
    p_w: int = 1
    latent_channels: int = 128
    causal: bool = False

    def __post_init__(self):
        vals = (self.d_t, self.d_h, self.d_w, self.p_t, self.p_h, self.p_w, self.latent_channels)
        if any(int(v) != v or v < 1 for v in vals):
            raise ValueError(f"ratios, patch sizes and channels must be positive integers: {vals}")

    @property
    def token_downsample(self) -> int:
        return self.d_t * self.d_h * self.d_w * self.p_t * self.p_h * self.p_w

    def latent_frames(self, frames: int) -> int:
        if frames < 1:
            raise ValueError("frame count must be >= 1")
        if self.causal:
            if (frames - 1) % self.d_t:
                raise ValueError(f"causal spec needs (T-1) divisible by {self.d_t}, got T={frames}")
            return (frames - 1) // self.d_t + 1
        if frames % self.d_t:
            raise ValueError(f"non-causal spec needs T divisible by {self.d_t}, got T={frames}")
        return frames // self.d_t

    def latent_shape(self, frames: int, height: int, width: int) -> tuple[int, int, int, int]:
        if height % self.d_h or width % self.d_w:
            raise ValueError(f"spatial extents {height}x{width} not divisible by {self.d_h}x{self.d_w}")
        return (self.latent_channels, self.latent_frames(frames), height // self.d_h, width // self.d_w)


# Specs referenced throughout: HunyuanVideo VAE (causal 4x8x8, 16 channels, DiT patch 1x2x2)
# and Video DC-AE (non-causal 4x32x32, 128 channels, patch 1).
HUNYUAN = CompressionSpec(4, 8, 8, 1, 2, 2, latent_channels=16, causal=True)
VIDEO_DCAE = CompressionSpec(4, 32, 32, 1, 1, 1, latent_channels=128, causal=False)
SPECS = {"hunyuan": HUNYUAN, "dcae": VIDEO_DCAE}


def token_count(frames: int, height: int, width: int, spec: CompressionSpec) -> int:
    c, t, h, w = spec.latent_shape(frames, height, width)
    if t % spec.p_t or h % spec.p_h or w % spec.p_w:
        raise ValueError(f"latent extents {(t, h, w)} not divisible by patch {(spec.p_t, spec.p_h, spec.p_w)}")
    return (t // spec.p_t) * (h // spec.p_h) * (w // spec.p_w)


# -------------------------------------------------------------------- shuffles


def _check_factors(shape, f_t, f_h, f_w):
    _, t, h, w = shape
    if t % f_t or h % f_h or w % f_w:
        raise ValueError(f"extents {(t, h, w)} not divisible by factors {(f_t, f_h, f_w)}")


def space_time_to_channel(x, f_t: int, f_h: int, f_w: int) -> Tensor:
    """(c, t, h, w) -> (c*f_t*f_h*f_w, t/f_t, h/f_h, w/f_w); channel index is c-major."""
    x = T.as_tensor(x)
    _check_factors(x.shape, f_t, f_h, f_w)
    c, t, h, w = x.shape
    y = T.reshape(x, (c, t // f_t, f_t, h // f_h, f_h, w // f_w, f_w))
    y = T.permute(y, (0, 2, 4, 6, 1, 3, 5))
    return T.reshape(y, (c * f_t * f_h * f_w, t // f_t, h // f_h, w // f_w))


def channel_to_space_time(x, f_t: int, f_h: int, f_w: int) -> Tensor:
    x = T.as_tensor(x)
    cf, t, h, w = x.shape
    f = f_t * f_h * f_w
    if cf % f:
        raise ValueError(f"channel count {cf} not divisible by {f}")
    c = cf // f
    y = T.reshape(x, (c, f_t, f_h, f_w, t, h, w))
    y = T.permute(y, (0, 4, 1, 5, 2, 6, 3))
    return T.reshape(y, (c, t * f_t, h * f_h, w * f_w))


def downsample_residual(x, f_t: int, f_h: int, f_w: int, out_channels: int) -> Tensor:
    """Shuffle space-time into channels, then average contiguous channel groups."""
    x = T.as_tensor(x)
    total = x.shape[0] * f_t * f_h * f_w
    if total % out_channels:
        raise ValueError(f"shuffled channels {total} not divisible by out_channels {out_channels}")
    y = space_time_to_channel(x, f_t, f_h, f_w)
    group = total // out_channels
    if group == 1:
        return y
    _, t, h, w = y.shape
    return T.mean(T.reshape(y, (out_channels, group, t, h, w)), axis=1)


def upsample_residual(x, f_t: int, f_h: int, f_w: int, out_channels: int) -> Tensor:
    """Duplicate each channel into a contiguous group, then unshuffle channels into space-time."""
    x = T.as_tensor(x)
    c, t, h, w = x.shape
    total = out_channels * f_t * f_h * f_w
    if total % c:
        raise ValueError(f"target channels {total} not divisible by input channels {c}")
    rep = total // c
    if rep > 1:
        ones = np.ones((1, rep, 1, 1, 1), dtype=x.dtype)
        x = T.reshape(T.mul(T.reshape(x, (c, 1, t, h, w)), ones), (total, t, h, w))
    return channel_to_space_time(x, f_t, f_h, f_w)


# ------------------------------------------------------------------ the network


N_STAGES = 5


def stage_factors(spec: CompressionSpec) -> list[tuple[int, int, int]]:
    """Per-stage (f_t, f_h, f_w): spatial halvings from the first stage, temporal on the last ones."""
    logs = []
    for d in (spec.d_t, spec.d_h, spec.d_w):
        n = int(round(math.log2(d)))
        if 2**n != d or n > N_STAGES:
            raise ValueError(f"ratio {d} must be a power of two <= 2**{N_STAGES}")
        logs.append(n)
    n_t, n_h, n_w = logs
    out = []
    for s in range(N_STAGES):
        f_t = 2 if s >= N_STAGES - n_t else 1
        out.append((f_t, 2 if s < n_h else 1, 2 if s < n_w else 1))
    return out


@dataclass(frozen=True)
class AEConfig:
    in_channels: int = 3
    base_width: int = 8
    mid_blocks: int = 1
    heads: int = 2

    def widths(self, spec: CompressionSpec) -> list[int]:
        ws = [self.base_width]
        for f in stage_factors(spec):
            ws.append(ws[-1] * 2 if f != (1, 1, 1) else ws[-1])
        return ws


def init_ae_weights(spec: CompressionSpec, config: AEConfig = AEConfig(), mode: str = "random",
                    seed: int = 0) -> dict[str, Tensor]:
    """``mode="identity"``: stem/head embed the identity and every learned residual is zero.

    With all ratios 1 and ``latent_channels == base_width`` that network reproduces its input.
    """
    rng = np.random.default_rng(seed)
    ws = config.widths(spec)
    factors = stage_factors(spec)
    cin, lat = config.in_channels, spec.latent_channels
    w: dict[str, np.ndarray] = {}

    def dense(n_in, n_out, zero=False):
        if zero or mode == "identity":
            return np.zeros((n_in, n_out))
        return rng.normal(0, 1 / math.sqrt(n_in), (n_in, n_out))

    def eye(n_in, n_out):
        m = np.zeros((n_in, n_out))
        k = min(n_in, n_out)
        m[np.arange(k), np.arange(k)] = 1.0
        return m

    w["enc.stem"] = eye(cin, ws[0]) if mode == "identity" else dense(cin, ws[0])
    for s, (f, c_in, c_out) in enumerate(zip(factors, ws[:-1], ws[1:])):
        w[f"enc.down{s}"] = dense(c_in * int(np.prod(f)), c_out)
        w[f"dec.up{s}"] = dense(c_out, c_in * int(np.prod(f)))
    for prefix in ("enc", "dec"):
        for b in range(config.mid_blocks):
            d = ws[-1]
            w[f"{prefix}.mid{b}.qkv"] = dense(d, 3 * d)
            w[f"{prefix}.mid{b}.proj"] = dense(d, d, zero=True)
            w[f"{prefix}.mid{b}.fc1"] = dense(d, 2 * d)
            w[f"{prefix}.mid{b}.fc2"] = dense(2 * d, d, zero=True)
    w["enc.out"] = dense(ws[-1], lat)
    w["dec.in"] = dense(lat, ws[-1])
    w["dec.head"] = eye(ws[0], cin) if mode == "identity" else dense(ws[0], cin)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in w.items()}


def _pointwise(x: Tensor, weight: Tensor) -> Tensor:
    """Channel mix of a (c, t, h, w) tensor."""
    c, t, h, w = x.shape
    y = T.matmul(T.permute(T.reshape(x, (c, t * h * w)), (1, 0)), weight)
    return T.reshape(T.permute(y, (1, 0)), (weight.shape[1], t, h, w))


def _attention_block(x: Tensor, weights: Mapping[str, Tensor], prefix: str, heads: int) -> Tensor:
    """Pre-norm self-attention + MLP over all latent voxels (stand-in for EfficientViT)."""
    c, t, h, w = x.shape
    n = t * h * w
    seq = T.permute(T.reshape(x, (c, n)), (1, 0))
    hd = c // heads
    q, k, v = T.split(T.matmul(T.rms_norm(seq), weights[prefix + ".qkv"]), [c, c, c], axis=-1)

    def heads_first(z):
        return T.permute(T.reshape(z, (n, heads, hd)), (1, 0, 2))

    q, k, v = heads_first(q), heads_first(k), heads_first(v)
    att = T.softmax(T.scale(T.matmul(q, T.permute(k, (0, 2, 1))), 1.0 / math.sqrt(hd)))
    o = T.reshape(T.permute(T.matmul(att, v), (1, 0, 2)), (n, c))
    seq = T.add(seq, T.matmul(o, weights[prefix + ".proj"]))
    mlp = T.matmul(T.gelu(T.matmul(T.rms_norm(seq), weights[prefix + ".fc1"])), weights[prefix + ".fc2"])
    seq = T.add(seq, mlp)
    return T.reshape(T.permute(seq, (1, 0)), (c, t, h, w))


@dataclass
class VideoLatent:
    tensor: Tensor
    spec: CompressionSpec

    @property
    def shape(self):
        return self.tensor.shape


def _check_video(video: Tensor, spec: CompressionSpec, config: AEConfig):
    if video.ndim != 4 or video.shape[0] != config.in_channels:
        raise ValueError(f"expected video (c={config.in_channels}, t, h, w), got {video.shape}")
    if spec.causal:
        raise ValueError("the video autoencoder is non-causal; got a causal spec")
    spec.latent_shape(*video.shape[1:])


def encode(video, spec: CompressionSpec, weights: Mapping[str, Tensor], config: AEConfig = AEConfig()) -> VideoLatent:
    x = T.as_tensor(video)
    _check_video(x, spec, config)
    ws = config.widths(spec)
    x = _pointwise(x, weights["enc.stem"])
    for s, (f, c_out) in enumerate(zip(stage_factors(spec), ws[1:])):
        learned = _pointwise(space_time_to_channel(x, *f), weights[f"enc.down{s}"])
        x = T.add(learned, downsample_residual(x, *f, c_out))
    for b in range(config.mid_blocks):
        x = _attention_block(x, weights, f"enc.mid{b}", config.heads)
    z = _pointwise(x, weights["enc.out"])
    if ws[-1] % spec.latent_channels == 0:
        z = T.add(z, downsample_residual(x, 1, 1, 1, spec.latent_channels))
    return VideoLatent(z, spec)


def decode(latent: VideoLatent | Tensor, spec: CompressionSpec, weights: Mapping[str, Tensor],
           config: AEConfig = AEConfig()) -> Tensor:
    z = latent.tensor if isinstance(latent, VideoLatent) else T.as_tensor(latent)
    ws = config.widths(spec)
    x = _pointwise(z, weights["dec.in"])
    if ws[-1] % spec.latent_channels == 0:
        x = T.add(x, upsample_residual(z, 1, 1, 1, ws[-1]))
    for b in range(config.mid_blocks):
        x = _attention_block(x, weights, f"dec.mid{b}", config.heads)
    factors = stage_factors(spec)
    for s in reversed(range(N_STAGES)):
        f, c_out = factors[s], ws[s]
        learned = channel_to_space_time(_pointwise(x, weights[f"dec.up{s}"]), *f)
        x = T.add(learned, upsample_residual(x, *f, c_out))
    return _pointwise(x, weights["dec.head"])


def autoencode(video, spec: CompressionSpec, weights: Mapping[str, Tensor],
               config: AEConfig = AEConfig()) -> tuple[VideoLatent, Tensor]:
    latent = encode(video, spec, weights, config)
    return latent, decode(latent, spec, weights, config)


# ------------------------------------------------------------------------ loss

PHASE1_WEIGHTS = {"l1": 1.0, "perceptual": 0.5, "adversarial": 0.0}
PHASE2_WEIGHTS = {"l1": 1.0, "perceptual": 0.5, "adversarial": 0.05}

LossPlugin = Callable[[Tensor, Tensor], "Tensor | float"]


def ae_loss(recon, target, weights: Mapping[str, float] = PHASE2_WEIGHTS,
            plugins: Optional[Mapping[str, LossPlugin]] = None) -> Tensor:
    """``w_l1 * L1 + w_p * perceptual + w_a * adversarial``; absent plugins contribute zero.

    There is deliberately no KL term.
    """
    recon = T.as_tensor(recon)
    target = T.as_tensor(target, like=recon)
    if recon.shape != target.shape:
        raise ValueError(f"recon shape {recon.shape} != target shape {target.shape}")
    plugins = plugins or {}
    loss = T.scale(T.mean(T.abs_(recon - target)), weights.get("l1", 1.0))
    for key in ("perceptual", "adversarial"):
        fn = plugins.get(key)
        wt = weights.get(key, 0.0)
        if fn is None or wt == 0.0:
            continue
        term = fn(recon, target)
        loss = T.add(loss, T.scale(T.as_tensor(term, like=recon), wt))
    return loss


# ------------------------------------------------------------ evaluation utils


def psnr(recon: np.ndarray, target: np.ndarray, data_range: float = 1.0) -> float:
    mse = float(np.mean((np.asarray(recon, np.float64) - np.asarray(target, np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * math.log10(data_range**2 / mse)


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0, window: int = 7) -> float:
    """Mean SSIM over the trailing two (spatial) axes with a uniform window."""
    from scipy.ndimage import uniform_filter

    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    size = (1,) * (a.ndim - 2) + (window, window)
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mu_a, mu_b = uniform_filter(a, size), uniform_filter(b, size)
    var_a = uniform_filter(a * a, size) - mu_a**2
    var_b = uniform_filter(b * b, size) - mu_b**2
    cov = uniform_filter(a * b, size) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))
