"""Learnable blocks of the restoration network.

The decoder-side frequency path: a mask generator predicts per-sample
factors that size a centered low-pass rectangle; the mining module splits
the guidance spectrum with that mask and pulls matching low/high components
out of the feature stream via transposed cross-attention; the modulation
module exchanges information between the two branches (spatial gate from
high to low, shared-weight channel gate from low to high) and merges them
back into the input.  Transformer blocks are the channel-attention +
gated-feed-forward pair used throughout the backbone.
"""

from __future__ import annotations

import math

import numpy as np

from . import spectral as S
from . import tensor as T
from .errors import HeadMismatch, ShapeMismatch
from .tensor import Tensor


def truncated_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    """Seeded normal draw clipped to two standard deviations."""
    return np.clip(rng.normal(0.0, std, size=shape), -2.0 * std, 2.0 * std)


# Fraction of the He scale used for conv init.  Full He makes the random
# start unrecoverable within short training budgets; near-zero init freezes
# interior learning behind a vanishing output path.  0.45 keeps the interior
# trainable from scratch at small step counts.
INIT_GAIN = 0.45


##########################################################################
# parameter containers


class Module:
    """Minimal parameter container; submodules are discovered via attributes."""

    def named_parameters(self, prefix: str = ""):
        """Yield (name, tensor) pairs depth-first; shared tensors appear once."""
        seen: set[int] = set()
        yield from self._walk(prefix, seen)

    def _walk(self, prefix, seen):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                if id(value) not in seen:
                    seen.add(id(value))
                    yield key, value
            elif isinstance(value, Module):
                if id(value) not in seen:
                    seen.add(id(value))
                    yield from value._walk(f"{key}.", seen)
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module) and id(item) not in seen:
                        seen.add(id(item))
                        yield from item._walk(f"{key}.{i}.", seen)

    def parameters(self):
        return [t for _, t in self.named_parameters()]

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None


class Conv2d(Module):
    """Convolution layer with 'same' spatial padding and seeded He-style init.

    `gain` overrides the module-wide INIT_GAIN fraction of the He scale.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int,
                 groups: int = 1, bias: bool = True, gain: float | None = None,
                 dtype=np.float64):
        fan_in = (in_ch // groups) * kernel * kernel
        std = (INIT_GAIN if gain is None else gain) * math.sqrt(2.0 / fan_in)
        self.weight = Tensor(
            truncated_normal(rng, (out_ch, in_ch // groups, kernel, kernel), std).astype(dtype),
            requires_grad=True,
        )
        self.bias = Tensor(np.zeros(out_ch, dtype=dtype), requires_grad=True) if bias else None
        self.groups = groups
        self.kernel = kernel

    def __call__(self, x: Tensor) -> Tensor:
        pad = (self.kernel - 1) // 2
        return T.conv2d(x, self.weight, bias=self.bias, padding=pad, groups=self.groups)


class LayerNorm(Module):
    def __init__(self, channels: int, dtype=np.float64):
        self.gain = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.offset = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gain, self.offset)


##########################################################################
# transposed channel attention (shared by mining, merge, and MDTA)


class ChannelAttention(Module):
    """Multi-head transposed attention: the attention map is channels x channels.

    Query comes from `q_src`, key/value from `kv_src`; each projection is a
    1x1 conv followed by a 3x3 depth-wise conv.  Q and K are L2-normalized
    along the flattened spatial axis and the per-head learnable temperature
    scales the channel-channel product before the softmax.
    """

    def __init__(self, rng, channels: int, heads: int, normalize_qk: bool = True,
                 dtype=np.float64):
        if channels % heads:
            raise HeadMismatch(f"heads={heads} must divide channels={channels}")
        self.q_proj = Conv2d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.q_depth = Conv2d(rng, channels, channels, 3, groups=channels, bias=False, dtype=dtype)
        self.k_proj = Conv2d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.k_depth = Conv2d(rng, channels, channels, 3, groups=channels, bias=False, dtype=dtype)
        self.v_proj = Conv2d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.v_depth = Conv2d(rng, channels, channels, 3, groups=channels, bias=False, dtype=dtype)
        self.out_proj = Conv2d(rng, channels, channels, 1, bias=False, dtype=dtype)
        self.temperature = Tensor(np.ones((heads, 1, 1), dtype=dtype), requires_grad=True)
        self.heads = heads
        self.normalize_qk = normalize_qk

    def _qk(self, q_src: Tensor, kv_src: Tensor):
        if q_src.shape != kv_src.shape:
            raise ShapeMismatch(f"q {q_src.shape} vs kv {kv_src.shape}")
        n, c, h, w = q_src.shape
        ch = c // self.heads
        q = self.q_depth(self.q_proj(q_src)).reshape(n, self.heads, ch, h * w)
        k = self.k_depth(self.k_proj(kv_src)).reshape(n, self.heads, ch, h * w)
        if self.normalize_qk:
            q = T.l2_normalize(q, axis=-1)
            k = T.l2_normalize(k, axis=-1)
        return q, k

    def attention_map(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        """(N, heads, c_head, c_head) channel-attention map; rows sum to one."""
        q, k = self._qk(q_src, kv_src)
        return T.softmax(T.matmul(q, k.transpose(0, 1, 3, 2)) * self.temperature, axis=-1)

    def __call__(self, q_src: Tensor, kv_src: Tensor) -> Tensor:
        n, c, h, w = q_src.shape
        attn = self.attention_map(q_src, kv_src)
        v = self.v_depth(self.v_proj(kv_src)).reshape(n, self.heads, c // self.heads, h * w)
        out = T.matmul(attn, v).reshape(n, c, h, w)
        return self.out_proj(out)


##########################################################################
# mask generation


class MaskGenerator(Module):
    """Tiny head that turns pooled guidance features into mask factors.

    Spatial average pool, 1x1 reduce, GELU, 1x1 to two logits, sigmoid;
    outputs land strictly inside (0,1) per sample.
    """

    def __init__(self, rng, channels: int, r1: int, dtype=np.float64):
        mid = max(2, channels // r1)
        self.reduce = Conv2d(rng, channels, mid, 1, dtype=dtype)
        self.head = Conv2d(rng, mid, 2, 1, dtype=dtype)

    def __call__(self, p: Tensor):
        pooled = T.pool(p, "avg", "spatial")
        factors = T.sigmoid(self.head(T.gelu(self.reduce(pooled))))  # (N, 2, 1, 1)
        alpha = T.narrow(factors, 1, 0, 1)
        beta = T.narrow(factors, 1, 1, 1)
        return alpha, beta


##########################################################################
# frequency mining


class FrequencyMining(Module):
    """Split features into mask-guided low/high frequency branches.

    The degraded image (resized to the feature resolution) is projected to
    the feature width, transformed to a centered spectrum, and split by the
    generated mask; each reconstructed band drives the query of a
    cross-attention over the input features.
    """

    def __init__(self, rng, channels: int, heads: int, r1: int, k: int = 128,
                 mask_mode: str = "learned-soft", tau: float = 0.5,
                 fixed_half_side: int = 5, normalize_qk: bool = True, dtype=np.float64):
        self.image_proj = Conv2d(rng, 3, channels, 3, dtype=dtype)
        self.mask_gen = MaskGenerator(rng, channels, r1, dtype=dtype)
        self.low_attn = ChannelAttention(rng, channels, heads, normalize_qk, dtype=dtype)
        self.high_attn = ChannelAttention(rng, channels, heads, normalize_qk, dtype=dtype)
        self.k = k
        self.mask_mode = mask_mode
        self.tau = tau
        self.fixed_half_side = fixed_half_side

    def _low_mask(self, alpha: Tensor, beta: Tensor, h: int, w: int) -> Tensor:
        if self.mask_mode == "learned-soft":
            return S.soft_lowpass_mask(alpha, beta, h, w, k=self.k, tau=self.tau)
        if self.mask_mode == "learned-hard":
            # rounding detaches the factors; no gradient reaches the generator
            return Tensor(S.hard_lowpass_masks(alpha.data, beta.data, h, w, k=self.k))
        if self.mask_mode == "fixed":
            return Tensor(S.hard_square_mask(self.fixed_half_side, h, w))
        raise ShapeMismatch(f"unknown mask mode {self.mask_mode!r}")

    def __call__(self, x: Tensor, image: Tensor, mask_override=None):
        if image.shape[0] != x.shape[0] or image.shape[-2:] != x.shape[-2:]:
            raise ShapeMismatch(f"guidance {image.shape} does not match features {x.shape}")
        p = self.image_proj(image)
        alpha, beta = self.mask_gen(p)
        spec = S.fftshift2(S.fft2(p))
        h, w = p.shape[-2], p.shape[-1]
        if mask_override is not None:
            m_low = mask_override if isinstance(mask_override, Tensor) else Tensor(mask_override)
        else:
            m_low = self._low_mask(alpha, beta, h, w)
        f_low = S.mask_apply_invert(spec, m_low)
        f_high = S.mask_apply_invert(spec, 1.0 - m_low)
        x_low = self.low_attn(f_low, x)
        x_high = self.high_attn(f_high, x)
        return x_low, x_high, alpha, beta


##########################################################################
# frequency modulation


class HighToLow(Module):
    """Spatial gate: pooled high-frequency maps modulate the low branch."""

    def __init__(self, rng, dtype=np.float64):
        self.fuse = Conv2d(rng, 2, 1, 7, dtype=dtype)

    def __call__(self, x_low: Tensor, x_high: Tensor) -> Tensor:
        if x_low.shape != x_high.shape:
            raise ShapeMismatch(f"{x_low.shape} vs {x_high.shape}")
        pooled = T.concat(
            [T.pool(x_high, "avg", "channel"), T.pool(x_high, "max", "channel")], axis=1
        )
        gate = T.sigmoid(self.fuse(pooled))  # (N, 1, H, W)
        return x_low * gate


class LowToHigh(Module):
    """Channel gate: pooled low-frequency descriptors modulate the high branch.

    The reduce/expand projections are shared between the average-pool and
    max-pool branches (a single parameter tensor backs each projection).
    """

    def __init__(self, rng, channels: int, r2: int, dtype=np.float64):
        mid = max(2, channels // r2)
        self.reduce = Conv2d(rng, channels, mid, 1, dtype=dtype)
        self.expand = Conv2d(rng, mid, channels, 1, dtype=dtype)

    def __call__(self, x_low: Tensor, x_high: Tensor) -> Tensor:
        if x_low.shape != x_high.shape:
            raise ShapeMismatch(f"{x_low.shape} vs {x_high.shape}")
        avg = T.pool(x_low, "avg", "spatial")
        mx = T.pool(x_low, "max", "spatial")
        gate = T.sigmoid(
            self.expand(T.relu(self.reduce(avg))) + self.expand(T.relu(self.reduce(mx)))
        )  # (N, C, 1, 1)
        return x_high * gate


class FrequencyModulation(Module):
    """Exchange between branches, then a residual cross-attention merge.

    The merged tensor feeds key/value while the block input supplies the
    query; a residual connection keeps a zero-initialized block transparent.
    """

    def __init__(self, rng, channels: int, heads: int, r2: int,
                 normalize_qk: bool = True, dtype=np.float64):
        self.high_to_low = HighToLow(rng, dtype=dtype)
        self.low_to_high = LowToHigh(rng, channels, r2, dtype=dtype)
        self.merge_proj = Conv2d(rng, channels, channels, 1, dtype=dtype)
        self.merge_attn = ChannelAttention(rng, channels, heads, normalize_qk, dtype=dtype)

    def merge(self, x: Tensor, low_mod: Tensor, high_mod: Tensor) -> Tensor:
        merged = self.merge_proj(low_mod + high_mod)
        return x + self.merge_attn(x, merged)

    def __call__(self, x: Tensor, x_low: Tensor, x_high: Tensor) -> Tensor:
        low_mod = self.high_to_low(x_low, x_high)
        high_mod = self.low_to_high(x_low, x_high)
        return self.merge(x, low_mod, high_mod)


##########################################################################
# transformer block (MDTA + GDFN)


class Mdta(Module):
    """Pre-norm transposed self-attention with a residual connection."""

    def __init__(self, rng, channels: int, heads: int, normalize_qk: bool = True,
                 dtype=np.float64):
        self.norm = LayerNorm(channels, dtype=dtype)
        self.attn = ChannelAttention(rng, channels, heads, normalize_qk, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        normed = self.norm(x)
        return x + self.attn(normed, normed)


class Gdfn(Module):
    """Pre-norm gated feed-forward: a GELU branch gates a linear branch."""

    def __init__(self, rng, channels: int, expansion: float = 2.66, dtype=np.float64):
        hidden = max(1, round(channels * expansion))
        self.norm = LayerNorm(channels, dtype=dtype)
        self.expand_gate = Conv2d(rng, channels, hidden, 1, bias=False, dtype=dtype)
        self.depth_gate = Conv2d(rng, hidden, hidden, 3, groups=hidden, bias=False, dtype=dtype)
        self.expand_lin = Conv2d(rng, channels, hidden, 1, bias=False, dtype=dtype)
        self.depth_lin = Conv2d(rng, hidden, hidden, 3, groups=hidden, bias=False, dtype=dtype)
        self.contract = Conv2d(rng, hidden, channels, 1, bias=False, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        normed = self.norm(x)
        gate = T.gelu(self.depth_gate(self.expand_gate(normed)))
        lin = self.depth_lin(self.expand_lin(normed))
        return x + self.contract(gate * lin)


class TransformerBlock(Module):
    def __init__(self, rng, channels: int, heads: int, expansion: float = 2.66,
                 normalize_qk: bool = True, dtype=np.float64):
        self.mdta = Mdta(rng, channels, heads, normalize_qk, dtype=dtype)
        self.gdfn = Gdfn(rng, channels, expansion, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.gdfn(self.mdta(x))


##########################################################################
# assembled frequency learning block


class FrequencyLearningBlock(Module):
    """Mining followed by modulation; shape-preserving and residual.

    `last_factors` keeps the most recent per-sample (alpha, beta) pair as
    plain arrays for range diagnostics during training.
    """

    def __init__(self, rng, channels: int, heads: int, r1: int = 4, r2: int = 8,
                 k: int = 128, mask_mode: str = "learned-soft", tau: float = 0.5,
                 fixed_half_side: int = 5, normalize_qk: bool = True, dtype=np.float64):
        self.mining = FrequencyMining(
            rng, channels, heads, r1, k=k, mask_mode=mask_mode, tau=tau,
            fixed_half_side=fixed_half_side, normalize_qk=normalize_qk, dtype=dtype,
        )
        self.modulation = FrequencyModulation(rng, channels, heads, r2, normalize_qk, dtype=dtype)
        self.last_factors = None

    def __call__(self, x: Tensor, image: Tensor, mask_override=None) -> Tensor:
        x_low, x_high, alpha, beta = self.mining(x, image, mask_override=mask_override)
        self.last_factors = (alpha.data.reshape(-1).copy(), beta.data.reshape(-1).copy())
        return self.modulation(x, x_low, x_high)
