"""Frequency-aware skip fusion: DCT-profile global channel attention, a
pointwise local bottleneck, and a soft convex blend of the two feature maps.

Both attention paths end in zero-initialized layers, so a fresh block blends
with weight exactly 0.5 (plain averaging) and learns to prefer one side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .layers import BatchNorm2d, ChannelConv1d, Conv2d
from .module import Module
from .tensor import Tensor

__all__ = [
    "FrequencySpec",
    "FrequencyConfig",
    "AdaptiveKernelConfig",
    "dct_basis",
    "frequency_bases",
    "compress_frequencies",
    "adaptive_kernel_size",
    "GlobalFrequencyAttention",
    "LocalPointwiseAttention",
    "MFMSBlock",
]

# Frequency index pairs ranked by channel-attention usefulness on a 7x7 grid
# (the published top-16 selection, lowest frequencies first).
_TOP16_U = (0, 0, 6, 0, 0, 1, 1, 4, 5, 1, 3, 0, 0, 0, 2, 3)
_TOP16_V = (0, 1, 0, 5, 2, 0, 2, 0, 0, 6, 0, 4, 6, 3, 2, 5)


@dataclass(frozen=True)
class FrequencySpec:
    """One 2D frequency index pair."""

    u: int
    v: int

    def __post_init__(self):
        if self.u < 0 or self.v < 0:
            raise ValueError(f"frequency indices must be >= 0, got ({self.u}, {self.v})")


@dataclass(frozen=True)
class FrequencyConfig:
    """Which frequencies to profile each channel with."""

    k: int = 16
    selection: tuple[FrequencySpec, ...] | None = None
    basis_resolution: tuple[int, int] = (7, 7)
    specs: tuple[FrequencySpec, ...] = field(init=False)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"need at least one frequency, got k={self.k}")
        if self.selection is not None:
            specs = tuple(self.selection)
            if len(specs) != self.k:
                raise ValueError(f"selection has {len(specs)} specs but k={self.k}")
        else:
            if self.k > len(_TOP16_U):
                raise ValueError(
                    f"default selection provides up to {len(_TOP16_U)} frequencies, got k={self.k}"
                )
            specs = tuple(FrequencySpec(u, v) for u, v in zip(_TOP16_U[: self.k], _TOP16_V[: self.k]))
        if len(set(specs)) != len(specs):
            raise ValueError("frequency specs must be distinct")
        hb, wb = self.basis_resolution
        for s in specs:
            if s.u >= hb or s.v >= wb:
                raise ValueError(f"spec ({s.u},{s.v}) outside basis resolution {hb}x{wb}")
        object.__setattr__(self, "specs", specs)


@dataclass(frozen=True)
class AdaptiveKernelConfig:
    alpha: float = 2.0
    beta: float = 1.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError(f"alpha must be positive, got {self.alpha}")


def dct_basis(h: int, w: int, spec: FrequencySpec) -> np.ndarray:
    """Cosine basis map ``cos(pi*h/H*(u+1/2)) * cos(pi*w/W*(v+1/2))``.

    The half-sample offset rides on the frequency index, not the spatial
    index, matching the closed form this implementation follows.
    """
    if h < 1 or w < 1:
        raise ValueError(f"basis needs a positive grid, got {h}x{w}")
    rows = np.cos(np.pi * np.arange(h) / h * (spec.u + 0.5))
    cols = np.cos(np.pi * np.arange(w) / w * (spec.v + 0.5))
    return np.outer(rows, cols)


_BASIS_CACHE: dict[tuple[int, int, tuple], np.ndarray] = {}


def frequency_bases(h: int, w: int, cfg: FrequencyConfig) -> np.ndarray:
    """(K, H*W) stack of basis maps for the configured selection, cached."""
    key = (h, w, cfg.specs)
    got = _BASIS_CACHE.get(key)
    if got is None:
        got = np.stack([dct_basis(h, w, s).reshape(-1) for s in cfg.specs]).astype(np.float64)
        _BASIS_CACHE[key] = got
    return got


def compress_frequencies(x: Tensor, cfg: FrequencyConfig) -> Tensor:
    """(N,C,H,W) -> (N,C,K): per-channel projection onto each basis map."""
    n, c, h, w = x.shape
    bases = Tensor(frequency_bases(h, w, cfg).astype(x.data.dtype))
    return F.linear(x.reshape(n, c, h * w), bases)


def adaptive_kernel_size(channels: int, cfg: AdaptiveKernelConfig = AdaptiveKernelConfig()) -> int:
    """Nearest odd integer to ``log2(C)/alpha + beta/alpha`` (ties -> smaller)."""
    if channels < 1:
        raise ValueError(f"channels must be >= 1, got {channels}")
    lam = math.log2(channels) / cfg.alpha + cfg.beta / cfg.alpha
    lower = 2 * math.floor((lam - 1.0) / 2.0) + 1
    upper = lower + 2
    phi = lower if (lam - lower) <= (upper - lam) else upper
    return max(1, phi)


class GlobalFrequencyAttention(Module):
    """Channel scores from avg/max/min pooling of the frequency profile.

    Each pooled (N, C) vector runs through its own 1D conv along the channel
    axis with the adaptive kernel size; the three results are summed.
    """

    def __init__(
        self,
        dim: int,
        freq: FrequencyConfig = FrequencyConfig(),
        kernel_cfg: AdaptiveKernelConfig = AdaptiveKernelConfig(),
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        self.freq = freq
        self.kernel_size = adaptive_kernel_size(dim, kernel_cfg)
        self.conv_avg = ChannelConv1d(self.kernel_size, zero_init=True, rng=rng)
        self.conv_max = ChannelConv1d(self.kernel_size, zero_init=True, rng=rng)
        self.conv_min = ChannelConv1d(self.kernel_size, zero_init=True, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        profile = compress_frequencies(x, self.freq)  # (N,C,K)
        avg = profile.mean(axis=2)
        mx = profile.max(axis=2)
        mn = profile.min(axis=2)
        return self.conv_avg(avg) + self.conv_max(mx) + self.conv_min(mn)


class LocalPointwiseAttention(Module):
    """Per-position channel bottleneck: BN(pw2(relu(BN(pw1(x)))))."""

    def __init__(self, dim: int, reduction: int = 4, rng: np.random.Generator | None = None):
        super().__init__()
        if dim % reduction != 0:
            raise ValueError(f"dim {dim} not divisible by reduction {reduction}")
        hidden = dim // reduction
        self.pw1 = Conv2d(dim, hidden, 1, bias=False, rng=rng)
        self.bn1 = BatchNorm2d(hidden)
        self.pw2 = Conv2d(hidden, dim, 1, bias=False, rng=rng).zero_()
        self.bn2 = BatchNorm2d(dim)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn2(self.pw2(F.relu(self.bn1(self.pw1(x)))))


class MFMSBlock(Module):
    """Soft fusion of two same-shape feature maps.

    ``X = F + F~``; the fusion weight ``w = sigmoid(G(X) + L(X))`` combines a
    global frequency-profile score and a local bottleneck score, and the
    output is the convex blend ``w*F + (1-w)*F~`` (computed as
    ``F~ + w*(F-F~)`` so equal inputs pass through bit-exactly).
    """

    def __init__(
        self,
        dim: int,
        freq: FrequencyConfig = FrequencyConfig(),
        kernel_cfg: AdaptiveKernelConfig = AdaptiveKernelConfig(),
        reduction: int = 4,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        self.global_attention = GlobalFrequencyAttention(dim, freq, kernel_cfg, rng=rng)
        self.local_attention = LocalPointwiseAttention(dim, reduction, rng=rng)

    def fusion_weight(self, x: Tensor) -> Tensor:
        n, c = x.shape[0], x.shape[1]
        g = self.global_attention(x).reshape(n, c, 1, 1)
        return F.sigmoid(g + self.local_attention(x))

    def forward(self, f: Tensor, f_other: Tensor) -> Tensor:
        if f.shape != f_other.shape:
            raise ValueError(f"fusion inputs must match, got {f.shape} vs {f_other.shape}")
        w = self.fusion_weight(f + f_other)
        return f_other + w * (f - f_other)
