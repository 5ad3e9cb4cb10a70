"""Encoder/decoder segmentation network assembled from state-space blocks.

Layout (stage widths C, 2C, 4C, 8C):

    input (N,3,H,W)
      patch_embed 4x4/4 ........ (N,  C, H/4,  W/4)
      enc stage 0 blocks ......> skip0, patch_merge
      enc stage 1 blocks ......> skip1, patch_merge
      enc stage 2 blocks ......> skip2, patch_merge
      enc stage 3 blocks ....... bridge (N, 8C, H/32, W/32)
      dec stage 0 blocks at 8C
      3 x [patch_expand -> fuse with skip (frequency fusion or add) -> blocks]
      final: two patch_expands + 1x1 conv to classes at full resolution

``param_count``/``flops_count`` are closed-form walks over the same layout
and are asserted (in tests) to agree exactly with instantiated models.
FLOPs are multiply-accumulate counts: one MAC per weight tap per output for
convolutions and dense layers, plus ``L * D_inner * N_state`` per scan
direction for the selective scan; normalizations, activations, pooling and
elementwise arithmetic are excluded.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .blocks import BlockPair, CVSSBlock, CVSSConfig
from .layers import Conv2d, LayerNorm, Linear
from .mfms import AdaptiveKernelConfig, FrequencyConfig, MFMSBlock, adaptive_kernel_size
from .module import Module, ModuleList
from .scan import SCAN_MODES
from .ssm import DEFAULT_SCAN_BLOCK, DEFAULT_STATE_DIM, default_dt_rank
from .tensor import Tensor, cat

__all__ = [
    "NetworkConfig",
    "StageInfo",
    "stage_plan",
    "PatchEmbed",
    "PatchMerge",
    "PatchExpand",
    "CVMHUNet",
    "param_count",
    "flops_count",
]


@dataclass(frozen=True)
class NetworkConfig:
    embed_dim: int = 96
    enc_depths: tuple[int, ...] = (2, 2, 2, 2)
    dec_depths: tuple[int, ...] = (2, 2, 2, 1)
    num_classes: int = 4
    scan_mode: str = "cs2d"
    mfms_enabled: bool = True
    input_size: tuple[int, int] = (256, 256)
    effn_ratio: float = 0.5
    ssm_expand: int = 2
    state_dim: int = DEFAULT_STATE_DIM
    scan_block: int = DEFAULT_SCAN_BLOCK
    ca_reduction: int = 4
    freq_k: int = 16
    kernel_alpha: float = 2.0
    kernel_beta: float = 1.0
    mfms_reduction: int = 4

    def __post_init__(self):
        # normalize sequence fields first so configs built from JSON lists
        # validate and compare like native ones
        object.__setattr__(self, "enc_depths", tuple(self.enc_depths))
        object.__setattr__(self, "dec_depths", tuple(self.dec_depths))
        object.__setattr__(self, "input_size", tuple(self.input_size))
        if self.embed_dim < 4 or self.embed_dim % 4 != 0:
            raise ValueError(f"embed_dim must be a positive multiple of 4, got {self.embed_dim}")
        if len(self.enc_depths) != 4 or len(self.dec_depths) != 4:
            raise ValueError("enc_depths and dec_depths must list exactly 4 stages")
        if any(d < 1 for d in self.enc_depths + self.dec_depths):
            raise ValueError("stage depths must be >= 1")
        if self.num_classes < 2:
            raise ValueError(f"need at least 2 classes, got {self.num_classes}")
        if self.scan_mode not in SCAN_MODES:
            raise ValueError(f"scan_mode must be one of {SCAN_MODES}, got {self.scan_mode!r}")
        h, w = self.input_size
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input size must be divisible by 32, got {h}x{w}")

    # -- derived -----------------------------------------------------------------

    def stage_dim(self, i: int) -> int:
        return self.embed_dim * (1 << i)

    def block_config(self, dim: int) -> CVSSConfig:
        return CVSSConfig(
            dim=dim,
            ssm_expand=self.ssm_expand,
            state_dim=self.state_dim,
            scan_mode=self.scan_mode,
            scan_block=self.scan_block,
            ca_reduction=self.ca_reduction,
            effn_ratio=self.effn_ratio,
        )

    def frequency_config(self) -> FrequencyConfig:
        return FrequencyConfig(k=self.freq_k)

    def kernel_config(self) -> AdaptiveKernelConfig:
        return AdaptiveKernelConfig(alpha=self.kernel_alpha, beta=self.kernel_beta)

    # -- serialization -------------------------------------------------------------

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_depths"] = list(self.enc_depths)
        d["dec_depths"] = list(self.dec_depths)
        d["input_size"] = list(self.input_size)
        return d

    @staticmethod
    def from_dict(d: dict) -> "NetworkConfig":
        known = {f for f in NetworkConfig.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return NetworkConfig(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @staticmethod
    def from_json(text: str) -> "NetworkConfig":
        return NetworkConfig.from_dict(json.loads(text))


@dataclass(frozen=True)
class StageInfo:
    role: str
    dim: int
    height: int
    width: int
    depth: int


def stage_plan(cfg: NetworkConfig, input_size: tuple[int, int] | None = None) -> list[StageInfo]:
    """Resolution/width/depth of every stage for a given input size."""
    h, w = input_size or cfg.input_size
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"input size must be divisible by 32, got {h}x{w}")
    plan = [StageInfo("patch_embed", cfg.embed_dim, h // 4, w // 4, 0)]
    for i in range(4):
        plan.append(StageInfo(f"encoder_{i}", cfg.stage_dim(i), h // (4 << i), w // (4 << i), cfg.enc_depths[i]))
    for j in range(4):
        i = 3 - j  # decoder runs deepest-first
        plan.append(StageInfo(f"decoder_{j}", cfg.stage_dim(i), h // (4 << i), w // (4 << i), cfg.dec_depths[j]))
    plan.append(StageInfo("head", cfg.num_classes, h, w, 0))
    return plan


# ---------------------------------------------------------------------------
# resolution-changing layers
# ---------------------------------------------------------------------------


class PatchEmbed(Module):
    """Non-overlapping 4x4 patches to channels: strided conv + layer norm."""

    def __init__(self, in_channels: int, dim: int, rng: np.random.Generator):
        super().__init__()
        self.conv = Conv2d(in_channels, dim, kernel=4, stride=4, rng=rng)
        self.norm = LayerNorm(dim, axis=1)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if h % 4 != 0 or w % 4 != 0:
            raise ValueError(f"patch embedding needs H,W divisible by 4, got {h}x{w}")
        return self.norm(self.conv(x))


class PatchMerge(Module):
    """2x2 neighborhood concat (4D channels), layer norm, linear 4D -> 2D."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        self.norm = LayerNorm(4 * dim, axis=1)
        self.reduce = Linear(4 * dim, 2 * dim, bias=False, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        n, d, h, w = x.shape
        if h % 2 != 0 or w % 2 != 0:
            raise ValueError(f"patch merge needs even extents, got {h}x{w}")
        quads = cat(
            [x[:, :, 0::2, 0::2], x[:, :, 1::2, 0::2], x[:, :, 0::2, 1::2], x[:, :, 1::2, 1::2]],
            axis=1,
        )
        return self.reduce(self.norm(quads).moveaxis(1, 3)).moveaxis(3, 1)


class PatchExpand(Module):
    """Linear D -> 2D, scatter as a 2x2 spatial block of D/2 channels, norm."""

    def __init__(self, dim: int, rng: np.random.Generator):
        super().__init__()
        if dim % 2 != 0:
            raise ValueError(f"patch expand needs even channels, got {dim}")
        self.dim = dim
        self.project = Linear(dim, 2 * dim, bias=False, rng=rng)
        self.norm = LayerNorm(dim // 2, axis=-1)

    def forward(self, x: Tensor) -> Tensor:
        n, d, h, w = x.shape
        if d != self.dim:
            raise ValueError(f"patch expand built for {self.dim} channels, got {d}")
        half = d // 2
        y = self.project(x.moveaxis(1, 3))  # (N,H,W,2D)
        y = y.reshape(n, h, w, 2, 2, half).transpose(0, 1, 3, 2, 4, 5)  # (N,H,2,W,2,half)
        y = self.norm(y.reshape(n, 2 * h, 2 * w, half))
        return y.moveaxis(3, 1)


class BlockSequence(Module):
    """Stage body: pairs of blocks under outer residuals, plus one odd block."""

    def __init__(self, cfg: CVSSConfig, depth: int, rng: np.random.Generator):
        super().__init__()
        mods: list[Module] = []
        for _ in range(depth // 2):
            mods.append(BlockPair(CVSSBlock(cfg, rng=rng), CVSSBlock(cfg, rng=rng)))
        if depth % 2:
            mods.append(CVSSBlock(cfg, rng=rng))
        self.blocks = ModuleList(mods)

    def forward(self, x: Tensor) -> Tensor:
        for block in self.blocks:
            x = block(x)
        return x


class AddFusion(Module):
    """Skip fusion fallback when frequency fusion is disabled."""

    def forward(self, skip: Tensor, up: Tensor) -> Tensor:
        if skip.shape != up.shape:
            raise ValueError(f"fusion inputs must match, got {skip.shape} vs {up.shape}")
        return skip + up


# ---------------------------------------------------------------------------
# full network
# ---------------------------------------------------------------------------


class CVMHUNet(Module):
    IN_CHANNELS = 3

    def __init__(self, config: NetworkConfig, seed: int = 0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.config = config
        c = config.embed_dim

        self.patch_embed = PatchEmbed(self.IN_CHANNELS, c, rng)
        self.enc_stages = ModuleList(
            [BlockSequence(config.block_config(config.stage_dim(i)), config.enc_depths[i], rng) for i in range(4)]
        )
        self.merges = ModuleList([PatchMerge(config.stage_dim(i), rng) for i in range(3)])

        self.dec_bridge = BlockSequence(config.block_config(config.stage_dim(3)), config.dec_depths[0], rng)
        expands, fusions, dec_stages = [], [], []
        for j in range(1, 4):
            i = 3 - j  # target stage index after expanding
            dim = config.stage_dim(i)
            expands.append(PatchExpand(2 * dim, rng))
            if config.mfms_enabled:
                fusions.append(
                    MFMSBlock(
                        dim,
                        freq=config.frequency_config(),
                        kernel_cfg=config.kernel_config(),
                        reduction=config.mfms_reduction,
                        rng=rng,
                    )
                )
            else:
                fusions.append(AddFusion())
            dec_stages.append(BlockSequence(config.block_config(dim), config.dec_depths[j], rng))
        self.expands = ModuleList(expands)
        self.fusions = ModuleList(fusions)
        self.dec_stages = ModuleList(dec_stages)

        self.final_expand_1 = PatchExpand(c, rng)
        self.final_expand_2 = PatchExpand(c // 2, rng)
        self.head = Conv2d(c // 4, config.num_classes, 1, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        n, c, h, w = x.shape
        if c != self.IN_CHANNELS:
            raise ValueError(f"expected {self.IN_CHANNELS}-channel input, got {c}")
        if h % 32 != 0 or w % 32 != 0:
            raise ValueError(f"input size must be divisible by 32, got {h}x{w}")

        e = self.patch_embed(x)
        skips = []
        for i in range(4):
            e = self.enc_stages[i](e)
            skips.append(e)
            if i < 3:
                e = self.merges[i](e)

        d = self.dec_bridge(e)
        for j in range(3):
            d = self.expands[j](d)
            d = self.fusions[j](skips[2 - j], d)  # frequency fusion weights the skip side
            d = self.dec_stages[j](d)

        y = self.final_expand_2(self.final_expand_1(d))
        return self.head(y)


# ---------------------------------------------------------------------------
# analytic counters (pure functions of the config; no tensors allocated)
# ---------------------------------------------------------------------------


def _block_params(cfg: NetworkConfig, c: int) -> int:
    d = cfg.ssm_expand * c
    r = default_dt_rank(c)
    s = cfg.state_dim
    h = max(1, int(round(c * cfg.effn_ratio)))
    p = 2 * c  # cross-scan pre-norm
    p += 2 * (d * c)  # main + gate projections
    p += 9 * d + d  # depthwise conv
    p += 4 * (d * (r + 2 * s) + d * r + d + d * s + d)  # four scan directions
    p += 2 * d  # scan output norm
    p += d * c  # out projection
    p += 2 * (c * (c // cfg.ca_reduction))  # channel-attention MLP
    p += 2 * 49 + 1  # spatial-attention conv
    p += 9 * c + c  # local depthwise conv
    p += 9 * c + c + 2 * c + c * c + c  # fusion dw conv + norm + 1x1
    p += 2 * c + (c * h + h) + (9 * h + h) + (h * c + c)  # effn
    return p


def _mfms_params(cfg: NetworkConfig, c: int) -> int:
    phi = adaptive_kernel_size(c, cfg.kernel_config())
    p = 3 * (phi + 1)  # three channel convs with bias
    cr = c // cfg.mfms_reduction
    p += c * cr + 2 * cr  # pw1 + bn1 affine
    p += cr * c + 2 * c  # pw2 + bn2 affine
    return p


def param_count(cfg: NetworkConfig) -> int:
    """Exact number of trainable parameters for a model built from ``cfg``."""
    c = cfg.embed_dim
    total = 48 * c + c + 2 * c  # patch embed conv+bias, norm
    for i in range(4):
        total += cfg.enc_depths[i] * _block_params(cfg, cfg.stage_dim(i))
    for i in range(3):
        di = cfg.stage_dim(i)
        total += 8 * di + 8 * di * di  # merge: norm(4D) + linear 4D->2D
    total += cfg.dec_depths[0] * _block_params(cfg, cfg.stage_dim(3))
    for j in range(1, 4):
        dim = cfg.stage_dim(3 - j)
        src = 2 * dim
        total += 2 * src * src + src // 2 * 2  # expand: linear D->2D + norm(D/2)
        if cfg.mfms_enabled:
            total += _mfms_params(cfg, dim)
        total += cfg.dec_depths[j] * _block_params(cfg, dim)
    for dim in (c, c // 2):
        total += 2 * dim * dim + dim // 2 * 2  # final expands
    total += (c // 4) * cfg.num_classes + cfg.num_classes  # head
    return total


def _block_flops(cfg: NetworkConfig, c: int, positions: int) -> int:
    d = cfg.ssm_expand * c
    r = default_dt_rank(c)
    s = cfg.state_dim
    h = max(1, int(round(c * cfg.effn_ratio)))
    p = positions
    f = 2 * (c * d) * p  # main + gate projections
    f += 9 * d * p  # depthwise conv
    f += 4 * (d * (r + 2 * s) * p + d * r * p)  # per-direction projections
    f += 4 * (p * d * s)  # selective scan, one MAC per (step, channel, state)
    f += d * c * p  # out projection
    f += 2 * 2 * (c * (c // cfg.ca_reduction))  # CA MLP on two pooled vectors
    f += 2 * 49 * p  # spatial-attention conv
    f += 9 * c * p  # local depthwise conv
    f += 9 * c * p + c * c * p  # fusion dw + 1x1
    f += c * h * p + 9 * h * p + h * c * p  # effn
    return f


def _mfms_flops(cfg: NetworkConfig, c: int, positions: int) -> int:
    phi = adaptive_kernel_size(c, cfg.kernel_config())
    cr = c // cfg.mfms_reduction
    f = c * cfg.freq_k * positions  # frequency compression
    f += 3 * phi * c  # channel convs
    f += 2 * (c * cr) * positions  # local bottleneck 1x1 convs
    return f


def flops_count(cfg: NetworkConfig, input_size: tuple[int, int] | None = None) -> int:
    """MAC count for one sample at the given spatial size (see module docstring)."""
    h, w = input_size or cfg.input_size
    if h % 32 != 0 or w % 32 != 0:
        raise ValueError(f"input size must be divisible by 32, got {h}x{w}")
    c = cfg.embed_dim
    p = [(h // (4 << i)) * (w // (4 << i)) for i in range(4)]
    total = 48 * c * p[0]  # patch embed conv
    for i in range(4):
        total += cfg.enc_depths[i] * _block_flops(cfg, cfg.stage_dim(i), p[i])
    for i in range(3):
        di = cfg.stage_dim(i)
        total += 8 * di * di * p[i + 1]  # merge linear at the reduced resolution
    total += cfg.dec_depths[0] * _block_flops(cfg, cfg.stage_dim(3), p[3])
    for j in range(1, 4):
        i = 3 - j
        dim = cfg.stage_dim(i)
        src = 2 * dim
        total += 2 * src * src * p[i + 1]  # expand linear runs before upsampling
        if cfg.mfms_enabled:
            total += _mfms_flops(cfg, dim, p[i])
        total += cfg.dec_depths[j] * _block_flops(cfg, dim, p[i])
    total += 2 * c * c * p[0]  # final expand 1 at H/4
    total += 2 * (c // 2) * (c // 2) * (4 * p[0])  # final expand 2 at H/2
    total += (c // 4) * cfg.num_classes * (h * w)  # head
    return total
