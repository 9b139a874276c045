"""Convolutional block attention: channel attention followed by spatial attention."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, ShapeError
from .tensor import Tensor


def uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int, name: str) -> Tensor:
    bound = 1.0 / np.sqrt(fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True, name=name)


@dataclass
class ChannelAttentionParams:
    """Shared bottleneck MLP ``W1 . relu(W0 . v)`` (no biases)."""

    w0: Tensor  # (C/r) x C
    w1: Tensor  # C x (C/r)

    @property
    def channels(self) -> int:
        return self.w0.shape[1]

    @property
    def reduction(self) -> int:
        return self.channels // self.w0.shape[0]

    @classmethod
    def init(cls, channels: int, reduction: int, rng: np.random.Generator) -> "ChannelAttentionParams":
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"reduction ratio {reduction} does not divide channel count {channels}")
        hidden = channels // reduction
        return cls(uniform_init(rng, (hidden, channels), channels, "cbam.w0"),
                   uniform_init(rng, (channels, hidden), hidden, "cbam.w1"))


@dataclass
class SpatialAttentionParams:
    kernel: Tensor  # 1 x 2 x alpha x alpha
    bias: Tensor    # length 1

    @property
    def alpha(self) -> int:
        return self.kernel.shape[-1]

    @classmethod
    def init(cls, alpha: int, rng: np.random.Generator) -> "SpatialAttentionParams":
        if alpha < 1 or alpha % 2 == 0:
            raise ConfigError(f"spatial filter size must be odd, got {alpha}")
        fan_in = 2 * alpha * alpha
        return cls(uniform_init(rng, (1, 2, alpha, alpha), fan_in, "cbam.spatial_kernel"),
                   uniform_init(rng, (1,), fan_in, "cbam.spatial_bias"))


@dataclass
class CbamOutput:
    refined: Tensor      # F_S, same shape as the input map
    channel_map: Tensor  # A_C, (B x) C x 1 x 1
    spatial_map: Tensor  # A_S, (B x) 1 x H x W


def channel_attention(f: Tensor, params: ChannelAttentionParams) -> Tensor:
    """Per-channel weights in (0, 1) from average- and max-pooled descriptors."""
    c = f.shape[-3]
    if c != params.channels:
        raise ShapeError(f"channel_attention: input has {c} channels, params expect {params.channels}")
    if params.w1.shape != (c, params.w0.shape[0]) or c % params.w0.shape[0]:
        raise ConfigError(f"channel_attention: inconsistent MLP shapes {params.w0.shape} / {params.w1.shape}")
    lead = f.shape[:-3]
    flat = lead + (c,) if lead else (c,)

    def mlp(pooled: Tensor) -> Tensor:
        v = T.reshape(pooled, flat)
        return T.dense(T.relu(T.dense(v, params.w0)), params.w1)

    logits = T.add(mlp(T.pool_spatial(f, "avg")), mlp(T.pool_spatial(f, "max")))
    return T.reshape(T.sigmoid(logits), lead + (c, 1, 1))


def spatial_attention(f: Tensor, params: SpatialAttentionParams) -> Tensor:
    """Per-position weights in (0, 1) from channel-pooled maps convolved with an alpha x alpha filter."""
    if params.kernel.shape[:2] != (1, 2):
        raise ShapeError(f"spatial_attention: kernel must be 1 x 2 x a x a, got {params.kernel.shape}")
    pooled = T.concat([T.pool_channel(f, "avg"), T.pool_channel(f, "max")], axis=f.ndim - 3)
    return T.sigmoid(T.conv2d_same(pooled, params.kernel, params.bias))


def cbam_forward(f: Tensor, cparams: ChannelAttentionParams, sparams: SpatialAttentionParams) -> CbamOutput:
    a_c = channel_attention(f, cparams)
    f_c = T.mul(a_c, f)
    a_s = spatial_attention(f_c, sparams)
    return CbamOutput(T.mul(a_s, f_c), a_c, a_s)
