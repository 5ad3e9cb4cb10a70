"""Neural-network operators built on the autograd tensor.

Feature maps are NCHW.  Convolutions gather sliding windows with numpy stride
tricks and contract them with ``tensordot`` (BLAS); backwards are analytic.
Dtype follows the inputs, so every op runs in float64 when gradient checking.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .tensor import Tensor

__all__ = [
    "linear",
    "conv2d",
    "depthwise_conv2d",
    "conv1d",
    "layer_norm",
    "batch_norm",
    "relu",
    "silu",
    "gelu",
    "softplus",
    "sigmoid",
    "log_softmax",
    "global_avg_pool",
    "global_max_pool",
    "global_min_pool",
    "permute_last",
]

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise ValueError(message)


# ---------------------------------------------------------------------------
# linear / convolutions
# ---------------------------------------------------------------------------


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``y = x @ weight.T + bias`` over the trailing feature axis."""
    din = x.shape[-1]
    dout, win = weight.shape
    _require(win == din, f"linear: input features {din} != weight in-features {win}")
    x2 = x.data.reshape(-1, din)
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(x.shape[:-1] + (dout,))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, dout)
        dx = (g2 @ weight.data).reshape(x.shape)
        dw = g2.T @ x2
        if bias is None:
            return dx, dw
        return dx, dw, g2.sum(axis=0)

    return Tensor.from_op(out, parents, backward)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Dense 2D cross-correlation, NCHW input, OIHW weight."""
    n, cin, h, w = x.shape
    cout, cw, kh, kw = weight.shape
    _require(cw == cin, f"conv2d: input channels {cin} != weight in-channels {cw}")
    _require(h + 2 * padding >= kh and w + 2 * padding >= kw,
             f"conv2d: kernel {kh}x{kw} larger than padded input {h + 2 * padding}x{w + 2 * padding}")
    if kh == 1 and kw == 1 and stride == 1 and padding == 0:
        return _conv1x1(x, weight, bias)
    sh = sw = stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, sh, sw)
    out = np.tensordot(win, weight.data, axes=[(1, 4, 5), (1, 2, 3)])  # (N,H',W',O)
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dw = np.tensordot(g, win, axes=[(0, 2, 3), (0, 2, 3)])  # (O,C,kh,kw)
        t = np.tensordot(g, weight.data, axes=[(1,), (0,)])  # (N,H',W',C,kh,kw)
        t = np.moveaxis(t, 3, 1)  # (N,C,H',W',kh,kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += t[:, :, :, :, i, j]
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if bias is None:
            return np.ascontiguousarray(dx), dw
        return np.ascontiguousarray(dx), dw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward)


def _conv1x1(x: Tensor, weight: Tensor, bias: Tensor | None) -> Tensor:
    n, cin, h, w = x.shape
    cout = weight.shape[0]
    w2 = weight.data.reshape(cout, cin)
    out = np.tensordot(x.data, w2, axes=[(1,), (1,)])  # (N,H,W,O)
    out = np.ascontiguousarray(np.moveaxis(out, 3, 1))
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dx = np.tensordot(g, w2, axes=[(1,), (0,)])  # (N,H,W,C)
        dx = np.ascontiguousarray(np.moveaxis(dx, 3, 1))
        dw = np.tensordot(g, x.data, axes=[(0, 2, 3), (0, 2, 3)]).reshape(weight.shape)
        if bias is None:
            return dx, dw
        return dx, dw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward)


def depthwise_conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Per-channel 2D cross-correlation; weight is (C, 1, kh, kw)."""
    n, c, h, w = x.shape
    cw, one, kh, kw = weight.shape
    _require(cw == c and one == 1,
             f"depthwise_conv2d: weight {weight.shape} incompatible with {c} channels")
    sh = sw = stride
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    win = _windows(xp, kh, kw, sh, sw)  # (N,C,H',W',kh,kw)
    k2 = weight.data.reshape(c, kh, kw)
    out = np.einsum("nchwij,cij->nchw", win, k2, optimize=True)
    if bias is not None:
        out = out + bias.data[None, :, None, None]
    ho, wo = out.shape[2], out.shape[3]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dw = np.einsum("nchw,nchwij->cij", g, win, optimize=True).reshape(weight.shape)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += (
                    g * k2[None, :, i, j, None, None]
                )
        dx = dxp[:, :, padding : padding + h, padding : padding + w] if padding else dxp
        if bias is None:
            return np.ascontiguousarray(dx), dw
        return np.ascontiguousarray(dx), dw, g.sum(axis=(0, 2, 3))

    return Tensor.from_op(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Single-channel same-padded 1D cross-correlation with odd kernel size."""
    n, ch, length = x.shape
    _require(ch == 1 and weight.shape[:2] == (1, 1),
             f"conv1d: expected single-channel input/weight, got {x.shape} / {weight.shape}")
    k = weight.shape[2]
    _require(k % 2 == 1, f"conv1d: kernel size must be odd, got {k}")
    pad = (k - 1) // 2
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad))) if pad else x.data
    win = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)  # (N,1,L,k)
    kern = weight.data.reshape(k)
    out = win @ kern
    if bias is not None:
        out = out + bias.data[0]
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        dw = np.tensordot(g, win, axes=[(0, 1, 2), (0, 1, 2)]).reshape(weight.shape)
        dxp = np.zeros_like(xp)
        for j in range(k):
            dxp[:, :, j : j + length] += g * kern[j]
        dx = dxp[:, :, pad : pad + length] if pad else dxp
        if bias is None:
            return np.ascontiguousarray(dx), dw
        return np.ascontiguousarray(dx), dw, np.asarray([g.sum()], dtype=g.dtype)

    return Tensor.from_op(out, parents, backward)


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over a single axis, then scale/shift by per-feature affine."""
    ax = axis % x.ndim
    c = x.shape[ax]
    _require(gamma.shape == (c,) and beta.shape == (c,),
             f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match {c} features")
    bshape = [1] * x.ndim
    bshape[ax] = c
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)
    mu = x.data.mean(axis=ax, keepdims=True)
    xc = x.data - mu
    var = np.mean(xc * xc, axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gam + bet
    reduce_axes = tuple(i for i in range(x.ndim) if i != ax)

    def backward(g):
        dgamma = (g * xhat).sum(axis=reduce_axes)
        dbeta = g.sum(axis=reduce_axes)
        dxhat = g * gam
        m1 = dxhat.mean(axis=ax, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=ax, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgamma, dbeta

    return Tensor.from_op(out, (x, gamma, beta), backward)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """2D batch norm over channel axis 1; running stats updated in train mode."""
    n, c = x.shape[0], x.shape[1]
    _require(gamma.shape == (c,), f"batch_norm: affine shape {gamma.shape} does not match {c} channels")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gam = gamma.data.reshape(bshape)
    bet = beta.data.reshape(bshape)

    if training:
        mu = x.data.mean(axis=axes)
        xc = x.data - mu.reshape(bshape)
        var = np.mean(xc * xc, axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * var.astype(running_var.dtype)
        inv = (1.0 / np.sqrt(var + eps)).reshape(bshape)
        xhat = xc * inv
        out = xhat * gam + bet
        m = x.data.size // c

        def backward(g):
            dgamma = (g * xhat).sum(axis=axes)
            dbeta = g.sum(axis=axes)
            dxhat = g * gam
            s1 = dxhat.sum(axis=axes).reshape(bshape)
            s2 = (dxhat * xhat).sum(axis=axes).reshape(bshape)
            dx = inv * (dxhat - s1 / m - xhat * (s2 / m))
            return dx, dgamma, dbeta

        return Tensor.from_op(out, (x, gamma, beta), backward)

    inv = (1.0 / np.sqrt(running_var + eps)).astype(x.dtype).reshape(bshape)
    mu = running_mean.astype(x.dtype).reshape(bshape)
    xhat = (x.data - mu) * inv
    out = xhat * gam + bet

    def backward_eval(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        return g * gam * inv, dgamma, dbeta

    return Tensor.from_op(out, (x, gamma, beta), backward_eval)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(np.where(mask, x.data, 0).astype(x.dtype, copy=False), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    return x.sigmoid()


def softplus(x: Tensor) -> Tensor:
    return x.softplus()


def silu(x: Tensor) -> Tensor:
    """``x * sigmoid(x)`` as a single fused op."""
    s = 1.0 / (1.0 + np.exp(-x.data.astype(np.float64)))
    s = s.astype(x.dtype, copy=False)
    out = x.data * s
    return Tensor.from_op(out, (x,), lambda g: (g * (s + out * (1.0 - s)),))


def gelu(x: Tensor) -> Tensor:
    """Exact Gaussian-error-linear unit, ``0.5 x (1 + erf(x / sqrt(2)))``."""
    phi = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = (x.data * phi).astype(x.dtype, copy=False)

    def backward(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (phi + x.data * pdf),)

    return Tensor.from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    """Numerically stable ``log softmax`` along ``axis``."""
    ax = axis % x.ndim
    m = x.data.max(axis=ax, keepdims=True)
    z = x.data - m
    lse = np.log(np.exp(z).sum(axis=ax, keepdims=True))
    out = z - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return Tensor.from_op(out, (x,), backward)


# ---------------------------------------------------------------------------
# global pooling
# ---------------------------------------------------------------------------


def global_avg_pool(x: Tensor) -> Tensor:
    """(N,C,H,W) -> (N,C) spatial mean."""
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)
    out = x.data.mean(axis=(2, 3))
    return Tensor.from_op(
        out, (x,), lambda g: (np.broadcast_to(g[:, :, None, None] * scale, x.shape).copy(),)
    )


def _global_extremum(x: Tensor, mode: str) -> Tensor:
    """(N,C,H,W) -> (N,C); gradient goes to the first extremum in row-major order."""
    n, c, h, w = x.shape
    flat = x.data.reshape(n * c, h * w)
    idx = flat.argmax(axis=1) if mode == "max" else flat.argmin(axis=1)
    out = flat[np.arange(n * c), idx].reshape(n, c)

    def backward(g):
        dflat = np.zeros_like(flat)
        dflat[np.arange(n * c), idx] = g.reshape(-1)
        return (dflat.reshape(x.shape),)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), backward)


def global_max_pool(x: Tensor) -> Tensor:
    return _global_extremum(x, "max")


def global_min_pool(x: Tensor) -> Tensor:
    return _global_extremum(x, "min")


# ---------------------------------------------------------------------------
# gather
# ---------------------------------------------------------------------------


def permute_last(x: Tensor, perm: np.ndarray, inv: np.ndarray | None = None) -> Tensor:
    """Reorder the last axis by a permutation; backward applies the inverse."""
    length = x.shape[-1]
    _require(perm.shape == (length,), f"permute_last: permutation length {perm.shape} != axis length {length}")
    if inv is None:
        inv = np.argsort(perm)
    out = np.ascontiguousarray(x.data[..., perm])
    return Tensor.from_op(out, (x,), lambda g: (np.ascontiguousarray(g[..., inv]),))
