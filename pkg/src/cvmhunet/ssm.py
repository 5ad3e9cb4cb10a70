"""Selective state-space recurrence (diagonal S6) over flattened scan sequences.

Per channel ``d`` and state ``s`` the recurrence over time ``t`` is

    h_t = exp(dt_t * A[d,s]) * h_{t-1} + dt_t * B_t[s] * u_t[d]
    y_t = sum_s C_t[s] * h_t[d,s] + D[d] * u_t[d]

with ``A`` held negative (``-exp(A_log)``) so the propagator ``exp(dt*A)``
stays inside the unit interval and ``dt = softplus(raw)`` stays positive.
The state transition uses exact zero-order-hold discretization; the input
injection uses the Euler/simplified form ``dt * B``.

The scan itself is evaluated with a block algorithm: within-block scans are
vectorized across blocks (the Python loop runs ``block`` steps regardless of
sequence length), then per-block affine carries ``h -> a*h + b`` are composed
sequentially.  ``block=1`` and ``block=L`` reproduce the plain sequential
scan bitwise.  The backward pass is itself a (reversed) first-order scan, so
it reuses the same kernel.
"""

from __future__ import annotations

import math

import numpy as np

from . import functional as F
from .module import Module, ModuleList, init_linear
from .scan import flatten_spatial, scan_orders, unflatten_spatial
from .tensor import Parameter, Tensor

__all__ = [
    "sequential_scan",
    "first_order_scan",
    "selective_scan",
    "S6Direction",
    "DirectionalSSM",
    "default_dt_rank",
]

DEFAULT_STATE_DIM = 16
DEFAULT_SCAN_BLOCK = 64


def default_dt_rank(dim: int) -> int:
    """Low-rank bottleneck width for the timestep projection."""
    return max(1, math.ceil(dim / 16))


# ---------------------------------------------------------------------------
# scan kernels (plain numpy, last axis is time)
# ---------------------------------------------------------------------------


def sequential_scan(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Reference ``h_t = a_t * h_{t-1} + b_t`` with ``h_{-1} = 0``, step by step."""
    out = np.empty_like(b)
    h = np.zeros(b.shape[:-1], dtype=b.dtype)
    for t in range(b.shape[-1]):
        h = a[..., t] * h + b[..., t]
        out[..., t] = h
    return out


def first_order_scan(a: np.ndarray, b: np.ndarray, block: int = DEFAULT_SCAN_BLOCK) -> np.ndarray:
    """Blocked evaluation of ``h_t = a_t * h_{t-1} + b_t`` with ``h_{-1} = 0``.

    The sequence is split into blocks of ``block`` steps.  Pass one computes,
    for every block in parallel, the zero-state local scan and the running
    decay product; pass two threads the block carries through sequentially
    (each block acts on its carry as the affine map ``h -> prod * h + last``),
    and the carry entering each block is broadcast back onto the local scans.
    """
    if a.shape != b.shape:
        raise ValueError(f"scan inputs must share a shape, got {a.shape} vs {b.shape}")
    length = a.shape[-1]
    if length == 0:
        return b.copy()
    if block < 1:
        raise ValueError(f"scan block size must be >= 1, got {block}")
    block = min(block, length)
    n_blocks = -(-length // block)
    padded = n_blocks * block
    if padded != length:
        pad = padded - length
        a = np.concatenate([a, np.ones(a.shape[:-1] + (pad,), dtype=a.dtype)], axis=-1)
        b = np.concatenate([b, np.zeros(b.shape[:-1] + (pad,), dtype=b.dtype)], axis=-1)
    lead = a.shape[:-1]
    ab = a.reshape(lead + (n_blocks, block))
    bb = b.reshape(lead + (n_blocks, block))

    local = np.empty_like(bb)
    decay = np.empty_like(ab)
    acc = np.zeros(lead + (n_blocks,), dtype=b.dtype)
    prod = np.ones(lead + (n_blocks,), dtype=a.dtype)
    for i in range(block):
        acc = ab[..., i] * acc + bb[..., i]
        prod = prod * ab[..., i]
        local[..., i] = acc
        decay[..., i] = prod

    if n_blocks == 1:
        h = local
    else:
        carry_in = np.empty(lead + (n_blocks,), dtype=b.dtype)
        carry = np.zeros(lead, dtype=b.dtype)
        for k in range(n_blocks):
            carry_in[..., k] = carry
            carry = decay[..., k, -1] * carry + local[..., k, -1]
        h = local + decay * carry_in[..., None]

    h = h.reshape(lead + (padded,))
    return np.ascontiguousarray(h[..., :length]) if padded != length else h


def _reverse_scan(a: np.ndarray, g: np.ndarray, block: int) -> np.ndarray:
    """Adjoint of the first-order scan: ``lam_t = g_t + a_{t+1} * lam_{t+1}``."""
    af = np.flip(a, -1)
    a_shift = np.ones_like(af)
    a_shift[..., 1:] = af[..., :-1]
    return np.flip(first_order_scan(a_shift, np.flip(g, -1), block), -1)


# ---------------------------------------------------------------------------
# selective scan autograd op
# ---------------------------------------------------------------------------


def selective_scan(
    u: Tensor,
    delta: Tensor,
    A: Tensor,
    B: Tensor,
    C: Tensor,
    D: Tensor,
    block: int = DEFAULT_SCAN_BLOCK,
) -> Tensor:
    """Input-dependent state-space recurrence; single autograd op.

    Shapes: ``u``/``delta`` (N, D, L); ``A`` (D, S); ``B``/``C`` (N, S, L);
    ``D`` (D,).  Returns (N, D, L).  The forward saves only the state
    trajectory ``h``; everything else is recomputed in the backward, which is
    a reversed scan through the same kernel.
    """
    n, d, length = u.shape
    s = A.shape[1]
    if delta.shape != u.shape:
        raise ValueError(f"selective_scan: delta shape {delta.shape} != input shape {u.shape}")
    if A.shape != (d, s) or B.shape != (n, s, length) or C.shape != (n, s, length) or D.shape != (d,):
        raise ValueError(
            "selective_scan: inconsistent operand shapes "
            f"u={u.shape} A={A.shape} B={B.shape} C={C.shape} D={D.shape}"
        )

    dt_a = delta.data[:, :, None, :] * A.data[None, :, :, None]  # (N,D,S,L)
    abar = np.exp(dt_a)
    bbar = (delta.data * u.data)[:, :, None, :] * B.data[:, None, :, :]
    h = first_order_scan(abar, bbar, block)
    y = np.einsum("nsl,ndsl->ndl", C.data, h, optimize=True) + D.data[None, :, None] * u.data
    del abar, bbar, dt_a  # recomputed on demand in backward

    def backward(g):
        abar_b = np.exp(delta.data[:, :, None, :] * A.data[None, :, :, None])
        lam = _reverse_scan(abar_b, g[:, :, None, :] * C.data[:, None, :, :], block)
        h_prev = np.zeros_like(h)
        h_prev[..., 1:] = h[..., :-1]
        d_dta = lam * h_prev * abar_b  # gradient wrt the product delta*A
        dA = np.einsum("ndsl,ndl->ds", d_dta, delta.data, optimize=True)
        ddelta = np.einsum("ndsl,ds->ndl", d_dta, A.data, optimize=True)
        lam_b = np.einsum("ndsl,nsl->ndl", lam, B.data, optimize=True)
        ddelta += lam_b * u.data
        du = lam_b * delta.data + g * D.data[None, :, None]
        dB = np.einsum("ndsl,ndl->nsl", lam, delta.data * u.data, optimize=True)
        dC = np.einsum("ndl,ndsl->nsl", g, h, optimize=True)
        dD = np.einsum("ndl,ndl->d", g, u.data, optimize=True)
        return du, ddelta, dA, dB, dC, dD

    return Tensor.from_op(y, (u, delta, A, B, C, D), backward)


# ---------------------------------------------------------------------------
# modules
# ---------------------------------------------------------------------------


class S6Direction(Module):
    """Projections + selective scan for a single traversal direction.

    Per time step the input is projected to a low-rank timestep code plus the
    input-dependent ``B`` and ``C`` vectors; the timestep code is expanded
    back to one positive ``dt`` per channel through a softplus.
    """

    def __init__(
        self,
        dim: int,
        state_dim: int = DEFAULT_STATE_DIM,
        dt_rank: int | None = None,
        scan_block: int = DEFAULT_SCAN_BLOCK,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.dim = dim
        self.state_dim = state_dim
        self.dt_rank = dt_rank if dt_rank is not None else default_dt_rank(dim)
        self.scan_block = scan_block

        self.x_proj_weight = Parameter(init_linear(rng, self.dt_rank + 2 * state_dim, dim))
        dt_std = self.dt_rank**-0.5
        self.dt_weight = Parameter(rng.uniform(-dt_std, dt_std, size=(dim, self.dt_rank)).astype(np.float32))
        # bias chosen so softplus(bias) lands log-uniformly in [1e-3, 1e-1]
        dt = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1), size=dim))
        self.dt_bias = Parameter(np.log(np.expm1(dt)).astype(np.float32), weight_decay_exempt=True)
        a_row = np.log(np.arange(1, state_dim + 1, dtype=np.float64))
        self.A_log = Parameter(
            np.tile(a_row, (dim, 1)).astype(np.float32), weight_decay_exempt=True
        )
        self.D_skip = Parameter(np.ones(dim, dtype=np.float32), weight_decay_exempt=True)

    def forward(self, seq: Tensor) -> Tensor:
        """(N, dim, L) -> (N, dim, L) along an already-flattened scan order."""
        n, d, length = seq.shape
        if d != self.dim:
            raise ValueError(f"sequence has {d} channels, module built for {self.dim}")
        feats = seq.moveaxis(1, 2)  # (N, L, dim)
        projected = F.linear(feats, self.x_proj_weight)
        r, s = self.dt_rank, self.state_dim
        dt_code = projected[:, :, :r]
        b_seq = projected[:, :, r : r + s]
        c_seq = projected[:, :, r + s :]
        dt = F.softplus(F.linear(dt_code, self.dt_weight, self.dt_bias)).moveaxis(1, 2)
        a = -(self.A_log.exp())
        return selective_scan(
            seq, dt, a, b_seq.moveaxis(1, 2), c_seq.moveaxis(1, 2), self.D_skip, block=self.scan_block
        )


class DirectionalSSM(Module):
    """Four scan directions, each with its own recurrence; outputs are summed."""

    def __init__(
        self,
        dim: int,
        state_dim: int = DEFAULT_STATE_DIM,
        dt_rank: int | None = None,
        scan_mode: str = "cs2d",
        scan_block: int = DEFAULT_SCAN_BLOCK,
        rng: np.random.Generator | None = None,
    ):
        super().__init__()
        rng = rng or np.random.default_rng(0)
        self.scan_mode = scan_mode
        self.directions = ModuleList(
            [S6Direction(dim, state_dim, dt_rank, scan_block, rng) for _ in range(4)]
        )

    def forward(self, x: Tensor) -> Tensor:
        """(N, C, H, W) -> (N, C, H, W); sum of per-direction scan outputs."""
        n, c, h, w = x.shape
        orders = scan_orders(h, w, self.scan_mode)
        total: Tensor | None = None
        for order, s6 in zip(orders, self.directions):
            yseq = s6(flatten_spatial(x, order))
            ymap = unflatten_spatial(yseq, order)
            total = ymap if total is None else total + ymap
        return total
