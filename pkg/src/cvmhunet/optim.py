"""AdamW with decoupled weight decay.

Decay multiplies each non-exempt parameter by ``1 - lr * weight_decay``
*before* the moment-based update, so it never leaks into the moment
estimates. Parameters flagged ``weight_decay_exempt`` (norm affines, state
matrices, skip gains, biases of scan projections) skip the decay but still
receive the Adam update.
"""

from __future__ import annotations

import warnings

import numpy as np

from .tensor import Parameter

__all__ = ["AdamW"]


class AdamW:
    def __init__(
        self,
        params,
        lr: float = 0.001,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.05,
    ):
        self.params: list[Parameter] = list(params)
        if not self.params:
            raise ValueError("optimizer needs at least one parameter")
        if lr < 0 or eps <= 0 or weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0, eps > 0")
        if not (0.0 <= betas[0] < 1.0 and 0.0 <= betas[1] < 1.0):
            raise ValueError(f"betas must lie in [0, 1), got {betas}")
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for i, p in enumerate(self.params):
            if p.grad is None:
                warnings.warn(
                    f"adamw: parameter {p.name or i} has no gradient; skipped", stacklevel=2
                )
                continue
            g = p.grad
            if not p.weight_decay_exempt and self.weight_decay != 0.0:
                p.data *= 1.0 - self.lr * self.weight_decay
            m, v = self._m[i], self._v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= (self.lr * update).astype(p.data.dtype)

    # -- persistence (arrays suitable for the tensor checkpoint format) ----------

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {"step": np.array([float(self.step_count)], dtype=np.float32)}
        for i, _ in enumerate(self.params):
            out[f"p{i:04d}.m"] = self._m[i]
            out[f"p{i:04d}.v"] = self._v[i]
        return out

    def load_state_tensors(self, state: dict[str, np.ndarray]) -> None:
        expected = {"step"} | {f"p{i:04d}.{s}" for i in range(len(self.params)) for s in "mv"}
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ValueError(f"optimizer state mismatch: missing {missing}, unknown {extra}")
        self.step_count = int(round(float(state["step"][0])))
        for i, p in enumerate(self.params):
            for attr, key in ((self._m, f"p{i:04d}.m"), (self._v, f"p{i:04d}.v")):
                arr = state[key]
                if arr.shape != p.data.shape:
                    raise ValueError(
                        f"optimizer moment {key} has shape {arr.shape}, parameter is {p.data.shape}"
                    )
                attr[i] = arr.astype(p.data.dtype)
