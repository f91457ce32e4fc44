"""Adam updates and the two-phase learning-rate schedule."""

from __future__ import annotations

from typing import Mapping

import numpy as np

from .tensor import Tensor


class OptimError(RuntimeError):
    """Raised when a step cannot be applied (e.g. non-finite gradients)."""


class AdamState:
    """First/second moment buffers plus the shared step counter.

    Buffers are allocated lazily to mirror whatever parameter set the first
    step sees; afterwards the parameter names must stay fixed.
    """

    def __init__(self, beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}


def adam_step(params: Mapping[str, Tensor], state: AdamState, lr: float) -> None:
    """One Adam update over `params` using their populated ``grad`` buffers.

    Validates every gradient for finiteness before touching any parameter,
    so a poisoned step never applies partially.
    """
    if lr < 0.0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    for name, p in params.items():
        if p.grad is None:
            raise OptimError(f"parameter {name!r} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise OptimError(f"non-finite gradient in parameter {name!r}; step aborted")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.values)
            state.v[name] = np.zeros_like(p.values)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.values -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def lr_at_epoch(epoch: int, total: int, lr0: float) -> float:
    """Constant `lr0` for the first half, then linear decay to 0 at `total`.

    Epochs are 1-based; `total` must be even so the halves split cleanly.
    """
    if total < 2 or total % 2 != 0:
        raise ValueError(f"total epochs must be even and >= 2, got {total}")
    if not 1 <= epoch <= total:
        raise ValueError(f"epoch {epoch} out of range [1, {total}]")
    half = total // 2
    if epoch <= half:
        return lr0
    return max(0.0, lr0 * (1.0 - (epoch - half) / half))
