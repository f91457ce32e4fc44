"""Training objectives for weakly supervised binary segmentation.

All losses take a 1 x H x W probability map (the segmentation net's sigmoid
output) and return a scalar :class:`~weakseg.tensor.Tensor`, so they can be
recorded on a tape and differentiated.  Probabilities are clamped to
[1e-7, 1] before every log.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import (
    LOG_EPS,
    Tensor,
    add,
    apply_activation,
    clamp,
    log,
    mul,
    reduce,
    square,
    sub,
)


@dataclass(frozen=True)
class WeakMask:
    """The labeled-pixel set P of a partial annotation.

    Only foreground pixels carry labels (the erosion-derived regime); every
    coordinate must lie inside the stated image extent.
    """

    mask: np.ndarray  # bool H x W, True where a pixel is labeled foreground
    _float: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.mask)
        if m.ndim != 2 or m.dtype != np.bool_:
            raise ValueError("WeakMask.mask must be a 2-D boolean array")
        object.__setattr__(self, "mask", m)
        object.__setattr__(self, "_float", m.astype(np.float64)[None])

    @classmethod
    def from_coords(cls, coords, extent: tuple) -> "WeakMask":
        m = np.zeros(extent, dtype=bool)
        for r, c in coords:
            if not (0 <= r < extent[0] and 0 <= c < extent[1]):
                raise ValueError(f"coordinate ({r}, {c}) outside extent {extent}")
            m[r, c] = True
        return cls(m)

    @property
    def extent(self) -> tuple:
        return self.mask.shape

    @property
    def count(self) -> int:
        return int(self.mask.sum())

    def float_plane(self) -> np.ndarray:
        """0/1 float mask shaped 1 x H x W, ready for elementwise ops."""
        return self._float


@dataclass(frozen=True)
class SizeBounds:
    """Prior interval [a, b] on the foreground pixel count."""

    a: float
    b: float

    def __post_init__(self):
        if not 0.0 <= self.a < self.b:
            raise ValueError(f"bounds must satisfy 0 <= a < b, got ({self.a}, {self.b})")


def _check_probs(probs: Tensor, weak: WeakMask | None = None) -> None:
    if probs.values.ndim != 3 or probs.values.shape[0] != 1:
        raise ValueError(f"probability map must be 1 x H x W, got {probs.values.shape}")
    if weak is not None and probs.values.shape[1:] != weak.extent:
        raise ValueError(
            f"probability map {probs.values.shape[1:]} does not match "
            f"weak mask extent {weak.extent}")


def partial_cross_entropy(probs: Tensor, weak: WeakMask) -> Tensor:
    """Mean negative log-probability over the labeled foreground pixels only.

    Unlabeled pixels contribute nothing, so predictions outside P are
    unconstrained by this loss.
    """
    _check_probs(probs, weak)
    n = weak.count
    if n == 0:
        raise ValueError("partial cross-entropy is undefined for an empty label set")
    picked = mul(log(clamp(probs, LOG_EPS, 1.0)), Tensor(weak.float_plane()))
    return mul(reduce(picked, "sum"), -1.0 / n)


def weak_cross_entropy(probs: Tensor, weak: WeakMask) -> Tensor:
    """Full-image cross-entropy that treats every unlabeled pixel as background."""
    _check_probs(probs, weak)
    fg = Tensor(weak.float_plane())
    # foreground term: log p on P; background term: log(1 - p) elsewhere
    log_p = log(clamp(probs, LOG_EPS, 1.0))
    log_q = log(clamp(1.0 - probs, LOG_EPS, 1.0))
    total = add(mul(log_p, fg), mul(log_q, 1.0 - fg))
    n = probs.values.size
    return mul(reduce(total, "sum"), -1.0 / n)


def soft_size(probs: Tensor) -> Tensor:
    """Differentiable foreground area: the sum of all probabilities."""
    _check_probs(probs)
    return reduce(probs, "sum")


def size_penalty(s: Tensor, bounds: SizeBounds) -> Tensor:
    """Quadratic penalty outside [a, b], exactly zero inside.

    Written as relu(a - s)^2 + relu(s - b)^2 so it is continuous, zero on
    the closed interval, and has derivative 0 approaching the bounds from
    inside.
    """
    if s.values.ndim != 0:
        raise ValueError("size penalty expects a scalar soft size")
    below = apply_activation(sub(mul(s, -1.0), -bounds.a), "relu")
    above = apply_activation(sub(s, bounds.b), "relu")
    return add(square(below), square(above))


def sccl_objective(probs: Tensor, weak: WeakMask, bounds: SizeBounds,
                   lambda_s: float) -> Tensor:
    """Partial cross-entropy plus weighted size penalty on the soft size."""
    if lambda_s < 0.0:
        raise ValueError(f"lambda_s must be >= 0, got {lambda_s}")
    pce = partial_cross_entropy(probs, weak)
    return add(pce, mul(size_penalty(soft_size(probs), bounds), lambda_s))


def accl_generator_loss(response: Tensor) -> Tensor:
    """Mean squared distance of discriminator responses from the real label 1."""
    return reduce(square(sub(response, 1.0)), "mean")


def discriminator_objective(response_fake: Tensor, response_real: Tensor) -> Tensor:
    """Least-squares discriminator loss: fakes toward 0, references toward 1."""
    if response_fake.values.size != response_real.values.size:
        raise ValueError(
            f"response maps disagree in patch count: "
            f"{response_fake.values.size} vs {response_real.values.size}")
    fake_term = reduce(square(response_fake), "mean")
    real_term = reduce(square(sub(response_real, 1.0)), "mean")
    return add(fake_term, real_term)


def generator_objective(probs: Tensor, weak: WeakMask, response: Tensor,
                        lambda_a: float) -> Tensor:
    """Partial cross-entropy plus weighted adversarial term."""
    if lambda_a < 0.0:
        raise ValueError(f"lambda_a must be >= 0, got {lambda_a}")
    pce = partial_cross_entropy(probs, weak)
    return add(pce, mul(accl_generator_loss(response), lambda_a))
