"""Finite-difference verification suite over every differentiable operation
and the fully composed generator / discriminator objectives."""

from __future__ import annotations

import numpy as np

from .losses import (
    SizeBounds,
    WeakMask,
    accl_generator_loss,
    discriminator_objective,
    generator_objective,
    partial_cross_entropy,
    sccl_objective,
    soft_size,
    size_penalty,
    weak_cross_entropy,
)
from .nets import NetConfig, build_discriminator, build_unet
from .tensor import (
    Tensor,
    add,
    apply_activation,
    clamp,
    concat_channels,
    conv2d,
    grad_check,
    log,
    mul,
    reduce,
    square,
    sub,
    upsample_nearest2x,
)

TOLERANCE = 1e-4
INSTANCES = 20

_NET = NetConfig(unet_depth=2, base_channels=4, disc_layers=2, image_side=16)


def _random_weak(rng, side) -> WeakMask:
    mask = np.zeros((side, side), dtype=bool)
    labeled = rng.integers(1, 6)
    idx = rng.choice(side * side, size=labeled, replace=False)
    mask.reshape(-1)[idx] = True
    return WeakMask(mask)


def _op_checks(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    x = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
    y = Tensor(rng.standard_normal((2, 6, 6)), requires_grad=True)
    w = Tensor(rng.standard_normal((3, 2, 3, 3)) * 0.4, requires_grad=True)
    b = Tensor(rng.standard_normal(3) * 0.1, requires_grad=True)
    pos = Tensor(rng.uniform(0.05, 0.95, (2, 6, 6)), requires_grad=True)
    stride = int(rng.choice([1, 2]))
    return {
        "conv2d": (lambda: reduce(square(conv2d(x, w, b, stride, 1)), "mean"), [x, w, b]),
        "upsample_nearest2x": (lambda: reduce(square(upsample_nearest2x(x)), "mean"), [x]),
        "relu": (lambda: reduce(square(apply_activation(x, "relu")), "sum"), [x]),
        "leaky_relu": (lambda: reduce(square(apply_activation(x, "leaky_relu")), "sum"), [x]),
        "sigmoid": (lambda: reduce(square(apply_activation(x, "sigmoid")), "sum"), [x]),
        "concat_channels": (lambda: reduce(square(concat_channels(x, y)), "mean"), [x, y]),
        "reduce_sum": (lambda: reduce(mul(x, y), "sum"), [x, y]),
        "reduce_mean": (lambda: reduce(mul(x, y), "mean"), [x, y]),
        "elementwise": (
            lambda: reduce(square(sub(mul(x, y), add(x, 0.7))), "mean"), [x, y]),
        "log_clamp": (lambda: reduce(log(clamp(pos, 1e-7, 1.0)), "mean"), [pos]),
    }


def _loss_checks(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    side = 8
    probs = Tensor(rng.uniform(0.05, 0.95, (1, side, side)), requires_grad=True)
    weak = _random_weak(rng, side)
    resp = Tensor(rng.standard_normal((1, 3, 3)), requires_grad=True)
    resp2 = Tensor(rng.standard_normal((1, 3, 3)), requires_grad=True)
    s = float(probs.values.sum())
    bounds = SizeBounds(max(0.0, s - 10.0), s - 2.0)  # keep the penalty active
    return {
        "partial_cross_entropy": (lambda: partial_cross_entropy(probs, weak), [probs]),
        "weak_cross_entropy": (lambda: weak_cross_entropy(probs, weak), [probs]),
        "size_penalty": (lambda: size_penalty(soft_size(probs), bounds), [probs]),
        "sccl_objective": (
            lambda: sccl_objective(probs, weak, bounds, 0.01), [probs]),
        "accl_generator_loss": (lambda: accl_generator_loss(resp), [resp]),
        "discriminator_objective_terms": (
            lambda: discriminator_objective(resp, resp2), [resp, resp2]),
    }


def _composed_checks(seed: int) -> dict:
    rng = np.random.default_rng(seed)
    side = _NET.image_side
    cfg = NetConfig(unet_depth=_NET.unet_depth, base_channels=_NET.base_channels,
                    disc_layers=_NET.disc_layers, image_side=side, init_seed=seed)
    gen = build_unet(cfg)
    disc = build_discriminator(cfg)
    image = Tensor(rng.uniform(0.0, 1.0, (1, side, side)))
    weak = _random_weak(rng, side)
    ref = Tensor((rng.random((1, side, side)) < 0.3).astype(np.float64))

    def full_generator_objective():
        probs = gen.forward(image)
        response = disc.forward(image, probs)
        return generator_objective(probs, weak, response, 0.05)

    def full_discriminator_objective():
        fake = gen.forward(image).detach()
        return discriminator_objective(disc.forward(image, fake),
                                       disc.forward(image, ref))

    def unet_forward():
        return reduce(gen.forward(image), "mean")

    return {
        "generator_objective_composed": (
            full_generator_objective, list(gen.params.values())),
        "discriminator_objective_composed": (
            full_discriminator_objective, list(disc.params.values())),
        "unet_forward": (unet_forward, list(gen.params.values())),
    }


def run_suite(instances: int = INSTANCES, verbose: bool = False) -> list:
    """Max relative FD error per check name over `instances` seeded draws."""
    results = {}
    for i in range(instances):
        groups = {}
        groups.update(_op_checks(2000 + i))
        groups.update(_loss_checks(3000 + i))
        groups.update(_composed_checks(4000 + i))
        for name, (f, params) in groups.items():
            coords = 3 if name.endswith("_composed") or name == "unet_forward" else 16
            err = grad_check(f, params, seed=i, max_coords=coords)
            results[name] = max(results.get(name, 0.0), err)
        if verbose:
            print(f"  instance {i + 1}/{instances} done")
    return sorted(results.items())
