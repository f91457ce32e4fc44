"""End-to-end training of one variant: alternating adversarial or plain loops.

A run is strictly single-threaded and fully determined by its four seeds
(parameter init, per-epoch sample order, pool shuffle, reference-mask
augmentation).  Adversarial variants take one discriminator step followed by
one generator step per sample, batch size 1; gradient flow from the
discriminator's own loss into the generator is severed by feeding it the
detached probability map.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from .data import ReferenceMaskPool, SegSample, augment_mask
from .losses import (
    SizeBounds,
    WeakMask,
    accl_generator_loss,
    discriminator_objective,
    partial_cross_entropy,
    sccl_objective,
    weak_cross_entropy,
)
from .metrics import binarize, dice
from .nets import NetConfig, UNetLite, build_discriminator, build_unet
from .optim import AdamState, adam_step, zero_grads
from .tensor import Tape, Tensor, backward

VARIANTS = ("weak_ce", "partial_ce", "sccl",
            "accl_partial", "accl_unpaired", "accl_paired", "fs_ce")

ADVERSARIAL = {"accl_partial": "partial", "accl_unpaired": "unpaired",
               "accl_paired": "paired"}

# desk-scale default adversarial weights per reference-mask regime
DEFAULT_LAMBDA_A = {"accl_partial": 1e-3, "accl_unpaired": 5e-2, "accl_paired": 5e-2}


class TrainingError(RuntimeError):
    """A run aborted (bad configuration or non-finite loss)."""


@dataclass(frozen=True)
class Seeds:
    """The four independent randomness sources of one run."""

    init: int = 0
    order: int = 1
    pool: int = 2
    augment: int = 3

    @classmethod
    def from_master(cls, master: int) -> "Seeds":
        init, order, pool, augment = (
            int(v) for v in np.random.SeedSequence(int(master)).generate_state(4))
        return cls(init, order, pool, augment)


@dataclass
class TrainConfig:
    variant: str = "partial_ce"
    epochs: int = 60
    lr0: float = 2e-4
    lambda_s: float = 0.01
    lambda_a: Optional[float] = None  # None: per-variant default
    bounds: Optional[SizeBounds] = None  # required by sccl
    net: NetConfig = field(default_factory=NetConfig)
    seeds: Seeds = field(default_factory=Seeds)
    augment: str = "auto"  # auto | on | off; references only, never images
    eval_every: int = 1
    d_warmup: int = 0  # leading epochs where only the discriminator trains
    d_steps: int = 1   # discriminator updates per sample (canonical: 1)

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise TrainingError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.epochs < 2 or self.epochs % 2 != 0:
            raise TrainingError(f"epochs must be even and >= 2, got {self.epochs}")
        if self.lr0 < 0 or self.lambda_s < 0:
            raise TrainingError("lr0 and lambda_s must be >= 0")
        if self.lambda_a is not None and self.lambda_a < 0:
            raise TrainingError("lambda_a must be >= 0")
        if self.variant == "sccl" and self.bounds is None:
            raise TrainingError("sccl requires size bounds")
        if self.augment not in ("auto", "on", "off"):
            raise TrainingError(f"augment must be auto/on/off, got {self.augment!r}")
        if self.eval_every < 1:
            raise TrainingError("eval_every must be >= 1")
        if self.d_warmup < 0 or self.d_warmup >= self.epochs:
            raise TrainingError("d_warmup must be in [0, epochs)")
        if self.d_steps < 1:
            raise TrainingError("d_steps must be >= 1")
        self.net.validate()

    def effective_lambda_a(self) -> float:
        if self.lambda_a is not None:
            return self.lambda_a
        return DEFAULT_LAMBDA_A.get(self.variant, 0.0)

    def augmentation_active(self) -> bool:
        if self.variant not in ADVERSARIAL:
            return False
        if self.augment == "auto":
            return ADVERSARIAL[self.variant] != "paired"
        return self.augment == "on"


@dataclass
class MetricsRecord:
    epoch: int
    g_loss: float
    d_loss: Optional[float]  # None for non-adversarial variants
    dice: float
    soft_size: float
    lr: float
    seconds: float


METRICS_HEADER = "epoch,g_loss,d_loss,dice,soft_size,lr,seconds"


def metrics_to_csv(records: list[MetricsRecord]) -> str:
    lines = [METRICS_HEADER]
    for r in records:
        d_loss = "" if r.d_loss is None else repr(r.d_loss)
        lines.append(f"{r.epoch},{r.g_loss!r},{d_loss},{r.dice!r},"
                     f"{r.soft_size!r},{r.lr!r},{r.seconds!r}")
    return "\n".join(lines) + "\n"


def _lr_schedule(epoch: int, total: int, lr0: float) -> float:
    from .optim import lr_at_epoch
    return lr_at_epoch(epoch, total, lr0)


def train_variant(config: TrainConfig, train_set: list[SegSample],
                  test_set: list[SegSample],
                  pool: Optional[ReferenceMaskPool] = None,
                  observer: Optional[Callable] = None) -> tuple:
    """Train one variant; returns (model, metrics records).

    `pool` is required for the accl_* variants and must match the variant's
    reference-mask mode.  `observer`, when given, is called after every
    parameter update as observer(phase, generator, discriminator) with phase
    "d_step" or "g_step".
    """
    config.validate()
    if not train_set:
        raise TrainingError("training set is empty")
    adversarial = config.variant in ADVERSARIAL
    if adversarial:
        if pool is None:
            raise TrainingError(f"{config.variant} requires a reference-mask pool")
        if pool.mode != ADVERSARIAL[config.variant]:
            raise TrainingError(
                f"{config.variant} needs a {ADVERSARIAL[config.variant]!r} pool, "
                f"got {pool.mode!r}")
    for s in train_set:
        if config.variant != "fs_ce" and s.weak.count == 0:
            raise TrainingError(f"sample {s.id} has an empty weak annotation")

    net_cfg = replace(config.net, init_seed=config.seeds.init)
    generator = build_unet(net_cfg)
    g_state = AdamState(beta1=0.5, beta2=0.999)
    discriminator = None
    d_state = None
    if adversarial:
        discriminator = build_discriminator(net_cfg)
        d_state = AdamState(beta1=0.5, beta2=0.999)

    rng_order = np.random.default_rng(np.random.SeedSequence([config.seeds.order]))
    rng_aug = np.random.default_rng(np.random.SeedSequence([config.seeds.augment]))
    augment_refs = config.augmentation_active()
    lambda_a = config.effective_lambda_a()

    full_masks = {s.id: WeakMask(s.full_mask.astype(bool)) for s in train_set} \
        if config.variant == "fs_ce" else {}
    images = {s.id: Tensor(s.image[None]) for s in train_set}

    def generator_loss(probs: Tensor, sample: SegSample,
                       response: Optional[Tensor]) -> Tensor:
        if config.variant == "weak_ce":
            return weak_cross_entropy(probs, sample.weak)
        if config.variant == "partial_ce":
            return partial_cross_entropy(probs, sample.weak)
        if config.variant == "sccl":
            return sccl_objective(probs, sample.weak, config.bounds, config.lambda_s)
        if config.variant == "fs_ce":
            return weak_cross_entropy(probs, full_masks[sample.id])
        loss = partial_cross_entropy(probs, sample.weak)
        if response is not None:
            loss = loss + lambda_a * accl_generator_loss(response)
        return loss

    def evaluate() -> float:
        if not test_set:
            return 0.0
        scores = [dice(binarize(generator.forward(Tensor(s.image[None]))), s.full_mask)
                  for s in test_set]
        return float(np.mean(scores))

    records: list[MetricsRecord] = []
    last_dice = 0.0
    for epoch in range(1, config.epochs + 1):
        started = time.perf_counter()
        lr = _lr_schedule(epoch, config.epochs, config.lr0)
        order = rng_order.permutation(len(train_set))
        g_sum = 0.0
        d_sum = 0.0
        size_sum = 0.0
        for idx in order:
            sample = train_set[int(idx)]
            x = images[sample.id]
            if adversarial:
                fake = generator.forward(x).detach()
                d_val = 0.0
                for _ in range(config.d_steps):
                    ref = pool.mask_for(sample.id)
                    if augment_refs:
                        ref = augment_mask(ref, rng_aug)
                    ref_t = Tensor(ref.astype(np.float64)[None])
                    with Tape() as tape_d:
                        d_loss = discriminator_objective(
                            discriminator.forward(x, fake),
                            discriminator.forward(x, ref_t))
                        d_val = d_loss.item()
                        if not np.isfinite(d_val):
                            raise TrainingError(
                                f"non-finite discriminator loss at epoch {epoch}, "
                                f"sample {sample.id}")
                        backward(d_loss, tape_d)
                    adam_step(discriminator.params, d_state, lr)
                    zero_grads(discriminator.params)
                    if observer is not None:
                        observer("d_step", generator, discriminator)
                d_sum += d_val

            if adversarial and epoch <= config.d_warmup:
                # warmup: the discriminator learns the reference distribution
                # before the generator starts moving
                probs = generator.forward(x)
                response = discriminator.forward(x, probs) if lambda_a > 0.0 else None
                g_sum += generator_loss(probs, sample, response).item()
                size_sum += float(probs.values.sum())
                continue

            with Tape() as tape_g:
                probs = generator.forward(x)
                response = None
                if adversarial and lambda_a > 0.0:
                    response = discriminator.forward(x, probs)
                loss = generator_loss(probs, sample, response)
                g_val = loss.item()
                if not np.isfinite(g_val):
                    raise TrainingError(
                        f"non-finite generator loss at epoch {epoch}, "
                        f"sample {sample.id}")
                backward(loss, tape_g)
            adam_step(generator.params, g_state, lr)
            zero_grads(generator.params)
            if adversarial:
                zero_grads(discriminator.params)  # adversarial term leaks grads into D
            g_sum += g_val
            size_sum += float(probs.values.sum())
            if observer is not None:
                observer("g_step", generator, discriminator)

        if epoch == 1 or epoch == config.epochs or epoch % config.eval_every == 0:
            last_dice = evaluate()
        n = len(train_set)
        records.append(MetricsRecord(
            epoch=epoch,
            g_loss=g_sum / n,
            d_loss=(d_sum / n) if adversarial else None,
            dice=last_dice,
            soft_size=size_sum / n,
            lr=lr,
            seconds=time.perf_counter() - started,
        ))
    return generator, records


# ---------------------------------------------------------------------------
# checkpoint serialization
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"ACCL"
CHECKPOINT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


class CheckpointMagicError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


def checkpoint_bytes(model: UNetLite) -> bytes:
    """Serialize: magic, u32 version, then (name, rank, extents, f64 values)."""
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", CHECKPOINT_VERSION)]
    for name, tensor in model.params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<I", len(encoded)))
        parts.append(encoded)
        shape = tensor.values.shape
        parts.append(struct.pack("<I", len(shape)))
        parts.append(struct.pack(f"<{len(shape)}I", *shape))
        parts.append(tensor.values.astype("<f8").tobytes())
    return b"".join(parts)


def checkpoint(model: UNetLite, path: str) -> None:
    data = checkpoint_bytes(model)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    import os
    os.replace(tmp, path)


def _read_exact(data: bytes, offset: int, n: int, what: str) -> tuple:
    if offset + n > len(data):
        raise CheckpointTruncatedError(
            f"checkpoint truncated while reading {what} "
            f"(need {n} bytes at offset {offset}, file has {len(data)})")
    return data[offset:offset + n], offset + n


def read_checkpoint(path: str) -> dict:
    """Parse a checkpoint into an ordered {name: ndarray} dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    blob, offset = _read_exact(data, 0, 4, "magic")
    if blob != CHECKPOINT_MAGIC:
        raise CheckpointMagicError(f"bad magic {blob!r}, expected {CHECKPOINT_MAGIC!r}")
    blob, offset = _read_exact(data, offset, 4, "version")
    version = struct.unpack("<I", blob)[0]
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(
            f"unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    params = {}
    while offset < len(data):
        blob, offset = _read_exact(data, offset, 4, "name length")
        (name_len,) = struct.unpack("<I", blob)
        blob, offset = _read_exact(data, offset, name_len, "name")
        name = blob.decode("utf-8")
        blob, offset = _read_exact(data, offset, 4, f"rank of {name}")
        (rank,) = struct.unpack("<I", blob)
        blob, offset = _read_exact(data, offset, 4 * rank, f"extents of {name}")
        shape = struct.unpack(f"<{rank}I", blob)
        count = int(np.prod(shape)) if shape else 1
        blob, offset = _read_exact(data, offset, 8 * count, f"values of {name}")
        params[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    return params


def restore(path: str, net_config: NetConfig) -> UNetLite:
    """Rebuild a generator from `net_config` and load checkpointed values.

    The parameter name set and every shape must match the freshly built
    net exactly; nothing is assigned until everything validates.
    """
    stored = read_checkpoint(path)
    model = build_unet(net_config)
    want = {name: t.values.shape for name, t in model.params.items()}
    got = {name: arr.shape for name, arr in stored.items()}
    if want != got:
        missing = sorted(set(want) - set(got))
        extra = sorted(set(got) - set(want))
        wrong = sorted(n for n in set(want) & set(got) if want[n] != got[n])
        raise CheckpointShapeError(
            f"checkpoint does not fit config {net_config}: "
            f"missing={missing} extra={extra} shape_mismatch={wrong}")
    for name, arr in stored.items():
        model.params[name].values[...] = arr
    return model


def infer_net_config(path: str, image_side: int) -> NetConfig:
    """Recover generator depth/width from a checkpoint's parameter table."""
    stored = read_checkpoint(path)
    if "stem.kernel" not in stored:
        raise CheckpointShapeError("checkpoint has no stem.kernel record")
    base = stored["stem.kernel"].shape[0]
    depth = 0
    while f"down{depth + 1}.kernel" in stored:
        depth += 1
    if depth < 2:
        raise CheckpointShapeError(f"checkpoint encodes unet_depth {depth} < 2")
    return NetConfig(unet_depth=depth, base_channels=base,
                     disc_layers=2, image_side=image_side, init_seed=0)
