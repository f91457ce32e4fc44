"""Weakly supervised binary segmentation laboratory.

A small numpy-based stack for studying constrained losses on partial
annotations: a tape-based autodiff tensor engine, a UNet-lite generator with
a conditional patch discriminator, weak / partial / size-constrained /
adversarial objectives, seeded synthetic benchmarks, and deterministic
training with Dice evaluation.
"""

from .config import ConfigError, ExperimentConfig, emit_config, parse_config
from .data import (
    ReferenceMaskPool,
    SegSample,
    ShapeSpec,
    annotation_ratio,
    augment_mask,
    build_reference_pool,
    calibrate_erosion,
    erode_to_weak,
    gen_dataset,
    load_dataset,
    save_dataset,
)
from .losses import (
    SizeBounds,
    WeakMask,
    accl_generator_loss,
    discriminator_objective,
    generator_objective,
    partial_cross_entropy,
    sccl_objective,
    size_penalty,
    soft_size,
    weak_cross_entropy,
)
from .metrics import (
    EvalReport,
    binarize,
    dice,
    evaluate_samples,
    expansion_ratio,
    size_bounds,
)
from .nets import (
    NetConfig,
    PatchDiscriminator,
    UNetLite,
    build_discriminator,
    build_unet,
    forward_disc,
    forward_seg,
)
from .optim import AdamState, adam_step, lr_at_epoch
from .tensor import Tape, Tensor, backward, grad_check
from .train import (
    MetricsRecord,
    Seeds,
    TrainConfig,
    TrainingError,
    checkpoint,
    restore,
    train_variant,
)

__version__ = "0.1.0"
