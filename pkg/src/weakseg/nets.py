"""Segmentation generator (UNet-lite) and conditional patch discriminator.

Both nets are plain parameter dictionaries plus a forward function built from
the tensor ops, so the same code path serves training (under a tape) and
inference (no tape).  There are no normalization layers anywhere: batches are
fixed at size 1, which makes batch statistics degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    concat_channels,
    conv2d,
    leaky_relu,
    relu,
    sigmoid,
    upsample_nearest2x,
)


class ConfigError(ValueError):
    """A network configuration violates its structural invariants."""


@dataclass(frozen=True)
class NetConfig:
    """Shared architecture knobs for the generator and discriminator.

    `image_side` must divide cleanly through all `unet_depth` halvings and
    leave the discriminator a response map of at least 1 x 1.
    """

    unet_depth: int = 3
    base_channels: int = 8
    disc_layers: int = 3
    image_side: int = 64
    init_seed: int = 0

    def validate(self) -> None:
        if self.unet_depth < 2:
            raise ConfigError(f"unet_depth must be >= 2, got {self.unet_depth}")
        if self.base_channels < 4:
            raise ConfigError(f"base_channels must be >= 4, got {self.base_channels}")
        if self.disc_layers < 2:
            raise ConfigError(f"disc_layers must be >= 2, got {self.disc_layers}")
        if self.image_side < 1 or self.image_side % (1 << self.unet_depth) != 0:
            raise ConfigError(
                f"image_side {self.image_side} is not divisible by "
                f"2^unet_depth = {1 << self.unet_depth}")
        if self.image_side >> self.disc_layers < 1:
            raise ConfigError(
                f"disc_layers {self.disc_layers} collapses a {self.image_side}px "
                f"image below a 1x1 response map")


def _init_conv(rng: np.random.Generator, c_out: int, c_in: int, k: int) -> tuple:
    """Fan-in-scaled uniform init for one conv layer (kernel, bias)."""
    bound = float(np.sqrt(1.0 / (c_in * k * k)))
    kernel = Tensor(rng.uniform(-bound, bound, size=(c_out, c_in, k, k)),
                    requires_grad=True)
    bias = Tensor(rng.uniform(-bound, bound, size=c_out), requires_grad=True)
    return kernel, bias


HEAD_BIAS = -3.0  # initial foreground prior: sigmoid(-3) ~ 0.047


class UNetLite:
    """Encoder/decoder segmentation net with skip connections.

    Channel widths double per downsampling stage starting at `base_channels`;
    the decoder upsamples with nearest-neighbor 2x followed by a 3x3 conv on
    the concatenated skip features.  The single-channel head ends in a
    sigmoid, so outputs are foreground probabilities in (0, 1).

    Hidden activations are leaky (slope 0.2) rather than hard relu: the
    size-penalty and adversarial objectives produce strong early
    whole-image pushes, and hard relu units die under them (observed as a
    permanently constant output at sigmoid(head bias)).

    The head bias starts at `HEAD_BIAS` rather than the fan-in draw: with a
    ~0.5 initial output the soft size of a 64px image begins far above any
    plausible size prior, and the first size-penalty or adversarial steps
    crush every probability below the log clamp (1e-7) before the labeled
    pixels can anchor, after which their gradients are dead.  Starting at a
    sparse prior keeps the constraint losses inside their informative range.
    """

    def __init__(self, config: NetConfig):
        config.validate()
        self.config = config
        d, c = config.unet_depth, config.base_channels
        rng = np.random.default_rng(np.random.SeedSequence([config.init_seed, 0]))
        self.params: dict[str, Tensor] = {}

        def conv(name, c_out, c_in, k):
            self.params[f"{name}.kernel"], self.params[f"{name}.bias"] = \
                _init_conv(rng, c_out, c_in, k)

        conv("stem", c, 1, 3)
        for i in range(1, d + 1):
            conv(f"down{i}", c << i, c << (i - 1), 3)
        conv("mid", c << d, c << d, 3)
        for i in range(d, 0, -1):
            conv(f"up{i}", c << (i - 1), (c << i) + (c << (i - 1)), 3)
        conv("head", 1, c, 1)
        self.params["head.bias"].values.fill(HEAD_BIAS)

    def _layer(self, name: str) -> tuple:
        return self.params[f"{name}.kernel"], self.params[f"{name}.bias"]

    def forward(self, image: Tensor) -> Tensor:
        side = self.config.image_side
        if image.values.shape != (1, side, side):
            raise ShapeError(
                f"expected input of shape (1, {side}, {side}), "
                f"got {image.values.shape}")
        d = self.config.unet_depth
        k, b = self._layer("stem")
        feats = [leaky_relu(conv2d(image, k, b, 1, 1))]
        for i in range(1, d + 1):
            k, b = self._layer(f"down{i}")
            feats.append(leaky_relu(conv2d(feats[-1], k, b, 2, 1)))
        k, b = self._layer("mid")
        x = leaky_relu(conv2d(feats[-1], k, b, 1, 1))
        for i in range(d, 0, -1):
            k, b = self._layer(f"up{i}")
            x = leaky_relu(conv2d(
                concat_channels(upsample_nearest2x(x), feats[i - 1]), k, b, 1, 1))
        k, b = self._layer("head")
        return sigmoid(conv2d(x, k, b, 1, 0))


DISC_WIDTH_FACTOR = 4  # discriminator width relative to the generator base


class PatchDiscriminator:
    """Strided conv stack judging N x N patches of an (image, mask) pair.

    Input is the 2-channel concatenation of the grayscale image and a mask
    (probabilities or binary references).  Each layer is a kernel-4 stride-2
    conv with leaky-relu(0.2) and channel doubling; the head is a linear 1x1
    conv, since the least-squares objective acts on raw responses.  The
    stack is several times wider than the generator: it must become
    discriminative within the first epoch, before the generator's
    foreground-only loss can saturate the probability map.
    """

    def __init__(self, config: NetConfig):
        config.validate()
        self.config = config
        layers, c = config.disc_layers, DISC_WIDTH_FACTOR * config.base_channels
        rng = np.random.default_rng(np.random.SeedSequence([config.init_seed, 1]))
        self.params: dict[str, Tensor] = {}
        c_in = 2
        for i in range(1, layers + 1):
            c_out = c << (i - 1)
            kk, bb = _init_conv(rng, c_out, c_in, 4)
            self.params[f"disc{i}.kernel"], self.params[f"disc{i}.bias"] = kk, bb
            c_in = c_out
        kk, bb = _init_conv(rng, 1, c_in, 1)
        self.params["head.kernel"], self.params["head.bias"] = kk, bb
        # exact single-response receptive field of the k4/s2 stack + 1x1 head
        self.receptive_field = 1 + 3 * ((1 << layers) - 1)
        self.response_side = config.image_side >> layers

    def forward(self, image: Tensor, mask: Tensor) -> Tensor:
        side = self.config.image_side
        for name, t in (("image", image), ("mask", mask)):
            if t.values.shape != (1, side, side):
                raise ShapeError(
                    f"discriminator {name} must have shape (1, {side}, {side}), "
                    f"got {t.values.shape}")
        x = concat_channels(image, mask)
        for i in range(1, self.config.disc_layers + 1):
            k = self.params[f"disc{i}.kernel"]
            b = self.params[f"disc{i}.bias"]
            x = leaky_relu(conv2d(x, k, b, 2, 1), 0.2)
        return conv2d(x, self.params["head.kernel"], self.params["head.bias"], 1, 0)


def build_unet(config: NetConfig) -> UNetLite:
    return UNetLite(config)


def forward_seg(net: UNetLite, image: Tensor) -> Tensor:
    return net.forward(image)


def build_discriminator(config: NetConfig) -> PatchDiscriminator:
    return PatchDiscriminator(config)


def forward_disc(disc: PatchDiscriminator, image: Tensor, mask: Tensor) -> Tensor:
    return disc.forward(image, mask)


def parameter_count(params: dict) -> int:
    return sum(t.values.size for t in params.values())
