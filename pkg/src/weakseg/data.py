"""Seeded synthetic segmentation benchmarks and weak-annotation derivation.

Targets are bright globular (disk) or ringlike (annulus) structures on a
darker background.  The intensity profile carries a soft halo that extends
past the true boundary, and a smooth illumination ramp plus Gaussian noise
sit on top, so foreground-only supervision provably over-segments while
everything-else-is-background supervision under-segments.

Weak annotations are produced by iterated binary erosion of the full mask;
reference-mask pools for adversarial training come in the three pairing
regimes (partial / unpaired / paired).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np

from .losses import WeakMask


class DataError(ValueError):
    """Invalid generation spec or malformed sample files."""


@dataclass(frozen=True)
class ShapeSpec:
    """Parameters of the synthetic target and image model."""

    topology: str = "globular"  # or "ringlike"
    image_side: int = 64
    radius_lo: float = 8.0
    radius_hi: float = 14.0
    ring_thickness_lo: float = 3.0
    ring_thickness_hi: float = 5.0
    fg_intensity: float = 0.75
    bg_intensity: float = 0.25
    noise_std: float = 0.04
    illum_amplitude: float = 0.15
    halo: float = 1.25  # intensity falloff reach, in multiples of the radius
    # bright non-target rings; they appear in the image only, never in the
    # ground-truth mask. A size prior cannot reject them (the lit total stays
    # inside plausible bounds) but a shape/topology prior can.
    distractors: int = 0
    distractor_radius_lo: float = 7.0
    distractor_radius_hi: float = 11.0
    distractor_thickness: float = 2.5
    distractor_strength: float = 1.0  # relative to the fg/bg contrast

    def validate(self) -> None:
        if self.topology not in ("globular", "ringlike"):
            raise DataError(f"unknown topology {self.topology!r}")
        if not 0 < self.radius_lo <= self.radius_hi < self.image_side / 2:
            raise DataError(
                f"radius range ({self.radius_lo}, {self.radius_hi}) must sit inside "
                f"(0, side/2 = {self.image_side / 2})")
        if self.topology == "ringlike":
            if not 1.0 <= self.ring_thickness_lo <= self.ring_thickness_hi:
                raise DataError("ring thickness range out of order")
            if self.ring_thickness_hi >= self.radius_lo - 1.5:
                raise DataError("rings would have no interior hole")
        for name in ("fg_intensity", "bg_intensity"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise DataError(f"{name} must lie in [0, 1], got {v}")
        if self.noise_std < 0 or self.illum_amplitude < 0:
            raise DataError("noise_std and illum_amplitude must be >= 0")
        if self.halo < 1.0:
            raise DataError(f"halo must be >= 1, got {self.halo}")
        if self.distractors < 0:
            raise DataError("distractors must be >= 0")
        if self.distractors:
            if not 1.0 <= self.distractor_radius_lo <= self.distractor_radius_hi:
                raise DataError("distractor radius range out of order")
            if not 0.0 < self.distractor_strength <= 1.0:
                raise DataError("distractor_strength must lie in (0, 1]")


@dataclass
class SegSample:
    """One image with its full ground truth and weak annotation."""

    id: int
    image: np.ndarray      # float64 H x W in [0, 1]
    full_mask: np.ndarray  # bool H x W, nonempty foreground
    weak: WeakMask
    topology: str = "globular"
    radius: float = 0.0
    seed: int = 0

    def annotation_ratio(self) -> float:
        return annotation_ratio(self.weak)


def _sample_rng(seed: int, sample_id: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(sample_id)]))


def _render(spec: ShapeSpec, rng: np.random.Generator) -> tuple:
    """One (image, full_mask, radius) draw of the synthetic model."""
    side = spec.image_side
    r = float(rng.uniform(spec.radius_lo, spec.radius_hi))
    margin = int(np.ceil(r)) + 2
    cy = float(rng.uniform(margin, side - 1 - margin))
    cx = float(rng.uniform(margin, side - 1 - margin))
    yy, xx = np.mgrid[0:side, 0:side]
    dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)

    if spec.topology == "globular":
        mask = dist <= r
        # plateau inside, quadratic falloff to 0 at halo * r: the dim outer
        # halo extends past the true boundary without dominating it
        profile = np.clip((spec.halo * r - dist) / (spec.halo * r - r), 0.0, 1.0) ** 2
    else:
        t = float(rng.uniform(spec.ring_thickness_lo, spec.ring_thickness_hi))
        inner = r - t
        mask = (dist <= r) & (dist >= inner)
        reach = 0.5 * t
        edge = np.minimum(r + reach - dist, dist - (inner - reach)) / reach
        profile = np.clip(np.minimum(edge, 1.0), 0.0, 1.0)

    contrast = spec.fg_intensity - spec.bg_intensity
    for _ in range(spec.distractors):
        # ring-shaped non-target structure, kept clear of the target's halo
        for _attempt in range(40):
            dr = float(rng.uniform(spec.distractor_radius_lo, spec.distractor_radius_hi))
            dm = int(np.ceil(dr)) + 1
            dy = float(rng.uniform(dm, side - 1 - dm))
            dx = float(rng.uniform(dm, side - 1 - dm))
            gap = np.hypot(dy - cy, dx - cx)
            if gap > spec.halo * r + dr + 2.0:
                break
        else:
            continue
        ddist = np.sqrt((yy - dy) ** 2 + (xx - dx) ** 2)
        t = spec.distractor_thickness
        edge = np.minimum(dr - ddist, ddist - (dr - t)) / (0.5 * t) + 0.5
        dprof = np.clip(edge, 0.0, 1.0) ** 2
        profile = np.maximum(profile, spec.distractor_strength * dprof)

    direction = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (np.cos(direction) * (xx - side / 2) + np.sin(direction) * (yy - side / 2))
    ramp = ramp / side * spec.illum_amplitude
    image = spec.bg_intensity + contrast * profile + ramp
    image += rng.normal(0.0, spec.noise_std, size=(side, side))
    return np.clip(image, 0.0, 1.0), mask, r


def gen_dataset(spec: ShapeSpec, n: int, seed: int,
                erosion_iterations: int = 1,
                element: str = "cross3") -> list[SegSample]:
    """Generate `n` samples; each sample's randomness derives from (seed, id).

    Weak annotations default to a single erosion; callers that target a
    specific annotation ratio re-derive them via :func:`apply_erosion`.
    """
    spec.validate()
    if n < 1:
        raise DataError(f"need at least one sample, got n={n}")
    samples = []
    for i in range(n):
        image, mask, r = _render(spec, _sample_rng(seed, i))
        weak = erode_to_weak(mask, element, erosion_iterations)
        samples.append(SegSample(id=i, image=image, full_mask=mask, weak=weak,
                                 topology=spec.topology, radius=r, seed=seed))
    return samples


# ---------------------------------------------------------------------------
# binary erosion and annotation calibration
# ---------------------------------------------------------------------------

def _erode_once(mask: np.ndarray, element: str) -> np.ndarray:
    """One erosion step; pixels beyond the border count as background."""
    padded = np.zeros((mask.shape[0] + 2, mask.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = mask
    out = padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1] \
        & padded[1:-1, :-2] & padded[1:-1, 2:]
    if element == "square3":
        out = out & padded[:-2, :-2] & padded[:-2, 2:] & padded[2:, :-2] & padded[2:, 2:]
    elif element != "cross3":
        raise DataError(f"unknown structuring element {element!r}")
    return out


def erode_to_weak(full_mask: np.ndarray, element: str = "cross3",
                  iterations: int = 1) -> WeakMask:
    """Iterated erosion of the full mask, backing off to the last nonempty step.

    Guarantees at least one labeled pixel for any nonempty input.
    """
    mask = np.asarray(full_mask).astype(bool)
    if not mask.any():
        raise DataError("cannot derive a weak annotation from an empty mask")
    if iterations < 1:
        raise DataError(f"iterations must be >= 1, got {iterations}")
    current = mask
    for _ in range(iterations):
        nxt = _erode_once(current, element)
        if not nxt.any():
            break
        current = nxt
    return WeakMask(current)


def annotation_ratio(weak: WeakMask) -> float:
    h, w = weak.extent
    return weak.count / (h * w)


def calibrate_erosion(samples: list[SegSample], target_ratio: float,
                      element: str = "cross3", max_iterations: int = 64) -> tuple:
    """Smallest iteration count whose mean annotation ratio is <= target.

    Returns (iterations, achieved_ratio).  If even maximal nonempty erosion
    stays above the target, the floor is returned with its achieved ratio.
    """
    if not samples:
        raise DataError("no samples to calibrate on")
    if target_ratio <= 0.0:
        raise DataError(f"target ratio must be positive, got {target_ratio}")
    n_pix = samples[0].full_mask.size

    def mean_ratio(k: int) -> float:
        return float(np.mean([
            erode_to_weak(s.full_mask, element, k).count / n_pix for s in samples]))

    prev = mean_ratio(1)
    k = 1
    while prev > target_ratio and k < max_iterations:
        nxt = mean_ratio(k + 1)
        if nxt >= prev:  # every mask hit its nonempty floor
            break
        k, prev = k + 1, nxt
    return k, prev


def apply_erosion(samples: list[SegSample], iterations: int,
                  element: str = "cross3") -> list[SegSample]:
    """Re-derive every sample's weak annotation at the given erosion depth."""
    return [replace(s, weak=erode_to_weak(s.full_mask, element, iterations))
            for s in samples]


# ---------------------------------------------------------------------------
# reference-mask pools
# ---------------------------------------------------------------------------

POOL_MODES = ("partial", "unpaired", "paired")


@dataclass
class ReferenceMaskPool:
    """Masks encoding the size/shape prior, in one of three pairing regimes.

    paired: each sample is assigned its own ground-truth mask.
    unpaired: ground-truth masks under a seeded permutation of the samples.
    partial: each sample's weak annotation rendered as a full binary mask.
    """

    mode: str
    masks: list  # binary uint8 H x W arrays, index-aligned with build order
    assignment: dict  # sample id -> mask index
    shuffle_seed: int

    def mask_for(self, sample_id: int) -> np.ndarray:
        return self.masks[self.assignment[sample_id]]


def build_reference_pool(samples: list[SegSample], mode: str,
                         shuffle_seed: int = 0) -> ReferenceMaskPool:
    if mode not in POOL_MODES:
        raise DataError(f"unknown pool mode {mode!r}; expected one of {POOL_MODES}")
    if not samples:
        raise DataError("cannot build a reference pool from zero samples")
    if mode == "partial":
        masks = [s.weak.mask.astype(np.uint8) for s in samples]
    else:
        masks = [s.full_mask.astype(np.uint8) for s in samples]
    if mode == "unpaired":
        rng = np.random.default_rng(np.random.SeedSequence([int(shuffle_seed)]))
        perm = rng.permutation(len(samples))
        assignment = {s.id: int(perm[i]) for i, s in enumerate(samples)}
    else:
        assignment = {s.id: i for i, s in enumerate(samples)}
    return ReferenceMaskPool(mode=mode, masks=masks, assignment=assignment,
                             shuffle_seed=shuffle_seed)


# ---------------------------------------------------------------------------
# reference-mask augmentation
# ---------------------------------------------------------------------------

def transform_mask(mask: np.ndarray, flip_h: bool, flip_v: bool,
                   scale: float, shift: tuple) -> np.ndarray:
    """Deterministic flip + nearest-neighbor scale about the centroid + shift.

    scale == 1.0 with no flips and zero shift reproduces the input bitwise.
    """
    out = np.asarray(mask).astype(bool)
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    if scale != 1.0 and out.any():
        ys, xs = np.nonzero(out)
        cy, cx = ys.mean(), xs.mean()
        h, w = out.shape
        yy, xx = np.mgrid[0:h, 0:w]
        sy = np.rint((yy - cy) / scale + cy).astype(int)
        sx = np.rint((xx - cx) / scale + cx).astype(int)
        valid = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
        scaled = np.zeros_like(out)
        scaled[valid] = out[sy[valid], sx[valid]]
        out = scaled
    dy, dx = shift
    if dy or dx:
        shifted = np.zeros_like(out)
        src_y = slice(max(0, -dy), min(out.shape[0], out.shape[0] - dy))
        src_x = slice(max(0, -dx), min(out.shape[1], out.shape[1] - dx))
        dst_y = slice(max(0, dy), max(0, dy) + (src_y.stop - src_y.start))
        dst_x = slice(max(0, dx), max(0, dx) + (src_x.stop - src_x.start))
        shifted[dst_y, dst_x] = out[src_y, src_x]
        out = shifted
    return np.ascontiguousarray(out)


def augment_mask(mask: np.ndarray, rng) -> np.ndarray:
    """Seeded flip / scale / translate composition of a binary mask.

    Draw order is fixed: horizontal flip, vertical flip, scale in [0.9, 1.1],
    then integer translations up to +/-10% of the side.  A translation that
    would clip foreground off the border is re-rolled up to 5 times and then
    skipped entirely.
    """
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(np.random.SeedSequence([int(rng)]))
    mask = np.asarray(mask).astype(bool)
    flip_h = bool(rng.random() < 0.5)
    flip_v = bool(rng.random() < 0.5)
    scale = float(rng.uniform(0.9, 1.1))
    base = transform_mask(mask, flip_h, flip_v, scale, (0, 0))
    count = int(base.sum())
    limit = int(round(0.10 * mask.shape[0]))
    for _ in range(6):
        dy = int(rng.integers(-limit, limit + 1))
        dx = int(rng.integers(-limit, limit + 1))
        moved = transform_mask(base, False, False, 1.0, (dy, dx))
        if int(moved.sum()) == count:
            return moved
    return base


# ---------------------------------------------------------------------------
# sample persistence (binary portable graymaps + metadata sidecar)
# ---------------------------------------------------------------------------

def _write_pgm(path: str, values: np.ndarray) -> None:
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(values.astype(np.uint8).tobytes())


def _read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        magic, dims, maxval_rest = data.split(b"\n", 2)
    except ValueError:
        raise DataError(f"{path}: truncated header") from None
    if magic != b"P5":
        raise DataError(f"{path}: magic is {magic!r}, expected P5")
    try:
        w, h = (int(v) for v in dims.split())
    except ValueError:
        raise DataError(f"{path}: bad dimensions line {dims!r}") from None
    maxval, _, raw = maxval_rest.partition(b"\n")
    if maxval != b"255":
        raise DataError(f"{path}: maxval is {maxval!r}, expected 255")
    if len(raw) < w * h:
        raise DataError(f"{path}: pixel payload is {len(raw)} bytes, expected {w * h}")
    return np.frombuffer(raw[:w * h], dtype=np.uint8).reshape(h, w)


def save_sample(sample: SegSample, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    i = sample.id
    _write_pgm(os.path.join(directory, f"img_{i}.pgm"),
               np.rint(sample.image * 255.0))
    _write_pgm(os.path.join(directory, f"gt_{i}.pgm"),
               sample.full_mask.astype(np.uint8) * 255)
    _write_pgm(os.path.join(directory, f"weak_{i}.pgm"),
               sample.weak.mask.astype(np.uint8) * 255)
    meta = (f"id={i}\nseed={sample.seed}\ntopology={sample.topology}\n"
            f"radius={sample.radius!r}\nachieved_ratio={sample.annotation_ratio()!r}\n")
    with open(os.path.join(directory, f"meta_{i}.txt"), "w") as fh:
        fh.write(meta)


def load_sample(directory: str, sample_id: int) -> SegSample:
    meta_path = os.path.join(directory, f"meta_{sample_id}.txt")
    fields = {}
    with open(meta_path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise DataError(f"{meta_path}: malformed line {line!r}")
            fields[key] = value
    for key in ("id", "seed", "topology", "radius"):
        if key not in fields:
            raise DataError(f"{meta_path}: missing field {key!r}")
    image = _read_pgm(os.path.join(directory, f"img_{sample_id}.pgm")) / 255.0
    gt = _read_pgm(os.path.join(directory, f"gt_{sample_id}.pgm")) > 127
    weak = _read_pgm(os.path.join(directory, f"weak_{sample_id}.pgm")) > 127
    try:
        parsed_id = int(fields["id"])
        seed = int(fields["seed"])
        radius = float(fields["radius"])
    except ValueError as exc:
        raise DataError(f"{meta_path}: unparsable numeric field ({exc})") from None
    if parsed_id != sample_id:
        raise DataError(f"{meta_path}: id field {parsed_id} does not match file name")
    return SegSample(id=parsed_id, image=image, full_mask=gt, weak=WeakMask(weak),
                     topology=fields["topology"], radius=radius, seed=seed)


def save_dataset(samples: list[SegSample], directory: str) -> None:
    for s in samples:
        save_sample(s, directory)


def load_dataset(directory: str) -> list[SegSample]:
    ids = sorted(
        int(name[len("meta_"):-len(".txt")])
        for name in os.listdir(directory)
        if name.startswith("meta_") and name.endswith(".txt"))
    if not ids:
        raise DataError(f"{directory}: no samples found")
    return [load_sample(directory, i) for i in ids]
