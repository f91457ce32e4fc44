"""Constraining a weakly supervised net with a patch discriminator.

Compares the size-penalty route (needs numeric bounds) against the
adversarial route (needs only reference masks) on the same data.

Run with:  python3 demos/05_adversarial_constraint.py   (a few minutes)
"""

from weakseg.data import (
    ShapeSpec, apply_erosion, build_reference_pool, calibrate_erosion,
    gen_dataset,
)
from weakseg.metrics import evaluate_samples, size_bounds
from weakseg.nets import NetConfig
from weakseg.train import TrainConfig, train_variant

spec = ShapeSpec(image_side=32, radius_lo=5.0, radius_hi=8.0,
                 noise_std=0.03, illum_amplitude=0.1)
samples = gen_dataset(spec, 24, seed=21)
iterations, achieved = calibrate_erosion(samples, target_ratio=0.03)
samples = apply_erosion(samples, iterations)
train, test = samples[:18], samples[18:]
net = NetConfig(unet_depth=2, base_channels=8, disc_layers=2, image_side=32)

# size-constrained baseline: the prior is the observed area interval
bounds = size_bounds([s.full_mask for s in train])
print(f"size prior from training masks: [{bounds.a:.0f}, {bounds.b:.0f}] px")
cfg = TrainConfig(variant="sccl", epochs=40, net=net, bounds=bounds, eval_every=10)
model, _ = train_variant(cfg, train, test)
rep = evaluate_samples(model, test)
print(f"sccl           dice {rep.mean_dice:.3f}  area ratio {rep.mean_expansion:.2f}")

# adversarial constraint: a discriminator judges (image, mask) patches
# against unpaired ground-truth reference masks
pool = build_reference_pool(train, "unpaired", shuffle_seed=5)
cfg = TrainConfig(variant="accl_unpaired", epochs=40, net=net, eval_every=10)
model, records = train_variant(cfg, train, test, pool=pool)
rep = evaluate_samples(model, test)
print(f"accl_unpaired  dice {rep.mean_dice:.3f}  area ratio {rep.mean_expansion:.2f}")
print("\ndiscriminator loss trajectory (every 8th epoch):")
for r in records[::8]:
    print(f"  epoch {r.epoch:3d}: d_loss {r.d_loss:.4f}  g_loss {r.g_loss:.4f}  "
          f"test dice {r.dice:.3f}")
