"""Why naive weak supervision fails: expansion vs suppression.

Trains three baselines on a small synthetic set and prints what happens to
the predicted foreground area.  Full supervision nails the target; training
only on labeled (foreground) pixels balloons the prediction; declaring all
unlabeled pixels background shrinks it to the eroded core.

Run with:  python3 demos/04_supervision_failure_modes.py   (about a minute)
"""

from weakseg.data import ShapeSpec, apply_erosion, calibrate_erosion, gen_dataset
from weakseg.metrics import evaluate_samples
from weakseg.nets import NetConfig
from weakseg.train import TrainConfig, train_variant

spec = ShapeSpec(image_side=32, radius_lo=5.0, radius_hi=8.0,
                 noise_std=0.03, illum_amplitude=0.1)
samples = gen_dataset(spec, 24, seed=11)
iterations, achieved = calibrate_erosion(samples, target_ratio=0.03)
samples = apply_erosion(samples, iterations)
train, test = samples[:18], samples[18:]
print(f"annotation ratio after erosion x{iterations}: {achieved:.3%}\n")

net = NetConfig(unet_depth=2, base_channels=8, disc_layers=2, image_side=32)
for variant in ("fs_ce", "partial_ce", "weak_ce"):
    cfg = TrainConfig(variant=variant, epochs=40, net=net, eval_every=10)
    model, records = train_variant(cfg, train, test)
    report = evaluate_samples(model, test)
    verdict = "balanced"
    if report.mean_expansion > 1.3:
        verdict = "foreground EXPANSION"
    elif report.mean_expansion < 0.7:
        verdict = "foreground SUPPRESSION"
    print(f"{variant:11s} dice {report.mean_dice:.3f}  "
          f"pred/gt area ratio {report.mean_expansion:5.2f}  -> {verdict}")
