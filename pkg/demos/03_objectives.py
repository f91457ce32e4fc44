"""The training objectives, evaluated on hand-checkable inputs.

Run with:  python3 demos/03_objectives.py
"""

import math

import numpy as np

from weakseg.losses import (
    SizeBounds, WeakMask, accl_generator_loss, discriminator_objective,
    partial_cross_entropy, sccl_objective, size_penalty, soft_size,
    weak_cross_entropy,
)
from weakseg.tensor import Tensor

probs = Tensor(np.full((1, 4, 4), 0.5))
weak = WeakMask.from_coords([(1, 1)], (4, 4))

# Partial cross-entropy only sees labeled pixels: one pixel at 0.5 is ln 2.
pce = partial_cross_entropy(probs, weak).item()
print(f"partial CE, single labeled pixel at 0.5: {pce:.6f} (ln 2 = {math.log(2):.6f})")

# Weak CE additionally presses every unlabeled pixel toward background.
print(f"weak CE on the same map: {weak_cross_entropy(probs, weak).item():.6f}")

# The size prior: soft size is the probability mass, the penalty is a
# one-sided quadratic outside [a, b].
s = soft_size(probs)
print(f"soft size of the half map: {s.item():.1f} pixels")
for value, bounds in [(25.0, (10, 40)), (4.0, (10, 40)), (50.0, (10, 40))]:
    c = size_penalty(Tensor(value), SizeBounds(*bounds)).item()
    print(f"size penalty at s={value:>4} with bounds {bounds}: {c:.1f}")

# SCCL = partial CE + weighted penalty; with the half map the soft size 8
# sits inside (4, 10), so only the CE term remains.
total = sccl_objective(probs, weak, SizeBounds(4.0, 10.0), 0.01).item()
print(f"SCCL with satisfied bounds: {total:.6f} (equals partial CE)")

# Adversarial terms: the generator wants responses at 1, the discriminator
# wants fakes at 0 and references at 1.
resp = Tensor(np.array([0.0, 1.0, 0.5]))
print(f"generator adversarial term on responses [0, 1, 0.5]: "
      f"{accl_generator_loss(resp).item():.6f}")
half = Tensor(np.full((1, 2, 2), 0.5))
print(f"discriminator objective, everything at 0.5: "
      f"{discriminator_objective(half, half).item():.2f}")

# The penalty transitions quadratically at the bounds:
print("\npenalty around the upper bound b=40:")
for s_val in (38.0, 40.0, 42.0, 45.0):
    c = size_penalty(Tensor(s_val), SizeBounds(10.0, 40.0)).item()
    print(f"  C({s_val:.0f}) = {c:.1f}")
