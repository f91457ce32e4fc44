"""Tour of the tensor engine: forward ops, the tape, and gradient checking.

Run with:  python3 demos/01_autodiff_engine.py
"""

import numpy as np

from weakseg.tensor import (
    Tape, Tensor, backward, clamp, conv2d, grad_check, log, mul, reduce,
    sigmoid, square, upsample_nearest2x,
)

# A tensor is just a float64 array. It only becomes trainable when it is a
# leaf created with requires_grad=True.
x = Tensor(np.array([[[1.0, 2.0], [3.0, 4.0]]]))           # 1 x 2 x 2 image
w = Tensor(np.full((1, 1, 1, 1), 2.0), requires_grad=True)  # 1x1 conv kernel
b = Tensor(np.zeros(1), requires_grad=True)

# Recording happens inside a tape context; backward replays it in reverse.
with Tape() as tape:
    y = conv2d(x, w, b)            # doubles every pixel
    z = upsample_nearest2x(y)      # 1 x 4 x 4
    loss = reduce(square(z), "mean")
    backward(loss, tape)

print("loss:", loss.item())
print("dL/dw:", w.grad.ravel())   # each input pixel contributes 4 replicas
print("dL/db:", b.grad)

# Gradients of every op are validated against central finite differences.
p = Tensor(np.random.default_rng(0).uniform(0.1, 0.9, (1, 4, 4)),
           requires_grad=True)


def objective():
    # a tiny cross-entropy-flavored expression: -mean(log(clamp(sigmoid(p))))
    probs = sigmoid(p)
    return mul(reduce(log(clamp(probs, 1e-7, 1.0)), "mean"), -1.0)


err = grad_check(objective, [p])
print(f"finite-difference check on a composed objective: max rel err {err:.2e}")

# Outside a tape, the same ops run in plain inference mode: nothing is
# recorded and backward is impossible, which is what evaluation uses.
plain = sigmoid(Tensor(np.zeros((1, 2, 2))))
print("sigmoid(0) =", plain.values[0, 0, 0])
