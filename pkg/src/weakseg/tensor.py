"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

The engine is deliberately small: rank-N arrays in channels x height x width
layout (batch is implicitly 1), a handful of whitelisted operations, and an
explicit :class:`Tape` that records one forward pass and replays it once in
reverse.  Everything runs in 64-bit reals with fixed summation order so that
repeated runs are bit-identical.

Typical use::

    with Tape() as tape:
        y = conv2d(x, kernel, bias, stride=1, padding=1)
        loss = reduce(square(y), "mean")
        backward(loss, tape)
    # kernel.grad and bias.grad are now populated
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LOG_EPS = 1e-7

_SIG_LO = np.nextafter(0.0, 1.0)
_SIG_HI = np.nextafter(1.0, 0.0)


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(ValueError):
    """Operand values are outside the operation's legal domain."""


class TapeError(RuntimeError):
    """Tape misuse: double backward, wrong tape, or non-scalar loss."""


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    A tensor is a *constant* unless it was created with ``requires_grad=True``
    (a leaf parameter) or produced by an operation recorded on an active tape.
    ``backward`` never writes into constants.
    """

    __slots__ = ("values", "grad", "requires_grad", "_node")

    def __init__(self, values, requires_grad: bool = False):
        arr = np.asarray(values, dtype=np.float64)
        self.values = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._node = None  # (tape, node_id) while recorded on a live tape

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "Tensor":
        """A constant view of this tensor's values (no grad, no tape link)."""
        return Tensor(self.values)

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    # Small operator sugar used by the loss expressions; scalars are allowed
    # on either side, tensors must match shapes exactly (no broadcasting).
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        flags = []
        if self.requires_grad:
            flags.append("param")
        if self._node is not None:
            flags.append("recorded")
        tag = " ".join([""] + flags) if flags else ""
        return f"Tensor(shape={self.values.shape}{tag})"


_ACTIVE = threading.local()


def _current_tape() -> Optional["Tape"]:
    return getattr(_ACTIVE, "tape", None)


class Tape:
    """Ordered record of the operations of one forward pass.

    Entering the tape makes it the recording target for the current thread.
    ``backward`` may run exactly once per recorded forward; the tape is then
    consumed and re-running backward on it is an error.
    """

    def __init__(self):
        # each record: (out_id, input_ids, needs, backward_fn)
        self.records: list = []
        self.leaves: dict[int, Tensor] = {}
        self.consumed = False
        self._next_id = 0
        self._outer: Optional[Tape] = None

    def __enter__(self) -> "Tape":
        self._outer = _current_tape()
        _ACTIVE.tape = self
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.tape = self._outer
        self._outer = None

    def _fresh_id(self) -> int:
        nid = self._next_id
        self._next_id += 1
        return nid

    def _node_of(self, t: Tensor) -> Optional[int]:
        """Node id of `t` on this tape; registers leaf parameters on first use."""
        node = t._node
        if node is not None and node[0] is self:
            return node[1]
        if t.requires_grad:
            nid = self._fresh_id()
            t._node = (self, nid)
            self.leaves[nid] = t
            return nid
        return None


def _record(out: Tensor, inputs: Sequence[Tensor],
            backward_fn: Callable[[np.ndarray, tuple], tuple]) -> Tensor:
    tape = _current_tape()
    if tape is None:
        return out
    ids = tuple(tape._node_of(t) for t in inputs)
    if all(i is None for i in ids):
        return out
    out_id = tape._fresh_id()
    out._node = (tape, out_id)
    needs = tuple(i is not None for i in ids)
    tape.records.append((out_id, ids, needs, backward_fn))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every leaf parameter recorded on `tape`.

    Parameters reachable from `loss` receive d(loss)/d(param); parameters
    the tape saw but that do not feed `loss` receive zeros.  Contributions
    accumulate additively into pre-existing ``grad`` buffers.
    """
    if tape.consumed:
        raise TapeError("tape already consumed: re-record the forward pass "
                        "before calling backward again")
    if loss.values.ndim != 0:
        raise TapeError(f"loss must be a scalar, got shape {loss.values.shape}")
    node = loss._node
    if node is None or node[0] is not tape:
        raise TapeError("loss was not recorded on this tape (stale or foreign tape)")
    tape.consumed = True

    adjoints: dict[int, np.ndarray] = {node[1]: np.ones((), dtype=np.float64)}
    for out_id, ids, needs, fn in reversed(tape.records):
        g = adjoints.pop(out_id, None)
        if g is None:
            continue
        for nid, contrib in zip(ids, fn(g, needs)):
            if nid is None or contrib is None:
                continue
            acc = adjoints.get(nid)
            if acc is None:
                adjoints[nid] = contrib
            else:
                acc += contrib

    for nid, leaf in tape.leaves.items():
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.values)
        contrib = adjoints.get(nid)
        if contrib is not None:
            leaf.grad += contrib


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def conv2d(input: Tensor, kernel: Tensor, bias: Tensor,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation with per-channel bias.

    `input` is C_in x H x W, `kernel` C_out x C_in x k x k, `bias` C_out.
    Output spatial extent is floor((H + 2*padding - k) / stride) + 1.  The
    forward is an im2col gather followed by one matmul, so the accumulation
    order is fixed and runs are bit-reproducible.
    """
    x, w, b = input.values, kernel.values, bias.values
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be C x H x W, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d kernel must be C_out x C_in x k x k, got shape {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if kh != kw:
        raise ShapeError(f"conv2d kernel must be square, got {kh} x {kw}")
    if x.shape[0] != c_in:
        raise ShapeError(
            f"conv2d channel mismatch: input has {x.shape[0]} channels, "
            f"kernel expects {c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv2d bias must have shape ({c_out},), got {b.shape}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if padding < 0:
        raise ValueError(f"padding must be >= 0, got {padding}")
    _, h, wdt = x.shape
    if h + 2 * padding < kh or wdt + 2 * padding < kw:
        raise ShapeError(
            f"conv2d window {kh} x {kw} does not fit padded input "
            f"{h + 2 * padding} x {wdt + 2 * padding}")

    if padding:
        xp = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    else:
        xp = x
    h_out = (h + 2 * padding - kh) // stride + 1
    w_out = (wdt + 2 * padding - kw) // stride + 1

    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    # (C_in, H', W', k, k) -> (C_in*k*k, H'*W'), one contiguous copy; the
    # GEMM output is then already in channel-major order
    cols = win.transpose(0, 3, 4, 1, 2).reshape(c_in * kh * kw, h_out * w_out)
    wmat = w.reshape(c_out, c_in * kh * kw)
    out = wmat @ cols
    out += b[:, None]
    out = out.reshape(c_out, h_out, w_out)

    pad_shape = xp.shape

    def bwd(g: np.ndarray, needs: tuple) -> tuple:
        gm = g.reshape(c_out, h_out * w_out)
        gi = gw = gb = None
        if needs[1]:
            gw = (gm @ cols.T).reshape(w.shape)
        if needs[2]:
            gb = gm.sum(axis=1)
        if needs[0]:
            gcols = wmat.T @ gm  # (C_in*k*k, H'*W')
            gcr = gcols.reshape(c_in, kh, kw, h_out, w_out)
            acc = np.zeros(pad_shape)
            hi = stride * h_out
            wi = stride * w_out
            for di in range(kh):
                for dj in range(kw):
                    acc[:, di:di + hi:stride, dj:dj + wi:stride] += gcr[:, di, dj]
            if padding:
                gi = acc[:, padding:padding + h, padding:padding + wdt]
            else:
                gi = acc
        return gi, gw, gb

    return _record(Tensor(out), (input, kernel, bias), bwd)


def upsample_nearest2x(input: Tensor) -> Tensor:
    """Replicate each element of a C x H x W tensor into a 2x2 block."""
    x = input.values
    if x.ndim != 3:
        raise ShapeError(f"upsample input must be C x H x W, got shape {x.shape}")
    c, h, w = x.shape
    out = np.empty((c, 2 * h, 2 * w))
    out.reshape(c, h, 2, w, 2)[...] = x[:, :, None, :, None]

    def bwd(g: np.ndarray, needs: tuple) -> tuple:
        return (g.reshape(c, h, 2, w, 2).sum(axis=(2, 4)),)

    return _record(Tensor(out), (input,), bwd)


def apply_activation(input: Tensor, kind: str, alpha: float = 0.2) -> Tensor:
    """Elementwise nonlinearity: ``relu``, ``leaky_relu`` or ``sigmoid``.

    relu's derivative at exactly 0 is 0.  Sigmoid is computed in a
    numerically stable split form and pinned strictly inside (0, 1).
    """
    x = input.values
    if kind == "relu":
        out = np.maximum(x, 0.0)
        mask = x > 0.0

        def bwd(g, needs):
            return (g * mask,)
    elif kind == "leaky_relu":
        if not 0.0 < alpha < 1.0:
            raise ValueError(f"leaky_relu alpha must be in (0, 1), got {alpha}")
        pos = x > 0.0
        out = np.where(pos, x, alpha * x)
        slope = np.where(pos, 1.0, alpha)

        def bwd(g, needs):
            return (g * slope,)
    elif kind == "sigmoid":
        out = np.empty_like(x)
        pos = x >= 0.0
        np.exp(-np.abs(x), out=out)
        e = out
        out = np.where(pos, 1.0 / (1.0 + e), e / (1.0 + e))
        np.clip(out, _SIG_LO, _SIG_HI, out=out)
        s = out

        def bwd(g, needs):
            return (g * s * (1.0 - s),)
    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    return _record(Tensor(out), (input,), bwd)


def relu(t: Tensor) -> Tensor:
    return apply_activation(t, "relu")


def leaky_relu(t: Tensor, alpha: float = 0.2) -> Tensor:
    return apply_activation(t, "leaky_relu", alpha)


def sigmoid(t: Tensor) -> Tensor:
    return apply_activation(t, "sigmoid")


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    """Stack two C x H x W tensors along the channel axis, a's channels first."""
    xa, xb = a.values, b.values
    if xa.ndim != 3 or xb.ndim != 3:
        raise ShapeError("concat_channels operands must be C x H x W")
    if xa.shape[1:] != xb.shape[1:]:
        raise ShapeError(
            f"concat_channels spatial mismatch: {xa.shape[1:]} vs {xb.shape[1:]}")
    ca = xa.shape[0]
    out = np.concatenate([xa, xb], axis=0)

    def bwd(g, needs):
        ga = g[:ca] if needs[0] else None
        gb = g[ca:] if needs[1] else None
        return ga, gb

    return _record(Tensor(out), (a, b), bwd)


def reduce(input: Tensor, kind: str) -> Tensor:
    """Reduce all elements to a scalar by ``sum`` or ``mean``."""
    x = input.values
    n = x.size
    if kind == "sum":
        out = np.asarray(np.sum(x))
        scale = 1.0
    elif kind == "mean":
        out = np.asarray(np.mean(x))
        scale = 1.0 / n
    else:
        raise ValueError(f"unknown reduce kind {kind!r}")
    shape = x.shape

    def bwd(g, needs):
        return (np.full(shape, float(g) * scale),)

    return _record(Tensor(out), (input,), bwd)


def _as_operands(a: Tensor, b) -> tuple:
    """Normalize the second elementwise operand; tensors must match shapes."""
    if isinstance(b, Tensor):
        if a.values.shape != b.values.shape:
            raise ShapeError(
                f"elementwise shape mismatch: {a.values.shape} vs {b.values.shape}")
        return b, b.values, True
    return None, float(b), False


def add(a: Tensor, b) -> Tensor:
    bt, bv, is_t = _as_operands(a, b)
    out = a.values + bv

    def bwd(g, needs):
        ga = g if needs[0] else None
        gb = (g if needs[1] else None) if is_t else None
        return (ga, gb) if is_t else (ga,)

    return _record(Tensor(out), (a, bt) if is_t else (a,), bwd)


def sub(a: Tensor, b) -> Tensor:
    bt, bv, is_t = _as_operands(a, b)
    out = a.values - bv

    def bwd(g, needs):
        ga = g if needs[0] else None
        gb = (-g if needs[1] else None) if is_t else None
        return (ga, gb) if is_t else (ga,)

    return _record(Tensor(out), (a, bt) if is_t else (a,), bwd)


def mul(a: Tensor, b) -> Tensor:
    bt, bv, is_t = _as_operands(a, b)
    av = a.values
    out = av * bv

    def bwd(g, needs):
        ga = (g * bv) if needs[0] else None
        gb = ((g * av) if needs[1] else None) if is_t else None
        return (ga, gb) if is_t else (ga,)

    return _record(Tensor(out), (a, bt) if is_t else (a,), bwd)


def square(a: Tensor) -> Tensor:
    av = a.values
    out = av * av

    def bwd(g, needs):
        return (g * (2.0 * av),)

    return _record(Tensor(out), (a,), bwd)


def log(a: Tensor) -> Tensor:
    """Natural log; inputs must already be clamped to at least LOG_EPS."""
    av = a.values
    if np.any(av < LOG_EPS):
        raise DomainError(
            f"log input below {LOG_EPS:g}: clamp explicitly before taking log "
            f"(min value {av.min():g})")
    out = np.log(av)

    def bwd(g, needs):
        return (g / av,)

    return _record(Tensor(out), (a,), bwd)


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip values to [lo, hi]; the derivative is 0 where the input fell outside."""
    if not lo <= hi:
        raise ValueError(f"clamp bounds out of order: lo={lo}, hi={hi}")
    av = a.values
    out = np.clip(av, lo, hi)
    inside = (av >= lo) & (av <= hi)

    def bwd(g, needs):
        return (g * inside,)

    return _record(Tensor(out), (a,), bwd)


def elementwise(a: Tensor, b=None, kind: str = "add",
                lo: float = 0.0, hi: float = 0.0) -> Tensor:
    """Dispatching front door for the elementwise family."""
    if kind == "add":
        return add(a, b)
    if kind == "sub":
        return sub(a, b)
    if kind == "mul":
        return mul(a, b)
    if kind == "square":
        return square(a)
    if kind == "log":
        return log(a)
    if kind == "clamp":
        return clamp(a, lo, hi)
    raise ValueError(f"unknown elementwise kind {kind!r}")


# ---------------------------------------------------------------------------
# finite-difference gradient checking
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Iterable[Tensor],
               perturbation: float = 1e-5, seed: int = 0,
               max_coords: int = 32) -> float:
    """Max relative error between analytic gradients of ``f()`` and central
    finite differences.

    `f` must rebuild its forward pass on every call using the live values of
    `params`.  Large tensors are sub-sampled to `max_coords` seeded random
    coordinates; the relative error denominator is
    max(|analytic|, |numeric|, 1e-8).

    Central differences are meaningless where the stencil straddles a kink
    (relu and friends), so a coordinate whose h and h/4 estimates disagree
    is excluded: there the finite difference, not the analytic gradient, is
    the unreliable side.  A wrong analytic gradient still fails against a
    self-consistent stencil.
    """
    params = list(params)
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = f()
        backward(loss, tape)
    analytic = [p.grad.copy() for p in params]

    def central(flat, c, step):
        orig = flat[c]
        flat[c] = orig + step
        f_plus = float(f().values)
        flat[c] = orig - step
        f_minus = float(f().values)
        flat[c] = orig
        return (f_plus - f_minus) / (2.0 * step)

    rng = np.random.default_rng(seed)
    h = perturbation
    worst = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        n = flat.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_coords, replace=False)
        gflat = ga.reshape(-1)
        for c in coords:
            numeric = central(flat, c, h)
            diff = abs(gflat[c] - numeric)
            if diff < 1e-10:
                continue  # agreement below FD roundoff floor
            denom = max(abs(gflat[c]), abs(numeric), 1e-8)
            err = diff / denom
            if err > 1e-5:
                refined = central(flat, c, h / 4.0)
                scale = max(abs(numeric), abs(refined), 1e-8)
                if abs(numeric - refined) / scale > 1e-5:
                    continue  # stencil is self-inconsistent: kink, not a bug
            worst = max(worst, err)
    return worst
