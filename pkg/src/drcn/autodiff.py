"""Dense tensor arithmetic with tape-based reverse-mode differentiation.

The op set is exactly what the recursive super-resolution network needs:
same-padded 3x3-style convolution, ReLU, elementwise add, weighted sums,
scalar scaling, squared norms, and a half-sum-of-squares loss.  Convolution
is cross-correlation (no kernel flip) throughout; forward and backward of
the hot path run as one BLAS matmul over an im2col matrix.

Gradients are recorded on an explicit :class:`GradTape`.  Replaying the tape
backward visits operations in exact reverse execution order, and a value
feeding several consumers (the shared recursive weights, for instance)
receives the sum of all consumer contributions.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, UsageError

Array = np.ndarray

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """A dense array plus a gradient slot.

    Image batches follow the (batch, channel, row, column) layout; losses
    are 0-d; the ensemble weight vector is 1-d.  Precision is whatever dtype
    the data carries, float32 or float64.
    """

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        # order="C" (not ascontiguousarray) so 0-d losses stay 0-d.
        arr = np.asarray(data, dtype=dtype, order="C")
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data: Array = arr
        self.grad: Array | None = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"


class ConvLayer:
    """One convolution's weights, shaped (out, in, k, k), and per-output-channel bias."""

    __slots__ = ("weights", "bias")

    def __init__(self, weights: Tensor, bias: Tensor):
        if weights.data.ndim != 4:
            raise DimensionError(f"conv weights must be 4-d, got shape {weights.shape}")
        out_c, _, kh, kw = weights.shape
        if kh != kw:
            raise DimensionError(f"conv kernel must be square, got {kh}x{kw}")
        if kh % 2 != 1:
            raise DimensionError(f"conv kernel size must be odd, got {kh}")
        if bias.data.shape != (out_c,):
            raise DimensionError(
                f"bias must have shape ({out_c},) to match out channels, got {bias.shape}"
            )
        self.weights = weights
        self.bias = bias

    @property
    def out_channels(self) -> int:
        return self.weights.shape[0]

    @property
    def in_channels(self) -> int:
        return self.weights.shape[1]

    @property
    def kernel_size(self) -> int:
        return self.weights.shape[2]

    def __repr__(self) -> str:
        return (
            f"ConvLayer({self.in_channels}->{self.out_channels}, "
            f"k={self.kernel_size}, dtype={self.weights.dtype.name})"
        )


# One tape stack per thread; a tape is confined to a single training worker.
_LOCAL = threading.local()


def _tape_stack() -> list["GradTape"]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> "GradTape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class GradTape:
    """Ordered record of executed operations, replayed once in reverse.

    Use as a context manager; ops executed inside the block are recorded
    when any of their inputs requires a gradient.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise UsageError("GradTape contexts must nest properly")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def _record(self, output: Tensor, inputs: tuple[Tensor, ...], backward_fn: Callable) -> None:
        self._records.append((output, inputs, backward_fn))


def _finish(out_data: Array, inputs: tuple[Tensor, ...], backward_fn: Callable) -> Tensor:
    """Wrap an op result, recording it if a tape is active and grads are wanted."""
    needs_grad = any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs_grad)
    tape = _active_tape()
    if tape is not None and needs_grad:
        tape._record(out, inputs, backward_fn)
    return out


# Backward reuses the forward im2col matrix when it fits this budget;
# beyond it, the matrix is rebuilt from the saved input instead.
_COLS_CACHE_BYTES = 64 * 1024 * 1024


def _im2col(x: Array, k: int) -> Array:
    """(n,c,h,w) -> (n*h*w, k*k*c) patch matrix under same zero padding.

    Patch columns are ordered (row offset, col offset, channel): gathering
    through a channels-last copy turns every window row into one contiguous
    k*c run, which is several times faster than a channels-first gather.
    """
    n, c, h, width = x.shape
    p = (k - 1) // 2
    xn = np.ascontiguousarray(x.transpose(0, 2, 3, 1))
    xp = np.pad(xn, ((0, 0), (p, p), (p, p), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(1, 2))
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(n * h * width, k * k * c)


def _weights_flat(w: Array) -> Array:
    """(o,c,k,k) -> (o, k*k*c), matching the _im2col column order."""
    return np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(w.shape[0], -1)


def _corr2d(x: Array, w: Array, cols: Array | None = None) -> Array:
    """Same-padded cross-correlation of (n,c,h,w) with (o,c,k,k), no bias.

    Zero padding of (k-1)/2 per border keeps the spatial size; the reduction
    order per output element is fixed by the single matmul, so results are
    deterministic regardless of BLAS threading.
    """
    n, _, h, width = x.shape
    o = w.shape[0]
    k = w.shape[2]
    if cols is None:
        cols = _im2col(x, k)
    out = cols @ _weights_flat(w).T
    return np.ascontiguousarray(out.reshape(n, h, width, o).transpose(0, 3, 1, 2))


def _corr2d_weight_grad(x: Array, g: Array, k: int, cols: Array | None = None) -> Array:
    """Gradient of _corr2d w.r.t. the kernel: correlate saved input with g."""
    n, c, h, width = x.shape
    o = g.shape[1]
    if cols is None:
        cols = _im2col(x, k)
    gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * h * width, o)
    gw = (gmat.T @ cols).reshape(o, k, k, c)
    return np.ascontiguousarray(gw.transpose(0, 3, 1, 2))


def conv2d_same(x: Tensor, layer: ConvLayer) -> Tensor:
    """Same-padded cross-correlation plus bias; spatial size is preserved."""
    if x.data.ndim != 4:
        raise DimensionError(f"conv input must be (batch, channel, h, w), got shape {x.shape}")
    if x.shape[1] != layer.in_channels:
        raise DimensionError(
            f"input has {x.shape[1]} channels but layer expects {layer.in_channels}"
        )
    w, b = layer.weights, layer.bias
    k = layer.kernel_size
    cols = _im2col(x.data, k)
    out_data = _corr2d(x.data, w.data, cols)
    out_data += b.data.reshape(1, -1, 1, 1)

    tape = _active_tape()
    saved_cols = cols if (tape is not None and cols.nbytes <= _COLS_CACHE_BYTES) else None
    del cols
    x_data, w_data = x.data, w.data

    def backward_fn(g: Array):
        gx = None
        if x.requires_grad:
            flipped = np.ascontiguousarray(w_data.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])
            gx = _corr2d(g, flipped)
        gw = _corr2d_weight_grad(x_data, g, k, saved_cols) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b.requires_grad else None
        return gx, gw, gb

    return _finish(out_data, (x, w, b), backward_fn)


def relu(x: Tensor) -> Tensor:
    """Elementwise max(0, x)."""
    out_data = np.maximum(x.data, 0)
    x_data = x.data

    def backward_fn(g: Array):
        return ((x_data > 0) * g,)

    return _finish(out_data, (x,), backward_fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum of two identically shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward_fn(g: Array):
        return (g if a.requires_grad else None, g if b.requires_grad else None)

    return _finish(a.data + b.data, (a, b), backward_fn)


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor | Sequence[float]) -> Tensor:
    """Sum of w_d * t_d over d.  Weights are used as given, not normalized."""
    if len(tensors) == 0:
        raise ValueError("weighted_sum needs at least one tensor")
    if not isinstance(weights, Tensor):
        weights = Tensor(np.asarray(weights, dtype=tensors[0].dtype))
    if weights.data.ndim != 1 or weights.shape[0] != len(tensors):
        raise DimensionError(
            f"need one weight per tensor: {weights.shape} weights for {len(tensors)} tensors"
        )
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise DimensionError(f"weighted_sum shape mismatch: {shape} vs {t.shape}")

    stacked = np.stack([t.data for t in tensors])
    out_data = np.tensordot(weights.data, stacked, axes=(0, 0))
    w = weights

    def backward_fn(g: Array):
        grads: list[Array | None] = []
        for wd, t in zip(w.data, tensors):
            grads.append(wd * g if t.requires_grad else None)
        gw = None
        if w.requires_grad:
            gw = stacked.reshape(len(tensors), -1) @ g.reshape(-1)
        return (*grads, gw)

    return _finish(out_data, (*tensors, w), backward_fn)


def scale(x: Tensor, factor: float) -> Tensor:
    """Multiply by a plain (non-differentiated) scalar constant."""
    factor = float(factor)

    def backward_fn(g: Array):
        return (g * factor,)

    return _finish(x.data * factor, (x,), backward_fn)


def sum_squares(x: Tensor) -> Tensor:
    """Sum of squared elements, as a 0-d tensor."""
    out_data = np.asarray(np.vdot(x.data, x.data), dtype=x.dtype)
    x_data = x.data

    def backward_fn(g: Array):
        return (2.0 * float(g) * x_data,)

    return _finish(out_data, (x,), backward_fn)


def mse_loss(pred: Tensor, target: Tensor, divisor: float) -> Tensor:
    """(1/divisor) * half the summed squared difference, as a 0-d tensor.

    The caller supplies the divisor, so the same primitive serves both the
    per-recursion loss (divisor = recursions * batch) and the ensemble loss
    (divisor = batch).
    """
    if pred.shape != target.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.shape} vs {target.shape}")
    if not divisor > 0:
        raise ValueError(f"divisor must be positive, got {divisor}")
    diff = pred.data - target.data
    out_data = np.asarray(0.5 * np.vdot(diff, diff) / divisor, dtype=pred.dtype)

    def backward_fn(g: Array):
        gp = (float(g) / divisor) * diff
        return (gp if pred.requires_grad else None, -gp if target.requires_grad else None)

    return _finish(out_data, (pred, target), backward_fn)


def backward(loss: Tensor, tape: GradTape) -> dict[Tensor, Array]:
    """Walk the tape backward from ``loss`` and return leaf gradients.

    Every tensor that fed a recorded operation and requires a gradient gets
    its ``.grad`` populated (overwritten, not accumulated, across calls).
    Shared parameters receive summed contributions across all their uses.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward expects a scalar loss, got shape {loss.shape}")
    records = tape._records
    start = None
    for i in range(len(records) - 1, -1, -1):
        if records[i][0] is loss:
            start = i
            break
    if start is None:
        raise UsageError("loss tensor was not produced on this tape")

    grads: dict[int, Array] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {}
    for output, inputs, backward_fn in reversed(records[: start + 1]):
        g = grads.pop(id(output), None)
        if g is None:
            continue
        input_grads = backward_fn(g)
        for t, ig in zip(inputs, input_grads):
            if ig is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + ig
            else:
                grads[key] = ig
                holders[key] = t

    result: dict[Tensor, Array] = {}
    for key, g in grads.items():
        t = holders.get(key)
        if t is None:  # the loss itself, when nothing consumed it
            continue
        arr = np.asarray(g)
        t.grad = arr
        result[t] = arr
    return result


@dataclass
class GradCheckEntry:
    name: str
    max_rel_error: float
    samples: int


@dataclass
class GradCheckReport:
    entries: list[GradCheckEntry]
    step: float

    @property
    def max_rel_error(self) -> float:
        return max((e.max_rel_error for e in self.entries), default=0.0)

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance

    def __str__(self) -> str:
        lines = [f"gradient check (central differences, step={self.step:g})"]
        for e in self.entries:
            lines.append(f"  {e.name}: max rel error {e.max_rel_error:.3e} over {e.samples} samples")
        return "\n".join(lines)


def check_gradients(
    build_loss: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    *,
    step: float = 1e-5,
    max_samples_per_param: int = 8,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward gradients of ``build_loss()`` with central differences.

    ``build_loss`` must rebuild the loss from the live values of ``params``
    on every call; it is invoked once under a tape and then repeatedly,
    untaped, with single elements perturbed by +-step.  Relative error is
    |g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-12).  Report-only: nothing raises
    on a large error.
    """
    for name, p in params.items():
        if p.dtype != np.float64:
            raise UsageError(f"gradient checking requires float64 parameters ({name} is {p.dtype})")

    with GradTape() as tape:
        loss = build_loss()
    leaf_grads = backward(loss, tape)

    rng = np.random.default_rng(seed)
    entries = []
    for name, p in params.items():
        bp = leaf_grads.get(p)
        if bp is None:
            bp = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        bp_flat = np.asarray(bp).reshape(-1)
        size = flat.size
        if size <= max_samples_per_param:
            indices = np.arange(size)
        else:
            indices = np.sort(rng.choice(size, size=max_samples_per_param, replace=False))
        max_err = 0.0
        for i in indices:
            orig = flat[i]
            flat[i] = orig + step
            loss_plus = float(build_loss().data)
            flat[i] = orig - step
            loss_minus = float(build_loss().data)
            flat[i] = orig
            fd = (loss_plus - loss_minus) / (2.0 * step)
            bv = float(bp_flat[i])
            rel = abs(bv - fd) / max(abs(bv), abs(fd), 1e-12)
            max_err = max(max_err, rel)
        entries.append(GradCheckEntry(name=name, max_rel_error=max_err, samples=len(indices)))
    return GradCheckReport(entries=entries, step=step)
