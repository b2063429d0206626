"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Just the primitives the noise-prediction network needs, each with a
hand-written adjoint.  Forward evaluation works with or without an active
:class:`Tape`; only tensors created while a tape is active are recorded, and
:func:`backward` replays that tape in reverse creation order (which is a
topological order by construction).

Every primitive checks its result for NaN/Inf and raises
:class:`NonFiniteError` on failure, so numerical blow-ups surface at the op
that produced them rather than as a corrupted loss.  The check is a single
``sum()`` reduction per output: a sum over finite values of the magnitudes
used here cannot overflow, and any NaN/Inf input propagates to the total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

__all__ = [
    "Tensor",
    "Tape",
    "Gradients",
    "NonFiniteError",
    "ShapeError",
    "backward",
    "constant",
    "add",
    "sub",
    "mul",
    "scale",
    "shift",
    "matmul",
    "conv1d",
    "softmax",
    "layer_norm",
    "relu",
    "gelu",
    "transpose",
    "reshape",
    "reduce_mean",
    "reduce_sum",
    "dropout",
    "gradcheck",
    "GradcheckResult",
]

_TAPE_STACK: list["Tape"] = []

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class NonFiniteError(FloatingPointError):
    """A primitive produced NaN or Inf."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the primitive's contract."""


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it.

    ``parents`` and ``grad_fn`` are populated only when a tape is active;
    ``grad_fn(g)`` maps the output gradient to a tuple of per-parent
    gradients (entries may be ``None`` for non-differentiable parents).
    """

    __slots__ = ("data", "parents", "grad_fn", "name")

    def __init__(self, data, name: str | None = None):
        self.data = np.asarray(data)
        self.parents: tuple["Tensor", ...] = ()
        self.grad_fn = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.data.shape}, dtype={self.data.dtype})"

    # arithmetic sugar; python scalars stay scalars so float32 data
    # is never silently promoted
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Context manager recording tensor creation order for backward()."""

    def __init__(self) -> None:
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        popped = _TAPE_STACK.pop()
        if popped is not self:
            raise RuntimeError("tape stack corrupted: exited out of order")


def constant(data, name: str | None = None) -> Tensor:
    """Wrap an array as a leaf tensor (no recording needed for leaves)."""
    return Tensor(data, name=name)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _assert_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr.sum()):
        raise NonFiniteError(f"{op} produced a non-finite value")


def _make(data: np.ndarray, op: str, parents: tuple[Tensor, ...], grad_fn) -> Tensor:
    _assert_finite(data, op)
    out = Tensor(data)
    if _TAPE_STACK:
        out.parents = parents
        out.grad_fn = grad_fn
        for tape in _TAPE_STACK:
            tape.nodes.append(out)
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / broadcasting primitives


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _make(out, "add", (a, b), grad_fn)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _make(out, "sub", (a, b), grad_fn)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return (
            _unbroadcast(g * b.data, a.data.shape),
            _unbroadcast(g * a.data, b.data.shape),
        )

    return _make(out, "mul", (a, b), grad_fn)


def scale(x, c: float) -> Tensor:
    """Multiply by a python scalar (dtype-preserving)."""
    x = _as_tensor(x)
    c = float(c)
    return _make(x.data * c, "scale", (x,), lambda g: (g * c,))


def shift(x, c: float) -> Tensor:
    """Add a python scalar (dtype-preserving)."""
    x = _as_tensor(x)
    return _make(x.data + float(c), "shift", (x,), lambda g: (g,))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    out = np.maximum(x.data, 0.0)

    def grad_fn(g):
        return (g * (x.data > 0.0).astype(g.dtype),)

    return _make(out, "relu", (x,), grad_fn)


def gelu(x) -> Tensor:
    """Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    x = _as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data * _INV_SQRT2))
    out = x.data * cdf

    def grad_fn(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _make(out, "gelu", (x,), grad_fn)


def dropout(x, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; identity when p == 0."""
    x = _as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {p}")
    if p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _make(x.data * keep, "dropout", (x,), lambda g: (g * keep,))


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul operands must have ndim >= 2")
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner dimensions differ: {a.data.shape} @ {b.data.shape}"
        )
    out = a.data @ b.data

    def grad_fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)
        return ga, gb

    return _make(out, "matmul", (a, b), grad_fn)


def conv1d(x, w, padding: str = "same") -> Tensor:
    """1-D cross-correlation, stride 1.

    ``x`` is (B, C_in, L) and ``w`` is (C_out, C_in, W); 1-D inputs are
    treated as (1, 1, L) / (1, 1, W) and returned 1-D.  ``same`` zero-pads to
    preserve L (left pad (W-1)//2); ``valid`` requires L >= W and yields
    L - W + 1.
    """
    x, w = _as_tensor(x), _as_tensor(w)
    xd, wd = x.data, w.data
    flat = xd.ndim == 1
    if flat:
        if wd.ndim != 1:
            raise ShapeError("1-D conv input needs a 1-D kernel")
        xd = xd[None, None, :]
        wd = wd[None, None, :]
    if xd.ndim != 3 or wd.ndim != 3:
        raise ShapeError(
            f"conv1d expects (B, C_in, L) and (C_out, C_in, W), got "
            f"{x.data.shape} and {w.data.shape}"
        )
    batch, c_in, length = xd.shape
    c_out, c_in_w, width = wd.shape
    if c_in_w != c_in:
        raise ShapeError(
            f"kernel expects {c_in_w} input channels, input has {c_in}"
        )
    if padding == "same":
        pad_left = (width - 1) // 2
        pad_right = width - 1 - pad_left
        l_out = length
    elif padding == "valid":
        if length < width:
            raise ShapeError(
                f"valid conv needs length >= kernel width ({length} < {width})"
            )
        pad_left = pad_right = 0
        l_out = length - width + 1
    else:
        raise ValueError(f"unknown padding {padding!r}")

    xp = np.pad(xd, ((0, 0), (0, 0), (pad_left, pad_right)))
    out = np.zeros((batch, c_out, l_out), dtype=np.result_type(xd, wd))
    for k in range(width):
        # out[b,o,l] += sum_c xp[b,c,l+k] * w[o,c,k]
        part = np.tensordot(xp[:, :, k : k + l_out], wd[:, :, k], axes=([1], [1]))
        out += part.transpose(0, 2, 1)

    def grad_fn(g):
        if flat:
            g = g[None, None, :]
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(wd)
        for k in range(width):
            gw[:, :, k] = np.tensordot(
                g, xp[:, :, k : k + l_out], axes=([0, 2], [0, 2])
            )
            gxk = np.tensordot(g, wd[:, :, k], axes=([1], [0]))  # (B, L_out, C_in)
            gxp[:, :, k : k + l_out] += gxk.transpose(0, 2, 1)
        gx = gxp[:, :, pad_left : pad_left + length]
        if flat:
            return gx[0, 0], gw[0, 0]
        return gx, gw

    return _make(out[0, 0] if flat else out, "conv1d", (x, w), grad_fn)


# ---------------------------------------------------------------------------
# normalization and nonlinear reductions


def softmax(x, axis: int = -1) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * s).sum(axis=axis, keepdims=True)
        return (s * (g - inner),)

    return _make(s, "softmax", (x,), grad_fn)


def layer_norm(x, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize to zero mean / unit variance along one axis (no affine)."""
    x = _as_tensor(x)
    mean = x.data.mean(axis=axis, keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=axis, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    y = centered * inv_std

    def grad_fn(g):
        g_mean = g.mean(axis=axis, keepdims=True)
        gy_mean = (g * y).mean(axis=axis, keepdims=True)
        return (inv_std * (g - g_mean - y * gy_mean),)

    return _make(y, "layer_norm", (x,), grad_fn)


# ---------------------------------------------------------------------------
# shape manipulation and reductions


def transpose(x, axes: tuple[int, ...] | None = None) -> Tensor:
    x = _as_tensor(x)
    out = np.transpose(x.data, axes)
    if axes is None:
        inverse = None
    else:
        inverse = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.transpose(g, inverse),)

    return _make(out, "transpose", (x,), grad_fn)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    original = x.data.shape
    out = np.reshape(x.data, shape)

    def grad_fn(g):
        return (np.reshape(g, original),)

    return _make(out, "reshape", (x,), grad_fn)


def _reduce_grad(g, x_shape, axis, keepdims, denom):
    if axis is None:
        return np.broadcast_to(g / denom, x_shape).copy()
    if not keepdims:
        axes = axis if isinstance(axis, tuple) else (axis,)
        for ax in sorted(a % len(x_shape) for a in axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g / denom, x_shape).copy()


def reduce_mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    denom = x.data.size // max(out.size, 1)
    shape = x.data.shape

    def grad_fn(g):
        return (_reduce_grad(g, shape, axis, keepdims, float(denom)),)

    return _make(out, "reduce_mean", (x,), grad_fn)


def reduce_sum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = _as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    shape = x.data.shape

    def grad_fn(g):
        return (_reduce_grad(g, shape, axis, keepdims, 1.0),)

    return _make(out, "reduce_sum", (x,), grad_fn)


# ---------------------------------------------------------------------------
# backward pass


class Gradients:
    """Mapping from leaf tensors to gradient arrays; absent means zero."""

    def __init__(self, store: dict[Tensor, np.ndarray]):
        self._store = store

    def __getitem__(self, tensor: Tensor) -> np.ndarray:
        g = self._store.get(tensor)
        if g is None:
            return np.zeros_like(tensor.data)
        return g

    def __contains__(self, tensor: Tensor) -> bool:
        return tensor in self._store


def backward(tape: Tape, loss: Tensor) -> Gradients:
    """Accumulate d(loss)/d(leaf) for everything feeding ``loss``.

    ``loss`` must be a scalar recorded on ``tape``.  Reverse creation order
    guarantees each node's gradient is complete before its own adjoint runs.
    """
    if loss.data.size != 1:
        raise ValueError(f"loss must be scalar, got shape {loss.data.shape}")
    if not any(node is loss for node in tape.nodes):
        raise ValueError("loss was not recorded on this tape")
    store: dict[Tensor, np.ndarray] = {loss: np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = store.pop(node, None)
        if g is None or node.grad_fn is None:
            continue
        for parent, pg in zip(node.parents, node.grad_fn(g)):
            if pg is None:
                continue
            held = store.get(parent)
            store[parent] = pg if held is None else held + pg
    return Gradients(store)


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradcheckResult:
    """Per-input worst relative errors from central-difference comparison."""

    tolerance: float
    step: float
    max_rel_error: float
    per_input: dict[str, float]
    failures: list[tuple[str, tuple[int, ...], float]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tolerance


def gradcheck(
    fn,
    inputs,
    *,
    h: float = 1e-5,
    tolerance: float = 1e-4,
    rel_floor: float = 1e-3,
    samples_per_input: int | None = None,
    seed: int = 0,
) -> GradcheckResult:
    """Compare tape gradients of scalar ``fn(*inputs)`` to central differences.

    Relative error uses ``|a - n| / max(|a|, |n|, rel_floor)`` so near-zero
    derivatives are judged on absolute error.  Inputs should be float64 for
    the step size to make sense.  ``samples_per_input`` limits the number of
    perturbed entries per tensor (seeded choice) for expensive functions.
    """
    inputs = list(inputs)
    with Tape() as tape:
        loss = fn(*inputs)
    grads = backward(tape, loss)

    rng = np.random.default_rng(seed)
    per_input: dict[str, float] = {}
    failures: list[tuple[str, tuple[int, ...], float]] = []
    for i, x in enumerate(inputs):
        name = x.name or f"input{i}"
        analytic = grads[x]
        flat_indices = np.arange(x.data.size)
        if samples_per_input is not None and x.data.size > samples_per_input:
            flat_indices = rng.choice(x.data.size, samples_per_input, replace=False)
        worst = 0.0
        for j in flat_indices:
            idx = np.unravel_index(int(j), x.data.shape)
            original = x.data[idx]
            x.data[idx] = original + h
            f_plus = float(fn(*inputs).data)
            x.data[idx] = original - h
            f_minus = float(fn(*inputs).data)
            x.data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[idx])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), rel_floor)
            if rel > worst:
                worst = rel
            if rel > tolerance:
                failures.append((name, idx, rel))
        per_input[name] = worst
    max_rel = max(per_input.values()) if per_input else 0.0
    return GradcheckResult(
        tolerance=tolerance,
        step=h,
        max_rel_error=max_rel,
        per_input=per_input,
        failures=failures,
    )
