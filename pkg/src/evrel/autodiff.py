"""Dense float64 tensors with a reverse-mode differentiation tape.

Minimal by design: 0/1/2-D arrays, no broadcasting beyond scalars, fixed
reduction order everywhere so repeated runs are bit-identical. Operations
record themselves on the innermost active :class:`Tape`; with no tape
active they just compute, which is the cheap evaluation path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .rng import key_rng


class Tensor:
    """A float64 array plus gradient bookkeeping."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 0 and not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of primitive applications.

    Append order is a topological order of the computation, so the
    backward sweep is a single reversed pass that visits each node once.
    """

    def __init__(self):
        self._ops: list[tuple[tuple[Tensor, ...], Tensor, object]] = []

    def __enter__(self):
        _STACK.append(self)
        return self

    def __exit__(self, *exc):
        _STACK.pop()
        return False

    def __len__(self):
        return len(self._ops)


_STACK: list[Tape] = []


def _active_tape() -> Tape | None:
    return _STACK[-1] if _STACK else None


def _make(data, inputs: tuple[Tensor, ...], bwd) -> Tensor:
    """Create an op output, recording it when a tape is active.

    ``bwd(grad_out)`` must return one gradient array (or None) per input,
    in order.
    """
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=needs)
    if needs:
        tape._ops.append((inputs, out, bwd))
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = g.astype(np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor, tape: Tape) -> None:
    """Reverse-topological gradient accumulation.

    Gradients sum over fan-out; leaf tensors (requires_grad=True, created
    outside any op) keep their accumulated .grad afterwards, so gradients
    can be accumulated across tapes before an optimizer step. Intermediate
    grads live in a scratch map only for the duration of the sweep.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise RuntimeError("loss is detached: not produced from tracked tensors on this tape")

    produced = {id(out) for _, out, _ in tape._ops}
    if id(loss) not in produced:
        raise RuntimeError("loss is detached: it was not produced on this tape")

    scratch: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    def add_grad(t: Tensor, g: np.ndarray) -> None:
        if id(t) in produced:
            prev = scratch.get(id(t))
            if prev is None:
                scratch[id(t)] = g.astype(np.float64, copy=True)
            else:
                prev += g
        else:
            _accumulate(t, g)

    for inputs, out, bwd in reversed(tape._ops):
        gout = scratch.pop(id(out), None)
        if gout is None:
            continue
        for t, g in zip(inputs, bwd(gout)):
            if g is not None and t.requires_grad:
                add_grad(t, g)


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # only scalar broadcast is supported: collapse to () when needed
    if g.shape != tuple(shape):
        return np.asarray(g.sum()).reshape(shape)
    return g


def _check_pair(a: Tensor, b: Tensor, opname: str) -> None:
    if a.shape != b.shape and a.ndim != 0 and b.ndim != 0:
        raise ValueError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_pair(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)))


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data * c, (a,), lambda g: (g * c,))


def scalar_add(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _make(a.data + c, (a,), lambda g: (g,))


def log(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.log(x), (a,), lambda g: (g / x,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),))


def absval(a: Tensor) -> Tensor:
    x = a.data
    return _make(np.abs(x), (a,), lambda g: (g * np.sign(x),))


def relu(a: Tensor) -> Tensor:
    """max(x, 0); subgradient 0 at the kink."""
    x = a.data
    return _make(np.maximum(x, 0.0), (a,), lambda g: (g * (x > 0.0),))


def clip_min(a: Tensor, lo: float) -> Tensor:
    """max(x, lo); gradient flows only where x > lo."""
    x = a.data
    lo = float(lo)
    return _make(np.maximum(x, lo), (a,), lambda g: (g * (x > lo),))


# ---------------------------------------------------------------------------
# linear algebra and structure ops
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b a length-n row vector added to every row."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ValueError(f"affine: incompatible shapes {x.shape}, {w.shape}, {b.shape}")
    return _make(x.data @ w.data + b.data, (x, w, b),
                 lambda g: (g @ w.data.T, x.data.T @ g, g.sum(axis=0)))


def concat(parts: list[Tensor], axis: int = 0) -> Tensor:
    if not parts:
        raise ValueError("concat of no tensors")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(parts)))

    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def rowsum(a: Tensor) -> Tensor:
    """[m, n] -> [m]; sum along each row."""
    if a.ndim != 2:
        raise ValueError("rowsum expects a 2-D tensor")
    n = a.shape[1]
    return _make(a.data.sum(axis=1), (a,),
                 lambda g: (np.repeat(g[:, None], n, axis=1),))


def mean_rows(a: Tensor) -> Tensor:
    """[m, n] -> [1, n]; column means."""
    if a.ndim != 2:
        raise ValueError("mean_rows expects a 2-D tensor")
    m = a.shape[0]
    return _make(a.data.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.repeat(g / m, m, axis=0),))


def sum_all(a: Tensor) -> Tensor:
    """Any shape -> scalar ()."""
    return _make(np.asarray(a.data.sum()), (a,),
                 lambda g: (np.full_like(a.data, float(g)),))


def gather_rows(x: Tensor, idx: np.ndarray) -> Tensor:
    """Rows x[idx]; repeated indices accumulate on the way back."""
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        kernels.scatter_add_rows(gx, idx, np.ascontiguousarray(g))
        return (gx,)

    return _make(x.data[idx], (x,), bwd)


def take1d(x: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        kernels.scatter_add_1d(gx, idx, np.ascontiguousarray(g))
        return (gx,)

    return _make(x.data[idx], (x,), bwd)


def gather2d(x: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """1-D tensor of x[rows[e], cols[e]]."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def bwd(g):
        gx = np.zeros_like(x.data)
        kernels.scatter_add_pairs(gx, rows, cols, np.ascontiguousarray(g))
        return (gx,)

    return _make(x.data[rows, cols], (x,), bwd)


def scale_rows(x: Tensor, s: Tensor) -> Tensor:
    """Row e of x scaled by s[e]."""
    if x.ndim != 2 or s.shape != (x.shape[0],):
        raise ValueError(f"scale_rows: incompatible shapes {x.shape}, {s.shape}")
    return _make(x.data * s.data[:, None], (x, s),
                 lambda g: (g * s.data[:, None], (g * x.data).sum(axis=1)))


def segment_sum(x: Tensor, seg_ids: np.ndarray, n_segments: int) -> Tensor:
    """Sum rows of x into n_segments buckets given per-row segment ids."""
    seg_ids = np.asarray(seg_ids, dtype=np.int64)
    out = np.zeros((n_segments, x.shape[1]), dtype=np.float64)
    kernels.scatter_add_rows(out, seg_ids, x.data)
    return _make(out, (x,), lambda g: (np.ascontiguousarray(g[seg_ids]),))


def segment_softmax(scores: Tensor, seg_ptr: np.ndarray) -> Tensor:
    """Softmax within contiguous segments of a 1-D score vector.

    ``seg_ptr`` holds CSR-style offsets; empty segments are fine and
    simply produce no output entries.
    """
    if scores.ndim != 1:
        raise ValueError("segment_softmax expects 1-D scores")
    seg_ptr = np.asarray(seg_ptr, dtype=np.int64)
    alpha = kernels.segment_softmax(scores.data, seg_ptr)
    return _make(alpha, (scores,),
                 lambda g: (kernels.segment_softmax_grad(alpha, np.ascontiguousarray(g), seg_ptr),))


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax with optional boolean keep-mask.

    Masked-out entries are exactly zero in the output. A fully masked row
    is an error.
    """
    if x.ndim != 2:
        raise ValueError("softmax_rows expects a 2-D tensor")
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != z.shape:
            raise ValueError(f"softmax mask shape {mask.shape} != input {z.shape}")
        if not mask.any(axis=1).all():
            raise ValueError("softmax_rows: fully masked row")
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        e = np.where(mask, e, 0.0)
    p = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = (g * p).sum(axis=1, keepdims=True)
        return (p * (g - dot),)

    return _make(p, (x,), bwd)


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization followed by an affine transform."""
    if x.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ValueError(f"layer_norm_rows: incompatible shapes {x.shape}, {gain.shape}, {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def bwd(g):
        dgain = (g * xhat).sum(axis=0)
        dbias = g.sum(axis=0)
        dxhat = g * gain.data
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        return (dx, dgain, dbias)

    return _make(xhat * gain.data + bias.data, (x, gain, bias), bwd)


def dropout_mask(x: Tensor, rate: float, key: tuple = (), training: bool = True) -> Tensor:
    """Inverted dropout with a mask derived deterministically from ``key``.

    Identity in eval mode or at rate 0.
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = key_rng("dropout", *key).random(x.data.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    factor = keep * scale
    return _make(x.data * factor, (x,), lambda g: (g * factor,))


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradcheckReport:
    tol: float
    h: float
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        return max(self.per_tensor.values()) if self.per_tensor else 0.0

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        lines = [f"gradcheck h={self.h:g} tol={self.tol:g}"]
        for name in sorted(self.per_tensor):
            lines.append(f"  {name}: rel_err={self.per_tensor[name]:.3e}")
        lines.append(f"  max={self.max_rel_error:.3e} -> {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def gradcheck(f, params: dict[str, Tensor], h: float = 1e-5, tol: float = 1e-4) -> GradcheckReport:
    """Central finite differences against taped gradients.

    ``f(params)`` must return a scalar Tensor and be deterministic (fix
    any rng keys, disable dropout). The relative error per tensor is the
    max absolute difference normalized by the largest gradient magnitude
    in that tensor, which keeps near-zero entries from dominating.
    """
    for t in params.values():
        t.zero_grad()
    with Tape() as tape:
        loss = f(params)
    backward(loss, tape)
    analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for name, t in params.items()}

    report = GradcheckReport(tol=tol, h=h)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f(params).data)
            flat[i] = orig - h
            lo = float(f(params).data)
            flat[i] = orig
            fd[i] = (hi - lo) / (2.0 * h)
        fd = fd.reshape(t.data.shape)
        ad = analytic[name]
        denom = max(np.abs(fd).max(initial=0.0), np.abs(ad).max(initial=0.0), 1e-8)
        report.per_tensor[name] = float(np.abs(fd - ad).max(initial=0.0) / denom)
    return report
