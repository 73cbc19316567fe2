"""Hot array kernels: scatter-adds and per-segment softmax.

The reasoning layers store graph edges sorted by destination node with
CSR-style offsets (``seg_ptr``), and spend most of their time in the
gather/scatter/segment operations below. Two interchangeable backends
compute them: numba-compiled loops (default when numba imports) and pure
numpy. Select with the ``EVREL_BACKEND`` environment variable ("numba" or
"numpy") or :func:`set_backend` at runtime. Accumulation order is fixed in
both backends, so repeated runs are bit-identical within a backend.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    njit = None
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _np_scatter_add_rows(out, idx, src):
    np.add.at(out, idx, src)


def _np_scatter_add_pairs(out, rows, cols, vals):
    np.add.at(out, (rows, cols), vals)


def _np_scatter_add_1d(out, idx, vals):
    np.add.at(out, idx, vals)


def _np_segment_softmax(scores, seg_ptr):
    out = np.zeros_like(scores)
    if scores.size == 0:
        return out
    lens = np.diff(seg_ptr)
    valid = lens > 0
    starts = seg_ptr[:-1][valid]
    reps = lens[valid]
    maxs = np.maximum.reduceat(scores, starts)
    e = np.exp(scores - np.repeat(maxs, reps))
    sums = np.add.reduceat(e, starts)
    return e / np.repeat(sums, reps)


def _np_segment_softmax_grad(alpha, grad_out, seg_ptr):
    if alpha.size == 0:
        return np.zeros_like(alpha)
    lens = np.diff(seg_ptr)
    valid = lens > 0
    starts = seg_ptr[:-1][valid]
    dots = np.add.reduceat(alpha * grad_out, starts)
    return alpha * (grad_out - np.repeat(dots, lens[valid]))


_NUMPY_IMPL = {
    "scatter_add_rows": _np_scatter_add_rows,
    "scatter_add_pairs": _np_scatter_add_pairs,
    "scatter_add_1d": _np_scatter_add_1d,
    "segment_softmax": _np_segment_softmax,
    "segment_softmax_grad": _np_segment_softmax_grad,
}

_BACKENDS = {"numpy": _NUMPY_IMPL}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _nb_scatter_add_rows(out, idx, src):
        for e in range(idx.shape[0]):
            r = idx[e]
            for c in range(src.shape[1]):
                out[r, c] += src[e, c]

    @njit(cache=True)
    def _nb_scatter_add_pairs(out, rows, cols, vals):
        for e in range(rows.shape[0]):
            out[rows[e], cols[e]] += vals[e]

    @njit(cache=True)
    def _nb_scatter_add_1d(out, idx, vals):
        for e in range(idx.shape[0]):
            out[idx[e]] += vals[e]

    @njit(cache=True)
    def _nb_segment_softmax(scores, seg_ptr):
        out = np.zeros_like(scores)
        for s in range(seg_ptr.shape[0] - 1):
            lo, hi = seg_ptr[s], seg_ptr[s + 1]
            if hi == lo:
                continue
            m = scores[lo]
            for e in range(lo + 1, hi):
                if scores[e] > m:
                    m = scores[e]
            z = 0.0
            for e in range(lo, hi):
                out[e] = np.exp(scores[e] - m)
                z += out[e]
            for e in range(lo, hi):
                out[e] /= z
        return out

    @njit(cache=True)
    def _nb_segment_softmax_grad(alpha, grad_out, seg_ptr):
        out = np.zeros_like(alpha)
        for s in range(seg_ptr.shape[0] - 1):
            lo, hi = seg_ptr[s], seg_ptr[s + 1]
            dot = 0.0
            for e in range(lo, hi):
                dot += alpha[e] * grad_out[e]
            for e in range(lo, hi):
                out[e] = alpha[e] * (grad_out[e] - dot)
        return out

    _BACKENDS["numba"] = {
        "scatter_add_rows": _nb_scatter_add_rows,
        "scatter_add_pairs": _nb_scatter_add_pairs,
        "scatter_add_1d": _nb_scatter_add_1d,
        "segment_softmax": _nb_segment_softmax,
        "segment_softmax_grad": _nb_segment_softmax_grad,
    }


def _default_backend() -> str:
    name = os.environ.get("EVREL_BACKEND", "").strip().lower()
    if name:
        if name not in ("numba", "numpy"):
            raise ValueError(f"EVREL_BACKEND must be 'numba' or 'numpy', got {name!r}")
        if name == "numba" and not HAS_NUMBA:
            raise RuntimeError("EVREL_BACKEND=numba but numba is not importable")
        return name
    return "numba" if HAS_NUMBA else "numpy"


_ACTIVE = _default_backend()


def set_backend(name: str) -> None:
    """Switch kernel backend at runtime ("numba" or "numpy")."""
    global _ACTIVE
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    _ACTIVE = name


def active_backend() -> str:
    return _ACTIVE


# ---------------------------------------------------------------------------
# dispatching wrappers
# ---------------------------------------------------------------------------

def scatter_add_rows(out: np.ndarray, idx: np.ndarray, src: np.ndarray) -> None:
    """out[idx[e], :] += src[e, :] for each e, in edge order."""
    _BACKENDS[_ACTIVE]["scatter_add_rows"](out, idx, src)


def scatter_add_pairs(out, rows, cols, vals) -> None:
    """out[rows[e], cols[e]] += vals[e] for each e, in order."""
    _BACKENDS[_ACTIVE]["scatter_add_pairs"](out, rows, cols, vals)


def scatter_add_1d(out, idx, vals) -> None:
    _BACKENDS[_ACTIVE]["scatter_add_1d"](out, idx, vals)


def segment_softmax(scores: np.ndarray, seg_ptr: np.ndarray) -> np.ndarray:
    """Softmax within each contiguous segment of a 1-D score array.

    Empty segments are allowed (they simply contribute no entries).
    """
    return _BACKENDS[_ACTIVE]["segment_softmax"](scores, seg_ptr)


def segment_softmax_grad(alpha, grad_out, seg_ptr) -> np.ndarray:
    """Backward of segment_softmax: alpha * (g - seg_sum(alpha * g))."""
    return _BACKENDS[_ACTIVE]["segment_softmax_grad"](alpha, grad_out, seg_ptr)
