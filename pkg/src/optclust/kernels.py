"""Hot-loop dispatch.

The compiled extension ``_ckernels`` is used when it imports; otherwise the
numpy fallback in ``_pykernels``.  Set ``OPTCLUST_PURE_PYTHON=1`` to force
the fallback.  :data:`BACKEND` names the active implementation.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

__all__ = [
    "BACKEND",
    "TIE_TOL",
    "get_backend",
    "pack_labels",
    "gaussian_subset_logml",
    "cost_sums",
    "argmin_cost",
    "fwht",
]

# objective values within this absolute distance count as tied
TIE_TOL = 1e-12

_compiled = None
if os.environ.get("OPTCLUST_PURE_PYTHON", "").strip() not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"


def get_backend(name: str | None = None):
    """Return the kernel module for ``name`` ('compiled', 'python' or None=active)."""
    if name is None:
        name = BACKEND
    if name == "python":
        return _pykernels
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


_impl = get_backend()


def pack_labels(labels) -> np.ndarray:
    """Pack 0/1 label rows into (R, W) uint64 words for popcount kernels."""
    labels = np.atleast_2d(np.asarray(labels, dtype=np.uint8))
    R, n = labels.shape
    W = max(1, -(-n // 64))
    packed = np.packbits(labels, axis=1)
    buf = np.zeros((R, W * 8), dtype=np.uint8)
    buf[:, : packed.shape[1]] = packed
    return np.ascontiguousarray(buf.view(np.uint64))


def gaussian_subset_logml(members, c, P, r, A0, b0, const_term, backend=None):
    """Log marginal likelihood of each member subset under a Gaussian-mean model.

    Each point ``x`` contributes a scalar ``c[x]``, precision block ``P[x]``
    and linear term ``r[x]``; a subset's value is
    ``const + sum c - 0.5 log|A| + 0.5 b' A^{-1} b`` with ``A = A0 + sum P``,
    ``b = b0 + sum r``.  Empty subsets give 0.  NaN marks a failed
    factorization (after one jitter retry).
    """
    impl = _impl if backend is None else get_backend(backend)
    return impl.gaussian_subset_logml(
        np.ascontiguousarray(members, dtype=np.uint8),
        np.ascontiguousarray(c, dtype=np.float64),
        np.ascontiguousarray(P, dtype=np.float64),
        np.ascontiguousarray(r, dtype=np.float64),
        np.ascontiguousarray(A0, dtype=np.float64),
        np.ascontiguousarray(b0, dtype=np.float64),
        float(const_term),
    )


def cost_sums(cand, ref, w, n: int, backend=None) -> np.ndarray:
    """Expected partition cost of each packed candidate against weighted refs."""
    impl = _impl if backend is None else get_backend(backend)
    return impl.cost_sums(cand, ref, np.ascontiguousarray(w, dtype=np.float64), int(n))


def argmin_cost(cand, ref, w, n: int, tie_tol: float = TIE_TOL, backend=None):
    """First candidate (in row order) whose expected cost is within ``tie_tol``
    of the minimum; returns ``(index, value)``.

    References are visited in decreasing weight so the compiled path can drop
    a candidate as soon as its partial sum exceeds the best total.
    """
    impl = _impl if backend is None else get_backend(backend)
    w = np.asarray(w, dtype=np.float64)
    order = np.argsort(-w, kind="stable")
    return impl.argmin_cost(cand, np.ascontiguousarray(ref[order]), np.ascontiguousarray(w[order]), int(n), float(tie_tol))


def fwht(x, backend=None) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform (returns a transformed copy)."""
    impl = _impl if backend is None else get_backend(backend)
    x = np.array(x, dtype=np.float64)
    N = x.shape[0]
    if N & (N - 1):
        raise ValueError("length must be a power of two")
    return np.asarray(impl.fwht(x))
