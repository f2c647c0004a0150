"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or when
``OPTCLUST_PURE_PYTHON=1`` is set.  Contracts match ``_ckernels``.
"""
import numpy as np

# pair evaluations per chunk in the cost kernels
_CHUNK_PAIRS = 1 << 22


def _tail(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """-0.5 log|A| + 0.5 b'A^{-1}b for a stack of SPD matrices, NaN on failure."""
    try:
        return _tail_from_chol(np.linalg.cholesky(A), b)
    except np.linalg.LinAlgError:
        pass
    # some matrix failed: redo one at a time with a single jitter retry
    out = np.full(A.shape[0], np.nan)
    d = A.shape[1]
    eye = np.eye(d)
    for k in range(A.shape[0]):
        for M in (A[k], A[k] + 1e-9 * np.trace(A[k]) / d * eye):
            try:
                Lk = np.linalg.cholesky(M)
            except np.linalg.LinAlgError:
                continue
            out[k] = _tail_from_chol(Lk[None], b[k : k + 1])[0]
            break
    return out


def _tail_from_chol(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    y = np.linalg.solve(L, b[..., None])[..., 0]
    logdet = np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    return -logdet + 0.5 * np.einsum("ki,ki->k", y, y)


def gaussian_subset_logml(members, c, P, r, A0, b0, const_term):
    members = np.asarray(members, dtype=np.float64)
    R, n = members.shape
    d = A0.shape[0]
    A = A0 + (members @ P.reshape(n, d * d)).reshape(R, d, d)
    b = b0 + members @ r
    s = members @ c
    out = const_term + s + _tail(A, b)
    out[members.sum(axis=1) == 0] = 0.0
    return out


def _hamming(cand, ref, n):
    h = np.bitwise_count(cand[:, None, :] ^ ref[None, :, :]).sum(axis=2, dtype=np.int64)
    return np.minimum(h, n - h)


def cost_sums(cand, ref, w, n):
    C, R = cand.shape[0], ref.shape[0]
    out = np.empty(C)
    step = max(1, _CHUNK_PAIRS // max(R, 1))
    for start in range(0, C, step):
        h = _hamming(cand[start : start + step], ref, n)
        out[start : start + step] = (h @ w) / n
    return out


def argmin_cost(cand, ref, w, n, tie_tol):
    if cand.shape[0] == 0:
        raise ValueError("empty candidate set")
    values = cost_sums(cand, ref, w, n)
    best = values.min()
    idx = int(np.flatnonzero(values <= best + tie_tol)[0])
    return idx, float(values[idx])


def fwht(x):
    N = x.shape[0]
    h = 1
    while h < N:
        v = x.reshape(-1, 2, h)
        a = v[:, 0, :].copy()
        v[:, 0, :] += v[:, 1, :]
        v[:, 1, :] = a - v[:, 1, :]
        h *= 2
    return x
