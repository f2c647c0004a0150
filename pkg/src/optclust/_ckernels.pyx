# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops.  Same contracts as ``_pykernels``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, sqrt, NAN, isnan
from libc.stdint cimport uint8_t, uint64_t
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


cdef inline int _chol(double* A, int d) noexcept nogil:
    # in-place lower Cholesky on a row-major d x d buffer; 0 on success
    cdef int i, j, k
    cdef double s
    for j in range(d):
        s = A[j * d + j]
        for k in range(j):
            s -= A[j * d + k] * A[j * d + k]
        if not (s > 0.0):
            return -1
        s = sqrt(s)
        A[j * d + j] = s
        for i in range(j + 1, d):
            for k in range(j):
                A[i * d + j] -= A[i * d + k] * A[j * d + k]
            A[i * d + j] /= s
    return 0


cdef inline double _logml_tail(double* A, double* b, double* work, int d) noexcept nogil:
    # -0.5 log|A| + 0.5 b' A^{-1} b with the jitter-once policy; NaN on failure
    cdef int i, k, attempt
    cdef double tr, logdet, quad, s
    for attempt in range(2):
        for i in range(d * d):
            work[i] = A[i]
        if attempt == 1:
            tr = 0.0
            for i in range(d):
                tr += A[i * d + i]
            for i in range(d):
                work[i * d + i] += 1e-9 * tr / d
        if _chol(work, d) == 0:
            logdet = 0.0
            quad = 0.0
            # forward solve L y = b, y stored in work diagonal-free scratch
            for i in range(d):
                logdet += log(work[i * d + i])
                s = b[i]
                for k in range(i):
                    s -= work[i * d + k] * work[d * d + k]
                work[d * d + i] = s / work[i * d + i]
                quad += work[d * d + i] * work[d * d + i]
            return -logdet + 0.5 * quad
    return NAN


def gaussian_subset_logml(const uint8_t[:, ::1] members,
                          const double[::1] c,
                          const double[:, :, ::1] P,
                          const double[:, ::1] r,
                          const double[:, ::1] A0,
                          const double[::1] b0,
                          double const_term):
    cdef Py_ssize_t R = members.shape[0], n = members.shape[1]
    cdef int d = A0.shape[0]
    cdef Py_ssize_t row, x
    cdef int i, j, count
    cdef double s, val
    out = np.empty(R, dtype=np.float64)
    cdef double[::1] out_v = out
    cdef double* A = <double*> malloc(d * d * sizeof(double))
    cdef double* b = <double*> malloc(d * sizeof(double))
    cdef double* work = <double*> malloc((d * d + d) * sizeof(double))
    try:
        with nogil:
            for row in range(R):
                for i in range(d):
                    b[i] = b0[i]
                    for j in range(d):
                        A[i * d + j] = A0[i, j]
                s = 0.0
                count = 0
                for x in range(n):
                    if members[row, x]:
                        count += 1
                        s += c[x]
                        for i in range(d):
                            b[i] += r[x, i]
                            for j in range(i + 1):
                                A[i * d + j] += P[x, i, j]
                if count == 0:
                    out_v[row] = 0.0
                    continue
                for i in range(d):
                    for j in range(i + 1, d):
                        A[i * d + j] = A[j * d + i]
                val = _logml_tail(A, b, work, d)
                out_v[row] = const_term + s + val
    finally:
        free(A)
        free(b)
        free(work)
    return out


cdef inline double _pair_cost(const uint64_t[:, ::1] cand, Py_ssize_t ci,
                              const uint64_t[:, ::1] ref, Py_ssize_t ri,
                              Py_ssize_t W, int n) noexcept nogil:
    cdef int h = 0
    cdef Py_ssize_t k
    for k in range(W):
        h += __builtin_popcountll(cand[ci, k] ^ ref[ri, k])
    if n - h < h:
        h = n - h
    return <double> h


def cost_sums(const uint64_t[:, ::1] cand, const uint64_t[:, ::1] ref,
              const double[::1] w, int n):
    cdef Py_ssize_t C = cand.shape[0], R = ref.shape[0], W = cand.shape[1]
    cdef Py_ssize_t ci, ri
    cdef double acc
    out = np.empty(C, dtype=np.float64)
    cdef double[::1] out_v = out
    with nogil:
        for ci in range(C):
            acc = 0.0
            for ri in range(R):
                acc += w[ri] * _pair_cost(cand, ci, ref, ri, W, n)
            out_v[ci] = acc / n
    return out


cdef inline double _pruned(const uint64_t[:, ::1] cand, Py_ssize_t ci,
                           const uint64_t[:, ::1] ref, const double[::1] w,
                           Py_ssize_t W, int n, double bound) noexcept nogil:
    # full objective, or +inf as soon as the partial sum exceeds bound
    cdef Py_ssize_t ri, R = ref.shape[0]
    cdef double acc = 0.0, lim = bound * n
    for ri in range(R):
        acc += w[ri] * _pair_cost(cand, ci, ref, ri, W, n)
        if acc > lim:
            return 1e300
    return acc / n


def argmin_cost(const uint64_t[:, ::1] cand, const uint64_t[:, ::1] ref,
                const double[::1] w, int n, double tie_tol):
    """Index of the first candidate within tie_tol of the minimum, and its value."""
    cdef Py_ssize_t C = cand.shape[0], W = cand.shape[1]
    cdef Py_ssize_t ci, best_i = -1
    cdef double best = 1e300, v
    if C == 0:
        raise ValueError("empty candidate set")
    with nogil:
        for ci in range(C):
            v = _pruned(cand, ci, ref, w, W, n, best + tie_tol)
            if v < best:
                best = v
        for ci in range(C):
            v = _pruned(cand, ci, ref, w, W, n, best + tie_tol)
            if v <= best + tie_tol:
                best_i = ci
                best = v
                break
    return best_i, best


def fwht(double[::1] x):
    """In-place unnormalized Walsh-Hadamard transform; len(x) a power of two."""
    cdef Py_ssize_t N = x.shape[0], h = 1, i, j
    cdef double a, b
    with nogil:
        while h < N:
            i = 0
            while i < N:
                for j in range(i, i + h):
                    a = x[j]
                    b = x[j + h]
                    x[j] = a + b
                    x[j + h] = a - b
                i += 2 * h
            h *= 2
    return x
