import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import hadamard

from optclust import kernels

try:
    kernels.get_backend("compiled")
    BACKENDS = ["python", "compiled"]
except ImportError:
    BACKENDS = ["python"]


def direct_costs(cand_rows, ref_rows, w):
    n = cand_rows.shape[1]
    h = (cand_rows[:, None, :] != ref_rows[None, :, :]).sum(axis=2)
    return (np.minimum(h, n - h) / n) @ w


def direct_logml(members, c, P, r, A0, b0, const):
    out = np.empty(members.shape[0])
    for k, m in enumerate(members.astype(bool)):
        if not m.any():
            out[k] = 0.0
            continue
        A = A0 + P[m].sum(axis=0)
        b = b0 + r[m].sum(axis=0)
        out[k] = const + c[m].sum() - 0.5 * np.linalg.slogdet(A)[1] + 0.5 * b @ np.linalg.solve(A, b)
    return out


rows_strategy = st.integers(2, 70).flatmap(
    lambda n: st.tuples(
        st.just(n),
        st.integers(1, 12),
        st.integers(1, 12),
        st.integers(0, 2**32 - 1),
    )
)


@settings(max_examples=40, deadline=None)
@given(rows_strategy)
def test_cost_kernels_match_direct(args):
    n, R, C, seed = args
    rng = np.random.default_rng(seed)
    cand = rng.integers(0, 2, (C, n))
    ref = rng.integers(0, 2, (R, n))
    w = rng.dirichlet(np.ones(R))
    expect = direct_costs(cand, ref, w)
    pc, pr = kernels.pack_labels(cand), kernels.pack_labels(ref)
    for b in BACKENDS:
        np.testing.assert_allclose(kernels.cost_sums(pc, pr, w, n, backend=b), expect, atol=1e-12)
        i, v = kernels.argmin_cost(pc, pr, w, n, backend=b)
        assert v == pytest.approx(expect.min(), abs=1e-12)
        assert i == int(np.flatnonzero(expect <= expect.min() + kernels.TIE_TOL)[0])


def test_argmin_prefers_first_tied():
    cand = np.array([[0, 1, 1, 0], [0, 0, 1, 1], [0, 1, 1, 0]])
    ref = np.array([[0, 1, 1, 0]])
    for b in BACKENDS:
        i, v = kernels.argmin_cost(kernels.pack_labels(cand), kernels.pack_labels(ref), [1.0], 4, backend=b)
        assert (i, v) == (0, 0.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_subset_logml_matches_direct(n, d, seed):
    rng = np.random.default_rng(seed)
    L = rng.normal(size=(n, d, d))
    P = L @ L.transpose(0, 2, 1) * 0.3
    c = rng.normal(size=n)
    r = rng.normal(size=(n, d))
    A0 = np.eye(d) * rng.uniform(0.5, 2.0)
    b0 = rng.normal(size=d)
    members = rng.integers(0, 2, (6, n)).astype(np.uint8)
    members[0] = 0
    expect = direct_logml(members, c, P, r, A0, b0, 0.7)
    for b in BACKENDS:
        got = kernels.gaussian_subset_logml(members, c, P, r, A0, b0, 0.7, backend=b)
        np.testing.assert_allclose(got, expect, rtol=1e-9, atol=1e-9)


def test_subset_logml_reports_failed_factorization():
    n, d = 2, 2
    P = np.zeros((n, d, d))
    A0 = -np.eye(d)
    members = np.ones((1, n), dtype=np.uint8)
    for b in BACKENDS:
        out = kernels.gaussian_subset_logml(members, np.zeros(n), P, np.zeros((n, d)), A0, np.zeros(d), 0.0, backend=b)
        assert np.isnan(out[0])


@pytest.mark.parametrize("k", [0, 1, 3, 8, 12])
def test_fwht_matches_hadamard(k):
    x = np.random.default_rng(k).normal(size=1 << k)
    for b in BACKENDS:
        y = kernels.fwht(x, backend=b)
        np.testing.assert_allclose(y, hadamard(1 << k) @ x, atol=1e-9)
        np.testing.assert_allclose(kernels.fwht(y, backend=b) / (1 << k), x, atol=1e-9)
    with pytest.raises(ValueError):
        kernels.fwht(np.ones(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 140), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_pack_labels_roundtrip(n, R, seed):
    rows = np.random.default_rng(seed).integers(0, 2, (R, n)).astype(np.uint8)
    packed = kernels.pack_labels(rows)
    assert packed.dtype == np.uint64 and packed.shape == (R, -(-n // 64))
    back = np.unpackbits(packed.view(np.uint8), axis=1)[:, :n]
    np.testing.assert_array_equal(back, rows)


def test_backend_selection():
    assert kernels.BACKEND in ("compiled", "python")
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
    out = subprocess.run(
        [sys.executable, "-c", "from optclust import kernels; print(kernels.BACKEND)"],
        env={"OPTCLUST_PURE_PYTHON": "1", "PATH": ""},
        capture_output=True,
        text=True,
    )
    assert out.stdout.strip() == "python", out.stderr


def test_benchmark_script_runs():
    from pathlib import Path

    script = Path(__file__).parent.parent / "benchmarks" / "bench_kernels.py"
    out = subprocess.run([sys.executable, str(script), "--n", "10", "--repeat", "1"], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    assert "fwht" in out.stdout
