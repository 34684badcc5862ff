import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hlamkit import ContractViolation, CsrMatrix, GridSpec, Stencil, estimate_accesses, generate
from hlamkit import kernels as K
from hlamkit.oracles import fsum_dot

rng = np.random.default_rng(1234)


def diag3():
    return CsrMatrix(3, np.array([0, 1, 2, 3]), np.array([0, 1, 2]), np.full(3, 26.0), np.array([0, 1, 2]))


def test_spmv_examples():
    y = np.zeros(3)
    K.spmv(diag3(), np.ones(3), y)
    assert np.array_equal(y, [26.0, 26.0, 26.0])
    s = generate(GridSpec(2, 2, 2))
    y = np.zeros(s.nrows)
    K.spmv(s.matrix, np.ones(s.nrows), y)
    assert np.array_equal(y, s.rhs)


def test_spmv_matches_dense():
    s = generate(GridSpec(3, 3, 3, Stencil.TWENTY_SEVEN))
    x = rng.standard_normal(s.nrows)
    y = np.zeros(s.nrows)
    K.spmv(s.matrix, x, y)
    assert np.allclose(y, s.matrix.toarray() @ x, rtol=1e-14, atol=1e-13)


def test_spmv_range_leaves_outside_untouched():
    s = generate(GridSpec(3, 3, 3))
    y = np.full(s.nrows, -7.0)
    K.spmv(s.matrix, np.ones(s.nrows), y, 5, 9)
    assert np.all(y[:5] == -7.0) and np.all(y[9:] == -7.0)
    assert np.array_equal(y[5:9], s.rhs[5:9])


def test_spmv_linearity():
    A = generate(GridSpec(4, 4, 4, Stencil.TWENTY_SEVEN)).matrix
    x, z = rng.standard_normal(A.nrows), rng.standard_normal(A.nrows)
    a, b = 1.7, -0.3
    lhs, y1, y2 = np.zeros(A.nrows), np.zeros(A.nrows), np.zeros(A.nrows)
    K.spmv(A, a * x + b * z, lhs)
    K.spmv(A, x, y1)
    K.spmv(A, z, y2)
    assert np.linalg.norm(lhs - (a * y1 + b * y2)) <= 1e-12 * np.linalg.norm(lhs)


@pytest.mark.parametrize("cuts", [[0, 64], [0, 7, 33, 64], [0, 1, 2, 63, 64]])
def test_range_additivity_bit_exact(cuts):
    A = generate(GridSpec(4, 4, 4, Stencil.TWENTY_SEVEN)).matrix
    n = A.nrows
    x, y0, z0 = rng.standard_normal(n), rng.standard_normal(n), rng.standard_normal(n)
    whole_s, part_s = np.zeros(n), np.zeros(n)
    K.spmv(A, x, whole_s)
    whole_a, part_a = np.zeros(n), np.zeros(n)
    K.axpby(0.3, x, -1.1, y0, whole_a)
    whole_t, part_t = z0.copy(), z0.copy()
    K.triad(0.3, x, -1.1, y0, 0.7, whole_t)
    for lo, hi in zip(cuts, cuts[1:]):
        K.spmv(A, x, part_s, lo, hi)
        K.axpby(0.3, x, -1.1, y0, part_a, lo, hi)
        K.triad(0.3, x, -1.1, y0, 0.7, part_t, lo, hi)
    assert np.array_equal(whole_s, part_s)
    assert np.array_equal(whole_a, part_a)
    assert np.array_equal(whole_t, part_t)


def test_dot_examples():
    assert K.dot(np.zeros(5), rng.standard_normal(5)) == 0.0
    assert K.dot(np.ones(8), np.ones(8)) == 8.0


@settings(max_examples=50, deadline=None)
@given(n=st.integers(1, 5000), blocks=st.integers(1, 16), seed=st.integers(0, 2**31))
def test_blocked_dot_close_to_compensated(n, blocks, seed):
    r = np.random.default_rng(seed)
    x, y = r.standard_normal(n), r.standard_normal(n)
    exact = fsum_dot(x, y)
    edges = np.linspace(0, n, blocks + 1).astype(int)
    blocked = 0.0
    for lo, hi in zip(edges, edges[1:]):
        blocked += K.dot(x, y, lo, hi)
    single = K.dot(x, y)
    scale = fsum_dot(np.abs(x), np.abs(y))
    assert abs(blocked - single) <= 1e-12 * scale
    assert abs(single - exact) <= 1e-12 * scale


def test_axpby_examples_and_aliasing():
    x, y = rng.standard_normal(6), rng.standard_normal(6)
    w = np.empty(6)
    K.axpby(1.0, x, 0.0, y, w)
    assert np.array_equal(w, x)
    K.axpby(0.0, x, 1.0, y, w)
    assert np.array_equal(w, y)
    K.axpby(2.0, np.ones(4), -1.0, np.ones(4), w, 0, 4)
    assert np.array_equal(w[:4], np.ones(4))
    z = y.copy()
    K.axpby(2.0, x, 3.0, z, z)
    assert np.array_equal(z, 2.0 * x + 3.0 * y)


def test_triad_examples():
    x, y, z = rng.standard_normal(50), rng.standard_normal(50), rng.standard_normal(50)
    zz = z.copy()
    K.triad(0.0, x, 0.0, y, 1.0, zz)
    assert np.array_equal(zz, z)
    zz, w = z.copy(), np.empty(50)
    K.triad(0.4, x, -2.0, y, 0.0, zz)
    K.axpby(0.4, x, -2.0, y, w)
    assert np.array_equal(zz, w)


def test_triad_three_pass_oracle():
    a, b, c = 0.37, -1.25, 2.5
    x, y, z = rng.standard_normal(1000), rng.standard_normal(1000), rng.standard_normal(1000)
    t = a * x
    t += b * y
    t += c * z
    zz = z.copy()
    K.triad(a, x, b, y, c, zz)
    assert np.array_equal(zz, t)


def test_contract_violations():
    A = diag3()
    with pytest.raises(ContractViolation):
        K.spmv(A, np.ones(3), np.zeros(3), 0, 4)
    with pytest.raises(ContractViolation):
        K.spmv(A, np.ones(2), np.zeros(3))
    with pytest.raises(ContractViolation):
        K.dot(np.ones(3), np.ones(3), 2, 1)


def test_access_counter_semantics():
    A = generate(GridSpec(3, 3, 3)).matrix
    c = K.AccessCounter()
    x, y = np.ones(A.nrows), np.zeros(A.nrows)
    K.spmv(A, x, y, counter=c)
    assert c.snapshot() == (A.nnz + A.nrows, A.nrows)
    c2 = K.AccessCounter()
    K.dot(x, x, counter=c2)
    K.dot(x, y, counter=c2)
    assert c2.snapshot() == (A.nrows + 2 * A.nrows, 0)
    c3 = K.AccessCounter()
    K.axpby(1.0, x, 2.0, y, y, counter=c3)
    assert c3.total == 3 * A.nrows
    off = K.AccessCounter(enabled=False)
    K.spmv(A, x, y, counter=off)
    K.triad(1.0, x, 1.0, y, 1.0, y, counter=off)
    assert off.total == 0
    c.merge(c3)
    assert c.total == A.nnz + 2 * A.nrows + 3 * A.nrows


def test_estimate_accesses():
    assert estimate_accesses("cg", 0.0, 1) == 12
    cg, nb = estimate_accesses("cg", 7, 1), estimate_accesses("cg-nb", 7, 1)
    bi, b1 = estimate_accesses("bicgstab", 7, 1), estimate_accesses("bicgstab-b1", 7, 1)
    assert (nb - cg) / cg == pytest.approx(3 / 19)
    assert round(100 * (nb - cg) / cg, 1) == 15.8
    assert round(100 * (b1 - bi) / bi, 1) == 8.6
    assert estimate_accesses("bicgstab-b1", 27, 10) == (24 + 54) * 10
    with pytest.raises(ValueError):
        estimate_accesses("jacobi", 7, 1)


def test_stationary_kernels_against_dense():
    s = generate(GridSpec(3, 3, 2, Stencil.TWENTY_SEVEN))
    D = s.matrix.toarray()
    x = rng.standard_normal(s.nrows)
    xn = np.zeros(s.nrows)
    res = K.jacobi_sweep(s.matrix, s.rhs, x, xn)
    r = s.rhs - D @ x
    assert res == pytest.approx(r @ r, rel=1e-13)
    assert np.allclose(xn, x + r / np.diag(D), rtol=1e-14)
    assert K.residual_sq(s.matrix, s.rhs, x) == pytest.approx(r @ r, rel=1e-13)
    g = x.copy()
    K.gs_sweep(s.matrix, s.rhs, g)
    ref = x.copy()
    for i in range(s.nrows):
        ref[i] += (s.rhs[i] - D[i] @ ref) / D[i, i]
    assert np.allclose(g, ref, rtol=1e-13)
    assert math.isfinite(K.residual_sq(s.matrix, s.rhs, g))
