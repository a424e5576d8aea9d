import numpy as np
import pytest

from kgedura import algebra


def test_re_trilinear_real_entries_reduce_to_triple_product_sum():
    # zero imaginary halves: sum of u*r*v over the real half
    u = np.array([1.0, 2.0, 0.0, 0.0])
    r = np.array([3.0, 1.0, 0.0, 0.0])
    v = np.array([1.0, 1.0, 0.0, 0.0])
    assert algebra.re_trilinear(u, r, v) == pytest.approx(5.0)


def test_re_trilinear_complex_example():
    # u = 1+i, r = i, v = 1: Re((1-i) * i * 1) = 1
    u = np.array([1.0, 1.0])
    r = np.array([0.0, 1.0])
    v = np.array([1.0, 0.0])
    assert algebra.re_trilinear(u, r, v) == pytest.approx(1.0)


def test_re_trilinear_zero_tail_is_zero():
    rng = np.random.default_rng(0)
    u, r = rng.standard_normal((2, 6))
    assert algebra.re_trilinear(u, r, np.zeros(6)) == 0.0


def test_re_trilinear_dimension_mismatch():
    with pytest.raises(ValueError):
        algebra.re_trilinear(np.zeros(4), np.zeros(4), np.zeros(6))


def test_re_trilinear_real_symmetry_and_conjugate_swap():
    rng = np.random.default_rng(1)
    for _ in range(20):
        u, r, v = rng.standard_normal((3, 8))
        # all-real case: swapping r and v changes nothing
        ur = np.concatenate([u, np.zeros(8)])
        rr = np.concatenate([r, np.zeros(8)])
        vr = np.concatenate([v, np.zeros(8)])
        assert algebra.re_trilinear(ur, rr, vr) == pytest.approx(
            algebra.re_trilinear(ur, vr, rr), rel=1e-12, abs=1e-12
        )
        # complex case: Re(<conj(u) r, v>) == Re(<conj(v) conj(r), u>)
        uc, rc, vc = rng.standard_normal((3, 8))
        assert algebra.re_trilinear(uc, rc, vc) == pytest.approx(
            algebra.re_trilinear(vc, algebra.conj(rc), uc), rel=1e-12, abs=1e-12
        )


def test_dual_expansion_identity():
    # -||u*conj(r) - v||^2 == 2*score - ||u*conj(r)||^2 - ||v||^2
    rng = np.random.default_rng(2)
    for _ in range(100):
        u, r, v = rng.standard_normal((3, 10))
        proj = algebra.cmul(u, algebra.conj(r))
        lhs = -float(algebra.modulus_sq(proj - v).sum())
        rhs = (
            2.0 * algebra.re_trilinear(u, r, v)
            - float(algebra.modulus_sq(proj).sum())
            - float(algebra.modulus_sq(v).sum())
        )
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_row_matvec_selects_rows():
    u = np.array([1.0, 0.0])
    mat = np.array([[0.0, 1.0], [0.0, 0.0]])
    assert np.allclose(algebra.row_matvec(u, mat), [0.0, 1.0])
    assert np.allclose(algebra.row_matvec(np.zeros(2), mat), 0.0)


def test_row_matvec_matches_triple_loop():
    rng = np.random.default_rng(3)
    u = rng.standard_normal(4)
    mat = rng.standard_normal((4, 4))
    expected = np.zeros(4)
    for d in range(4):
        for e in range(4):
            expected[e] += u[d] * mat[d, e]
    assert np.max(np.abs(algebra.row_matvec(u, mat) - expected)) <= 1e-12


def test_row_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        algebra.row_matvec(np.zeros(3), np.zeros((4, 4)))


def test_norms_unit_entries():
    n = algebra.norms(np.array([1.0, 1.0]))
    assert (n.l1, n.l2_sq, n.l3_cubed) == (2.0, 2.0, 2.0)


def test_norms_direct_values():
    n = algebra.norms(np.array([2.0, 0.0]))
    assert (n.l1, n.l2_sq, n.l3_cubed) == (2.0, 4.0, 8.0)


def test_norms_complex_modulus():
    # single complex entry 3+4i has modulus 5
    n = algebra.norms(np.array([3.0, 4.0]), complex_entries=True)
    assert n.l1 == pytest.approx(5.0)
    assert n.l2_sq == pytest.approx(25.0)
    assert n.l3_cubed == pytest.approx(125.0)


def test_cmul_matches_numpy_complex():
    rng = np.random.default_rng(4)
    a = rng.standard_normal(8)
    b = rng.standard_normal(8)
    ar, ai = algebra.split(a)
    br, bi = algebra.split(b)
    za = ar + 1j * ai
    zb = br + 1j * bi
    prod = algebra.cmul(a, b)
    pr, pi = algebra.split(prod)
    assert np.allclose(pr + 1j * pi, za * zb)


def test_split_rejects_odd_length():
    with pytest.raises(ValueError):
        algebra.split(np.zeros(5))
