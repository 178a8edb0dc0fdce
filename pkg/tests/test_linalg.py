import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dapred import linalg


def random_symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return a + a.T


@pytest.mark.parametrize("n", [1, 2, 5, 17, 40])
def test_jacobi_matches_lapack(n):
    a = random_symmetric(np.random.default_rng(n), n)
    w, v = linalg.sym_eig(a, method="jacobi")
    ref = np.sort(np.linalg.eigvalsh(a))[::-1]
    assert np.allclose(w, ref, atol=1e-12 * max(1.0, np.abs(ref).max()))
    assert np.allclose(v.T @ v, np.eye(n), atol=1e-12)
    assert np.linalg.norm(a @ v - v * w) <= 1e-12 * np.linalg.norm(a)


def test_descending_order_and_auto_switch():
    rng = np.random.default_rng(3)
    small = random_symmetric(rng, 10)
    big = random_symmetric(rng, linalg.JACOBI_AUTO_LIMIT + 5)
    for a in (small, big):
        w, _ = linalg.sym_eig(a)
        assert np.all(np.diff(w) <= 0)


def test_identity_is_already_diagonal():
    w, v = linalg.sym_eig(np.eye(4), method="jacobi")
    assert np.array_equal(w, np.ones(4))
    assert np.allclose(np.abs(v), np.eye(4))


def test_rank_deficient_gram_converges():
    # Gram matrix of 30 points in 2-D under a linear kernel: rank 2
    x = np.random.default_rng(0).standard_normal((30, 2))
    w, _ = linalg.sym_eig(x @ x.T, method="jacobi")
    assert np.sum(w > 1e-10 * w[0]) == 2
    assert np.allclose(w[:2], np.sort(np.linalg.eigvalsh(x.T @ x))[::-1])


@pytest.mark.parametrize("bad,exc", [
    (np.ones((2, 3)), linalg.NonSquare),
    (np.array([[1.0, 2.0], [0.0, 1.0]]), linalg.NotSymmetric),
    (np.array([[np.nan, 0.0], [0.0, 1.0]]), linalg.LinalgError),
])
def test_sym_eig_rejects(bad, exc):
    with pytest.raises(exc):
        linalg.sym_eig(bad)


def test_jacobi_sweep_cap():
    a = random_symmetric(np.random.default_rng(1), 12)
    with pytest.raises(linalg.NoConvergence):
        linalg.jacobi_eigh(a, max_sweeps=1)


@settings(max_examples=30, deadline=None)
@given(n=st.integers(2, 12), seed=st.integers(0, 2**31 - 1))
def test_reconstruction_property(n, seed):
    a = random_symmetric(np.random.default_rng(seed), n)
    w, v = linalg.sym_eig(a, method="jacobi")
    assert np.linalg.norm(v @ np.diag(w) @ v.T - a) <= 1e-12 * max(1.0, np.linalg.norm(a))


def test_gen_eig_rotation():
    th = 0.3
    a = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lam, w = linalg.gen_eig(a)
    assert np.allclose(np.sort_complex(lam), np.sort_complex(np.exp([1j * th, -1j * th])))
    assert np.allclose(a @ w, w * lam)
    assert np.allclose(np.linalg.norm(w, axis=0), 1.0)
    # conjugate pair stays adjacent and ordered by imaginary part
    assert lam[0].imag > 0 and np.isclose(lam[0], np.conj(lam[1]))


def test_gen_eig_orders_by_modulus():
    lam, _ = linalg.gen_eig(np.diag([0.1, -0.9, 0.5]))
    assert np.allclose(lam, [-0.9, 0.5, 0.1])


def test_gen_eig_defective():
    with pytest.raises(linalg.Defective):
        linalg.gen_eig(np.array([[1.0, 1.0], [0.0, 1.0]]))


def test_left_eigvecs_biorthogonal():
    rng = np.random.default_rng(4)
    lam, w = linalg.gen_eig(rng.standard_normal((6, 6)))
    xi = linalg.left_eigvecs(w)
    assert np.allclose(xi @ w, np.eye(6), atol=1e-10)


def test_left_eigvecs_singular():
    with pytest.raises(linalg.SingularEigenbasis):
        linalg.left_eigvecs(np.array([[1.0, 1.0], [1.0, 1.0]]))
