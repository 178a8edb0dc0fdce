import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import edmd_eigenvalues, match_spectra, monomial_features

from dapred import kdmd
from dapred.fom import LinearSystemSpec, linear_simulate


def stable_matrix(rng, dim, radius):
    a = rng.standard_normal((dim, dim))
    return a * (radius / np.max(np.abs(np.linalg.eigvals(a))))


def test_gaussian_kernel_values():
    k = kdmd.KernelSpec(kind="gaussian", gamma=100.0)
    assert kdmd.kernel_eval(k, [0.1, 0.2], [0.1, 0.2]) == 1.0
    # |x - y|^2 = 0.01 + 0.04
    assert kdmd.kernel_eval(k, [0.0, 0.0], [0.1, 0.2]) == pytest.approx(np.exp(-5.0), rel=1e-14)


def test_shape_parameter_mapping():
    assert kdmd.KernelSpec.from_shape(10).gamma == 100.0


def test_polynomial_kernel_matches_feature_map():
    rng = np.random.default_rng(0)
    x, y = rng.standard_normal((5, 2)), rng.standard_normal((4, 2))
    k = kdmd.KernelSpec(kind="polynomial", degree=2, offset=1.0)
    assert np.allclose(k.matrix(x, y), monomial_features(x) @ monomial_features(y).T, atol=1e-12)


@pytest.mark.parametrize("kw", [dict(kind="cosine"), dict(kind="gaussian", gamma=0.0),
                                dict(kind="polynomial", degree=0), dict(kind="polynomial", degree=1.5)])
def test_kernel_spec_validation(kw):
    with pytest.raises(ValueError):
        kdmd.KernelSpec(**kw)


def test_kernel_dimension_mismatch():
    with pytest.raises(ValueError):
        kdmd.kernel_eval(kdmd.KernelSpec(), [0.0, 1.0], [0.0, 1.0, 2.0])


def test_gram_matrices_shapes_and_symmetry():
    z = np.random.default_rng(1).standard_normal((12, 2))
    g00, g10 = kdmd.gram_matrices(kdmd.LatentTrajectory(z), kdmd.KernelSpec())
    assert g00.shape == g10.shape == (11, 11)
    assert np.array_equal(g00, g00.T)
    assert np.allclose(g10[0, 0], np.exp(-100 * np.sum((z[1] - z[0]) ** 2)))


def test_too_few_samples():
    with pytest.raises(kdmd.TooFewSamples):
        kdmd.fit(kdmd.LatentTrajectory(np.zeros((2, 2))), kdmd.KernelSpec())


def test_zero_gram_matrix():
    with pytest.raises(kdmd.RankZero):
        kdmd.fit(kdmd.LatentTrajectory(np.zeros((10, 2))), kdmd.KernelSpec(kind="linear"))


def test_constant_trajectory_gaussian():
    z = np.tile([[0.3, -0.2]], (20, 1))
    model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec())
    assert model.rank == 1
    assert np.allclose(model.eigenvalues, [1.0])
    assert np.allclose(kdmd.rollout(model, z[-1], 15), z[:15], atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(dim=st.integers(2, 4), seed=st.integers(0, 2**31 - 1))
def test_linear_system_exactness(dim, seed):
    rng = np.random.default_rng(seed)
    a = stable_matrix(rng, dim, rng.uniform(0.5, 0.98))
    traj = linear_simulate(LinearSystemSpec(a, rng.standard_normal(dim), 69))
    model = kdmd.fit(kdmd.LatentTrajectory(traj[:50]), kdmd.KernelSpec(kind="linear"))
    assert model.rank == dim
    assert match_spectra(model.eigenvalues, np.linalg.eigvals(a)) <= 1e-6
    pred = kdmd.rollout(model, traj[49], 20)
    assert np.linalg.norm(pred - traj[50:]) <= 1e-6 * np.linalg.norm(traj[50:])


def test_recursive_and_spectral_agree_for_linear_kernel():
    rng = np.random.default_rng(5)
    a = stable_matrix(rng, 3, 0.9)
    traj = linear_simulate(LinearSystemSpec(a, rng.standard_normal(3), 40))
    model = kdmd.fit(kdmd.LatentTrajectory(traj), kdmd.KernelSpec(kind="linear"))
    r = kdmd.rollout(model, traj[-1], 10, mode="recursive")
    s = kdmd.rollout(model, traj[-1], 10, mode="spectral")
    assert np.allclose(r, s, atol=1e-12)


def test_predict_next_is_real_for_conjugate_pairs():
    th = 0.2
    a = 0.97 * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    traj = linear_simulate(LinearSystemSpec(a, np.array([1.0, 0.0]), 30))
    model = kdmd.fit(kdmd.LatentTrajectory(traj), kdmd.KernelSpec(kind="linear"))
    z, imag = kdmd.predict_next(model, traj[-1])
    assert imag < 1e-12
    assert np.allclose(z, a @ traj[-1])


def nonlinear_trajectory(rng, samples=41):
    """Weakly damped rotation plus a sine term; stays O(1) so the quadratic
    features remain well conditioned."""
    th = rng.uniform(0.1, 0.6)
    a = rng.uniform(0.97, 0.995) * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    z = np.empty((samples, 2))
    z[0] = rng.uniform(0.5, 1.5, 2) * rng.choice([-1, 1], 2)
    for k in range(1, samples):
        z[k] = a @ z[k - 1] + 0.1 * np.sin(3 * z[k - 1])
    return z


def test_kernel_trick_matches_explicit_edmd():
    # The kernel route squares the feature condition number (it works with
    # Psi0 Psi0^T), so agreement to 1e-8 presumes cond(Psi0) well below 1e4.
    rng = np.random.default_rng(11)
    for _ in range(10):
        z = nonlinear_trajectory(rng)
        psi0, psi1 = monomial_features(z[:-1]), monomial_features(z[1:])
        assert np.linalg.cond(psi0) < 1e3
        model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec(kind="polynomial", degree=2))
        ref = edmd_eigenvalues(psi0, psi1)
        ref = ref[np.abs(ref) > 1e-9]
        got = model.eigenvalues[np.abs(model.eigenvalues) > 1e-9]
        assert got.size == ref.size == 6
        assert match_spectra(got, ref) <= 1e-8


def test_shrink_recovers_from_ill_conditioned_eigenbasis(monkeypatch):
    z = nonlinear_trajectory(np.random.default_rng(0))
    kernel = kdmd.KernelSpec(kind="polynomial", degree=2)
    real_gen_eig = kdmd.gen_eig

    def picky(a):
        if a.shape[0] > 4:
            raise kdmd.Defective("forced")
        return real_gen_eig(a)

    monkeypatch.setattr(kdmd, "gen_eig", picky)
    with pytest.raises(kdmd.Defective):
        kdmd.fit(kdmd.LatentTrajectory(z), kernel)
    model = kdmd.fit(kdmd.LatentTrajectory(z), kernel, shrink=0.75)
    assert model.rank == 4  # 6 -> 4
    assert np.linalg.norm(model.xi @ model.w_hat - np.eye(4)) <= 1e-8


def test_eigenfunctions_evolve_by_eigenvalue_on_training_data():
    rng = np.random.default_rng(2)
    a = stable_matrix(rng, 2, 0.9)
    traj = linear_simulate(LinearSystemSpec(a, rng.standard_normal(2), 30))
    model = kdmd.fit(kdmd.LatentTrajectory(traj), kdmd.KernelSpec(kind="linear"))
    phi0 = model.eigenfunctions(traj[:-1])
    phi1 = model.eigenfunctions(traj[1:])
    assert np.allclose(phi1, phi0 * model.eigenvalues, atol=1e-10)


def test_modes_reconstruct_state():
    rng = np.random.default_rng(8)
    z = rng.standard_normal((25, 2)) * 0.1
    model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec(gamma=10.0))
    # V phi(z) reproduces z on the training inputs
    rec = (model.modes @ model.eigenfunctions(z[:-1]).T).T
    assert np.allclose(rec.real, z[:-1], atol=1e-6)


def test_rank_cap_limits_rank():
    z = np.random.default_rng(3).standard_normal((40, 2)) * 0.1
    model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec(), rank_cap=5)
    assert model.rank == 5 and model.eigenvalues.shape == (5,)


def test_rollout_divergence():
    traj = linear_simulate(LinearSystemSpec(np.array([[1.5]]), np.array([1.0]), 10))
    model = kdmd.fit(kdmd.LatentTrajectory(traj), kdmd.KernelSpec(kind="linear"))
    with pytest.raises(kdmd.Divergence) as info:
        kdmd.rollout(model, traj[-1], 100)
    assert info.value.step > 1


def test_rollout_validation():
    model = kdmd.fit(kdmd.LatentTrajectory(np.random.default_rng(0).standard_normal((10, 2))),
                     kdmd.KernelSpec(kind="linear"))
    with pytest.raises(ValueError):
        kdmd.rollout(model, [0.0, 0.0], -1)
    with pytest.raises(ValueError):
        kdmd.rollout(model, [0.0, 0.0], 3, mode="leapfrog")
    assert kdmd.rollout(model, [0.0, 0.0], 0).shape == (0, 2)


def test_kernel_examples():
    assert kdmd.kernel_eval(kdmd.KernelSpec(kind="linear"), [1, 2], [3, 4]) == 11.0
    assert kdmd.kernel_eval(kdmd.KernelSpec(kind="polynomial", degree=2, offset=1), [1, 0], [0, 1]) == 1.0
    k = kdmd.KernelSpec(gamma=3.0)
    x, y = [0.2, -0.4], [1.0, 0.5]
    assert kdmd.kernel_eval(k, x, y) == kdmd.kernel_eval(k, y, x)


def test_gram_examples():
    z = np.random.default_rng(0).standard_normal((3, 2))
    g00, g10 = kdmd.gram_matrices(kdmd.LatentTrajectory(z), kdmd.KernelSpec(kind="linear"))
    assert g00.shape == (2, 2)
    assert np.array_equal(g00, z[:2] @ z[:2].T)
    const = np.tile([[0.5, 0.5]], (6, 1))
    g00, g10 = kdmd.gram_matrices(kdmd.LatentTrajectory(const), kdmd.KernelSpec())
    assert np.array_equal(g00, np.ones((5, 5))) and np.array_equal(g10, np.ones((5, 5)))


def test_decaying_oscillator_closed_form():
    rho, th = 0.95, 0.3

    def rot(k):
        return rho**k * np.array([[np.cos(k * th), -np.sin(k * th)], [np.sin(k * th), np.cos(k * th)]])

    z0 = np.array([1.0, 0.5])
    traj = linear_simulate(LinearSystemSpec(rot(1), z0, 40))
    model = kdmd.fit(kdmd.LatentTrajectory(traj), kdmd.KernelSpec(kind="linear"))
    pred = kdmd.rollout(model, traj[-1], 30)
    ref = np.array([rot(40 + k) @ z0 for k in range(1, 31)])
    assert np.max(np.abs(pred - ref)) <= 1e-6


def test_single_step_rollout_equals_predict_next():
    z = nonlinear_trajectory(np.random.default_rng(4))
    model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec(gamma=2.0))
    one = kdmd.rollout(model, z[-1], 1)
    nxt, _ = kdmd.predict_next(model, z[-1])
    assert np.array_equal(one[0], nxt)


def test_real_data_imaginary_residual_small():
    z = nonlinear_trajectory(np.random.default_rng(5))
    model = kdmd.fit(kdmd.LatentTrajectory(z), kdmd.KernelSpec(gamma=2.0))
    assert np.allclose(np.sort_complex(model.eigenvalues), np.sort_complex(np.conj(model.eigenvalues)))
    for zj in z[:-1]:
        nxt, imag = kdmd.predict_next(model, zj)
        assert imag <= 1e-8 * max(1.0, np.max(np.abs(nxt)))


def test_training_pair_reconstruction_and_rank_monotonicity():
    z = nonlinear_trajectory(np.random.default_rng(6), samples=60)
    traj = kdmd.LatentTrajectory(z)
    residuals = []
    for cap in (2, 4, 8, 16, None):
        model = kdmd.fit(traj, kdmd.KernelSpec(gamma=2.0), rank_cap=cap)
        pred = np.array([kdmd.predict_next(model, zj)[0] for zj in z[:-1]])
        res = np.linalg.norm(pred - z[1:])
        assert abs(res - model.fit_residual) <= 1e-8 * max(1.0, res)
        assert res <= 10 * model.ls_residual + 1e-10
        residuals.append(res)
    assert all(b <= a + 1e-10 for a, b in zip(residuals, residuals[1:]))
