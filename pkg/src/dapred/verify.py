"""Self-contained oracle suite behind ``dapred verify``.

Each oracle compares the implementation with an independent reference and
reports the measured residual against a fixed tolerance:

* symmetric eigensolver against LAPACK
* KDMD with a linear kernel on random stable linear systems (exact recovery)
* KDMD with the kernel (1 + x.y)^2 against explicit monomial-feature EDMD
* central finite differences for every layer kind and the joint loss

``faults`` injects deliberate bugs so the harness itself can be tested.
"""
from __future__ import annotations

import contextlib
import time
from dataclasses import dataclass
from unittest import mock

import numpy as np

from . import kdmd, linalg
from .fom import LinearSystemSpec, linear_simulate
from .nn import Network, layers
from .pipeline import joint_loss

__all__ = ["OracleResult", "FAULTS", "run_oracles", "layer_gradient_error", "fd_relative_error"]

FAULTS = ("kernel", "gradient", "eigensolver")


@dataclass
class OracleResult:
    name: str
    residual: float
    tolerance: float
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.residual) and self.residual <= self.tolerance)


# -- helpers -----------------------------------------------------------------

def fd_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative difference, with a floor for all-zero gradients."""
    num = np.linalg.norm(np.ravel(analytic) - np.ravel(numeric))
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def _numeric_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def layer_gradient_error(layer, in_shape, rng: np.random.Generator, batch: int = 3, h: float = 1e-6) -> float:
    """Worst relative error over the input and parameter gradients of
    ``sum(R * layer(x))`` for a random projection R."""
    layer.build(tuple(in_shape), rng)
    x = rng.standard_normal((batch,) + tuple(in_shape))
    y, cache = layer.forward(x)
    r = rng.standard_normal(y.shape)
    dx, grads = layer.backward(r, cache)

    def loss():
        return float(np.sum(r * layer.forward(x)[0]))

    worst = fd_relative_error(dx, _numeric_grad(loss, x, h))
    for key, p in layer.params.items():
        worst = max(worst, fd_relative_error(grads[key], _numeric_grad(loss, p, h)))
    return worst


def _joint_loss_error(rng: np.random.Generator, h: float = 1e-6) -> float:
    n = 16
    enc = Network.from_specs([
        {"kind": "conv1d", "filters": 3, "kernel_size": 3, "stride": 1},
        {"kind": "activation", "name": "swish"},
        {"kind": "maxpool1d", "size": 2},
        {"kind": "flatten"},
        {"kind": "dense", "units": 2},
    ], (n, 1), seed=int(rng.integers(1 << 30)))
    dec = Network.from_specs([
        {"kind": "dense", "units": 8},
        {"kind": "activation", "name": "swish"},
        {"kind": "reshape", "shape": [8, 1]},
        {"kind": "upsample1d", "factor": 2},
        {"kind": "conv1d", "filters": 1, "kernel_size": 3, "stride": 1},
    ], (2,), seed=int(rng.integers(1 << 30)))
    ffnn = Network.from_specs([
        {"kind": "dense", "units": 5},
        {"kind": "activation", "name": "swish"},
        {"kind": "dense", "units": 2},
    ], (2,), seed=int(rng.integers(1 << 30)))
    x = rng.standard_normal((4, n, 1))
    inp = rng.uniform(size=(4, 2))
    alpha = float(rng.uniform(0.05, 1.0))
    _, grads, _ = joint_loss(enc, dec, ffnn, x, inp, alpha)
    params = enc.parameters() + dec.parameters() + ffnn.parameters()

    def loss():
        return joint_loss(enc, dec, ffnn, x, inp, alpha)[0]

    return max(fd_relative_error(g, _numeric_grad(loss, p, h)) for g, p in zip(grads, params))


def _random_stable(rng: np.random.Generator, dim: int, radius: float = 0.98) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    rho = np.max(np.abs(np.linalg.eigvals(a)))
    return a * (rng.uniform(0.5, radius) / rho)


def _monomials2(z: np.ndarray) -> np.ndarray:
    """Features whose inner product is (1 + x.y)^2 for 2-D states."""
    x, y = z[:, 0], z[:, 1]
    r2 = np.sqrt(2.0)
    return np.stack([np.ones_like(x), r2 * x, r2 * y, x * x, y * y, r2 * x * y], axis=1)


def _match(a: np.ndarray, b: np.ndarray) -> float:
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(a[:, None] - b[None, :])
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].max()) if rows.size else 0.0


# -- oracles -----------------------------------------------------------------

def oracle_eigensolver(rng) -> float:
    worst = 0.0
    for n in (3, 8, 20):
        a = rng.standard_normal((n, n))
        a = a + a.T
        w, v = linalg.sym_eig(a, method="jacobi")
        ref = np.sort(np.linalg.eigvalsh(a))[::-1]
        worst = max(worst, np.max(np.abs(w - ref)) / np.max(np.abs(ref)),
                    np.linalg.norm(a @ v - v * w) / np.linalg.norm(a))
    return float(worst)


def oracle_linear_kdmd(rng, systems: int = 20) -> float:
    worst = 0.0
    for _ in range(systems):
        dim = int(rng.integers(2, 5))
        a = _random_stable(rng, dim)
        traj = linear_simulate(LinearSystemSpec(a, rng.standard_normal(dim), 69))
        model = kdmd.fit(kdmd.LatentTrajectory(traj[:50]), kdmd.KernelSpec(kind="linear"))
        ref = np.linalg.eigvals(a)
        worst = max(worst, _match(model.eigenvalues, ref))
        pred = kdmd.rollout(model, traj[49], 20)
        worst = max(worst, np.linalg.norm(pred - traj[50:]) / np.linalg.norm(traj[50:]))
    return float(worst)


def _nonlinear_trajectory(rng, samples: int = 41) -> np.ndarray:
    # weakly damped rotation with a sine term: the quadratic features stay well
    # conditioned, which the kernel route needs (it squares their conditioning)
    th = rng.uniform(0.1, 0.6)
    a = rng.uniform(0.97, 0.995) * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    z = np.empty((samples, 2))
    z[0] = rng.uniform(0.5, 1.5, 2) * rng.choice([-1, 1], 2)
    for k in range(1, samples):
        z[k] = a @ z[k - 1] + 0.1 * np.sin(3.0 * z[k - 1])
    return z


def oracle_kernel_edmd(rng, instances: int = 10) -> float:
    worst = 0.0
    kernel = kdmd.KernelSpec(kind="polynomial", degree=2, offset=1.0)
    for _ in range(instances):
        z = _nonlinear_trajectory(rng)
        model = kdmd.fit(kdmd.LatentTrajectory(z), kernel)
        psi0, psi1 = _monomials2(z[:-1]), _monomials2(z[1:])
        k_edmd = np.linalg.pinv(psi0) @ psi1
        ref = np.linalg.eigvals(k_edmd)
        ref = ref[np.abs(ref) > 1e-9]
        got = model.eigenvalues[np.abs(model.eigenvalues) > 1e-9]
        if got.size != ref.size:
            return float("inf")
        worst = max(worst, _match(got, ref))
    return float(worst)


def oracle_layer_gradients(rng) -> float:
    cases = [
        (layers.Dense(4), (5,)),
        (layers.Conv1D(3, 3), (8, 2)),
        (layers.Conv1D(2, 5, stride=2), (9, 3)),
        (layers.MaxPool1D(2), (8, 3)),
        (layers.MaxPool1D(3), (9, 2)),
        (layers.Upsample1D(2), (4, 3)),
        (layers.Activation("swish"), (6,)),
        (layers.Flatten(), (4, 3)),
        (layers.Reshape((3, 4)), (12,)),
    ]
    return max(layer_gradient_error(layer, shape, rng) for layer, shape in cases)


def oracle_joint_loss(rng) -> float:
    return max(_joint_loss_error(rng) for _ in range(2))


ORACLES = {
    "sym_eig_vs_lapack": (oracle_eigensolver, 1e-10),
    "kdmd_linear_exactness": (oracle_linear_kdmd, 1e-6),
    "kdmd_kernel_vs_edmd": (oracle_kernel_edmd, 1e-8),
    "layer_gradients": (oracle_layer_gradients, 1e-6),
    "joint_loss_gradient": (oracle_joint_loss, 1e-6),
}


@contextlib.contextmanager
def _inject(faults):
    unknown = set(faults) - set(FAULTS)
    if unknown:
        raise ValueError(f"unknown fault(s): {sorted(unknown)}; choose from {FAULTS}")
    with contextlib.ExitStack() as stack:
        if "kernel" in faults:
            orig = kdmd.KernelSpec.matrix

            def bad_matrix(self, x, y):
                out = orig(self, x, y)
                return out + 1e-3 * out * out if self.kind == "polynomial" else out

            stack.enter_context(mock.patch.object(kdmd.KernelSpec, "matrix", bad_matrix))
        if "gradient" in faults:
            orig_b = layers.Activation.backward

            def bad_backward(self, dy, cache, need_dx=True):
                dx, g = orig_b(self, dy, cache, need_dx)
                return (None if dx is None else dx * 1.01), g

            stack.enter_context(mock.patch.object(layers.Activation, "backward", bad_backward))
        if "eigensolver" in faults:
            orig_j = linalg.jacobi_eigh

            def bad_jacobi(a, *args, **kw):
                w, v = orig_j(a, *args, **kw)
                return w * (1 + 1e-6), v

            stack.enter_context(mock.patch.object(linalg, "jacobi_eigh", bad_jacobi))
        yield


def run_oracles(seed: int = 0, faults=(), names=None) -> list[OracleResult]:
    results = []
    with _inject(tuple(faults)):
        for name, (fn, tol) in ORACLES.items():
            if names is not None and name not in names:
                continue
            rng = np.random.default_rng([seed, len(name)])
            t0 = time.perf_counter()
            try:
                residual = fn(rng)
            except (ArithmeticError, ValueError):
                residual = float("inf")
            results.append(OracleResult(name, residual, tol, time.perf_counter() - t0))
    return results
