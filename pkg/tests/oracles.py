"""Independent reference computations shared by the test modules."""
from __future__ import annotations

import itertools

import numpy as np
from scipy.linalg import solve_banded

from dapred.fom import FhnConfig, steps_between


def fhn_implicit(cfg: FhnConfig, epsilon: float, substeps: int, t_end: float | None = None,
                 tol: float = 1e-12) -> np.ndarray:
    """Backward Euler for the whole FHN system with Newton iterations.

    w is eliminated per step, leaving a tridiagonal Newton system in v.
    """
    nx, dx = cfg.grid_points, cfg.dx
    t_end = cfg.t_end if t_end is None else t_end
    n_out = steps_between(0.0, t_end, cfg.dt_output) + 1
    dt = cfg.dt_output / substeps
    eps, b, c, g = epsilon, cfg.b, cfg.c, cfg.gamma
    r = dt * eps / dx**2
    # banded form of I - dt*eps*D
    ab = np.zeros((3, nx))
    ab[0, 1:] = -r
    ab[0, 1] = -2 * r
    ab[1, :] = 1 + 2 * r
    ab[2, :-1] = -r
    ab[2, -2] = -2 * r
    v, w = np.zeros(nx), np.zeros(nx)
    out = np.zeros((n_out, 2 * nx))
    kw = dt * b / (1 + dt * g)

    def lap_apply(x):
        y = ab[1] * x
        y[:-1] += ab[0, 1:] * x[1:]
        y[1:] += ab[2, :-1] * x[:-1]
        return y

    step = 0
    for k in range(1, n_out):
        for _ in range(substeps):
            step += 1
            t = step * dt
            stim = np.zeros(nx)
            stim[0] = dt * eps * 2 * cfg.input_amplitude * t**3 * np.exp(-15 * t) / dx
            x = v.copy()
            for _ in range(50):
                wn = (w + dt * (b * x + c)) / (1 + dt * g)
                f = x * (x - 0.1) * (1 - x)
                res = lap_apply(x) - v - stim - dt / eps * (f - wn + c)
                fp = -3 * x**2 + 2.2 * x - 0.1
                jac = ab.copy()
                jac[1] += -dt / eps * fp + dt / eps * kw
                dx_ = solve_banded((1, 1), jac, -res)
                x = x + dx_
                if np.max(np.abs(dx_)) < tol:
                    break
            else:
                raise RuntimeError("Newton did not converge")
            w = (w + dt * (b * x + c)) / (1 + dt * g)
            v = x
        out[k, :nx], out[k, nx:] = v, w
    return out


def monomial_features(x: np.ndarray) -> np.ndarray:
    """Explicit feature map of (1 + x.y)**2 for 2-D inputs."""
    x1, x2 = x[:, 0], x[:, 1]
    s = np.sqrt(2.0)
    return np.stack([np.ones_like(x1), s * x1, s * x2, x1**2, s * x1 * x2, x2**2], axis=1)


def edmd_eigenvalues(psi0: np.ndarray, psi1: np.ndarray) -> np.ndarray:
    """Eigenvalues of K = pinv(Psi0) Psi1."""
    k = np.linalg.pinv(psi0) @ psi1
    return np.linalg.eigvals(k)


def match_spectra(a: np.ndarray, b: np.ndarray) -> float:
    """Largest distance under the best one-to-one pairing of two small sets."""
    a, b = np.asarray(a), np.asarray(b)
    assert a.size == b.size
    if a.size <= 7:
        return min(np.max(np.abs(a - b[list(p)])) for p in itertools.permutations(range(b.size)))
    from scipy.optimize import linear_sum_assignment

    cost = np.abs(a[:, None] - b[None, :])
    i, j = linear_sum_assignment(cost)
    return float(cost[i, j].max())


def central_difference(f, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + h
        fp = f(x)
        x[idx] = old - h
        fm = f(x)
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g
