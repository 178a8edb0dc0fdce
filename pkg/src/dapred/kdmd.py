"""Kernel dynamic mode decomposition of latent trajectories.

Given samples z_0..z_m, the Gram matrices G00[i, j] = k(z_i, z_j) and
G10[i, j] = k(z_{i+1}, z_j) (i, j < m) stand in for Psi0 Psi0^T and
Psi1 Psi0^T.  With G00 = L S^2 L^T truncated to rank r,

    K_hat = S^-1 L^T G10 L S^-1,     K_hat W = W diag(lam)
    phi(z) = k(z, Z0) L S^-1 W
    V      = (W^-1 S^-1 L^T Z0)^T
    z_next = Re(V diag(lam) phi(z))
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import Defective, SingularEigenbasis, gen_eig, left_eigvecs, sym_eig

__all__ = [
    "KernelSpec",
    "LatentTrajectory",
    "KoopmanModel",
    "KdmdError",
    "TooFewSamples",
    "RankZero",
    "Divergence",
    "kernel_eval",
    "gram_matrices",
    "fit",
    "eigenfunction_row",
    "predict_next",
    "rollout",
]

RANK_TOL = 1e-10
DIVERGENCE_FACTOR = 1e6
# |Xi W - I| allowed before the eigenbasis counts as unusable
BIORTHO_TOL = 1e-8


class KdmdError(ArithmeticError):
    pass


class TooFewSamples(KdmdError, ValueError):
    pass


class RankZero(KdmdError):
    pass


class Divergence(KdmdError):
    def __init__(self, step: int, message: str = ""):
        self.step = step
        super().__init__(message or f"rollout diverged at step {step}")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel choice.

    gaussian:   exp(-gamma * |x - y|^2)
    polynomial: (offset + x.y) ** degree
    linear:     x.y

    A Gaussian with RBF shape parameter s corresponds to ``gamma = s**2``.
    """

    kind: str = "gaussian"
    gamma: float = 100.0
    degree: int = 2
    offset: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "polynomial", "linear"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not self.gamma > 0:
            raise ValueError("gaussian gamma must be positive")
        if self.kind == "polynomial":
            if int(self.degree) != self.degree or self.degree < 1:
                raise ValueError("polynomial degree must be an integer >= 1")
            if self.offset < 0:
                raise ValueError("polynomial offset must be >= 0")

    @classmethod
    def from_shape(cls, shape: float) -> "KernelSpec":
        return cls(kind="gaussian", gamma=float(shape) ** 2)

    def matrix(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Kernel matrix k(x_i, y_j) for row-stacked samples."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if x.shape[1] != y.shape[1]:
            raise ValueError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
        if self.kind == "gaussian":
            # explicit differences: exact zeros on the diagonal, exact symmetry
            d2 = np.zeros((x.shape[0], y.shape[0]))
            for c in range(x.shape[1]):
                diff = x[:, c, None] - y[None, :, c]
                d2 += diff * diff
            return np.exp(-self.gamma * d2)
        dot = x @ y.T
        if self.kind == "linear":
            return dot
        return (self.offset + dot) ** int(self.degree)


def kernel_eval(kernel: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    return float(kernel.matrix(x[None], y[None])[0, 0])


@dataclass(frozen=True)
class LatentTrajectory:
    states: np.ndarray  # (n_samples, n)
    dt: float = 1.0
    t_start: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.states, dtype=np.float64)
        if s.ndim == 1:
            s = s[:, None]
        if s.ndim != 2 or s.shape[1] < 1:
            raise ValueError("states must be (time, n)")
        if s.shape[0] < 3:
            raise TooFewSamples(f"need at least 3 samples, got {s.shape[0]}")
        if not np.all(np.isfinite(s)):
            raise ValueError("latent states contain non-finite values")
        object.__setattr__(self, "states", s)


@dataclass
class KoopmanModel:
    z0: np.ndarray  # (m, n) reference states
    kernel: KernelSpec
    l_r: np.ndarray  # (m, r)
    sigma_r: np.ndarray  # (r,)
    w_hat: np.ndarray  # (r, r) complex
    xi: np.ndarray  # (r, r) complex
    eigenvalues: np.ndarray  # (r,) complex
    modes: np.ndarray  # (n, r) complex
    scale: float = 1.0  # max |z| seen in training
    fit_residual: float = 0.0
    ls_residual: float = 0.0
    _proj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._proj = (self.l_r / self.sigma_r) @ self.w_hat

    @property
    def rank(self) -> int:
        return self.sigma_r.size

    @property
    def dim(self) -> int:
        return self.z0.shape[1]

    def eigenfunctions(self, z: np.ndarray) -> np.ndarray:
        """phi for a batch of states, shape (batch, r)."""
        return self.kernel.matrix(z, self.z0) @ self._proj

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "z0": self.z0, "l_r": self.l_r, "sigma_r": self.sigma_r,
            "w_hat": self.w_hat, "xi": self.xi, "eigenvalues": self.eigenvalues,
            "modes": self.modes,
        }


def gram_matrices(traj: LatentTrajectory, kernel: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    z = traj.states
    if z.shape[0] < 3:
        raise TooFewSamples(f"need at least 3 samples, got {z.shape[0]}")
    g00 = kernel.matrix(z[:-1], z[:-1])
    g00 = 0.5 * (g00 + g00.T)
    g10 = kernel.matrix(z[1:], z[:-1])
    return g00, g10


def fit(traj: LatentTrajectory, kernel: KernelSpec, rank_cap: int | None = None,
        rank_tol: float = RANK_TOL, shrink: float | None = None) -> KoopmanModel:
    """Fit a Koopman model to one trajectory.

    Without ``shrink`` an ill-conditioned eigenbasis of K_hat raises.  With
    ``0 < shrink < 1`` the rank is multiplied by ``shrink`` and the small
    eigenproblem is retried (the Gram decomposition is reused) until the
    eigenbasis is usable.
    """
    if shrink is not None and not 0.0 < shrink < 1.0:
        raise ValueError("shrink must lie in (0, 1)")
    z = traj.states
    g00, g10 = gram_matrices(traj, kernel)
    s2, l = sym_eig(g00)
    s2 = np.maximum(s2, 0.0)
    if s2[0] <= 0.0:
        raise RankZero("Gram matrix is identically zero")
    r = int(np.count_nonzero(s2 > rank_tol * s2[0]))
    if rank_cap is not None:
        r = min(r, int(rank_cap))
    if r < 1:
        raise RankZero("no Gram eigenvalue above tolerance")
    while True:
        try:
            return _fit_rank(z, kernel, g10, s2, l, r)
        except (Defective, SingularEigenbasis):
            if shrink is None or r == 1:
                raise
            r = max(1, int(r * shrink))


def _fit_rank(z, kernel, g10, s2, l, r) -> KoopmanModel:
    z0, z1 = z[:-1], z[1:]
    l_r = l[:, :r]
    sigma = np.sqrt(s2[:r])
    k_hat = (l_r.T @ g10 @ l_r) / np.outer(sigma, sigma)
    lam, w_hat = gen_eig(k_hat)
    xi = left_eigvecs(w_hat)
    bi = np.linalg.norm(xi @ w_hat - np.eye(r))
    if bi > BIORTHO_TOL:
        raise SingularEigenbasis(f"|Xi W - I| = {bi:.2e} at rank {r}")
    modes = ((xi / sigma) @ l_r.T @ z0).T
    # one-step prediction over training pairs, real by construction
    proj_l = l_r @ l_r.T
    pred = proj_l @ g10 @ (l_r / s2[:r]) @ (l_r.T @ z0)
    return KoopmanModel(
        z0=z0.copy(), kernel=kernel, l_r=l_r, sigma_r=sigma, w_hat=w_hat, xi=xi,
        eigenvalues=lam, modes=modes, scale=float(np.max(np.abs(z))),
        fit_residual=float(np.linalg.norm(pred - z1)),
        ls_residual=float(np.linalg.norm(z1 - proj_l @ z1)),
    )


def eigenfunction_row(model: KoopmanModel, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.size != model.dim:
        raise ValueError(f"dimension mismatch: {z.size} vs {model.dim}")
    return model.eigenfunctions(z[None])[0]


def predict_next(model: KoopmanModel, z) -> tuple[np.ndarray, float]:
    """One application of the Koopman one-step map; also returns the largest
    imaginary part discarded when taking the real part."""
    phi = eigenfunction_row(model, z)
    full = model.modes @ (model.eigenvalues * phi)
    return full.real.copy(), float(np.max(np.abs(full.imag), initial=0.0))


def rollout(model: KoopmanModel, z_init, steps: int, mode: str = "recursive") -> np.ndarray:
    """States z_1..z_steps following ``z_init`` (shape (steps, n))."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    z = np.asarray(z_init, dtype=np.float64).ravel()
    out = np.empty((steps, model.dim))
    limit = DIVERGENCE_FACTOR * max(model.scale, np.finfo(float).tiny)
    if mode == "recursive":
        for k in range(steps):
            z, _ = predict_next(model, z)
            out[k] = z
            if not np.all(np.isfinite(z)) or np.max(np.abs(z)) > limit:
                raise Divergence(k + 1)
    elif mode == "spectral":
        coef = eigenfunction_row(model, z)
        for k in range(steps):
            coef = coef * model.eigenvalues
            out[k] = (model.modes @ coef).real
            if not np.all(np.isfinite(out[k])) or np.max(np.abs(out[k])) > limit:
                raise Divergence(k + 1)
    else:
        raise ValueError(f"unknown rollout mode {mode!r}")
    return out
