"""Dense eigen-kernels used by kernel DMD.

``sym_eig`` runs a cyclic Jacobi iteration (parallel ordering, so each round
rotates n/2 disjoint pairs at once).  Large Gram matrices are handed to LAPACK
instead; the contract (descending eigenvalues, orthonormal vectors) is the same.
``gen_eig`` and ``left_eigvecs`` wrap LAPACK with the checks the callers rely on.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "LinalgError",
    "NonSquare",
    "NotSymmetric",
    "NoConvergence",
    "Defective",
    "SingularEigenbasis",
    "sym_eig",
    "jacobi_eigh",
    "gen_eig",
    "left_eigvecs",
]

JACOBI_MAX_SWEEPS = 100
# above this size the O(n) rounds per sweep cost more than they are worth
JACOBI_AUTO_LIMIT = 128
COND_LIMIT = 1e12


class LinalgError(ArithmeticError):
    pass


class NonSquare(LinalgError, ValueError):
    pass


class NotSymmetric(LinalgError, ValueError):
    pass


class NoConvergence(LinalgError):
    pass


class Defective(LinalgError):
    pass


class SingularEigenbasis(LinalgError):
    pass


def _as_square(a) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise NonSquare(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise LinalgError("matrix has non-finite entries")
    return a


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pairings for a parallel Jacobi sweep (circle method); each index pair
    appears exactly once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for k in range(m // 2):
            i, j = players[k], players[m - 1 - k]
            if i < n and j < n:
                p.append(min(i, j))
                q.append(max(i, j))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigh(a: np.ndarray, tol: float = 1e-14, max_sweeps: int = JACOBI_MAX_SWEEPS):
    """Cyclic Jacobi on a symmetric matrix; returns unsorted (w, V)."""
    a = np.array(a, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    if n == 1:
        return a.diagonal().copy(), v
    scale = np.linalg.norm(a)
    if scale == 0.0:
        return np.zeros(n), v
    rounds = _round_robin(n)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a - np.diag(a.diagonal()))
        if off <= tol * scale:
            return a.diagonal().copy(), v
        for p, q in rounds:
            apq = a[p, q]
            # rotations below roundoff level only churn
            active = np.abs(apq) > 1e-18 * scale
            if not np.any(active):
                continue
            p, q, apq = p[active], q[active], apq[active]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            big = np.abs(tau) > 1e150
            tau_s = np.where(big, 1.0, tau)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau_s) + np.sqrt(1.0 + tau_s * tau_s))
            t = np.where(big, 0.5 / np.where(big, tau, 1.0), t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            # A <- J^T A J, rows then columns
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c
    raise NoConvergence(f"Jacobi did not converge in {max_sweeps} sweeps")


def sym_eig(a, method: str = "auto") -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a real symmetric matrix.

    Returns eigenvalues sorted in descending order and the matching
    orthonormal eigenvectors as columns.  ``method`` is ``"jacobi"``,
    ``"lapack"`` or ``"auto"`` (Jacobi up to 128x128).
    """
    a = _as_square(a).astype(np.float64)
    amax = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.T), initial=0.0) > 1e-10 * amax:
        raise NotSymmetric("matrix is not symmetric within 1e-10 relative")
    a = 0.5 * (a + a.T)
    if method == "auto":
        method = "jacobi" if a.shape[0] <= JACOBI_AUTO_LIMIT else "lapack"
    if method == "jacobi":
        w, v = jacobi_eigh(a)
    elif method == "lapack":
        try:
            w, v = np.linalg.eigh(a)
        except np.linalg.LinAlgError as exc:
            raise NoConvergence(str(exc)) from exc
    else:
        raise ValueError(f"unknown method {method!r}")
    order = np.argsort(-w, kind="stable")
    return w[order], v[:, order]


def gen_eig(a) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of a general square matrix.

    Eigenvalues come back as a complex vector ordered by decreasing modulus;
    right eigenvectors are unit 2-norm columns.  A numerically singular
    eigenvector matrix raises :class:`Defective`.
    """
    a = _as_square(a)
    try:
        lam, w = np.linalg.eig(a)
    except np.linalg.LinAlgError as exc:
        raise NoConvergence(str(exc)) from exc
    lam = lam.astype(np.complex128)
    w = w.astype(np.complex128)
    # stable on (-|lam|, -Re, -Im) keeps conjugate partners adjacent
    order = np.lexsort((-lam.imag, -lam.real, -np.round(np.abs(lam), 12)))
    lam, w = lam[order], w[:, order]
    w /= np.linalg.norm(w, axis=0)
    if w.shape[0] and np.linalg.cond(w) > COND_LIMIT:
        raise Defective("eigenvector matrix is numerically singular")
    return lam, w


def left_eigvecs(w) -> np.ndarray:
    """Rows xi_l with xi_l . w_k = delta_lk, i.e. the inverse of ``w``."""
    w = _as_square(w)
    if w.shape[0] == 0:
        return w.copy()
    cond = np.linalg.cond(w)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise SingularEigenbasis(f"eigenbasis condition number {cond:.3e} exceeds {COND_LIMIT:.0e}")
    return np.linalg.solve(w, np.eye(w.shape[0], dtype=w.dtype))
