"""Relative-error indicators for surrogate predictions.

For reference ``u`` and prediction ``p`` of shape (parameter, time, space):

    eps[i, j, :] = |u_ij - p_ij| / sqrt(sum_j |u_ij|^2)
    eps_max      = max over i, j, k
    eps_mean     = sum(eps) / (n_params * n_times * N)
    eps_mu[i]    = sqrt(sum_j |u_ij - p_ij|^2) / sqrt(sum_j |u_ij|^2)
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["Metrics", "GridMismatch", "ZeroReference", "relative_error_field", "compute_metrics",
           "field_metrics"]

ZERO_REFERENCE = 1e-300


class GridMismatch(ValueError):
    pass


class ZeroReference(ArithmeticError):
    pass


@dataclass
class Metrics:
    eps: np.ndarray  # (k, n_t, N)
    eps_max: float
    eps_mean: float
    eps_mu: np.ndarray  # (k,)

    def window_mean(self, time_mask) -> float:
        """Mean of the error field restricted to the selected time samples,
        with the full-horizon normalisation kept."""
        mask = np.asarray(time_mask, dtype=bool)
        if mask.shape != (self.eps.shape[1],):
            raise GridMismatch("time mask does not match the error field")
        sub = self.eps[:, mask]
        if sub.size == 0:
            return 0.0
        return float(sub.sum() / sub.size)

    def window_max(self, time_mask) -> float:
        sub = self.eps[:, np.asarray(time_mask, dtype=bool)]
        return float(sub.max()) if sub.size else 0.0


def _check(reference, predicted):
    reference = np.asarray(reference, dtype=np.float64)
    predicted = np.asarray(predicted, dtype=np.float64)
    if reference.ndim == 2:
        reference, predicted = reference[None], predicted[None]
    if reference.shape != predicted.shape or reference.ndim != 3:
        raise GridMismatch(f"reference {reference.shape} and prediction {predicted.shape} differ")
    return reference, predicted


def relative_error_field(reference, predicted) -> np.ndarray:
    reference, predicted = _check(reference, predicted)
    denom = np.sqrt(np.sum(reference * reference, axis=(1, 2)))
    if np.any(denom < ZERO_REFERENCE):
        raise ZeroReference("reference trajectory has zero norm")
    return np.abs(reference - predicted) / denom[:, None, None]


def compute_metrics(reference, predicted) -> Metrics:
    reference, predicted = _check(reference, predicted)
    eps = relative_error_field(reference, predicted)
    diff = reference - predicted
    denom = np.sqrt(np.sum(reference * reference, axis=(1, 2)))
    eps_mu = np.sqrt(np.sum(diff * diff, axis=(1, 2))) / denom
    return Metrics(eps=eps, eps_max=float(eps.max()), eps_mean=float(eps.sum() / eps.size),
                   eps_mu=eps_mu)


def field_metrics(reference, predicted, slices: dict[str, slice]) -> dict[str, Metrics]:
    """Metrics computed separately for each named block of the state."""
    reference, predicted = _check(reference, predicted)
    return {name: compute_metrics(reference[..., sl], predicted[..., sl]) for name, sl in slices.items()}
