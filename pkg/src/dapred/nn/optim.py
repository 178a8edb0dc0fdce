from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = ["AdamState", "adam_step", "TrainConfig", "PlateauSchedule", "NonFiniteLoss",
           "EpochRecord", "train"]


class NonFiniteLoss(ArithmeticError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"loss became non-finite in epoch {epoch}")


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_hat: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")

    @classmethod
    def for_params(cls, params: list[np.ndarray], **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
    """In-place Adam update with bias correction."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and moments must align")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps_hat)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    initial_lr: float = 1e-3
    lr_factor: float = 0.5
    lr_patience: int = 20
    min_lr: float = 1e-5
    early_stop_patience: int | None = None
    alpha: float = 0.1
    seed: int = 0
    restore_best: bool = True

    def __post_init__(self):
        if not 0 < self.lr_factor < 1:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.min_lr > self.initial_lr:
            raise ValueError("min_lr must not exceed initial_lr")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")


class PlateauSchedule:
    """Multiply the LR by ``factor`` after ``patience`` epochs without a new
    best loss, never going below ``min_lr``."""

    def __init__(self, lr: float, factor: float, patience: int, min_lr: float):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.best = math.inf
        self.wait = 0

    def update(self, loss: float) -> float:
        if loss < self.best:
            self.best = loss
            self.wait = 0
        else:
            self.wait += 1
            if self.wait >= self.patience:
                self.lr = max(self.lr * self.factor, self.min_lr)
                self.wait = 0
        return self.lr


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    best: float
    lr: float
    components: dict[str, float] = field(default_factory=dict)


def train(step: Callable[[np.ndarray], tuple[float, list[np.ndarray], dict[str, float]]],
          params: list[np.ndarray], n_samples: int, cfg: TrainConfig,
          log: Callable[[EpochRecord], None] | None = None) -> list[EpochRecord]:
    """Mini-batch Adam over shuffled sample indices.

    ``step(idx)`` returns the batch loss, gradients aligned with ``params``
    and named loss components.  Epoch losses are sample-weighted batch means.
    """
    if n_samples < 1:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(cfg.seed)
    adam = AdamState.for_params(params, lr=cfg.initial_lr)
    sched = PlateauSchedule(cfg.initial_lr, cfg.lr_factor, cfg.lr_patience, cfg.min_lr)
    history: list[EpochRecord] = []
    best, best_state, since_best = math.inf, None, 0
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n_samples)
        total, comps = 0.0, {}
        for start in range(0, n_samples, cfg.batch_size):
            idx = perm[start: start + cfg.batch_size]
            loss, grads, parts = step(idx)
            if not math.isfinite(loss):
                raise NonFiniteLoss(epoch)
            adam_step(adam, params, grads)
            total += loss * idx.size
            for k, val in parts.items():
                comps[k] = comps.get(k, 0.0) + val * idx.size
        loss = total / n_samples
        comps = {k: val / n_samples for k, val in comps.items()}
        if not math.isfinite(loss):
            raise NonFiniteLoss(epoch)
        if loss < best:
            best, since_best = loss, 0
            if cfg.restore_best:
                best_state = [p.copy() for p in params]
        else:
            since_best += 1
        rec = EpochRecord(epoch, loss, best, adam.lr, comps)
        history.append(rec)
        if log is not None:
            log(rec)
        adam.lr = sched.update(loss)
        if cfg.early_stop_patience is not None and since_best >= cfg.early_stop_patience:
            break
    if best_state is not None:
        for p, s in zip(params, best_state):
            p[...] = s
    return history
