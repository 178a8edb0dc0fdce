"""Full-order model data: the FitzHugh-Nagumo cable and linear test systems.

The FHN state on n_x nodes is ``u = [v, w]`` (length 2 n_x).  Space is a
uniform grid on [0, L] with second-order central differences and ghost-node
Neumann conditions (``v_x(0) = -i_o(t)``, ``v_x(L) = 0``).  Time stepping is
IMEX Euler: ``eps * v_xx`` implicit (Thomas solve), reaction and the
w-equation explicit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numba
import numpy as np

__all__ = [
    "FhnConfig",
    "SnapshotSet",
    "LinearSystemSpec",
    "Instability",
    "input_current",
    "fhn_simulate",
    "assemble_snapshots",
    "linear_simulate",
]

INPUT_AMPLITUDE = 50000.0
INPUT_DECAY = 15.0


class Instability(ArithmeticError):
    def __init__(self, time: float, message: str = ""):
        self.time = time
        super().__init__(message or f"non-finite state at t={time:.6g}")


def input_current(t, amplitude: float = INPUT_AMPLITUDE):
    """Stimulus ``amplitude * t**3 * exp(-15 t)`` injected at x = 0."""
    t = np.asarray(t, dtype=np.float64)
    if np.any(t < 0):
        raise ValueError("input current is defined for t >= 0")
    out = amplitude * t**3 * np.exp(-INPUT_DECAY * t)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FhnConfig:
    grid_points: int = 128
    length: float = 1.5
    b: float = 0.5
    c: float = 0.05
    gamma: float = 2.0
    dt_output: float = 0.01
    t0: float = 12.0
    t_end: float = 20.0
    substeps: int = 10
    input_amplitude: float = INPUT_AMPLITUDE
    epsilon_train: tuple[float, ...] = tuple(np.linspace(0.01, 0.04, 7).tolist())
    epsilon_test: tuple[float, ...] = (0.0151, 0.0276, 0.0352)

    def __post_init__(self):
        if not 0 < self.t0 < self.t_end:
            raise ValueError(f"need 0 < t0 < t_end, got t0={self.t0}, t_end={self.t_end}")
        if self.dt_output <= 0:
            raise ValueError("dt_output must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")
        if self.grid_points < 8:
            raise ValueError("grid_points must be >= 8")
        if self.length <= 0:
            raise ValueError("length must be positive")
        for eps in (*self.epsilon_train, *self.epsilon_test):
            if not eps > 0:
                raise ValueError(f"epsilon values must be positive, got {eps}")

    @property
    def n_outputs(self) -> int:
        return steps_between(0.0, self.t_end, self.dt_output) + 1

    @property
    def n_train(self) -> int:
        """Number of output samples on [0, t0] (N_T0 + 1)."""
        return steps_between(0.0, self.t0, self.dt_output) + 1

    @property
    def state_dim(self) -> int:
        return 2 * self.grid_points

    @property
    def dx(self) -> float:
        return self.length / (self.grid_points - 1)

    def times(self, t_end: float | None = None) -> np.ndarray:
        n = steps_between(0.0, self.t_end if t_end is None else t_end, self.dt_output)
        return np.arange(n + 1) * self.dt_output


def steps_between(t_start: float, t_stop: float, dt: float) -> int:
    n = (t_stop - t_start) / dt
    k = int(round(n))
    if abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise ValueError(f"interval [{t_start}, {t_stop}] is not a multiple of dt={dt}")
    return k


@numba.njit(cache=True, nogil=True)
def _imex_kernel(nx, dx, eps, b, c, gamma, amp, dt, substeps, n_out, out):
    # out[0] stays zero: v = w = 0 initially
    r = dt * eps / (dx * dx)
    # Thomas factors of the constant diffusion matrix
    lower = np.full(nx, -r)
    upper = np.full(nx, -r)
    upper[0] = -2.0 * r
    lower[nx - 1] = -2.0 * r
    diag = 1.0 + 2.0 * r
    cp = np.empty(nx)
    den = np.empty(nx)
    den[0] = diag
    cp[0] = upper[0] / diag
    for i in range(1, nx):
        den[i] = diag - lower[i] * cp[i - 1]
        cp[i] = upper[i] / den[i]
    v = np.zeros(nx)
    w = np.zeros(nx)
    rhs = np.empty(nx)
    inv_eps = 1.0 / eps
    step = 0
    for k in range(1, n_out):
        for _ in range(substeps):
            step += 1
            t_new = step * dt
            for i in range(nx):
                vi = v[i]
                f = vi * (vi - 0.1) * (1.0 - vi)
                rhs[i] = vi + dt * inv_eps * (f - w[i] + c)
                w[i] = w[i] + dt * (b * vi - gamma * w[i] + c)
            stim = amp * t_new**3 * math.exp(-15.0 * t_new)
            rhs[0] += dt * eps * 2.0 * stim / dx
            # forward sweep / back substitution
            rhs[0] = rhs[0] / den[0]
            for i in range(1, nx):
                rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / den[i]
            v[nx - 1] = rhs[nx - 1]
            for i in range(nx - 2, -1, -1):
                v[i] = rhs[i] - cp[i] * v[i + 1]
        finite = True
        for i in range(nx):
            out[k, i] = v[i]
            out[k, nx + i] = w[i]
            if not (math.isfinite(v[i]) and math.isfinite(w[i])):
                finite = False
        if not finite:
            return k
    return -1


def fhn_simulate(cfg: FhnConfig, epsilon: float, t_end: float | None = None,
                 substeps: int | None = None) -> np.ndarray:
    """Trajectory of shape (n_times, 2 * grid_points) on the output grid."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    n_out = steps_between(0.0, cfg.t_end if t_end is None else t_end, cfg.dt_output) + 1
    substeps = cfg.substeps if substeps is None else substeps
    dt = cfg.dt_output / substeps
    out = np.zeros((n_out, cfg.state_dim))
    bad = _imex_kernel(cfg.grid_points, cfg.dx, float(epsilon), cfg.b, cfg.c, cfg.gamma,
                       cfg.input_amplitude, dt, substeps, n_out, out)
    if bad >= 0:
        raise Instability(bad * cfg.dt_output)
    return out


@dataclass
class SnapshotSet:
    """Trajectories ``states[i, j] = u_h(mu_i, t_j)`` on a shared uniform grid."""

    parameters: np.ndarray  # (k, d_p)
    times: np.ndarray  # (n_t,)
    states: np.ndarray  # (k, n_t, N)
    field_names: tuple[str, ...] = ("v", "w")
    field_sizes: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.parameters = np.atleast_2d(np.asarray(self.parameters, dtype=np.float64))
        if self.parameters.shape[0] == 1 and self.states.shape[0] != 1:
            self.parameters = self.parameters.T
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 3:
            raise ValueError("states must be a (parameter, time, state) array")
        if self.states.shape[0] != self.parameters.shape[0]:
            raise ValueError("parameter count does not match states")
        if self.states.shape[1] != self.times.shape[0]:
            raise ValueError("time axis length does not match times")
        if self.times.size > 1:
            steps = np.diff(self.times)
            if np.any(steps <= 0):
                raise ValueError("times must be strictly increasing")
            if np.max(np.abs(steps - self.dt)) > 1e-12 * max(1.0, abs(self.times[-1])):
                raise ValueError("time grid is not uniform")
        if not np.all(np.isfinite(self.states)):
            raise ValueError("states contain non-finite values")
        if not self.field_sizes:
            self.field_sizes = (self.state_dim,) if len(self.field_names) == 1 else \
                tuple([self.state_dim // len(self.field_names)] * len(self.field_names))
        if sum(self.field_sizes) != self.state_dim:
            raise ValueError("field sizes do not add up to the state dimension")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def n_params(self) -> int:
        return self.states.shape[0]

    def field_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in zip(self.field_names, self.field_sizes):
            out[name] = slice(start, start + size)
            start += size
        return out

    def until(self, t_stop: float) -> "SnapshotSet":
        """Samples with t <= t_stop (the training window)."""
        n = steps_between(self.times[0], t_stop, self.dt) + 1
        if n > self.times.size:
            raise ValueError(f"t_stop={t_stop} beyond the stored horizon")
        return replace(self, times=self.times[:n].copy(), states=self.states[:, :n].copy())

    def select(self, indices) -> "SnapshotSet":
        idx = np.asarray(indices)
        return replace(self, parameters=self.parameters[idx].copy(), states=self.states[idx].copy())


def assemble_snapshots(cfg: FhnConfig, parameters, threads: int = 1,
                       t_end: float | None = None) -> SnapshotSet:
    """Simulate every epsilon over [0, T] and stack the trajectories."""
    eps = [float(np.ravel(p)[0]) for p in parameters]
    if not eps:
        raise ValueError("need at least one parameter")
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            trajs = list(pool.map(lambda e: fhn_simulate(cfg, e, t_end=t_end), eps))
    else:
        trajs = [fhn_simulate(cfg, e, t_end=t_end) for e in eps]
    return SnapshotSet(
        parameters=np.array(eps)[:, None],
        times=cfg.times(t_end),
        states=np.stack(trajs),
        field_names=("v", "w"),
        field_sizes=(cfg.grid_points, cfg.grid_points),
    )


@dataclass(frozen=True)
class LinearSystemSpec:
    a: np.ndarray
    z0: np.ndarray
    steps: int

    def __post_init__(self):
        a = np.asarray(self.a, dtype=np.float64)
        z0 = np.asarray(self.z0, dtype=np.float64).ravel()
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be square")
        if z0.shape[0] != a.shape[0]:
            raise ValueError("dim(z0) must equal dim(A)")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "z0", z0)


def linear_simulate(spec: LinearSystemSpec) -> np.ndarray:
    """Rows ``A**j z0`` for j = 0..steps (steps + 1 rows)."""
    out = np.empty((spec.steps + 1, spec.z0.size))
    z = spec.z0.copy()
    out[0] = z
    for j in range(1, spec.steps + 1):
        z = spec.a @ z
        out[j] = z
    return out
