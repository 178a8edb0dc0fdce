"""Offline training with KDMD data augmentation, and one-shot online prediction.

Offline:
    1. pretrain the autoencoder on snapshots from [0, T0]
    2. encode those snapshots
    3. fit one kernel DMD model per training parameter and roll the latent
       state forward over (T0, T]
    4. decode the extrapolated latent states
    5. append them to the original snapshots
    6. pretrain the (mu, t) -> latent network with the autoencoder frozen,
       then train all three networks on L_cae + alpha * L_ffnn

Online: ``decoder(ffnn(mu, t))`` for every query, in a single batched pass.
"""
from __future__ import annotations

import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kdmd
from .architectures import ENCODER_DENSE, ENCODER_FILTERS, FFNN_HIDDEN, decoder_specs, encoder_specs, ffnn_specs
from .fom import SnapshotSet, steps_between
from .metrics import Metrics, field_metrics
from .nn import EpochRecord, Network, ShapeMismatch, TrainConfig, mse_loss, train

__all__ = [
    "NormalizationStats",
    "PipelineConfig",
    "AugmentedDataset",
    "ModelBundle",
    "Prediction",
    "OfflineResult",
    "ExtrapolationError",
    "GridMismatch",
    "build_networks",
    "pretrain_cae",
    "encode_dataset",
    "extrapolate_latent",
    "decode_latent",
    "augment",
    "joint_loss",
    "train_joint",
    "predict_online",
    "predict_grid",
    "evaluate",
    "run_offline",
]

log = logging.getLogger(__name__)

# rows per forward pass when evaluating whole datasets
EVAL_CHUNK = 512
# factor applied to the KDMD rank when a fit or rollout is unusable
RANK_SHRINK = 0.75


class ExtrapolationError(RuntimeError):
    def __init__(self, parameter, cause: Exception):
        self.parameter = parameter
        self.cause = cause
        super().__init__(f"KDMD extrapolation failed for parameter {parameter}: {cause}")


class GridMismatch(ValueError):
    pass


@dataclass
class NormalizationStats:
    """Affine maps: (mu, t) to [0, 1] from the training ranges, and the state
    through ``(u - shift) / scale``."""

    param_min: np.ndarray
    param_max: np.ndarray
    t_min: float
    t_max: float
    state_shift: np.ndarray
    state_scale: np.ndarray

    def __post_init__(self):
        self.param_min = np.atleast_1d(np.asarray(self.param_min, dtype=np.float64))
        self.param_max = np.atleast_1d(np.asarray(self.param_max, dtype=np.float64))
        self.state_shift = np.asarray(self.state_shift, dtype=np.float64)
        self.state_scale = np.asarray(self.state_scale, dtype=np.float64)
        if np.any(self.param_max <= self.param_min) or not self.t_max > self.t_min:
            raise ValueError("normalisation ranges must be non-degenerate")
        if np.any(self.state_scale <= 0):
            raise ValueError("state scale must be positive")

    @classmethod
    def from_data(cls, snapshots: SnapshotSet, t_max: float, zscore: bool = False) -> "NormalizationStats":
        params = snapshots.parameters
        n = snapshots.state_dim
        shift, scale = np.zeros(n), np.ones(n)
        if zscore:
            for sl in snapshots.field_slices().values():
                block = snapshots.states[..., sl]
                shift[sl] = block.mean()
                scale[sl] = block.std() or 1.0
        return cls(params.min(axis=0), params.max(axis=0), float(snapshots.times[0]), float(t_max),
                   shift, scale)

    def inputs(self, params, times) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64).reshape(len(times), -1)
        times = np.asarray(times, dtype=np.float64).reshape(-1, 1)
        p = (params - self.param_min) / (self.param_max - self.param_min)
        t = (times - self.t_min) / (self.t_max - self.t_min)
        return np.hstack([p, t])

    def in_range(self, params, times) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64).reshape(len(times), -1)
        times = np.asarray(times, dtype=np.float64)
        tol = 1e-12
        ok = np.all((params >= self.param_min - tol) & (params <= self.param_max + tol), axis=1)
        return ok & (times >= self.t_min - tol) & (times <= self.t_max + tol)

    def to_net(self, u: np.ndarray) -> np.ndarray:
        return ((u - self.state_shift) / self.state_scale)[..., None]

    def from_net(self, x: np.ndarray) -> np.ndarray:
        return x[..., 0] * self.state_scale + self.state_shift

    def arrays(self) -> dict[str, np.ndarray]:
        return {"param_min": self.param_min, "param_max": self.param_max,
                "t_range": np.array([self.t_min, self.t_max]),
                "state_shift": self.state_shift, "state_scale": self.state_scale}

    @classmethod
    def from_arrays(cls, a: dict[str, np.ndarray]) -> "NormalizationStats":
        return cls(a["param_min"], a["param_max"], float(a["t_range"][0]), float(a["t_range"][1]),
                   a["state_shift"], a["state_scale"])


@dataclass(frozen=True)
class PipelineConfig:
    latent_dim: int = 2
    encoder_filters: tuple[int, ...] = ENCODER_FILTERS
    encoder_dense: tuple[int, ...] = ENCODER_DENSE
    ffnn_hidden: tuple[int, ...] = FFNN_HIDDEN
    kernel: kdmd.KernelSpec = kdmd.KernelSpec(kind="gaussian", gamma=100.0)
    rank_cap: int | None = None
    rollout_mode: str = "recursive"
    rank_shrink: float | None = RANK_SHRINK
    cae: TrainConfig = TrainConfig(epochs=1000, batch_size=256, initial_lr=1e-3, min_lr=1e-3 / 2**4)
    ffnn: TrainConfig = TrainConfig(epochs=10000, batch_size=256, initial_lr=1e-3, min_lr=1e-3 / 2**4)
    joint: TrainConfig = TrainConfig(epochs=20000, batch_size=256, initial_lr=2e-3, min_lr=5e-4, alpha=0.1)
    stop_gradient: bool = False
    freeze_cae_in_ffnn_pretrain: bool = True
    zscore: bool = False
    train_stride: int = 1
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be positive")
        if self.rollout_mode not in ("recursive", "spectral"):
            raise ValueError("rollout_mode must be 'recursive' or 'spectral'")
        if self.train_stride < 1:
            raise ValueError("train_stride must be >= 1")
        if self.rank_cap is not None and self.rank_cap < 1:
            raise ValueError("rank_cap must be positive")
        if self.rank_shrink is not None and not 0 < self.rank_shrink < 1:
            raise ValueError("rank_shrink must lie in (0, 1)")


@dataclass
class AugmentedDataset:
    parameters: np.ndarray  # (k, d_p)
    times: np.ndarray  # (n_t,) covering [0, T]
    states: np.ndarray  # (k, n_t, N)
    augmented: np.ndarray  # (k, n_t) bool, True for KDMD-decoded samples

    @property
    def n_samples(self) -> int:
        return self.states.shape[0] * self.states.shape[1]

    def flat(self, stride: int = 1):
        """(params, times, states) as flat per-sample arrays, every ``stride``-th time."""
        k = self.states.shape[0]
        t_idx = np.arange(0, self.times.size, stride)
        params = np.repeat(self.parameters, t_idx.size, axis=0)
        times = np.tile(self.times[t_idx], k)
        states = self.states[:, t_idx].reshape(k * t_idx.size, -1)
        return params, times, states


@dataclass
class ModelBundle:
    encoder: Network
    decoder: Network
    ffnn: Network
    norm: NormalizationStats
    dt: float
    t0: float
    t_end: float
    train_params: np.ndarray
    field_names: tuple[str, ...] = ("v", "w")
    field_sizes: tuple[int, ...] = ()

    def __post_init__(self):
        n = self.ffnn.output_shape
        if n != self.encoder.output_shape or (n[0],) != self.decoder.input_shape:
            raise ShapeMismatch("ffnn output, encoder output and decoder input must agree")

    @property
    def latent_dim(self) -> int:
        return self.ffnn.output_shape[0]

    @property
    def state_dim(self) -> int:
        return self.decoder.output_shape[0]

    def field_slices(self) -> dict[str, slice]:
        out, start = {}, 0
        for name, size in zip(self.field_names, self.field_sizes):
            out[name] = slice(start, start + size)
            start += size
        return out


@dataclass
class Prediction:
    states: np.ndarray  # (Q, N)
    out_of_range: np.ndarray  # (Q,) bool
    off_grid: np.ndarray  # (Q,) bool


@dataclass
class OfflineResult:
    bundle: ModelBundle
    histories: dict[str, list[EpochRecord]]
    koopman: list[kdmd.KoopmanModel]
    dataset: AugmentedDataset
    latent: list[kdmd.LatentTrajectory]


def build_networks(state_dim: int, n_params: int, cfg: PipelineConfig) -> tuple[Network, Network, Network]:
    enc = Network.from_specs(
        encoder_specs(state_dim, cfg.latent_dim, cfg.encoder_filters, cfg.encoder_dense),
        (state_dim, 1), seed=cfg.seed, name="encoder")
    dec = Network.from_specs(
        decoder_specs(state_dim, cfg.latent_dim, cfg.encoder_filters, cfg.encoder_dense),
        (cfg.latent_dim,), seed=cfg.seed + 1, name="decoder")
    ffnn = Network.from_specs(ffnn_specs(n_params + 1, cfg.latent_dim, cfg.ffnn_hidden),
                              (n_params + 1,), seed=cfg.seed + 2, name="ffnn")
    return enc, dec, ffnn


def _run_chunks(net: Network, x: np.ndarray) -> np.ndarray:
    return net.predict(x, EVAL_CHUNK)


def _cae_step(enc: Network, dec: Network, x: np.ndarray):
    def step(idx):
        xb = x[idx]
        z, c_enc = enc.forward(xb)
        y, c_dec = dec.forward(z)
        loss, dy = mse_loss(y, xb)
        g_dec, dz = dec.backward(c_dec, dy)
        g_enc, _ = enc.backward(c_enc, dz, input_grad=False)
        return loss, g_enc + g_dec, {"cae": loss}
    return step


def pretrain_cae(snapshots: SnapshotSet, enc: Network, dec: Network, cfg: TrainConfig,
                 norm: NormalizationStats, stride: int = 1, log_fn=None) -> list[EpochRecord]:
    """Fit the autoencoder to the [0, T0] snapshots (reconstruction loss)."""
    states = snapshots.states[:, ::stride]
    x = norm.to_net(states.reshape(-1, snapshots.state_dim))
    return train(_cae_step(enc, dec, x), enc.parameters() + dec.parameters(), x.shape[0], cfg, log_fn)


def encode_dataset(enc: Network, snapshots: SnapshotSet, norm: NormalizationStats) -> list[kdmd.LatentTrajectory]:
    if (snapshots.state_dim, 1) != enc.input_shape:
        raise ShapeMismatch(f"encoder expects state dimension {enc.input_shape[0]}, got {snapshots.state_dim}")
    out = []
    for i in range(snapshots.n_params):
        z = _run_chunks(enc, norm.to_net(snapshots.states[i]))
        out.append(kdmd.LatentTrajectory(z, dt=snapshots.dt, t_start=float(snapshots.times[0])))
    return out


def extrapolate_latent(trajs: list[kdmd.LatentTrajectory], kernel: kdmd.KernelSpec, horizon: int,
                       rank_cap: int | None = None, mode: str = "recursive", parameters=None,
                       threads: int = 1, rank_shrink: float | None = RANK_SHRINK,
                       ) -> tuple[list[np.ndarray], list[kdmd.KoopmanModel]]:
    """Independent KDMD fit per trajectory, rolled out ``horizon`` steps from
    the last training state.

    With ``rank_shrink`` set, an unusable eigenbasis or a diverging rollout
    lowers the truncation rank by that factor and tries again.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    labels = list(parameters) if parameters is not None else list(range(len(trajs)))

    def one(i):
        traj, cap = trajs[i], rank_cap
        while True:
            try:
                model = kdmd.fit(traj, kernel, rank_cap=cap, shrink=rank_shrink)
                block = kdmd.rollout(model, traj.states[-1], horizon, mode=mode)
                return block, model
            except kdmd.Divergence as exc:
                if rank_shrink is None or model.rank == 1:
                    raise ExtrapolationError(labels[i], exc) from exc
                cap = max(1, int(model.rank * rank_shrink))
                log.warning("parameter %s: rollout diverged at rank %d, retrying with rank %d",
                            labels[i], model.rank, cap)
            except (ArithmeticError, ValueError) as exc:
                raise ExtrapolationError(labels[i], exc) from exc

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(one, range(len(trajs))))
    else:
        results = [one(i) for i in range(len(trajs))]
    return [r[0] for r in results], [r[1] for r in results]


def decode_latent(dec: Network, blocks: list[np.ndarray], norm: NormalizationStats) -> np.ndarray:
    return np.stack([norm.from_net(_run_chunks(dec, b)) if b.shape[0] else
                     np.zeros((0, dec.output_shape[0])) for b in blocks])


def augment(snapshots: SnapshotSet, decoded: np.ndarray) -> AugmentedDataset:
    """Append decoded extrapolations after the last training time."""
    decoded = np.asarray(decoded, dtype=np.float64)
    k, n_t0, n = snapshots.states.shape
    if decoded.ndim != 3 or decoded.shape[0] != k or decoded.shape[2] != n:
        raise GridMismatch(f"decoded block {decoded.shape} does not align with snapshots {snapshots.states.shape}")
    horizon = decoded.shape[1]
    times = np.concatenate([snapshots.times, snapshots.times[-1] + snapshots.dt * np.arange(1, horizon + 1)])
    states = np.concatenate([snapshots.states, decoded], axis=1)
    flags = np.zeros((k, n_t0 + horizon), dtype=bool)
    flags[:, n_t0:] = True
    return AugmentedDataset(snapshots.parameters.copy(), times, states, flags)


def joint_loss(enc: Network, dec: Network, ffnn: Network, x: np.ndarray, inp: np.ndarray,
               alpha: float, stop_gradient: bool = False):
    """L_cae + alpha * L_ffnn on one batch, with gradients for
    ``enc.parameters() + dec.parameters() + ffnn.parameters()``.

    The FFNN target is the encoder output, so unless ``stop_gradient`` is set
    the FFNN term also pulls on the encoder.
    """
    z, c_enc = enc.forward(x)
    y, c_dec = dec.forward(z)
    l_cae, dy = mse_loss(y, x)
    zf, c_ff = ffnn.forward(inp)
    l_ff, dzf = mse_loss(zf, z)
    g_dec, dz = dec.backward(c_dec, dy)
    if not stop_gradient:
        # d L_ffnn / dz is the negative of d L_ffnn / dzf
        dz = dz - alpha * dzf
    g_enc, _ = enc.backward(c_enc, dz, input_grad=False)
    g_ff, _ = ffnn.backward(c_ff, alpha * dzf, input_grad=False)
    return l_cae + alpha * l_ff, g_enc + g_dec + g_ff, {"cae": l_cae, "ffnn": l_ff}


def train_joint(aug: AugmentedDataset, enc: Network, dec: Network, ffnn: Network,
                ffnn_cfg: TrainConfig, joint_cfg: TrainConfig, norm: NormalizationStats,
                stride: int = 1, stop_gradient: bool = False, freeze_cae: bool = True,
                log_fn=None) -> dict[str, list[EpochRecord]]:
    """FFNN pretraining followed by joint CAE-FFNN training on the augmented data."""
    params, times, states = aug.flat(stride)
    x = norm.to_net(states)
    inp = norm.inputs(params, times)
    histories: dict[str, list[EpochRecord]] = {}

    if ffnn_cfg.epochs > 0:
        if not freeze_cae:
            raise NotImplementedError("FFNN pretraining always runs with the autoencoder frozen")
        z_target = _run_chunks(enc, x)

        def ffnn_step(idx):
            zf, cache = ffnn.forward(inp[idx])
            loss, dz = mse_loss(zf, z_target[idx])
            grads, _ = ffnn.backward(cache, dz, input_grad=False)
            return loss, grads, {"ffnn": loss}

        histories["ffnn"] = train(ffnn_step, ffnn.parameters(), x.shape[0], ffnn_cfg, log_fn)

    def joint_step(idx):
        return joint_loss(enc, dec, ffnn, x[idx], inp[idx], joint_cfg.alpha, stop_gradient)

    if joint_cfg.epochs > 0:
        histories["joint"] = train(joint_step, enc.parameters() + dec.parameters() + ffnn.parameters(),
                                   x.shape[0], joint_cfg, log_fn)
    return histories


def predict_online(bundle: ModelBundle, params, times) -> Prediction:
    """Decoder(FFNN(mu, t)) for each query, independent of the other queries."""
    times = np.asarray(times, dtype=np.float64).ravel()
    n_q = times.size
    if n_q == 0:
        empty = np.zeros(0, dtype=bool)
        return Prediction(np.zeros((0, bundle.state_dim)), empty, empty.copy())
    params = np.asarray(params, dtype=np.float64).reshape(n_q, -1)
    inside = bundle.norm.in_range(params, times)
    if not np.all(inside):
        warnings.warn(f"{int(np.sum(~inside))} queries lie outside the training ranges", stacklevel=2)
    steps = times / bundle.dt
    off_grid = np.abs(steps - np.round(steps)) > 1e-9 * np.maximum(1.0, np.abs(steps))
    z = bundle.ffnn.predict(bundle.norm.inputs(params, times))
    u = bundle.norm.from_net(bundle.decoder.predict(z))
    return Prediction(u, ~inside, off_grid)


def predict_grid(bundle: ModelBundle, params, times) -> np.ndarray:
    """Predictions on the tensor grid params x times, shape (k, n_t, N)."""
    params = np.atleast_2d(np.asarray(params, dtype=np.float64))
    if params.shape[1] != bundle.norm.param_min.size:
        params = params.T
    times = np.asarray(times, dtype=np.float64)
    k, n_t = params.shape[0], times.size
    q_params = np.repeat(params, n_t, axis=0)
    q_times = np.tile(times, k)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pred = predict_online(bundle, q_params, q_times)
    return pred.states.reshape(k, n_t, -1)


def evaluate(bundle: ModelBundle, reference: SnapshotSet, predicted: np.ndarray | None = None,
             skip_initial: bool = True) -> dict:
    """Per-field error indicators against reference trajectories.

    The initial sample (identically zero for FHN) is excluded when
    ``skip_initial`` is set, matching sums over t_1..t_NT.
    """
    if predicted is None:
        predicted = predict_grid(bundle, reference.parameters, reference.times)
    predicted = np.asarray(predicted)
    if predicted.shape != reference.states.shape:
        raise GridMismatch(f"prediction {predicted.shape} vs reference {reference.states.shape}")
    start = 1 if skip_initial else 0
    times = reference.times[start:]
    ref, pred = reference.states[:, start:], predicted[:, start:]
    train_mask = times <= bundle.t0 + 1e-9 * max(1.0, bundle.t0)
    report = {"times": times, "train_mask": train_mask, "fields": {}}
    metrics: dict[str, Metrics] = field_metrics(ref, pred, reference.field_slices())
    for name, m in metrics.items():
        report["fields"][name] = {
            "eps_max": m.eps_max,
            "eps_mean": m.eps_mean,
            "eps_mu": m.eps_mu,
            "eps_mean_train": m.window_mean(train_mask),
            "eps_mean_extrap": m.window_mean(~train_mask),
            "eps_max_train": m.window_max(train_mask),
            "eps_max_extrap": m.window_max(~train_mask),
        }
    report["metrics"] = metrics
    report["predicted"] = predicted
    return report


def run_offline(train_set: SnapshotSet, t_end: float, cfg: PipelineConfig, log_fn=None) -> OfflineResult:
    """The whole offline stage on snapshots restricted to [0, T0]."""
    t0 = float(train_set.times[-1])
    horizon = steps_between(t0, t_end, train_set.dt)
    norm = NormalizationStats.from_data(train_set, t_end, zscore=cfg.zscore)
    enc, dec, ffnn = build_networks(train_set.state_dim, train_set.parameters.shape[1], cfg)
    histories: dict[str, list[EpochRecord]] = {}

    log.info("pretraining autoencoder: %d snapshots", train_set.n_params * train_set.times.size)
    histories["cae"] = pretrain_cae(train_set, enc, dec, cfg.cae, norm, stride=cfg.train_stride, log_fn=log_fn)
    latent = encode_dataset(enc, train_set, norm)
    log.info("extrapolating latent dynamics: %d parameters, %d steps", len(latent), horizon)
    blocks, models = extrapolate_latent(latent, cfg.kernel, horizon, cfg.rank_cap, cfg.rollout_mode,
                                        parameters=train_set.parameters[:, 0], threads=cfg.threads,
                                        rank_shrink=cfg.rank_shrink)
    decoded = decode_latent(dec, blocks, norm)
    aug = augment(train_set, decoded)
    log.info("training on augmented data: %d samples", aug.n_samples)
    histories.update(train_joint(aug, enc, dec, ffnn, cfg.ffnn, cfg.joint, norm, stride=cfg.train_stride,
                                 stop_gradient=cfg.stop_gradient, freeze_cae=cfg.freeze_cae_in_ffnn_pretrain,
                                 log_fn=log_fn))
    bundle = ModelBundle(enc, dec, ffnn, norm, dt=train_set.dt, t0=t0, t_end=float(t_end),
                         train_params=train_set.parameters.copy(), field_names=train_set.field_names,
                         field_sizes=train_set.field_sizes)
    return OfflineResult(bundle, histories, models, aug, latent)
