"""Run configuration: one JSON document with a fixed key schema.

Top-level sections are ``fom``, ``network``, ``kernel``, ``kdmd`` and
``training`` (with ``cae``, ``ffnn`` and ``joint`` phase blocks), plus
``seed``, ``threads`` and ``output_dir``.  Missing keys take the preset's
value; unknown keys and ill-typed values raise :class:`ConfigError` naming
the offending key path.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .architectures import ENCODER_DENSE, ENCODER_FILTERS, FFNN_HIDDEN
from .fom import FhnConfig
from .kdmd import KernelSpec
from .nn import TrainConfig
from .pipeline import PipelineConfig

__all__ = ["ConfigError", "NetworkConfig", "KdmdConfig", "TrainingConfig", "RunConfig",
           "desk_preset", "paper_preset", "config_from_dict", "load_config", "dump_config"]


class ConfigError(ValueError):
    def __init__(self, key: str, problem: str):
        self.key = key
        super().__init__(f"config key '{key}': {problem}")


@dataclass(frozen=True)
class NetworkConfig:
    latent_dim: int = 2
    encoder_filters: tuple[int, ...] = ENCODER_FILTERS
    encoder_dense: tuple[int, ...] = ENCODER_DENSE
    ffnn_hidden: tuple[int, ...] = FFNN_HIDDEN


@dataclass(frozen=True)
class KdmdConfig:
    rank_cap: int | None = None
    rollout_mode: str = "recursive"
    # rank reduction factor after an unusable fit; null makes failures fatal
    rank_shrink: float | None = 0.75


def _phase(epochs, lr, min_lr, patience, alpha=0.1, batch_size=256) -> TrainConfig:
    return TrainConfig(epochs=epochs, batch_size=batch_size, initial_lr=lr, min_lr=min_lr, lr_patience=patience,
                       alpha=alpha)


@dataclass(frozen=True)
class TrainingConfig:
    cae: TrainConfig = _phase(1000, 1e-3, 1e-3 / 16, 20)
    ffnn: TrainConfig = _phase(10000, 1e-3, 1e-3 / 16, 200)
    joint: TrainConfig = _phase(20000, 2e-3, 5e-4, 200)
    train_stride: int = 1
    stop_gradient: bool = False
    zscore: bool = False


@dataclass(frozen=True)
class RunConfig:
    fom: FhnConfig = FhnConfig()
    network: NetworkConfig = NetworkConfig()
    kernel: KernelSpec = KernelSpec(kind="gaussian", gamma=100.0)
    kdmd: KdmdConfig = KdmdConfig()
    training: TrainingConfig = TrainingConfig()
    seed: int = 0
    threads: int = 1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.threads < 1:
            raise ConfigError("threads", "must be >= 1")
        if self.fom.state_dim % 2 ** len(self.network.encoder_filters):
            raise ConfigError("fom.grid_points",
                              f"2 * grid_points must be divisible by 2**{len(self.network.encoder_filters)}")
        if len(self.fom.epsilon_train) < 2:
            raise ConfigError("fom.epsilon_train", "need at least two training parameters")

    def pipeline(self) -> PipelineConfig:
        """Pipeline settings with per-phase shuffling seeds derived from ``seed``."""
        t = self.training
        return PipelineConfig(
            latent_dim=self.network.latent_dim,
            encoder_filters=self.network.encoder_filters,
            encoder_dense=self.network.encoder_dense,
            ffnn_hidden=self.network.ffnn_hidden,
            kernel=self.kernel,
            rank_cap=self.kdmd.rank_cap,
            rollout_mode=self.kdmd.rollout_mode,
            rank_shrink=self.kdmd.rank_shrink,
            cae=replace(t.cae, seed=self.seed + 10),
            ffnn=replace(t.ffnn, seed=self.seed + 11),
            joint=replace(t.joint, seed=self.seed + 12),
            stop_gradient=t.stop_gradient,
            zscore=t.zscore,
            train_stride=t.train_stride,
            seed=self.seed,
            threads=self.threads,
        )


# Desk preset: 128 nodes per field, 7 training parameters.  Epoch counts and
# the time stride are cut so that one full offline run finishes in roughly
# ten minutes on one CPU core.  With so few epochs, smaller batches (more
# updates), larger learning rates and per-field z-scoring (w is an order of
# magnitude smaller than v) train markedly better.
# KDMD extrapolates spectrally: recursive re-evaluation of the narrow Gaussian
# kernel drifts off the latent trajectory within a few steps and collapses to
# a fixed point, while propagating the eigenfunctions keeps the oscillation.
DESK_EPOCHS = (120, 1500, 60)
DESK_STRIDE = 4


def desk_preset() -> RunConfig:
    return RunConfig(
        fom=FhnConfig(grid_points=128),
        kdmd=KdmdConfig(rollout_mode="spectral"),
        training=TrainingConfig(
            cae=_phase(DESK_EPOCHS[0], 3e-3, 1e-4, 10, batch_size=64),
            ffnn=_phase(DESK_EPOCHS[1], 3e-3, 1e-4, 50, batch_size=64),
            joint=_phase(DESK_EPOCHS[2], 2e-3, 5e-4, 10, batch_size=64),
            train_stride=DESK_STRIDE,
            zscore=True,
        ),
        output_dir="runs/desk",
    )


def paper_preset() -> RunConfig:
    return RunConfig(
        fom=FhnConfig(grid_points=512, epsilon_train=tuple(np.linspace(0.01, 0.04, 31).tolist())),
        training=TrainingConfig(),
        output_dir="runs/paper",
    )


# -- (de)serialisation -------------------------------------------------------

# fields that are derived from ``seed`` rather than configured per phase
_HIDDEN = {TrainConfig: {"seed"}}


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        skip = _HIDDEN.get(type(obj), set())
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)
                if f.init and f.name not in skip}
    if isinstance(obj, (tuple, list)):
        return [_to_plain(x) for x in obj]
    return obj


def _coerce(value, tp, key: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = typing.get_args(tp)
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if origin is tuple:
        if not isinstance(value, list):
            raise ConfigError(key, "expected a list")
        (item, *_) = typing.get_args(tp)
        return tuple(_coerce(v, item, f"{key}[{i}]") for i, v in enumerate(value))
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, key)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(key, "expected true or false")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(key, "expected an integer")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(key, "expected a number")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(key, "expected a string")
        return value
    raise ConfigError(key, f"unsupported type {tp}")


def _build(cls, data, prefix: str = "", base=None):
    if not isinstance(data, dict):
        raise ConfigError(prefix or "<document>", "expected an object")
    base = base if base is not None else cls()
    hints = typing.get_type_hints(cls)
    allowed = {f.name for f in dataclasses.fields(cls) if f.init} - _HIDDEN.get(cls, set())
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{prefix}{'.' if prefix else ''}{unknown[0]}", "unknown key")
    kw = {}
    for name in allowed:
        key = f"{prefix}{'.' if prefix else ''}{name}"
        if name not in data:
            continue
        tp = hints[name]
        if dataclasses.is_dataclass(tp):
            kw[name] = _build(tp, data[name], key, getattr(base, name))
        else:
            kw[name] = _coerce(data[name], tp, key)
    try:
        return replace(base, **kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(prefix or "<document>", str(exc)) from None


def config_from_dict(data: dict, base: RunConfig | None = None) -> RunConfig:
    return _build(RunConfig, data, "", base if base is not None else desk_preset())


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    """Read a JSON config on top of ``base`` (the desk preset by default)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<document>", f"invalid JSON ({exc.msg} at line {exc.lineno})") from None
    return config_from_dict(data, base)


def dump_config(cfg: RunConfig) -> str:
    return json.dumps(_to_plain(cfg), indent=2, sort_keys=True) + "\n"
