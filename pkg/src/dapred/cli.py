"""Command-line entry point: ``dapred <command> [options]``.

Commands
    init      write a full default config file
    simulate  run the FOM for training and test parameters
    train     offline stage; writes a checkpoint and per-phase loss CSVs
    predict   online stage on a query tensor (rows ``mu..., t``)
    evaluate  error indicators against a reference dataset, plus plot data
    verify    run the built-in oracle suite

Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig, desk_preset, dump_config, load_config, paper_preset
from .fom import assemble_snapshots
from .metrics import GridMismatch as MetricGridMismatch
from .pipeline import GridMismatch, evaluate, predict_online, run_offline
from .verify import FAULTS, run_oracles

log = logging.getLogger("dapred")

CONFIG_NAME = "config.json"
CHECKPOINT_NAME = "checkpoint.dapc"
TRAIN_DIR = "train"
TEST_DIR = "test"


class UsageError(ValueError):
    """Bad command-line input (exit code 1)."""


VALIDATION_ERRORS = (UsageError, ConfigError, io.ManifestError, io.FormatError, FileNotFoundError,
                     GridMismatch, MetricGridMismatch)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _resolve_config(args, load: bool = True) -> RunConfig:
    base = paper_preset() if args.paper_scale else desk_preset()
    cfg = load_config(args.config, base) if load and getattr(args, "config", None) else base
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    if getattr(args, "threads", None) is not None:
        over["threads"] = args.threads
    if getattr(args, "out", None) is not None:
        over["output_dir"] = str(args.out)
    try:
        return replace(cfg, **over) if over else cfg
    except ValueError as exc:
        raise ConfigError("<command line>", str(exc)) from None


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands ----------------------------------------------------------------

def cmd_init(args) -> int:
    # here --config names the file to write
    cfg = _resolve_config(args, load=False)
    target = Path(args.config) if args.config else _out_dir(cfg) / CONFIG_NAME
    if target.exists() and not args.force:
        raise UsageError(f"{target} exists; pass --force to overwrite")
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(dump_config(cfg))
    print(f"wrote {target}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    fom = cfg.fom
    for name, params in ((TRAIN_DIR, fom.epsilon_train), (TEST_DIR, fom.epsilon_test)):
        if not params:
            continue
        t0 = time.perf_counter()
        snaps = assemble_snapshots(fom, params, threads=cfg.threads)
        path = io.write_dataset(snaps, out / name, extra={"t0": fom.t0, "grid_points": fom.grid_points,
                                                          "length": fom.length})
        print(f"{name}: {snaps.n_params} trajectories x {snaps.times.size} times -> {path.parent} "
              f"({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = _out_dir(cfg)
    data_dir = Path(args.data) if args.data else out / TRAIN_DIR
    if not (data_dir / io.MANIFEST_NAME).exists():
        raise FileNotFoundError(f"no training dataset at {data_dir}; run 'dapred simulate' first or pass --data")
    snaps = io.read_dataset(data_dir)
    train_set = snaps.until(cfg.fom.t0)
    pcfg = cfg.pipeline()
    t_start = time.perf_counter()
    last = [t_start]

    def log_fn(rec):
        now = time.perf_counter()
        if now - last[0] > 30:
            last[0] = now
            log.info("epoch %d loss %.4e lr %.2e", rec.epoch, rec.loss, rec.lr)

    result = run_offline(train_set, cfg.fom.t_end, pcfg, log_fn=log_fn)
    for phase, hist in result.histories.items():
        io.write_loss_csv(out / f"loss_{phase}.csv", hist)
    # the output location is not part of the model, and leaving it out keeps
    # checkpoints of identical runs byte-identical wherever they are written
    stored = json.loads(dump_config(cfg))
    stored.pop("output_dir")
    io.save_checkpoint(out / CHECKPOINT_NAME, result.bundle, result.koopman,
                       extra={"seed": cfg.seed, "config": stored})
    rows = [(float(p[0]), m.rank, m.fit_residual, float(np.max(np.abs(m.eigenvalues))))
            for p, m in zip(train_set.parameters, result.koopman)]
    io.write_rows_csv(out / "kdmd_summary.csv", ["parameter", "rank", "fit_residual", "max_abs_eigenvalue"], rows)
    print(f"trained in {time.perf_counter() - t_start:.1f} s -> {out / CHECKPOINT_NAME}")
    return 0


def _checkpoint_path(args, cfg) -> Path:
    path = Path(args.checkpoint) if args.checkpoint else Path(cfg.output_dir) / CHECKPOINT_NAME
    if not path.exists():
        raise FileNotFoundError(f"no checkpoint at {path}; run 'dapred train' first or pass --checkpoint")
    return path


def cmd_predict(args) -> int:
    cfg = _resolve_config(args)
    ckpt = _checkpoint_path(args, cfg)
    bundle, _, _ = io.load_checkpoint(ckpt)
    queries = io.read_tensor(args.queries)
    n_in = bundle.norm.param_min.size + 1
    if queries.size == 0:
        queries = queries.reshape(0, n_in)
    if queries.ndim != 2 or queries.shape[1] != n_in:
        raise UsageError(f"queries must have shape (Q, {n_in}) with columns (parameters..., t), got {queries.shape}")
    out = _out_dir(cfg)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        pred = predict_online(bundle, queries[:, :-1], queries[:, -1])
    wall = time.perf_counter() - t0
    io.write_tensor(out / "predictions.dapt", pred.states)
    report = {
        "queries": int(queries.shape[0]),
        "wall_clock_seconds": wall,
        "out_of_range": np.flatnonzero(pred.out_of_range).tolist(),
        "off_grid": np.flatnonzero(pred.off_grid).tolist(),
        "training_ranges": {"parameters": [bundle.norm.param_min.tolist(), bundle.norm.param_max.tolist()],
                            "time": [bundle.norm.t_min, bundle.norm.t_max]},
    }
    (out / "predictions_report.json").write_text(json.dumps(report, indent=2) + "\n")
    print(f"{queries.shape[0]} queries in {wall:.4f} s; {len(report['out_of_range'])} out of range")
    return 0


def write_evaluation(out: Path, report: dict, reference) -> None:
    params = reference.parameters[:, 0]
    rows = []
    for name, d in report["fields"].items():
        for key in ("eps_max", "eps_mean", "eps_mean_train", "eps_mean_extrap", "eps_max_train", "eps_max_extrap"):
            rows.append((name, key, "", d[key]))
        for p, val in zip(params, d["eps_mu"]):
            rows.append((name, "eps_mu", float(p), float(val)))
    io.write_rows_csv(out / "metrics.csv", ["field", "quantity", "parameter", "value"], rows)

    pred = report["predicted"]
    slices = reference.field_slices()
    probe = {name: sl.start for name, sl in slices.items()}  # x = 0 node of each field
    names = list(slices)
    ts_rows, pp_rows = [], []
    for i, p in enumerate(params):
        for j, t in enumerate(reference.times):
            ref_vals = [reference.states[i, j, probe[n]] for n in names]
            pred_vals = [pred[i, j, probe[n]] for n in names]
            window = "train" if t <= report["t0"] + 1e-9 else "extrapolation"
            ts_rows.append([float(p), float(t), window] + [v for pair in zip(ref_vals, pred_vals) for v in pair])
            pp_rows.append([float(p), float(t)] + ref_vals + pred_vals)
    ts_head = ["parameter", "t", "window"] + [f"{n}_{k}" for n in names for k in ("ref", "pred")]
    io.write_rows_csv(out / "probe_timeseries.csv", ts_head, ts_rows)
    pp_head = ["parameter", "t"] + [f"{n}_ref" for n in names] + [f"{n}_pred" for n in names]
    io.write_rows_csv(out / "phase_plane.csv", pp_head, pp_rows)


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    bundle, _, _ = io.load_checkpoint(_checkpoint_path(args, cfg))
    data_dir = Path(args.data) if args.data else Path(cfg.output_dir) / TEST_DIR
    if not (data_dir / io.MANIFEST_NAME).exists():
        raise FileNotFoundError(f"no reference dataset at {data_dir}; pass --data")
    reference = io.read_dataset(data_dir)
    if reference.state_dim != bundle.state_dim:
        raise GridMismatch(f"reference state dimension {reference.state_dim} vs model {bundle.state_dim}")
    if abs(reference.dt - bundle.dt) > 1e-12:
        raise GridMismatch(f"reference dt {reference.dt} vs model dt {bundle.dt}")
    report = evaluate(bundle, reference)
    report["t0"] = bundle.t0
    out = _out_dir(cfg)
    write_evaluation(out, report, reference)
    for name, d in report["fields"].items():
        print(f"{name}: eps_max {d['eps_max']:.3e}  eps_mean {d['eps_mean']:.3e}  "
              f"[0,T0] {d['eps_mean_train']:.3e}  (T0,T] {d['eps_mean_extrap']:.3e}")
    return 0


def cmd_verify(args) -> int:
    faults = tuple(args.inject or ())
    t0 = time.perf_counter()
    results = run_oracles(seed=args.seed or 0, faults=faults)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:24s} residual {r.residual:.3e} "
              f"(tol {r.tolerance:.0e}, {r.seconds:.2f} s)")
    print(f"total {time.perf_counter() - t0:.1f} s")
    return 0 if all(r.passed for r in results) else 2


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dapred", description="Parametric surrogate with latent-space extrapolation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, out=True):
        p.add_argument("--config", help="JSON config file (defaults to the chosen preset)")
        if out:
            p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--threads", type=int)
        scale = p.add_mutually_exclusive_group()
        scale.add_argument("--desk-scale", action="store_true", help="desk preset (default)")
        scale.add_argument("--paper-scale", action="store_true", help="full-scale preset")

    p = sub.add_parser("init", help="write a default config")
    common(p)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("simulate", help="generate training and test datasets")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="offline stage")
    common(p)
    p.add_argument("--data", help="training dataset directory (default OUT/train)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="online stage for a query tensor")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default OUT/checkpoint.dapc)")
    p.add_argument("--queries", required=True, help="tensor file of shape (Q, n_params + 1)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics against a reference dataset")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint file (default OUT/checkpoint.dapc)")
    p.add_argument("--data", help="reference dataset directory (default OUT/test)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify", help="run the oracle suite")
    common(p, out=False)
    p.add_argument("--inject", action="append", choices=FAULTS, help="inject a deliberate bug (harness check)")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "threads", None) is not None and args.threads < 1:
            raise UsageError("--threads must be >= 1")
        return args.func(args)
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
