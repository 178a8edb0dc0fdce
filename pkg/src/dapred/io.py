"""On-disk formats: tensor files, dataset manifests, checkpoints and CSV logs.

TensorFile layout (all little-endian)::

    b"DAPT" | version u16 | dtype u8 (1 = f64) | rank u8 | dims u64 * rank | f64 payload (row-major)

A checkpoint is one file: ``b"DAPC"``, a u16 version, a u64 header length,
a UTF-8 JSON header (sorted keys) and then the TensorFile blobs named in the
header, back to back.  Everything is written deterministically so identical
models give identical bytes.
"""
from __future__ import annotations

import csv
import json
import struct
from pathlib import Path

import numpy as np

from . import kdmd
from .fom import SnapshotSet
from .nn import EpochRecord, Network
from .pipeline import ModelBundle, NormalizationStats

__all__ = [
    "FormatError",
    "ManifestError",
    "write_tensor",
    "read_tensor",
    "tensor_bytes",
    "tensor_from_bytes",
    "write_dataset",
    "read_dataset",
    "read_manifest",
    "save_checkpoint",
    "load_checkpoint",
    "write_loss_csv",
    "write_rows_csv",
]

TENSOR_MAGIC = b"DAPT"
TENSOR_VERSION = 1
DTYPE_F64 = 1
CHECKPOINT_MAGIC = b"DAPC"
CHECKPOINT_VERSION = 1
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "dapred-dataset"
MANIFEST_VERSION = 1

_HEAD = struct.Struct("<4sHBB")


class FormatError(ValueError):
    """A file does not follow the expected binary layout."""


class ManifestError(ValueError):
    def __init__(self, field: str, problem: str):
        self.field = field
        super().__init__(f"manifest field '{field}': {problem}")


# -- tensors -----------------------------------------------------------------

def tensor_bytes(array) -> bytes:
    a = np.asarray(array)
    if a.dtype.kind not in "fiub":
        raise TypeError(f"cannot store dtype {a.dtype} as f64")
    a = np.asarray(a, dtype="<f8")
    if a.ndim > 255:
        raise ValueError("rank too large")
    head = _HEAD.pack(TENSOR_MAGIC, TENSOR_VERSION, DTYPE_F64, a.ndim)
    dims = struct.pack(f"<{a.ndim}Q", *a.shape)
    return head + dims + a.tobytes(order="C")


def tensor_from_bytes(blob: bytes, what: str = "tensor") -> tuple[np.ndarray, int]:
    """Parse one tensor at the start of ``blob``; returns (array, bytes used)."""
    if len(blob) < _HEAD.size:
        raise FormatError(f"{what}: truncated header")
    magic, version, dtype, rank = _HEAD.unpack_from(blob, 0)
    if magic != TENSOR_MAGIC:
        raise FormatError(f"{what}: bad magic {magic!r}")
    if version != TENSOR_VERSION:
        raise FormatError(f"{what}: unsupported version {version}")
    if dtype != DTYPE_F64:
        raise FormatError(f"{what}: unsupported dtype code {dtype}")
    off = _HEAD.size
    if len(blob) < off + 8 * rank:
        raise FormatError(f"{what}: truncated dimensions")
    dims = struct.unpack_from(f"<{rank}Q", blob, off)
    off += 8 * rank
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = off + 8 * count
    if len(blob) < end:
        raise FormatError(f"{what}: payload has {len(blob) - off} bytes, expected {8 * count}")
    arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off).astype(np.float64).reshape(dims)
    return arr, end


def write_tensor(path, array) -> None:
    Path(path).write_bytes(tensor_bytes(array))


def read_tensor(path) -> np.ndarray:
    blob = Path(path).read_bytes()
    arr, used = tensor_from_bytes(blob, str(path))
    if used != len(blob):
        raise FormatError(f"{path}: {len(blob) - used} trailing bytes after payload")
    return arr


# -- datasets ----------------------------------------------------------------

def write_dataset(snapshots: SnapshotSet, out_dir, extra: dict | None = None) -> Path:
    """One tensor file per parameter plus ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i in range(snapshots.n_params):
        name = f"traj_{i:04d}.dapt"
        write_tensor(out / name, snapshots.states[i])
        files.append(name)
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "parameters": snapshots.parameters.tolist(),
        "grid": {"t_start": float(snapshots.times[0]), "dt": snapshots.dt, "n_times": int(snapshots.times.size)},
        "fields": [{"name": n, "size": int(s)} for n, s in zip(snapshots.field_names, snapshots.field_sizes)],
        "files": files,
    }
    if extra:
        manifest["extra"] = extra
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _require(d: dict, key: str, prefix: str = ""):
    if not isinstance(d, dict) or key not in d:
        raise ManifestError(prefix + key, "missing")
    return d[key]


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    if not path.exists():
        raise FileNotFoundError(f"no dataset manifest at {path}")
    try:
        m = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError("<document>", f"not valid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(m, dict):
        raise ManifestError("<document>", "top level must be an object")
    if _require(m, "format") != MANIFEST_FORMAT:
        raise ManifestError("format", f"expected {MANIFEST_FORMAT!r}")
    if _require(m, "version") != MANIFEST_VERSION:
        raise ManifestError("version", f"unsupported version {m['version']!r}")
    params = _require(m, "parameters")
    try:
        p = np.asarray(params, dtype=np.float64)
    except (TypeError, ValueError):
        raise ManifestError("parameters", "must be a list of numeric rows") from None
    if p.ndim != 2 or p.shape[0] == 0 or not np.all(np.isfinite(p)):
        raise ManifestError("parameters", "must be a non-empty list of equal-length finite rows")
    grid = _require(m, "grid")
    for key, kind in (("t_start", (int, float)), ("dt", (int, float)), ("n_times", int)):
        val = _require(grid, key, "grid.")
        if isinstance(val, bool) or not isinstance(val, kind):
            raise ManifestError(f"grid.{key}", f"must be {'an integer' if kind is int else 'a number'}")
    if not grid["dt"] > 0:
        raise ManifestError("grid.dt", "must be positive")
    if grid["n_times"] < 1:
        raise ManifestError("grid.n_times", "must be >= 1")
    fields = _require(m, "fields")
    if not isinstance(fields, list) or not fields:
        raise ManifestError("fields", "must be a non-empty list")
    for i, f in enumerate(fields):
        if not isinstance(_require(f, "name", f"fields[{i}]."), str):
            raise ManifestError(f"fields[{i}].name", "must be a string")
        size = _require(f, "size", f"fields[{i}].")
        if isinstance(size, bool) or not isinstance(size, int) or size < 1:
            raise ManifestError(f"fields[{i}].size", "must be a positive integer")
    files = _require(m, "files")
    if not isinstance(files, list) or len(files) != p.shape[0] or not all(isinstance(f, str) for f in files):
        raise ManifestError("files", "must list one file name per parameter row")
    return m


def read_dataset(path) -> SnapshotSet:
    path = Path(path)
    root = path if path.is_dir() else path.parent
    m = read_manifest(path)
    n_t = m["grid"]["n_times"]
    n = sum(f["size"] for f in m["fields"])
    states = []
    for i, name in enumerate(m["files"]):
        arr = read_tensor(root / name)
        if arr.shape != (n_t, n):
            raise ManifestError(f"files[{i}]", f"{name} has shape {arr.shape}, expected {(n_t, n)}")
        states.append(arr)
    times = m["grid"]["t_start"] + m["grid"]["dt"] * np.arange(n_t)
    return SnapshotSet(parameters=np.asarray(m["parameters"], dtype=np.float64), times=times,
                       states=np.stack(states), field_names=tuple(f["name"] for f in m["fields"]),
                       field_sizes=tuple(f["size"] for f in m["fields"]))


# -- checkpoints -------------------------------------------------------------

def _net_entries(net: Network, prefix: str, tensors: dict) -> dict:
    for name, p in zip(net.parameter_names(), net.parameters()):
        tensors[f"{prefix}/{name}"] = p
    return {"specs": net.specs(), "input_shape": list(net.input_shape), "seed": net.seed, "name": net.name}


def _split_complex(name: str, a: np.ndarray, tensors: dict) -> None:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        tensors[name + ".re"] = a.real
        tensors[name + ".im"] = a.imag
    else:
        tensors[name] = a


def save_checkpoint(path, bundle: ModelBundle, koopman: list[kdmd.KoopmanModel] | None = None,
                    extra: dict | None = None) -> None:
    tensors: dict[str, np.ndarray] = {}
    header = {
        "networks": {key: _net_entries(getattr(bundle, key), key, tensors)
                     for key in ("encoder", "decoder", "ffnn")},
        "grid": {"dt": bundle.dt, "t0": bundle.t0, "t_end": bundle.t_end},
        "fields": {"names": list(bundle.field_names), "sizes": [int(s) for s in bundle.field_sizes]},
        "koopman": [],
        "extra": extra or {},
    }
    for key, arr in bundle.norm.arrays().items():
        tensors[f"norm/{key}"] = arr
    tensors["train_params"] = bundle.train_params
    for i, model in enumerate(koopman or []):
        k = model.kernel
        header["koopman"].append({"kernel": {"kind": k.kind, "gamma": k.gamma, "degree": k.degree,
                                             "offset": k.offset},
                                  "scale": model.scale, "fit_residual": model.fit_residual,
                                  "ls_residual": model.ls_residual})
        for key, arr in model.arrays().items():
            _split_complex(f"koopman/{i}/{key}", arr, tensors)
    blobs, index, offset = [], [], 0
    for name in sorted(tensors):
        blob = tensor_bytes(tensors[name])
        index.append({"name": name, "offset": offset, "length": len(blob)})
        blobs.append(blob)
        offset += len(blob)
    header["tensors"] = index
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<HQ", CHECKPOINT_VERSION, len(head)))
        fh.write(head)
        for blob in blobs:
            fh.write(blob)


def _read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint (bad magic)")
    if len(data) < 14:
        raise FormatError(f"{path}: truncated header")
    version, n_head = struct.unpack_from("<HQ", data, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    start = 14 + n_head
    try:
        header = json.loads(data[14:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError(f"{path}: corrupt header") from None
    tensors = {}
    for entry in header["tensors"]:
        lo = start + entry["offset"]
        blob = data[lo: lo + entry["length"]]
        arr, used = tensor_from_bytes(blob, entry["name"])
        if used != entry["length"]:
            raise FormatError(f"{path}: tensor {entry['name']} length mismatch")
        tensors[entry["name"]] = arr
    return header, tensors


def _load_net(info: dict, prefix: str, tensors: dict) -> Network:
    net = Network.from_specs(info["specs"], info["input_shape"], seed=info["seed"], name=info["name"])
    state = []
    for name in net.parameter_names():
        key = f"{prefix}/{name}"
        if key not in tensors:
            raise FormatError(f"checkpoint lacks tensor {key}")
        state.append(tensors[key])
    net.set_state(state)
    return net


def load_checkpoint(path) -> tuple[ModelBundle, list[kdmd.KoopmanModel], dict]:
    """Returns the bundle, any stored Koopman models and the ``extra`` metadata."""
    try:
        return _load_checkpoint(path)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: checkpoint header lacks or mistypes {exc}") from None


def _load_checkpoint(path):
    header, tensors = _read_container(path)
    nets = {key: _load_net(info, key, tensors) for key, info in header["networks"].items()}
    norm = NormalizationStats.from_arrays({k.split("/", 1)[1]: v for k, v in tensors.items()
                                           if k.startswith("norm/")})
    grid = header["grid"]
    bundle = ModelBundle(nets["encoder"], nets["decoder"], nets["ffnn"], norm, dt=grid["dt"], t0=grid["t0"],
                         t_end=grid["t_end"], train_params=tensors["train_params"],
                         field_names=tuple(header["fields"]["names"]),
                         field_sizes=tuple(header["fields"]["sizes"]))
    models = []
    for i, info in enumerate(header["koopman"]):
        def get(key):
            base = f"koopman/{i}/{key}"
            if base in tensors:
                return tensors[base]
            out = np.empty(tensors[base + ".re"].shape, dtype=np.complex128)
            # assign the parts directly: re + 1j * im would turn -0.0 into 0.0
            out.real, out.imag = tensors[base + ".re"], tensors[base + ".im"]
            return out
        model = kdmd.KoopmanModel(
            z0=get("z0"), kernel=kdmd.KernelSpec(**info["kernel"]), l_r=get("l_r"), sigma_r=get("sigma_r"),
            w_hat=get("w_hat"), xi=get("xi"), eigenvalues=get("eigenvalues"), modes=get("modes"),
            scale=info["scale"], fit_residual=info["fit_residual"], ls_residual=info["ls_residual"])
        models.append(model)
    return bundle, models, header.get("extra", {})


# -- CSV ---------------------------------------------------------------------

def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def write_rows_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])


def write_loss_csv(path, history: list[EpochRecord]) -> None:
    """One row per epoch actually run."""
    parts = sorted({k for rec in history for k in rec.components})
    rows = ([rec.epoch, rec.loss, rec.best, rec.lr] + [rec.components.get(k, float("nan")) for k in parts]
            for rec in history)
    write_rows_csv(path, ["epoch", "loss", "best", "lr"] + [f"loss_{k}" for k in parts], rows)
