"""Binary containers for datasets and checkpoints, plus CSV/JSON report output.

Container layout::

    8 bytes   little-endian uint64 header length H
    H bytes   UTF-8 JSON header (sorted keys)
    payload   little-endian float64 values, tensors in header order

Complex tensors are stored as interleaved (real, imag) pairs and marked
``"dtype": "c16"``. Every value is float64, so integer tensors such as
sparse code indices must stay below 2**53.
"""
from __future__ import annotations

import dataclasses
import json
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Optional

import numpy as np

from .architectures import ConvSAE, DenseSAE, EncoderConfig, FnoSAE, LiftingPair
from .errors import FormatError
from .genmodel import DATASET_FORMAT_VERSION, Dataset, spec_from_dict
from .numerics import half_length

CHECKPOINT_FORMAT_VERSION = 1
_LEN = struct.Struct("<Q")
CSV_HEADER = "epoch,dict_err,recon_mse,d_orth,l_orth,wall_time_s"


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_container(path, header: dict, tensors: Dict[str, np.ndarray]):
    entries = []
    chunks = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if np.iscomplexobj(arr):
            dtype = "c16"
            flat = np.ascontiguousarray(arr, dtype="<c16").view("<f8").ravel()
        else:
            dtype = "f8"
            flat = np.ascontiguousarray(arr, dtype="<f8").ravel()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        chunks.append(flat.tobytes())
    head = dict(header)
    head["tensors"] = entries
    blob = _dumps(head).encode("utf-8")
    path = Path(path)
    try:
        with open(path, "wb") as fh:
            fh.write(_LEN.pack(len(blob)))
            fh.write(blob)
            for chunk in chunks:
                fh.write(chunk)
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_container(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if len(raw) < _LEN.size:
        raise FormatError(f"{path}: truncated header")
    (n,) = _LEN.unpack_from(raw)
    if len(raw) < _LEN.size + n:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[_LEN.size:_LEN.size + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict) or "tensors" not in header:
        raise FormatError(f"{path}: header lacks a tensor table")
    offset = _LEN.size + n
    tensors = {}
    for entry in header["tensors"]:
        try:
            name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        except (KeyError, TypeError) as exc:
            raise FormatError(f"{path}: malformed tensor entry {entry!r}") from exc
        if dtype not in ("f8", "c16"):
            raise FormatError(f"{path}: tensor {name!r} has unsupported dtype {dtype!r}")
        count = math.prod(shape) * (2 if dtype == "c16" else 1)
        end = offset + 8 * count
        if end > len(raw):
            raise FormatError(f"{path}: truncated payload in tensor {name!r}")
        flat = np.frombuffer(raw, dtype="<f8", count=count, offset=offset)
        arr = flat.view("<c16") if dtype == "c16" else flat
        tensors[name] = arr.reshape(shape).astype(np.complex128 if dtype == "c16" else np.float64)
        offset = end
    if offset != len(raw):
        raise FormatError(f"{path}: {len(raw) - offset} unexpected trailing bytes after payload")
    return header, tensors


def _check_version(path, header, kind, version):
    if header.get("kind") != kind:
        raise FormatError(f"{path}: field 'kind' is {header.get('kind')!r}, expected {kind!r}")
    if header.get("format_version") != version:
        raise FormatError(
            f"{path}: field 'format_version' is {header.get('format_version')!r}, expected {version}"
        )


def _require(path, tensors, name, shape=None):
    if name not in tensors:
        raise FormatError(f"{path}: missing tensor {name!r}")
    arr = tensors[name]
    if shape is not None and arr.shape != tuple(shape):
        raise FormatError(f"{path}: tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


# ---------------------------------------------------------------- datasets

def save_dataset(data: Dataset, path):
    codes = np.asarray(data.codes)
    nz = np.nonzero(codes)
    triples = np.column_stack([np.asarray(i, dtype=np.float64) for i in nz] + [codes[nz]])
    header = {
        "kind": "dataset",
        "format_version": data.format_version,
        "model_spec": data.model_spec.to_dict(),
        "codes_shape": list(codes.shape),
        "meta": data.meta,
    }
    write_container(path, header, {
        "dictionary": data.dictionary,
        "samples": data.samples,
        "codes_sparse": triples.reshape(-1, codes.ndim + 1),
    })


def load_dataset(path) -> Dataset:
    header, tensors = read_container(path)
    _check_version(path, header, "dataset", DATASET_FORMAT_VERSION)
    try:
        spec = spec_from_dict(header["model_spec"])
        codes_shape = tuple(header["codes_shape"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: field 'model_spec' or 'codes_shape' is invalid ({exc})") from exc
    n = codes_shape[0]
    if spec.regime == "dense":
        dict_shape, sample_shape = (spec.m, spec.p), (n, spec.m)
        expected_codes = (n, spec.p)
    else:
        dict_shape = (spec.num_kernels, spec.channels, spec.support)
        sample_shape = (n, spec.channels, spec.resolution)
        expected_codes = (n, spec.num_kernels, spec.resolution)
    if codes_shape != expected_codes:
        raise FormatError(f"{path}: field 'codes_shape' is {codes_shape}, expected {expected_codes}")
    dictionary = _require(path, tensors, "dictionary", dict_shape)
    samples = _require(path, tensors, "samples", sample_shape)
    triples = _require(path, tensors, "codes_sparse")
    if triples.ndim != 2 or triples.shape[1] != len(codes_shape) + 1:
        raise FormatError(f"{path}: tensor 'codes_sparse' has shape {triples.shape}")
    codes = np.zeros(codes_shape)
    idx = tuple(triples[:, j].astype(np.int64) for j in range(len(codes_shape)))
    for axis, (i, bound) in enumerate(zip(idx, codes_shape)):
        if i.size and (i.min() < 0 or i.max() >= bound):
            raise FormatError(f"{path}: tensor 'codes_sparse' index {axis} out of range")
    codes[idx] = triples[:, -1]
    return Dataset(samples, codes, dictionary, spec, header["format_version"], header.get("meta", {}))


# ------------------------------------------------------------- checkpoints

@dataclass
class Checkpoint:
    model: object
    step: int = 0
    epoch: int = 0
    rng_state: Optional[dict] = None


def save_checkpoint(model, path, step=0, epoch=0, rng=None):
    """Write ``model`` (and optional trainer counters / RNG state) to ``path``."""
    tensors = {}
    header = {
        "kind": "checkpoint",
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "architecture": model.regime,
        "encoder": dataclasses.asdict(model.encoder),
        "step": int(step),
        "epoch": int(epoch),
        "rng_state": None if rng is None else rng.bit_generator.state,
        "lifting": None,
    }
    if model.regime == "dense":
        tensors["dictionary"] = model.dictionary
        for name in ("bias_pre", "bias_enc"):
            if getattr(model, name) is not None:
                tensors[name] = getattr(model, name)
    elif model.regime == "conv":
        tensors["kernels"] = model.kernels
    else:
        header.update(resolution=model.resolution, modes_kept=model.modes_kept,
                      decoder_norm=model.decoder_norm)
        tensors["weights"] = model.weights[..., : model.modes_kept]
    if model.lifting is not None:
        header["lifting"] = {"tied": model.lifting.tied}
        tensors["L"] = model.lifting.L
        tensors["P"] = model.lifting.P
    write_container(path, header, tensors)


def read_checkpoint(path) -> Checkpoint:
    header, tensors = read_container(path)
    _check_version(path, header, "checkpoint", CHECKPOINT_FORMAT_VERSION)
    try:
        encoder = EncoderConfig(**header["encoder"])
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: field 'encoder' is invalid ({exc})") from exc
    lifting = None
    if header.get("lifting") is not None:
        L = _require(path, tensors, "L")
        P = _require(path, tensors, "P", (L.shape[1], L.shape[0]) if L.ndim == 2 else None)
        try:
            lifting = LiftingPair(L, P, tied=bool(header["lifting"].get("tied", True)))
        except Exception as exc:
            raise FormatError(f"{path}: field 'lifting' is inconsistent ({exc})") from exc
    arch = header.get("architecture")
    try:
        if arch == "dense":
            D = _require(path, tensors, "dictionary")
            model = DenseSAE(D, encoder, lifting, tensors.get("bias_pre"), tensors.get("bias_enc"))
        elif arch == "conv":
            model = ConvSAE(_require(path, tensors, "kernels"), encoder, lifting)
        elif arch == "fno":
            resolution, modes_kept = int(header["resolution"]), int(header["modes_kept"])
            kept = _require(path, tensors, "weights")
            if kept.ndim != 3 or kept.shape[2] != modes_kept:
                raise FormatError(
                    f"{path}: tensor 'weights' has shape {kept.shape}, expected {modes_kept} modes"
                )
            weights = np.zeros(kept.shape[:2] + (half_length(resolution),), dtype=np.complex128)
            weights[..., :modes_kept] = kept
            model = FnoSAE(weights, resolution, modes_kept, encoder, header["decoder_norm"], lifting)
        else:
            raise FormatError(f"{path}: field 'architecture' has unknown value {arch!r}")
    except FormatError:
        raise
    except Exception as exc:
        raise FormatError(f"{path}: tensors do not match architecture {arch!r} ({exc})") from exc
    return Checkpoint(model, int(header.get("step", 0)), int(header.get("epoch", 0)),
                      header.get("rng_state"))


def load_checkpoint(path):
    return read_checkpoint(path).model


# ----------------------------------------------------------------- reports

def _fmt(v):
    return "" if v is None else format(float(v), ".17g")


def report_csv(report, record_wall_time=False) -> str:
    lines = [CSV_HEADER]
    for i in range(len(report)):
        wall = report.wall_time_s[i] if record_wall_time else None
        lines.append(",".join([
            str(i + 1),
            _fmt(report.dict_err[i]),
            _fmt(report.recon_mse[i]),
            _fmt(report.d_orth[i]),
            _fmt(report.l_orth[i]),
            _fmt(wall),
        ]))
    return "\n".join(lines) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return _jsonable(dataclasses.asdict(obj))
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path, payload):
    path = Path(path)
    try:
        path.write_text(json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def _write_text(path, text):
    try:
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def _ensure_dir(out_dir):
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FormatError(f"cannot create output directory {out}: {exc}") from exc
    return out


def emit_reports(report, out_dir, config=None, flags=None, verdicts=None, extra=None,
                 record_wall_time=False):
    """Write ``metrics.csv`` and ``summary.json`` for one report.

    ``report`` may be a :class:`RecoveryReport`, a dict of them (one
    subdirectory per arm) or ``None`` for runs without training curves.
    Wall times are left out unless ``record_wall_time`` so reruns are
    byte-identical.
    """
    out = _ensure_dir(out_dir)
    summary = {"config": config or {}, "hypothesis_flags": flags or {}, "verdicts": verdicts or {}}
    if isinstance(report, dict):
        finals = {}
        for name, rep in report.items():
            sub = _ensure_dir(out / _safe_name(name))
            _write_text(sub / "metrics.csv", report_csv(rep, record_wall_time))
            finals[name] = rep.final()
        summary["final"] = finals
    elif report is not None:
        _write_text(out / "metrics.csv", report_csv(report, record_wall_time))
        summary["final"] = report.final()
    if extra:
        summary.update(extra)
    write_json(out / "summary.json", summary)
    return out


def write_curves(curves: Dict[str, list], out_dir):
    out = _ensure_dir(Path(out_dir) / "curves")
    for name, values in curves.items():
        rows = ["index,value"] + [f"{i},{_fmt(v)}" for i, v in enumerate(values)]
        _write_text(out / f"{_safe_name(name)}.csv", "\n".join(rows) + "\n")


def _safe_name(name):
    return "".join(ch if ch.isalnum() or ch in "-_.=" else "_" for ch in str(name))


def default_output_root():
    return Path(os.environ.get("SAENO_OUTPUT_ROOT", "runs"))
