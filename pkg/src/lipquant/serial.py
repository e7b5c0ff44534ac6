"""On-disk formats: canonical JSON text, the RQM model container, plan files.

Text documents (the RQM header, plan files) are strict JSON emitted by a
canonical writer: keys keep insertion order, floats are rendered with 9
significant digits (always with a decimal point or exponent so they parse
back as floats), and indentation is fixed.  Re-serializing a parsed document
reproduces it byte for byte.

RQM container layout:

    bytes 0..3   magic "RQM1"
    bytes 4..7   header length, unsigned 32-bit little-endian
    header       UTF-8 canonical JSON: arch, layer specs, tensor manifest
                 (name/shape/offset/length), metadata, payload sha256
    payload      concatenated little-endian float32 arrays in manifest order
                 (per weighted layer: weights, then bias)

Writes are atomic (temp file + rename).  Loads verify the digest and every
manifest invariant before constructing a model.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from . import nnengine
from .errors import DataError
from .linalg import NormOrder
from .metrics import LayerNorms, Thresholds
from .nnengine import Conv2d, Dense, Flatten, MaxPool2x2, Model, ReLU
from .planner import CandidateRecord, LayerPlan, QuantPlan
from .quantizers import QuantMethod, QuantSetting

MODEL_MAGIC = b"RQM1"
MODEL_VERSION = 1
PLAN_VERSION = 1


# ---------------------------------------------------------------------------
# canonical JSON


def dumps_canonical(obj) -> str:
    parts = []
    _emit(obj, parts, 0)
    parts.append("\n")
    return "".join(parts)


def _format_float(x: float) -> str:
    if not np.isfinite(x):
        raise ValueError(f"cannot serialize non-finite float {x}")
    text = f"{float(x):.9g}"
    if "." not in text and "e" not in text and "E" not in text:
        text += ".0"
    return text


def _emit(obj, parts: list, depth: int):
    pad, inner = "  " * depth, "  " * (depth + 1)
    if isinstance(obj, dict):
        if not obj:
            parts.append("{}")
            return
        parts.append("{\n")
        for i, (key, value) in enumerate(obj.items()):
            parts.append(f"{inner}{json.dumps(str(key))}: ")
            _emit(value, parts, depth + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            parts.append("[]")
            return
        parts.append("[\n")
        for i, value in enumerate(obj):
            parts.append(inner)
            _emit(value, parts, depth + 1)
            parts.append(",\n" if i < len(obj) - 1 else "\n")
        parts.append(pad + "]")
    elif isinstance(obj, bool) or obj is None:
        parts.append(json.dumps(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(_format_float(float(obj)))
    elif isinstance(obj, str):
        parts.append(json.dumps(obj))
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__} canonically")


def _atomic_write(path, blob: bytes):
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or Path("."), prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# model container


def _spec_to_obj(spec) -> dict:
    if isinstance(spec, Dense):
        return {"kind": "dense", "in_dim": spec.in_dim, "out_dim": spec.out_dim}
    if isinstance(spec, Conv2d):
        return {
            "kind": "conv2d",
            "in_ch": spec.in_ch,
            "out_ch": spec.out_ch,
            "kh": spec.kh,
            "kw": spec.kw,
            "stride": spec.stride,
            "padding": spec.padding,
        }
    if isinstance(spec, ReLU):
        return {"kind": "relu"}
    if isinstance(spec, MaxPool2x2):
        return {"kind": "maxpool2x2"}
    if isinstance(spec, Flatten):
        return {"kind": "flatten"}
    raise TypeError(f"unknown layer spec {spec!r}")


def _spec_from_obj(obj: dict):
    kind = obj.get("kind")
    if kind == "dense":
        return Dense(int(obj["in_dim"]), int(obj["out_dim"]))
    if kind == "conv2d":
        return Conv2d(
            int(obj["in_ch"]), int(obj["out_ch"]), int(obj["kh"]), int(obj["kw"]),
            int(obj["stride"]), int(obj["padding"]),
        )
    if kind == "relu":
        return ReLU()
    if kind == "maxpool2x2":
        return MaxPool2x2()
    if kind == "flatten":
        return Flatten()
    raise DataError(f"unknown layer kind {kind!r} in model header")


def save_model(model: Model, path):
    nnengine.validate_model(model)
    chunks, manifest, offset = [], [], 0
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        for name, arr in ((f"layer{i}.weight", w), (f"layer{i}.bias", b)):
            raw = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            manifest.append(
                {"name": name, "shape": list(arr.shape), "offset": offset, "length": len(raw)}
            )
            chunks.append(raw)
            offset += len(raw)
    payload = b"".join(chunks)
    header = {
        "format": "RQM",
        "version": MODEL_VERSION,
        "input_shape": list(model.input_shape),
        "layers": [_spec_to_obj(s) for s in model.layers],
        "manifest": manifest,
        "metadata": dict(sorted(model.metadata.items())),
        "payload_digest": hashlib.sha256(payload).hexdigest(),
    }
    header_bytes = dumps_canonical(header).encode("utf-8")
    _atomic_write(path, MODEL_MAGIC + struct.pack("<I", len(header_bytes)) + header_bytes + payload)


def load_model(path) -> Model:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not an RQM model file (bad magic)")
    (header_len,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + header_len:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format") != "RQM" or header.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported container version {header.get('version')!r}")
    payload = raw[8 + header_len :]
    digest = hashlib.sha256(payload).hexdigest()
    if digest != header.get("payload_digest"):
        raise DataError(f"{path}: payload digest mismatch (file corrupt?)")

    arrays = {}
    for entry in header["manifest"]:
        shape = tuple(int(v) for v in entry["shape"])
        offset, length = int(entry["offset"]), int(entry["length"])
        if int(np.prod(shape)) * 4 != length:
            raise DataError(f"{path}: manifest entry {entry['name']} shape/length mismatch")
        if offset + length > len(payload):
            raise DataError(f"{path}: manifest entry {entry['name']} overruns payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype="<f4", count=length // 4, offset=offset)
            .reshape(shape)
            .copy()
        )

    layers = [_spec_from_obj(o) for o in header["layers"]]
    n_weighted = sum(isinstance(s, (Dense, Conv2d)) for s in layers)
    try:
        weights = [arrays[f"layer{i}.weight"] for i in range(n_weighted)]
        biases = [arrays[f"layer{i}.bias"] for i in range(n_weighted)]
    except KeyError as exc:
        raise DataError(f"{path}: manifest is missing tensor {exc}") from exc
    model = Model(
        input_shape=tuple(int(v) for v in header["input_shape"]),
        layers=layers,
        weights=weights,
        biases=biases,
        metadata={str(k): str(v) for k, v in header.get("metadata", {}).items()},
    )
    try:
        nnengine.validate_model(model)
    except ValueError as exc:
        raise DataError(f"{path}: inconsistent model ({exc})") from exc
    return model


# ---------------------------------------------------------------------------
# plan files


def _norms_to_obj(n: LayerNorms) -> dict:
    return {"L_W": n.L_W, "L_Wq": n.L_Wq, "L_dW": n.L_dW}


def _candidate_to_obj(c: CandidateRecord) -> dict:
    return {
        "bits": c.setting.bits,
        "scale": float(c.setting.scale),
        "hit_cap": c.hit_cap,
        "norms": _norms_to_obj(c.norms),
    }


def plan_to_obj(plan: QuantPlan) -> dict:
    return {
        "format": "lipquant-plan",
        "version": PLAN_VERSION,
        "p": plan.p.value,
        "max_bits": plan.max_bits,
        "model_digest": plan.model_digest,
        "created_unix": plan.created_unix,
        "layers": [
            {
                "index": e.layer_index,
                "chosen": e.chosen.value,
                "threshold_q": e.thresholds.threshold_q,
                "threshold_delta": e.thresholds.threshold_delta,
                "candidates": {
                    m.value: _candidate_to_obj(e.candidates[m])
                    for m in (QuantMethod.LINEAR, QuantMethod.LOG)
                },
            }
            for e in plan.layers
        ],
    }


def _candidate_from_obj(method: QuantMethod, obj: dict, index: int, p: NormOrder) -> CandidateRecord:
    # scales are float32 values by construction; snap after decimal parsing so
    # reloaded settings compare equal and re-quantize identically
    setting = QuantSetting(method, int(obj["bits"]), float(np.float32(obj["scale"])))
    n = obj["norms"]
    norms = LayerNorms(
        layer_index=index, p=p, L_W=float(n["L_W"]), L_Wq=float(n["L_Wq"]), L_dW=float(n["L_dW"])
    )
    return CandidateRecord(setting=setting, norms=norms, hit_cap=bool(obj["hit_cap"]))


def plan_from_obj(obj: dict) -> QuantPlan:
    if obj.get("format") != "lipquant-plan" or obj.get("version") != PLAN_VERSION:
        raise DataError(f"unsupported plan version {obj.get('version')!r}")
    p = NormOrder(obj["p"])
    layers = []
    for entry in obj["layers"]:
        index = int(entry["index"])
        candidates = {
            m: _candidate_from_obj(m, entry["candidates"][m.value], index, p)
            for m in (QuantMethod.LINEAR, QuantMethod.LOG)
        }
        layers.append(
            LayerPlan(
                layer_index=index,
                chosen=QuantMethod(entry["chosen"]),
                thresholds=Thresholds(
                    threshold_q=float(entry["threshold_q"]),
                    threshold_delta=float(entry["threshold_delta"]),
                ),
                candidates=candidates,
            )
        )
    return QuantPlan(
        p=p,
        max_bits=int(obj["max_bits"]),
        model_digest=str(obj["model_digest"]),
        layers=layers,
        created_unix=int(obj["created_unix"]),
    )


def save_plan(plan: QuantPlan, path):
    _atomic_write(path, dumps_canonical(plan_to_obj(plan)).encode("utf-8"))


def load_plan(path) -> QuantPlan:
    try:
        obj = json.loads(Path(path).read_text("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: unreadable plan file ({exc})") from exc
    return plan_from_obj(obj)
