"""Model file format: magic, version, JSON config block, f64 tensors, CRC-32."""

from __future__ import annotations

import json
import struct
import zlib

import numpy as np

from ..errors import FormatError
from .adam import AdamConfig, AdamState
from .model import EqualizerModel, ModelConfig

MODEL_MAGIC = b"MTEQM"
MODEL_VERSION = 1


def save_model(
    path: str,
    model: EqualizerModel,
    adam: AdamState | None = None,
    adam_cfg: AdamConfig | None = None,
    provenance: dict | None = None,
) -> None:
    params = model.parameters()
    names = list(params)
    header = {
        "config": {
            "n_layers": model.config.n_layers,
            "hidden": model.config.hidden,
            "input_features": model.config.input_features,
            "window": model.config.window,
            "output_dim": model.config.output_dim,
            "dtype": model.config.dtype,
        },
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
        "has_adam": adam is not None,
        "adam": None
        if adam is None
        else {
            "t": adam.t,
            "lr": (adam_cfg or AdamConfig()).lr,
            "beta1": (adam_cfg or AdamConfig()).beta1,
            "beta2": (adam_cfg or AdamConfig()).beta2,
            "eps": (adam_cfg or AdamConfig()).eps,
        },
        "provenance": provenance or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    chunks = [np.ascontiguousarray(params[n], dtype="<f8").tobytes() for n in names]
    if adam is not None:
        chunks += [np.ascontiguousarray(adam.m[n], dtype="<f8").tobytes() for n in names]
        chunks += [np.ascontiguousarray(adam.v[n], dtype="<f8").tobytes() for n in names]
    payload = b"".join(chunks)
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<HI", MODEL_VERSION, len(header_bytes)))
        f.write(header_bytes)
        f.write(payload)
        f.write(struct.pack("<I", zlib.crc32(payload)))


def load_model(path: str) -> tuple[EqualizerModel, AdamState | None, AdamConfig | None, dict]:
    """Returns (model, adam state or None, adam config or None, provenance)."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 11 or blob[:5] != MODEL_MAGIC:
        raise FormatError(f"{path}: not a model file (bad magic)")
    version, header_len = struct.unpack_from("<HI", blob, 5)
    if version > MODEL_VERSION:
        raise FormatError(f"{path}: unsupported version {version} (supported <= {MODEL_VERSION})")
    off = 11
    try:
        header = json.loads(blob[off : off + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt header ({exc})") from exc
    off += header_len

    cfg = ModelConfig(**header["config"])
    names = [t["name"] for t in header["tensors"]]
    shapes = {t["name"]: tuple(t["shape"]) for t in header["tensors"]}
    n_tensor_sets = 3 if header["has_adam"] else 1
    total_vals = sum(int(np.prod(shapes[n])) for n in names) * n_tensor_sets
    if len(blob) != off + total_vals * 8 + 4:
        raise FormatError(f"{path}: truncated payload")
    payload = blob[off : off + total_vals * 8]
    (crc,) = struct.unpack_from("<I", blob, off + total_vals * 8)
    if zlib.crc32(payload) != crc:
        raise FormatError(f"{path}: payload CRC mismatch")

    flat = np.frombuffer(payload, dtype="<f8")
    dt = cfg.np_dtype

    def take(pos: int) -> tuple[dict[str, np.ndarray], int]:
        out = {}
        for n in names:
            size = int(np.prod(shapes[n]))
            out[n] = flat[pos : pos + size].reshape(shapes[n]).astype(dt)
            pos += size
        return out, pos

    params, pos = take(0)
    model = EqualizerModel.init(cfg, seed=0)
    model.set_parameters(params)
    adam = None
    adam_cfg = None
    if header["has_adam"]:
        m, pos = take(pos)
        v, pos = take(pos)
        adam = AdamState(m=m, v=v, t=header["adam"]["t"])
        a = header["adam"]
        adam_cfg = AdamConfig(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"])
    return model, adam, adam_cfg, header.get("provenance", {})
