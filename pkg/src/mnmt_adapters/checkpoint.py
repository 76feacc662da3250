"""Versioned binary container for named tensors.

Layout::

    ciat-ckpt-v1\\n
    header <n>\\n
    <key>=<value>\\n          (n lines)
    tensors <m>\\n
    <name> <dtype> <ndim> <d0> ... \\n <little-endian payload>   (m times, sorted by name)

Banks use the same container with ``kind=bank``, ``bank-key=<src>-<tgt>`` and
``mode=<mode>`` header fields.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np

from .adapters import AdapterBank, AdapterConfig
from .model import ModelConfig, TransformerModel

FORMAT_TAG = "ciat-ckpt-v1"
_DTYPES = {"f4": np.float32, "f8": np.float64, "i8": np.int64, "i4": np.int32}


class CheckpointError(ValueError):
    pass


def _dtype_code(dt):
    dt = np.dtype(dt)
    code = f"{dt.kind}{dt.itemsize}"
    if code not in _DTYPES:
        raise CheckpointError(f"unsupported dtype {dt}")
    return code


def save_tensors(path, tensors: dict, header: dict):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(f"{FORMAT_TAG}\n".encode())
        fh.write(f"header {len(header)}\n".encode())
        for k, v in header.items():
            v = str(v)
            if "\n" in v or "=" in k or "\n" in k:
                raise CheckpointError(f"header entry {k!r} contains a reserved character")
            fh.write(f"{k}={v}\n".encode("utf-8"))
        fh.write(f"tensors {len(tensors)}\n".encode())
        for name in sorted(tensors):
            if " " in name or "\n" in name:
                raise CheckpointError(f"tensor name {name!r} contains whitespace")
            arr = np.asarray(tensors[name])
            code = _dtype_code(arr.dtype)
            dims = " ".join(str(d) for d in arr.shape)
            fh.write(f"{name} {code} {arr.ndim} {dims}".rstrip().encode() + b"\n")
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path):
    """Returns ``(header dict, {name: ndarray})``."""
    with open(path, "rb") as fh:
        tag = fh.readline().decode().strip()
        if tag != FORMAT_TAG:
            raise CheckpointError(f"{path}: bad format tag {tag!r}")
        n = _count(fh.readline(), "header", path)
        header = {}
        for _ in range(n):
            line = fh.readline().decode("utf-8").rstrip("\n")
            k, _, v = line.partition("=")
            header[k] = v
        m = _count(fh.readline(), "tensors", path)
        tensors = {}
        for _ in range(m):
            parts = fh.readline().decode().split()
            name, code, ndim = parts[0], parts[1], int(parts[2])
            shape = tuple(int(x) for x in parts[3:3 + ndim])
            dt = np.dtype(_DTYPES[code]).newbyteorder("<")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            buf = fh.read(nbytes)
            if len(buf) != nbytes:
                raise CheckpointError(f"{path}: truncated payload for {name}")
            tensors[name] = np.frombuffer(buf, dtype=dt).astype(dt.newbyteorder("="), copy=True).reshape(shape)
    return header, tensors


def _count(line, word, path):
    parts = line.decode().split()
    if len(parts) != 2 or parts[0] != word:
        raise CheckpointError(f"{path}: expected '{word} <n>' line")
    return int(parts[1])


def _model_header(cfg: ModelConfig):
    return {f"model.{k}": v for k, v in cfg.to_dict().items()}


def _read_model_config(header):
    return ModelConfig.from_dict({k[6:]: v for k, v in header.items() if k.startswith("model.")})


def save_model(path, model: TransformerModel, extra=None):
    header = {"kind": "model", **_model_header(model.config), **(extra or {})}
    save_tensors(path, {n: p.data for n, p in model.params.items()}, header)


def load_model(path):
    header, tensors = load_tensors(path)
    if header.get("kind") != "model":
        raise CheckpointError(f"{path}: not a model checkpoint")
    cfg = _read_model_config(header)
    dtype = next(iter(tensors.values())).dtype
    return TransformerModel(cfg, dtype=dtype, params=tensors), header


def save_bank(path, bank: AdapterBank, extra=None):
    header = {"kind": "bank", "bank-key": bank.key_str, **{k: v for k, v in bank.config.to_dict().items()},
              **_model_header(bank.model_config), **(extra or {})}
    save_tensors(path, bank.state_arrays(), header)


def load_bank(path):
    header, tensors = load_tensors(path)
    if header.get("kind") != "bank":
        raise CheckpointError(f"{path}: not a bank file")
    cfg = AdapterConfig.from_dict(header)
    mcfg = _read_model_config(header)
    key = tuple(header["bank-key"].split("-"))
    return AdapterBank.from_arrays(key, cfg, mcfg, tensors), header


def tensor_digest(arr) -> str:
    arr = np.ascontiguousarray(arr)
    h = hashlib.sha256()
    h.update(f"{arr.dtype.str}{arr.shape}".encode())
    h.update(arr.tobytes())
    return h.hexdigest()


def param_digests(params: dict) -> dict:
    return {n: tensor_digest(p.data if hasattr(p, "data") else p) for n, p in params.items()}
