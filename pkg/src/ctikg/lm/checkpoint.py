"""Versioned binary checkpoint container.

Layout: magic b"CTIKG\\0", format version (u16 LE), length-prefixed JSON
header (u32 LE + UTF-8), then named tensors, each as
(name length u16 LE, name bytes, rank u32 LE, dims u32 LE, raw float32 LE).
Tensors are written in sorted-name order so files are byte-reproducible.
"""

from __future__ import annotations

import io
import json
import struct

import numpy as np

import ctikg
from ctikg.errors import (
    CheckpointFormatError,
    CheckpointShapeError,
    CheckpointTruncatedError,
)
from ctikg.lm.config import LmConfig
from ctikg.lm.params import LmParams, expected_shapes
from ctikg.lm.train import TrainState

MAGIC = b"CTIKG\0"
FORMAT_VERSION = 1


def _write_tensor(fh, name: str, tensor: np.ndarray) -> None:
    nb = name.encode("utf-8")
    fh.write(struct.pack("<H", len(nb)))
    fh.write(nb)
    fh.write(struct.pack("<I", tensor.ndim))
    fh.write(struct.pack(f"<{tensor.ndim}I", *tensor.shape))
    fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(f"expected {n} more bytes, got {len(data)}")
    return data


def _read_tensor(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", _read_exact(fh, 2))
    name = _read_exact(fh, name_len).decode("utf-8")
    (rank,) = struct.unpack("<I", _read_exact(fh, 4))
    dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank))
    count = int(np.prod(dims)) if rank else 1
    raw = _read_exact(fh, 4 * count)
    return name, np.frombuffer(raw, dtype="<f4").reshape(dims).copy()


def save_checkpoint(state: TrainState | LmParams, path) -> None:
    """Write params (and optimizer state, when given a TrainState) to path."""
    if isinstance(state, LmParams):
        params, train_section = state, None
    else:
        params = state.params
        train_section = {
            "step": state.step,
            "rng_state": _rng_state_to_json(state.rng),
        }
    tensors = dict(params.named_tensors())
    if train_section is not None:
        for k, t in state.m.items():
            tensors[f"adam.m.{k}"] = t
        for k, t in state.v.items():
            tensors[f"adam.v.{k}"] = t

    header = {
        "config": params.config.to_dict(),
        "tensor_count": len(tensors),
        "tool_version": ctikg.__version__,
        "train": train_section,
    }
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", FORMAT_VERSION))
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    buf.write(struct.pack("<I", len(hb)))
    buf.write(hb)
    for name in sorted(tensors):
        _write_tensor(buf, name, tensors[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path) -> TrainState:
    """Read a checkpoint; returns a TrainState (fresh optimizer if none stored)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise CheckpointFormatError(f"bad magic bytes {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(fh, 2))
        if version != FORMAT_VERSION:
            raise CheckpointFormatError(f"unsupported format version {version}")
        (hlen,) = struct.unpack("<I", _read_exact(fh, 4))
        try:
            header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise CheckpointFormatError(f"bad JSON header: {exc}") from exc

        cfg = LmConfig.from_dict(header["config"])
        tensors = {}
        for _ in range(header["tensor_count"]):
            name, tensor = _read_tensor(fh)
            tensors[name] = tensor
        if fh.read(1):
            raise CheckpointFormatError("trailing bytes after declared tensors")

    expect = expected_shapes(cfg)
    missing = set(expect) - set(tensors)
    if missing:
        raise CheckpointShapeError(f"missing tensors: {sorted(missing)}")
    for name, shape in expect.items():
        if tuple(tensors[name].shape) != shape:
            raise CheckpointShapeError(
                f"tensor {name!r} has shape {tuple(tensors[name].shape)}, expected {shape}"
            )

    params = LmParams(
        config=cfg,
        token_embedding=tensors["token_embedding"],
        positional_embedding=tensors["positional_embedding"],
        layers=[],
        lnf_gain=tensors["lnf_gain"],
        lnf_bias=tensors["lnf_bias"],
    )
    from ctikg.lm.params import LayerParams

    layer_attrs = [
        "ln1_gain", "ln1_bias", "w_qkv", "b_qkv", "w_proj", "b_proj",
        "ln2_gain", "ln2_bias", "w_ffn_in", "b_ffn_in", "w_ffn_out", "b_ffn_out",
    ]
    for i in range(cfg.n_layers):
        params.layers.append(
            LayerParams(**{a: tensors[f"layers.{i}.{a}"] for a in layer_attrs})
        )

    state = TrainState.new(params)
    train_section = header.get("train")
    if train_section is not None:
        for k in expect:
            mk, vk = f"adam.m.{k}", f"adam.v.{k}"
            if mk not in tensors or vk not in tensors:
                raise CheckpointShapeError(f"missing optimizer tensors for {k!r}")
            state.m[k] = tensors[mk]
            state.v[k] = tensors[vk]
        state.step = int(train_section["step"])
        state.rng.bit_generator.state = _rng_state_from_json(train_section["rng_state"])
    return state


def _rng_state_to_json(rng: np.random.Generator) -> dict:
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": st["has_uint32"],
        "uinteger": st["uinteger"],
    }


def _rng_state_from_json(d: dict) -> dict:
    return {
        "bit_generator": d["bit_generator"],
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": d["has_uint32"],
        "uinteger": d["uinteger"],
    }
