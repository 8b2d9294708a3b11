"""Versioned binary serialization of comparator models.

Layout (all integers little-endian):

    magic           4 bytes  b"KINC"
    version         u16      currently 1
    input_dim       u32
    hidden          u32
    n_experts       u32
    activation      u8       0 lrelu, 1 relu, 2 prelu, 3 tanh
    sharing         u8       0 per-expert, 1 shared-trunk, 2 entirely-local
    has_attention   u8
    has_threshold   u8
    dropout_p       f64
    threshold       f64      0.0 when has_threshold = 0
    relations       n_experts x (u8 length + ascii code)
    payload         parameter arrays, row-major f64, in param_layout order
    crc32           u32      zlib.crc32 of the payload bytes

Shapes are derived from the header, never trusted from the file body, and
a model is materialized only after every check passes, so a corrupt file
can never leave partial state behind.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .comparator import (
    Activation,
    ComparatorConfig,
    ComparatorParams,
    SharingMode,
    param_layout,
)

MAGIC = b"KINC"
VERSION = 1

_ACTIVATION_CODES = {
    Activation.LRELU: 0,
    Activation.RELU: 1,
    Activation.PRELU: 2,
    Activation.TANH: 3,
}
_SHARING_CODES = {
    SharingMode.PER_EXPERT: 0,
    SharingMode.SHARED_TRUNK: 1,
    SharingMode.ENTIRELY_LOCAL: 2,
}
_ACTIVATION_BY_CODE = {v: k for k, v in _ACTIVATION_CODES.items()}
_SHARING_BY_CODE = {v: k for k, v in _SHARING_CODES.items()}


class ModelFormatError(ValueError):
    """Unreadable or corrupt model file."""


def serialize_model(params: ComparatorParams) -> bytes:
    cfg = params.config
    head = bytearray()
    head += MAGIC
    head += struct.pack("<H", VERSION)
    head += struct.pack("<III", cfg.input_dim, cfg.hidden, cfg.n_experts)
    head += struct.pack(
        "<BBBB",
        _ACTIVATION_CODES[cfg.activation],
        _SHARING_CODES[cfg.sharing],
        1 if params.has_attention else 0,
        1 if params.threshold is not None else 0,
    )
    head += struct.pack("<dd", cfg.dropout_p, params.threshold or 0.0)
    for code in cfg.relations:
        raw = code.encode("ascii")
        head += struct.pack("<B", len(raw)) + raw

    payload = bytearray()
    for name, shape in param_layout(cfg, params.has_attention):
        arr = params.values[name]
        if arr.shape != shape:
            raise ValueError(f"parameter {name} has shape {arr.shape}, expected {shape}")
        payload += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return bytes(head) + bytes(payload) + struct.pack("<I", zlib.crc32(bytes(payload)))


def save_model(params: ComparatorParams, path: str | Path) -> None:
    Path(path).write_bytes(serialize_model(params))


def deserialize_model(blob: bytes) -> ComparatorParams:
    view = memoryview(blob)
    pos = 0

    def take(n: int, what: str) -> memoryview:
        nonlocal pos
        if pos + n > len(view):
            raise ModelFormatError(f"truncated file while reading {what}")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4, "magic")) != MAGIC:
        raise ModelFormatError("bad magic bytes, not a comparator model file")
    (version,) = struct.unpack("<H", take(2, "version"))
    if version != VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    input_dim, hidden, n_experts = struct.unpack("<III", take(12, "dimensions"))
    act_code, sharing_code, has_attention, has_threshold = struct.unpack(
        "<BBBB", take(4, "flags")
    )
    if act_code not in _ACTIVATION_BY_CODE:
        raise ModelFormatError(f"unknown activation code {act_code}")
    if sharing_code not in _SHARING_BY_CODE:
        raise ModelFormatError(f"unknown sharing code {sharing_code}")
    dropout_p, threshold = struct.unpack("<dd", take(16, "dropout/threshold"))
    relations = []
    for i in range(n_experts):
        (length,) = struct.unpack("<B", take(1, f"relation {i} length"))
        relations.append(bytes(take(length, f"relation {i}")).decode("ascii"))

    try:
        config = ComparatorConfig(
            input_dim=input_dim,
            hidden=hidden,
            activation=_ACTIVATION_BY_CODE[act_code],
            dropout_p=dropout_p,
            sharing=_SHARING_BY_CODE[sharing_code],
            relations=tuple(relations),
        )
    except ValueError as exc:
        raise ModelFormatError(f"invalid model header: {exc}") from None

    layout = param_layout(config, bool(has_attention))
    payload_len = sum(int(np.prod(shape)) * 8 for _, shape in layout)
    payload = take(payload_len, "parameter payload")
    (stored_crc,) = struct.unpack("<I", take(4, "checksum"))
    if pos != len(view):
        raise ModelFormatError(f"{len(view) - pos} trailing bytes after checksum")
    if zlib.crc32(bytes(payload)) != stored_crc:
        raise ModelFormatError("payload checksum mismatch")

    values: dict[str, np.ndarray] = {}
    offset = 0
    for name, shape in layout:
        count = int(np.prod(shape))
        arr = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        values[name] = arr.astype(np.float64).reshape(shape)
        offset += count * 8
    for name in values:
        if not np.isfinite(values[name]).all():
            raise ModelFormatError(f"non-finite values in parameter {name}")
    return ComparatorParams(
        config=config,
        values=values,
        threshold=threshold if has_threshold else None,
    )


def load_model(path: str | Path) -> ComparatorParams:
    return deserialize_model(Path(path).read_bytes())
