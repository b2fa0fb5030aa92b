"""Binary checkpoint format for model parameters.

Layout, all little-endian:

    magic "DRCN" | uint32 version (=1) | uint32 header length | header JSON
    | float32 payloads

The header is UTF-8 JSON with exactly the keys recursions, filters,
in_channels, out_channels, scale.  Payloads follow in fixed order:
embed1.W, embed1.b, embed2.W, embed2.b, recursive.W, recursive.b,
recon1.W, recon1.b, recon2.W, recon2.b, ensemble_w.  Weight tensors are
serialized in (out_channel, in_channel, row, column) row-major order.
Writes are atomic (temp file in the target directory, then rename).
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import ConvLayer, Tensor
from .errors import DataError
from .model import KERNEL, DrcnParams

MAGIC = b"DRCN"
VERSION = 1

_LAYER_ORDER = ("embed1", "embed2", "recursive", "recon1", "recon2")


@dataclass(frozen=True)
class CheckpointMeta:
    recursions: int
    filters: int
    in_channels: int
    out_channels: int
    scale: int


def _header_bytes(meta: CheckpointMeta) -> bytes:
    header = {
        "recursions": meta.recursions,
        "filters": meta.filters,
        "in_channels": meta.in_channels,
        "out_channels": meta.out_channels,
        "scale": meta.scale,
    }
    return json.dumps(header).encode("utf-8")


def _layer_shapes(meta: CheckpointMeta) -> list[tuple[int, int]]:
    """(in, out) channel pairs for the five conv layers, in payload order."""
    f = meta.filters
    return [
        (meta.in_channels, f),
        (f, f),
        (f, f),
        (f, f),
        (f, meta.out_channels),
    ]


def checkpoint_bytes(params: DrcnParams, scale: int) -> bytes:
    meta = CheckpointMeta(
        recursions=params.recursions,
        filters=params.recursive.out_channels,
        in_channels=params.embed1.in_channels,
        out_channels=params.recon2.out_channels,
        scale=int(scale),
    )
    header = _header_bytes(meta)
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(header)), header]
    for name in _LAYER_ORDER:
        layer: ConvLayer = getattr(params, name)
        chunks.append(np.ascontiguousarray(layer.weights.data, dtype="<f4").tobytes())
        chunks.append(np.ascontiguousarray(layer.bias.data, dtype="<f4").tobytes())
    chunks.append(np.ascontiguousarray(params.ensemble_w.data, dtype="<f4").tobytes())
    return b"".join(chunks)


def write_atomic(path: str | Path, payload: bytes) -> None:
    """Write to a temp file in the destination directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save_checkpoint(path: str | Path, params: DrcnParams, scale: int) -> None:
    write_atomic(path, checkpoint_bytes(params, scale))


def load_checkpoint(path: str | Path) -> tuple[DrcnParams, CheckpointMeta]:
    """Read a checkpoint; parameters come back as float32 leaves."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(blob) < 12 or blob[:4] != MAGIC:
        raise DataError(f"corrupt checkpoint {path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise DataError(f"unsupported checkpoint version {version} in {path}")
    (header_len,) = struct.unpack_from("<I", blob, 8)
    if len(blob) < 12 + header_len:
        raise DataError(f"corrupt checkpoint {path}: truncated header")
    try:
        header = json.loads(blob[12 : 12 + header_len].decode("utf-8"))
        meta = CheckpointMeta(
            recursions=int(header["recursions"]),
            filters=int(header["filters"]),
            in_channels=int(header["in_channels"]),
            out_channels=int(header["out_channels"]),
            scale=int(header["scale"]),
        )
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise DataError(f"corrupt checkpoint {path}: bad header ({exc})") from exc
    if meta.recursions < 1 or meta.filters < 1:
        raise DataError(f"corrupt checkpoint {path}: nonsensical header {header}")

    offset = 12 + header_len

    def take(count: int, shape: tuple[int, ...]) -> Tensor:
        nonlocal offset
        nbytes = count * 4
        if offset + nbytes > len(blob):
            raise DataError(f"corrupt checkpoint {path}: truncated payload")
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape)
        offset += nbytes
        return Tensor(arr.astype(np.float32), requires_grad=True)

    layers = []
    for c_in, c_out in _layer_shapes(meta):
        w = take(c_out * c_in * KERNEL * KERNEL, (c_out, c_in, KERNEL, KERNEL))
        b = take(c_out, (c_out,))
        layers.append(ConvLayer(w, b))
    ensemble = take(meta.recursions, (meta.recursions,))
    if offset != len(blob):
        raise DataError(f"corrupt checkpoint {path}: {len(blob) - offset} trailing bytes")

    params = DrcnParams(
        embed1=layers[0],
        embed2=layers[1],
        recursive=layers[2],
        recon1=layers[3],
        recon2=layers[4],
        ensemble_w=ensemble,
    )
    return params, meta
