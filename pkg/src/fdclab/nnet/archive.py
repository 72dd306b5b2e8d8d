"""Portable weight archive.

Layout (little-endian)::

    b"FDCW" | version u32 | tensor count u32
    per tensor: name_len u16 | name utf-8 | rank u8 | dims u32[rank] | dtype u8 | offset u64
    data section: tensors back to back, offsets relative to its start

dtype tags: 1 = float32, 2 = uint8.  The network description travels as a
uint8 tensor named ``__spec__`` holding JSON; momentum buffers, when saved,
are named ``momentum/<param>``.
"""
from __future__ import annotations

import io
import json
import struct

import numpy as np

from .network import Network, NetworkSpec

MAGIC = b"FDCW"
VERSION = 1
DTYPES = {1: np.dtype("<f4"), 2: np.dtype("u1")}
TAGS = {np.dtype("<f4"): 1, np.dtype("u1"): 2}
SPEC_TENSOR = "__spec__"


class ArchiveError(ValueError):
    pass


def write_tensors(tensors, fh):
    header = io.BytesIO()
    header.write(MAGIC + struct.pack("<II", VERSION, len(tensors)))
    blobs = []
    offset = 0
    for name, arr in tensors:
        arr = np.asarray(arr)
        if arr.dtype.kind == "f":
            arr = arr.astype("<f4")
        dt = np.dtype(arr.dtype).newbyteorder("<") if arr.dtype.kind == "f" else arr.dtype
        tag = TAGS[np.dtype(dt)]
        raw = name.encode()
        header.write(struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim))
        header.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        header.write(struct.pack("<BQ", tag, offset))
        data = np.ascontiguousarray(arr).tobytes()
        blobs.append(data)
        offset += len(data)
    fh.write(header.getvalue())
    for b in blobs:
        fh.write(b)


def read_tensors(data: bytes):
    """Parse an archive into an ordered {name: array} dict; strict on size."""
    def need(pos, n):
        if pos + n > len(data):
            raise ArchiveError(f"archive truncated at byte {pos} (need {n} more)")

    need(0, 12)
    if data[:4] != MAGIC:
        raise ArchiveError(f"bad magic {data[:4]!r}")
    version, count = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise ArchiveError(f"unsupported archive version {version}")
    pos = 12
    entries = []
    for _ in range(count):
        need(pos, 2)
        (ln,) = struct.unpack_from("<H", data, pos)
        need(pos + 2, ln + 1)
        name = data[pos + 2:pos + 2 + ln].decode()
        pos += 2 + ln
        rank = data[pos]
        pos += 1
        need(pos, 4 * rank + 9)
        dims = struct.unpack_from(f"<{rank}I", data, pos)
        pos += 4 * rank
        tag, off = struct.unpack_from("<BQ", data, pos)
        pos += 9
        if tag not in DTYPES:
            raise ArchiveError(f"tensor {name!r}: unknown dtype tag {tag}")
        entries.append((name, dims, DTYPES[tag], off))
    base = pos
    out = {}
    end = base
    for name, dims, dt, off in entries:
        nbytes = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
        need(base + off, nbytes)
        out[name] = np.frombuffer(data, dt, int(np.prod(dims, dtype=np.int64)),
                                  base + off).reshape(dims).copy()
        end = max(end, base + off + nbytes)
    if end != len(data):
        raise ArchiveError(f"{len(data) - end} trailing bytes after data section")
    return out


def archive_bytes(model: Network, include_optimizer=False) -> bytes:
    tensors = [(SPEC_TENSOR, np.frombuffer(
        json.dumps(model.current_spec().to_dict(), sort_keys=True).encode(), np.uint8))]
    tensors += list(model.named_params())
    if include_optimizer:
        tensors += [(f"momentum/{k}", v) for k, v in model.momentum.items()]
    buf = io.BytesIO()
    write_tensors(tensors, buf)
    return buf.getvalue()


def save_weights(model: Network, path, include_optimizer=False):
    data = archive_bytes(model, include_optimizer)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


def model_from_tensors(tensors, spec: NetworkSpec | None = None) -> Network:
    if SPEC_TENSOR in tensors:
        spec = NetworkSpec.from_dict(json.loads(tensors[SPEC_TENSOR].tobytes().decode()))
    if spec is None:
        raise ArchiveError("archive carries no network description; pass spec=")
    model = Network(spec, init=False)
    params = model.param_dict()
    first_conv = next((n for n in params if n.endswith(".weight") and n.startswith("conv")), None)
    for name, dst in params.items():
        if name not in tensors:
            raise ArchiveError(f"missing tensor for layer parameter {name!r}")
        src = tensors[name]
        if name == first_conv and src.ndim == 4 and src.shape[1] == 3 and dst.shape[1] == 1:
            src = src.mean(axis=1, keepdims=True)  # RGB kernels -> grayscale
        if src.shape != dst.shape:
            raise ArchiveError(f"shape mismatch for {name!r}: archive {src.shape}, "
                               f"network {dst.shape}")
        dst[...] = src
    for name in model.momentum:
        key = f"momentum/{name}"
        if key in tensors:
            model.momentum[name][...] = tensors[key]
    return model


def load_weights(path, spec: NetworkSpec | None = None) -> Network:
    with open(path, "rb") as f:
        data = f.read()
    return model_from_tensors(read_tensors(data), spec)
