"""Checkpoint and tensor file format.

Layout (all integers little-endian)::

    magic      8 bytes   b"DACTCKPT"
    version    uint32    FORMAT_VERSION
    header     uint64 length + UTF-8 JSON (config and training metadata)
    count      uint32    number of tensor blocks
    block*     uint16 name length, UTF-8 name, 2-byte dtype tag b"f8",
               uint8 ndim, ndim x uint64 shape, float64 values (row-major)

A tensor file for externally supplied embeddings uses the same layout with
an empty config and a block named ``embedding``.
"""
import io
import json
import struct

import numpy as np

from .model import MTCNN, ModelConfig
from .nn import Parameter

MAGIC = b"DACTCKPT"
FORMAT_VERSION = 1


class CheckpointError(Exception):
    pass


class FormatError(CheckpointError):
    """Not a checkpoint file (bad magic or unsupported dtype)."""


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


class ShapeError(CheckpointError):
    pass


def write_tensors(path, tensors, header):
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<Q", len(hb)))
    buf.write(hb)
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(b"f8")
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def _read_exact(fh, n):
    b = fh.read(n)
    if len(b) != n:
        raise TruncatedError(f"expected {n} bytes, got {len(b)}")
    return b


def read_tensors(path):
    """Return ``(header, {name: array})``."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            if len(magic) < len(MAGIC) and MAGIC.startswith(magic) and magic:
                raise TruncatedError("file ends inside the magic bytes")
            raise FormatError(f"{path}: bad magic bytes {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != FORMAT_VERSION:
            raise VersionError(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        (hlen,) = struct.unpack("<Q", _read_exact(fh, 8))
        header = json.loads(_read_exact(fh, hlen).decode("utf-8"))
        (count,) = struct.unpack("<I", _read_exact(fh, 4))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", _read_exact(fh, 2))
            name = _read_exact(fh, nlen).decode("utf-8")
            dtype = _read_exact(fh, 2)
            if dtype != b"f8":
                raise FormatError(f"{name}: unsupported dtype tag {dtype!r}")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1))
            shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim))
            n = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(_read_exact(fh, 8 * n), dtype="<f8")
            tensors[name] = data.reshape(shape).astype(np.float64)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after last tensor block")
    return header, tensors


def save_checkpoint(model, path, metadata=None):
    meta = dict(model.metadata)
    if metadata:
        meta.update(metadata)
    header = {"config": model.config.to_dict(), "metadata": meta}
    write_tensors(path, {name: p.value for name, p in model.params.items()}, header)


def load_checkpoint(path, expect=None):
    """Load a model; ``expect`` optionally pins config fields such as vocab_size."""
    header, tensors = read_tensors(path)
    if "config" not in header or not header["config"]:
        raise FormatError(f"{path}: no model config in header")
    cfg = ModelConfig.from_dict(header["config"])
    if expect:
        for key, want in expect.items():
            have = getattr(cfg, key)
            if have != want:
                raise ShapeError(f"{key}: checkpoint has {have}, expected {want}")
    shapes = cfg.param_shapes()
    if set(shapes) != set(tensors):
        missing = sorted(set(shapes) - set(tensors))
        extra = sorted(set(tensors) - set(shapes))
        raise ShapeError(f"tensor names differ from config: missing {missing}, unexpected {extra}")
    params = {}
    for name, shape in shapes.items():
        if tensors[name].shape != tuple(shape):
            raise ShapeError(f"{name}: shape {tensors[name].shape}, config implies {tuple(shape)}")
        params[name] = Parameter(name, tensors[name])
    model = MTCNN(cfg, params)
    model.metadata = header.get("metadata", {})
    return model


def load_into(model, path):
    """Copy checkpoint tensors into an existing model, checking every shape."""
    _, tensors = read_tensors(path)
    for name, p in model.params.items():
        if name not in tensors:
            raise ShapeError(f"{name}: missing from {path}")
        if tensors[name].shape != p.value.shape:
            raise ShapeError(f"{name}: checkpoint shape {tensors[name].shape}, model shape {p.value.shape}")
    for name, p in model.params.items():
        p.value[...] = tensors[name]
    return model


def save_embeddings(path, table):
    write_tensors(path, {"embedding": table}, {"config": {}, "metadata": {"kind": "embedding"}})


def load_embeddings(path):
    _, tensors = read_tensors(path)
    if "embedding" not in tensors:
        raise FormatError(f"{path}: no 'embedding' tensor")
    return tensors["embedding"]
