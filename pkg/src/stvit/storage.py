"""Tensor binary files and named-weight directories.

File format: magic "STVT", u32 version (=1), u8 dtype code (0=f64, 1=f32),
u8 rank, u64 extents[rank], then the flat row-major data, all little-endian.
A weight directory holds one file per named tensor plus a manifest.json
mapping names to files and recording shape metadata.
"""
from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError, ShapeError

MAGIC = b"STVT"
VERSION = 1

_DTYPE_TO_CODE = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_CODE_TO_DTYPE = {0: np.dtype("<f8"), 1: np.dtype("<f4")}
_MAX_RANK = 16


def save_tensor(path, array) -> None:
    """Write one tensor to `path` in the binary format."""
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_TO_CODE:
        raise ConfigError(f"tensor files hold f64 or f32, got dtype {arr.dtype}")
    if arr.ndim < 1 or arr.ndim > _MAX_RANK:
        raise ShapeError(f"tensor rank must be 1..{_MAX_RANK}, got {arr.ndim}")
    if any(e < 1 for e in arr.shape):
        raise ShapeError(f"tensor extents must all be >= 1, got {arr.shape}")
    arr = np.ascontiguousarray(arr)
    code = _DTYPE_TO_CODE[arr.dtype]
    header = struct.pack("<4sIBB", MAGIC, VERSION, code, arr.ndim)
    header += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    data = arr.astype(_CODE_TO_DTYPE[code], copy=False).tobytes(order="C")
    Path(path).write_bytes(header + data)


def load_tensor(path) -> np.ndarray:
    """Read one tensor, validating magic, version, dtype code and payload size."""
    raw = Path(path).read_bytes()
    if len(raw) < 10:
        raise ConfigError(f"tensor file {path} truncated before header")
    magic, version, code, rank = struct.unpack_from("<4sIBB", raw, 0)
    if magic != MAGIC:
        raise ConfigError(f"tensor file {path} has bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ConfigError(f"tensor file {path} has unsupported version {version}")
    if code not in _CODE_TO_DTYPE:
        raise ConfigError(f"tensor file {path} has unknown dtype code {code}")
    if rank < 1 or rank > _MAX_RANK:
        raise ConfigError(f"tensor file {path} has invalid rank {rank}")
    offset = 10
    if len(raw) < offset + 8 * rank:
        raise ConfigError(f"tensor file {path} truncated inside extents")
    extents = struct.unpack_from(f"<{rank}Q", raw, offset)
    offset += 8 * rank
    if any(e < 1 for e in extents):
        raise ConfigError(f"tensor file {path} has zero extent in shape {extents}")
    dtype = _CODE_TO_DTYPE[code]
    count = int(np.prod(extents))
    expected = offset + count * dtype.itemsize
    if len(raw) != expected:
        raise ConfigError(
            f"tensor file {path} has {len(raw)} bytes, expected {expected} for shape {extents}"
        )
    flat = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    # native byte order, own buffer
    return flat.astype(dtype.newbyteorder("="), copy=True).reshape(extents)


def save_weight_dir(dirpath, tensors: dict, meta: dict) -> None:
    """Write named tensors plus manifest.json into a directory."""
    root = Path(dirpath)
    root.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in sorted(tensors):
        filename = name + ".stvt"
        save_tensor(root / filename, tensors[name])
        files[name] = filename
    manifest = {"format_version": VERSION, "meta": meta, "tensors": files}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_weight_dir(dirpath) -> tuple:
    """Load a weight directory; returns (tensors dict, meta dict)."""
    root = Path(dirpath)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"weights manifest not found: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    tensors = {}
    for name, filename in manifest["tensors"].items():
        path = root / filename
        if not path.is_file():
            raise ConfigError(f"weights tensor file missing: {path}")
        tensors[name] = load_tensor(path)
    return tensors, manifest.get("meta", {})


def weight_dir_hash(dirpath) -> str:
    """Content hash of a weight directory (manifest plus tensor bytes, name order)."""
    root = Path(dirpath)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise ConfigError(f"weights manifest not found: {manifest_path}")
    digest = hashlib.sha256()
    digest.update(manifest_path.read_bytes())
    manifest = json.loads(manifest_path.read_text())
    for name in sorted(manifest["tensors"]):
        digest.update(name.encode())
        digest.update((root / manifest["tensors"][name]).read_bytes())
    return digest.hexdigest()
