"""Manifest + raw-tensor checkpoint directories.

A checkpoint is a directory holding ``manifest.json`` plus one raw
binary file per tensor: little-endian float64, row-major, no header.
The manifest lists every tensor (name, shape, file) alongside arbitrary
metadata.  Round-trips are bit-exact.  All files are written atomically
(temp + rename) so an interrupted writer never leaves a readable but
truncated checkpoint: the manifest is written last and is the validity
marker.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

from .errors import FormatError

MANIFEST_NAME = "manifest.json"
_FORMAT_VERSION = 1


def atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def save_checkpoint(directory: str, tensors: dict, metadata: dict) -> None:
    """Write tensors and metadata as a checkpoint directory."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    for name in tensors:
        arr = np.ascontiguousarray(np.asarray(tensors[name], dtype=np.float64))
        fname = f"{name}.bin"
        atomic_write_bytes(os.path.join(directory, fname), arr.astype("<f8").tobytes(order="C"))
        entries.append({"name": name, "shape": list(arr.shape), "file": fname})
    manifest = {
        "format_version": _FORMAT_VERSION,
        "dtype": "float64",
        "byte_order": "little",
        "order": "row_major",
        "tensors": entries,
        "metadata": metadata,
    }
    atomic_write_text(
        os.path.join(directory, MANIFEST_NAME),
        json.dumps(manifest, indent=2, sort_keys=True) + "\n",
    )


def load_checkpoint(directory: str) -> tuple[dict, dict]:
    """Read a checkpoint directory; returns (tensors, metadata)."""
    manifest_path = os.path.join(directory, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise FormatError(f"no {MANIFEST_NAME} in {directory}")
    try:
        with open(manifest_path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"unparseable manifest in {directory}: {exc}") from exc
    if manifest.get("format_version") != _FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version in {directory}")
    tensors = {}
    for entry in manifest.get("tensors", []):
        path = os.path.join(directory, entry["file"])
        shape = tuple(int(s) for s in entry["shape"])
        expected = int(np.prod(shape, dtype=np.int64)) * 8
        with open(path, "rb") as fh:
            payload = fh.read()
        if len(payload) != expected:
            raise FormatError(
                f"tensor file {path} has {len(payload)} bytes, expected {expected}",
                byte_offset=min(len(payload), expected),
            )
        arr = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        tensors[entry["name"]] = arr
    return tensors, manifest.get("metadata", {})
