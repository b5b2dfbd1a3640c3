"""Checkpoint container: one JSON header line, then raw little-endian float32.

The header records a format version, an arbitrary JSON config, and a table
of (name, shape, byte offset) for every tensor, sorted by name. Tensor data
follows the header newline as contiguous '<f4' bytes. The encoding is
canonical (sorted names, sorted JSON keys, fixed dtype), so save -> load ->
save reproduces the file byte for byte.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def _to_f4(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.asarray(value, dtype="<f4")
    if arr.ndim and not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    return arr


def save_checkpoint(path, config: dict, tensors: Mapping[str, "torch.Tensor | np.ndarray"]) -> None:
    """Write tensors and config atomically (temp file + rename)."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = _to_f4(tensors[name])
        blob = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(blob)
        offset += len(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "config": config,
        "tensors": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(header_bytes + b"\n")
            for blob in blobs:
                fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    """Read (config, name -> float32 array) from a container file."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        data = fh.read()
    try:
        header = json.loads(header_line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad checkpoint header") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported format_version {header.get('format_version')!r}"
        )
    tensors: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        end = start + 4 * count
        if end > len(data):
            raise CheckpointError(f"{path}: tensor {entry['name']!r} runs past EOF")
        arr = np.frombuffer(data[start:end], dtype="<f4").reshape(shape).copy()
        tensors[entry["name"]] = arr
    return header["config"], tensors


def state_dict_tensors(module: torch.nn.Module, prefix: str = "") -> dict[str, torch.Tensor]:
    return {prefix + k: v for k, v in module.state_dict().items()}


def load_state_from_arrays(module: torch.nn.Module, arrays: Mapping[str, np.ndarray], prefix: str = "") -> None:
    state = {
        k[len(prefix):]: torch.from_numpy(np.array(v))
        for k, v in arrays.items()
        if k.startswith(prefix)
    }
    module.load_state_dict(state)
