"""Checkpoint persistence: JSON manifest + named arrays in a flat binary file.

A checkpoint is a directory holding:

    manifest.json   architecture dims, seeds, loss history, free-form metadata
    arrays.bin      every tensor of the state dict, in the layout below

arrays.bin layout (little-endian):

    magic   8 bytes             b"MIXARCK1"
    count   uint32              number of arrays
    then per array:
        name_len  uint32        UTF-8 byte length of the name
        name      name_len bytes
        dtype_len uint32        numpy dtype string, e.g. "<f4"
        dtype     dtype_len bytes
        ndim      uint32
        shape     ndim * uint64
        payload   prod(shape) * itemsize bytes, row-major (C order)

No pickling anywhere, so checkpoints are portable and inspectable.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DependencyError

MAGIC = b"MIXARCK1"


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr)
            name_b = name.encode("utf-8")
            dtype_b = arr.dtype.str.encode("ascii")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", len(dtype_b)))
            fh.write(dtype_b)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes(order="C"))


def read_arrays(path: str | Path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path, "rb") as fh:
        if fh.read(8) != MAGIC:
            raise DependencyError(f"{path} is not a checkpoint arrays file")
        (count,) = struct.unpack("<I", fh.read(4))
        for _ in range(count):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (dtype_len,) = struct.unpack("<I", fh.read(4))
            dtype = np.dtype(fh.read(dtype_len).decode("ascii"))
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if ndim else dtype.itemsize
            payload = fh.read(n_bytes)
            arrays[name] = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return arrays


def save_checkpoint(
    out_dir: str | Path, manifest: dict, state_dict: dict[str, torch.Tensor]
) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    write_arrays(out_dir / "arrays.bin", {k: v.detach().cpu().numpy() for k, v in state_dict.items()})
    return out_dir


def load_manifest(ckpt_dir: str | Path) -> dict:
    path = Path(ckpt_dir) / "manifest.json"
    if not path.exists():
        raise DependencyError(f"missing checkpoint manifest {path}")
    with open(path) as fh:
        return json.load(fh)


def load_state_dict(ckpt_dir: str | Path) -> dict[str, torch.Tensor]:
    path = Path(ckpt_dir) / "arrays.bin"
    if not path.exists():
        raise DependencyError(f"missing checkpoint arrays {path}")
    return {k: torch.from_numpy(v) for k, v in read_arrays(path).items()}
