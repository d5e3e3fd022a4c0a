"""Checkpoint serialization.

Format (little-endian): magic "BCVW", u32 version=1, u64 block count, then
per block: u32 name length, name bytes (utf-8), u32 rank, u64 dims, 32-bit
float data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DatasetError

MAGIC = b"BCVW"
VERSION = 1


def save_named_params(path, modules: dict[str, torch.nn.Module]) -> None:
    """Write all parameters of the given modules as named float32 blocks."""
    blocks = []
    for mod_name, module in modules.items():
        for p_name, param in module.state_dict().items():
            blocks.append((f"{mod_name}.{p_name}",
                           param.detach().cpu().numpy().astype("<f4")))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(blocks)))
        for name, arr in blocks:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())


def load_named_params(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as a flat name -> array mapping."""
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            if fh.read(4) != MAGIC:
                raise DatasetError(f"{path}: bad magic")
            version, count = struct.unpack("<IQ", fh.read(12))
            if version != VERSION:
                raise DatasetError(f"{path}: unsupported version {version}")
            out = {}
            for _ in range(count):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                (rank,) = struct.unpack("<I", fh.read(4))
                dims = struct.unpack(f"<{rank}Q", fh.read(8 * rank)) if rank \
                    else ()
                n = int(np.prod(dims)) if dims else 1
                data = np.frombuffer(fh.read(4 * n), dtype="<f4")
                out[name] = data.reshape(dims)
            return out
    except OSError as exc:
        raise DatasetError(f"cannot read {path}: {exc}") from exc


def restore_modules(path, modules: dict[str, torch.nn.Module]) -> None:
    """Load a checkpoint into existing modules (shapes must match)."""
    flat = load_named_params(path)
    for mod_name, module in modules.items():
        state = {}
        prefix = mod_name + "."
        for key, arr in flat.items():
            if key.startswith(prefix):
                state[key[len(prefix):]] = torch.from_numpy(arr.copy())
        module.load_state_dict(
            {k: v.to(dict(module.state_dict())[k].dtype)
             for k, v in state.items()})
