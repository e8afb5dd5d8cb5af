"""Tensor dump format for debugging: one text header line carrying the shape,
then the values as little-endian 32-bit floats."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..errors import BadMagic

HEADER_PREFIX = b"tensor"


def dump_tensor(path: str | Path, tensor: np.ndarray) -> None:
    arr = np.ascontiguousarray(tensor, dtype="<f4")
    header = " ".join([HEADER_PREFIX.decode()] + [str(d) for d in arr.shape]) + "\n"
    Path(path).write_bytes(header.encode("ascii") + arr.tobytes())


def load_tensor(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    newline = data.find(b"\n")
    if newline < 0 or not data.startswith(HEADER_PREFIX):
        raise BadMagic(f"{path} is not a tensor dump")
    fields = data[:newline].split()
    shape = tuple(int(d) for d in fields[1:])
    return np.frombuffer(data[newline + 1:], dtype="<f4").reshape(shape).copy()
