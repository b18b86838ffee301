"""Binary containers: "BPG1" for bilateral grids, "BPT1" for named tensors.

Both are little-endian with u32 header fields and IEEE-754 float32 data.
Writes are atomic (temp file in the target directory, then rename), so a
killed run never leaves a truncated container behind.

BPG1: magic, version=1, grid_count, then per grid
      [grid_h, grid_w, depth, P, align_flag, image_h, image_w] + cell data
      in [y][x][z][p] order.
BPT1: magic, version=1, entry_count, then per entry
      [name_len, utf-8 name, ndim, dims...] + data.
"""

import os
import struct
import tempfile

import numpy as np

from .grid import BilateralGrid, GridGeometry

GRID_MAGIC = b"BPG1"
TENSOR_MAGIC = b"BPT1"


class ContainerFormatError(ValueError):
    pass


def _atomic_write(path, payload):
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".bpam-tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _u32(*vals):
    return struct.pack(f"<{len(vals)}I", *vals)


def _read_u32(f, n=1):
    raw = f.read(4 * n)
    if len(raw) != 4 * n:
        raise ContainerFormatError("truncated container")
    return struct.unpack(f"<{n}I", raw)


def save_grids(path, grids):
    """Write one or more BilateralGrids to a BPG1 container."""
    parts = [GRID_MAGIC, _u32(1, len(grids))]
    for g in grids:
        geo = g.geometry
        parts.append(_u32(geo.grid_h, geo.grid_w, geo.depth, g.params_per_cell,
                          1 if geo.align_centers else 0, geo.image_h, geo.image_w))
        parts.append(np.ascontiguousarray(g.cells, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def load_grids(path):
    """Read a BPG1 container; returns a list of BilateralGrids (float32)."""
    with open(path, "rb") as f:
        if f.read(4) != GRID_MAGIC:
            raise ContainerFormatError(f"{path}: not a BPG1 container")
        version, count = _read_u32(f, 2)
        if version != 1:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        grids = []
        for _ in range(count):
            gh, gw, d, p, align, ih, iw = _read_u32(f, 7)
            geo = GridGeometry(gh, gw, d, ih, iw, align_centers=bool(align))
            n = gh * gw * d * p
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ContainerFormatError(f"{path}: truncated grid data")
            cells = np.frombuffer(raw, dtype="<f4").reshape(gh, gw, d, p).copy()
            grids.append(BilateralGrid(geo, cells))
    return grids


def save_tensors(path, tensors):
    """Write a name -> array mapping to a BPT1 container (float32 data)."""
    parts = [TENSOR_MAGIC, _u32(1, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        enc = name.encode("utf-8")
        parts.append(_u32(len(enc)))
        parts.append(enc)
        parts.append(_u32(arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    _atomic_write(path, b"".join(parts))


def load_tensors(path):
    """Read a BPT1 container into a name -> float32 array dict."""
    out = {}
    with open(path, "rb") as f:
        if f.read(4) != TENSOR_MAGIC:
            raise ContainerFormatError(f"{path}: not a BPT1 container")
        version, count = _read_u32(f, 2)
        if version != 1:
            raise ContainerFormatError(f"{path}: unsupported version {version}")
        for _ in range(count):
            (name_len,) = _read_u32(f)
            name = f.read(name_len).decode("utf-8")
            (ndim,) = _read_u32(f)
            shape = _read_u32(f, ndim) if ndim else ()
            n = int(np.prod(shape)) if shape else 1
            raw = f.read(4 * n)
            if len(raw) != 4 * n:
                raise ContainerFormatError(f"{path}: truncated tensor data")
            out[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    return out
