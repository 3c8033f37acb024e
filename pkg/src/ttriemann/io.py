"""Binary file formats.

``TTZ1`` (TT tensors): magic ``TTZ1``, little-endian u32 d, u32 n[0..d-1],
u32 ranks[0..d], then the cores in order, each as float64 little-endian in
the left-flattening column-major linearization (element ``(a, i, b)`` of a
core at position ``a + r0*i + r0*n*b``).

``SPT1`` (sparse tensors): magic ``SPT1``, u32 d, u32 n[0..d-1], u64 nnz,
then nnz records of (u32 index[d], f64 value), little-endian, 0-based
indices.
"""

from __future__ import annotations

import struct

import numpy as np

from .sparse import SparseTensor
from .tt import Shape, TTTensor

_TT_MAGIC = b"TTZ1"
_SP_MAGIC = b"SPT1"


def save_tt(path, X: TTTensor) -> None:
    with open(path, "wb") as f:
        f.write(_TT_MAGIC)
        f.write(struct.pack("<I", X.d))
        f.write(np.asarray(X.n, dtype="<u4").tobytes())
        f.write(np.asarray(X.ranks, dtype="<u4").tobytes())
        for c in X.cores:
            f.write(np.asarray(c, dtype="<f8").tobytes(order="F"))


def load_tt(path) -> TTTensor:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _TT_MAGIC:
            raise ValueError(f"bad magic {magic!r}; expected {_TT_MAGIC!r}")
        (d,) = struct.unpack("<I", f.read(4))
        if d < 2 or d > 10_000:
            raise ValueError(f"implausible order {d}")
        n = np.frombuffer(f.read(4 * d), dtype="<u4").astype(int)
        r = np.frombuffer(f.read(4 * (d + 1)), dtype="<u4").astype(int)
        shape = Shape(tuple(n), tuple(r))  # validates invariants
        cores = []
        for k in range(d):
            cnt = r[k] * n[k] * r[k + 1]
            buf = f.read(8 * cnt)
            if len(buf) != 8 * cnt:
                raise ValueError("truncated core data")
            flat = np.frombuffer(buf, dtype="<f8")
            cores.append(flat.reshape(r[k], n[k], r[k + 1], order="F").copy())
        if f.read(1):
            raise ValueError("trailing bytes after cores")
    assert shape.d == d
    return TTTensor(cores)


def save_sparse(path, sp: SparseTensor) -> None:
    d = sp.d
    rec = np.dtype([("idx", "<u4", (d,)), ("val", "<f8")])
    data = np.empty(sp.nnz, dtype=rec)
    data["idx"] = sp.indices
    data["val"] = sp.values
    with open(path, "wb") as f:
        f.write(_SP_MAGIC)
        f.write(struct.pack("<I", d))
        f.write(np.asarray(sp.n, dtype="<u4").tobytes())
        f.write(struct.pack("<Q", sp.nnz))
        f.write(data.tobytes())


def load_sparse(path) -> SparseTensor:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _SP_MAGIC:
            raise ValueError(f"bad magic {magic!r}; expected {_SP_MAGIC!r}")
        (d,) = struct.unpack("<I", f.read(4))
        if d < 1 or d > 10_000:
            raise ValueError(f"implausible order {d}")
        n = tuple(np.frombuffer(f.read(4 * d), dtype="<u4").astype(int))
        (nnz,) = struct.unpack("<Q", f.read(8))
        rec = np.dtype([("idx", "<u4", (d,)), ("val", "<f8")])
        buf = f.read(rec.itemsize * nnz)
        if len(buf) != rec.itemsize * nnz:
            raise ValueError("truncated records")
        if f.read(1):
            raise ValueError("trailing bytes after records")
        data = np.frombuffer(buf, dtype=rec)
    return SparseTensor(n, data["idx"].astype(np.int64), data["val"].copy())
