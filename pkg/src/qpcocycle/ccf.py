"""Reader and writer for the CCF1 binary field format.

Layout (little endian): magic ``b"CCF1"``, u32 ell, u32 D, ell x u32 sizes,
then float64 samples row-major over the grid and then over matrix entries.
A D x D field stores N*D*D samples.  Vector fields (D x 1, e.g. a bundle
section) store N*D samples; the reader tells the two apart from the length.
"""

from __future__ import annotations

import hashlib
import os
import struct

import numpy as np

from .errors import InvalidInputError
from .fields import GridSpec, MatrixField, ScalarField

MAGIC = b"CCF1"


def encode(field: MatrixField) -> bytes:
    g = field.grid
    r, c = field.shape
    if c != r and c != 1:
        raise InvalidInputError(f"CCF1 stores D x D or D x 1 fields, got {r} x {c}")
    header = MAGIC + struct.pack("<II", g.ell, r) + struct.pack(f"<{g.ell}I", *g.sizes)
    data = np.ascontiguousarray(field.grid_values(), dtype="<f8")
    return header + data.tobytes()


def decode(buf: bytes) -> MatrixField:
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise InvalidInputError("not a CCF1 file (bad magic)")
    ell, dim = struct.unpack_from("<II", buf, 4)
    off = 12 + 4 * ell
    if ell == 0 or len(buf) < off:
        raise InvalidInputError("truncated CCF1 header")
    sizes = struct.unpack_from(f"<{ell}I", buf, 12)
    grid = GridSpec(sizes)
    count = (len(buf) - off) // 8
    if (len(buf) - off) % 8:
        raise InvalidInputError("CCF1 payload is not a whole number of float64 values")
    n = grid.n_points
    if count == n * dim * dim:
        shape = (dim, dim)
    elif count == n * dim:
        shape = (dim, 1)
    else:
        raise InvalidInputError(f"CCF1 payload has {count} values, expected {n * dim * dim}")
    vals = np.frombuffer(buf, dtype="<f8", count=count, offset=off).astype(float)
    vals = vals.reshape(grid.sizes + shape)
    if shape == (1, 1):
        return ScalarField(grid, values=vals)
    return MatrixField(grid, values=vals)


def write_field(path, field: MatrixField) -> str:
    """Write ``field`` to ``path``; returns the sha256 of the bytes written."""
    buf = encode(field)
    with open(path, "wb") as fh:
        fh.write(buf)
    return hashlib.sha256(buf).hexdigest()


def read_field(path) -> MatrixField:
    if not os.path.exists(path):
        raise InvalidInputError(f"no such field file: {path}")
    with open(path, "rb") as fh:
        return decode(fh.read())


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
