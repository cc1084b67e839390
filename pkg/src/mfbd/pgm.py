"""Binary PGM (P5, 16-bit) image output.

Grayscale estimates map [lo, hi] linearly onto the full 16-bit range.
Signed images (eigenvectors) use the mid-grey-is-zero convention: zero maps
to the middle grey level, negative values darker, positive lighter, with a
symmetric range so the mapping is odd.  No comments or timestamps are
written; identical arrays give identical bytes.
"""

from __future__ import annotations

import numpy as np

from .errors import DataFormatError

__all__ = ["write_pgm", "write_signed_pgm", "read_pgm"]

_MAXVAL = 65535


def _encode(path, levels):
    rows, cols = levels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n{_MAXVAL}\n".encode("ascii"))
        fh.write(levels.astype(">u2").tobytes())


def write_pgm(path, img, lo=None, hi=None):
    """Write a non-negative image; [lo, hi] spans the grey range."""
    img = np.asarray(img, dtype=np.float64)
    lo = float(img.min()) if lo is None else float(lo)
    hi = float(img.max()) if hi is None else float(hi)
    span = hi - lo
    if span <= 0:
        levels = np.zeros(img.shape, dtype=np.uint16)
    else:
        levels = np.clip(np.rint((img - lo) / span * _MAXVAL), 0, _MAXVAL).astype(np.uint16)
    _encode(path, levels)


def write_signed_pgm(path, img):
    """Write a signed image with 0 at mid-grey and a symmetric value range."""
    img = np.asarray(img, dtype=np.float64)
    amp = np.abs(img).max()
    if amp == 0:
        levels = np.full(img.shape, _MAXVAL // 2, dtype=np.uint16)
    else:
        levels = np.clip(np.rint((img / amp + 1.0) / 2.0 * _MAXVAL), 0, _MAXVAL)
        levels = levels.astype(np.uint16)
    _encode(path, levels)


def read_pgm(path):
    """Read a P5 PGM written by this module; returns a float array of levels."""
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if len(parts) < 4 or parts[0] != b"P5":
        raise DataFormatError(f"{path} is not a binary PGM file")
    try:
        cols, rows = (int(v) for v in parts[1].split())
        maxval = int(parts[2])
    except ValueError as exc:
        raise DataFormatError(f"malformed PGM header in {path}") from exc
    dtype = ">u2" if maxval > 255 else "u1"
    img = np.frombuffer(parts[3], dtype=dtype, count=rows * cols)
    return img.reshape(rows, cols).astype(np.float64)
