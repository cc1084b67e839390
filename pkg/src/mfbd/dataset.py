"""Versioned binary dataset files for observation sequences.

Layout (little-endian, 64-byte header, magic ``MFBD\\x00\\x01``):

====== ====== ===========================================
offset type   field
====== ====== ===========================================
0      6s     magic
6      u16    observation rows
8      u16    observation cols
10     u64    number of observations n
18     u8     dtype code (1 = float64 little-endian)
19     u8     flags (1 truth, 2 psfs, 4 footprint)
20     u16    psf rows
22     u16    psf cols
24     u16    truth rows (0 if absent)
26     u16    truth cols
28     f64    noise variance used at generation
36     28x    reserved (zeros)
====== ====== ===========================================

The payload starts at byte 64 with the n x |y| observation block, each
observation's pixels contiguous (the |y| x n matrix is column-major on
disk), followed by the optional ground truth, the per-frame PSFs, and the
footprint (one byte per filter entry).  The header fully determines the
block layout, so observations can be memory-mapped in place.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataFormatError
from .footprint import Footprint
from .synth import ObservationSet

__all__ = ["DatasetHeader", "write_dataset", "read_dataset", "MAGIC"]

MAGIC = b"MFBD\x00\x01"
_HEADER = struct.Struct("<6sHHQBBHHHHd28x")
HEADER_SIZE = _HEADER.size
assert HEADER_SIZE == 64

FLAG_TRUTH = 1
FLAG_PSFS = 2
FLAG_FOOTPRINT = 4
DTYPE_F64 = 1


@dataclass(frozen=True)
class DatasetHeader:
    y_shape: tuple
    n: int
    psf_shape: tuple
    noise_var: float
    has_truth: bool = False
    truth_shape: tuple = (0, 0)
    has_psfs: bool = False
    has_footprint: bool = False

    def pack(self):
        flags = (FLAG_TRUTH * self.has_truth | FLAG_PSFS * self.has_psfs
                 | FLAG_FOOTPRINT * self.has_footprint)
        return _HEADER.pack(MAGIC, self.y_shape[0], self.y_shape[1], self.n,
                            DTYPE_F64, flags, self.psf_shape[0], self.psf_shape[1],
                            self.truth_shape[0], self.truth_shape[1], self.noise_var)

    @classmethod
    def unpack(cls, raw):
        if len(raw) < HEADER_SIZE:
            raise DataFormatError("file too short for a dataset header")
        magic, yr, yc, n, dtype, flags, pr, pc, tr, tc, var = _HEADER.unpack(
            raw[:HEADER_SIZE])
        if magic != MAGIC:
            raise DataFormatError(f"bad magic {magic!r}; not a dataset file or "
                                  "unsupported version")
        if dtype != DTYPE_F64:
            raise DataFormatError(f"unsupported dtype code {dtype}")
        return cls(y_shape=(yr, yc), n=n, psf_shape=(pr, pc), noise_var=var,
                   has_truth=bool(flags & FLAG_TRUTH), truth_shape=(tr, tc),
                   has_psfs=bool(flags & FLAG_PSFS),
                   has_footprint=bool(flags & FLAG_FOOTPRINT))


def write_dataset(path, obs, psf_shape, noise_var=0.0, truth=None, psfs=None,
                  footprint=None):
    """Write observations plus optional ground truth, PSFs and footprint."""
    psf_shape = tuple(int(v) for v in psf_shape)
    header = DatasetHeader(
        y_shape=obs.y_shape, n=obs.n, psf_shape=psf_shape, noise_var=float(noise_var),
        has_truth=truth is not None,
        truth_shape=tuple(truth.shape) if truth is not None else (0, 0),
        has_psfs=psfs is not None, has_footprint=footprint is not None)
    with open(path, "wb") as fh:
        fh.write(header.pack())
        for _, block in obs.blocks():
            fh.write(block.astype("<f8").tobytes())
        if truth is not None:
            fh.write(np.asarray(truth, dtype="<f8").tobytes())
        if psfs is not None:
            for a in psfs:
                fh.write(np.asarray(a, dtype="<f8").tobytes())
        if footprint is not None:
            fh.write(footprint.h.astype("u1").tobytes())
    return header


def read_dataset(path, mem_budget=None):
    """Read a dataset; returns ``(obs, meta)``.

    Observations stay memory-mapped unless they fit ``mem_budget`` bytes
    (``None`` maps always).  ``meta`` carries the header plus any stored
    ground truth, PSFs, and footprint.
    """
    with open(path, "rb") as fh:
        header = DatasetHeader.unpack(fh.read(HEADER_SIZE))
    y_size = header.y_shape[0] * header.y_shape[1]
    obs_bytes = header.n * y_size * 8
    obs = ObservationSet.from_file(path, header.y_shape, header.n, offset=HEADER_SIZE)
    if mem_budget is not None and obs_bytes <= mem_budget:
        obs = ObservationSet(header.y_shape, header.n, data=obs._rows(0, header.n))
    meta = {"header": header, "truth": None, "psfs": None, "footprint": None}
    pos = HEADER_SIZE + obs_bytes
    psf_size = header.psf_shape[0] * header.psf_shape[1]
    with open(path, "rb") as fh:
        fh.seek(pos)
        if header.has_truth:
            tr, tc = header.truth_shape
            raw = fh.read(tr * tc * 8)
            if len(raw) != tr * tc * 8:
                raise DataFormatError("truncated ground-truth block")
            meta["truth"] = np.frombuffer(raw, dtype="<f8").reshape(tr, tc).copy()
        if header.has_psfs:
            raw = fh.read(header.n * psf_size * 8)
            if len(raw) != header.n * psf_size * 8:
                raise DataFormatError("truncated PSF block")
            flat = np.frombuffer(raw, dtype="<f8").reshape(header.n, *header.psf_shape)
            meta["psfs"] = [flat[i].copy() for i in range(header.n)]
        if header.has_footprint:
            raw = fh.read(psf_size)
            if len(raw) != psf_size:
                raise DataFormatError("truncated footprint block")
            meta["footprint"] = Footprint(
                np.frombuffer(raw, dtype="u1").reshape(header.psf_shape).copy())
    return obs, meta
