"""Synthetic observation sequences under the valid-convolution forward model.

Each observation is ``y_i = a_i *_valid x_true + eps_i`` with per-frame PSFs
drawn from a seeded PSF subspace and i.i.d. Gaussian pixel noise.  The PSF
sampling recipe (the papers in this area give none): the first basis vector
of every subspace is the normalized box filter on the footprint support, a
sample is box + zero-mean Gaussian coefficients on the remaining basis
vectors, then clipped to be non-negative and renormalized to sum 1.  When
the subspace is the full space on the footprint support, clipping keeps the
sample inside the subspace; for proper subspaces use a small ``spread`` so
clipping (which would leave the subspace) almost surely never triggers.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .conv import as_image, conv_valid, valid_shape, window_matrix
from .errors import ConfigError, DimensionError, MemoryBudgetError
from .footprint import Footprint

__all__ = [
    "PsfSubspace",
    "SequenceSpec",
    "ObservationSet",
    "ground_truth_image",
    "sample_psf_subspace",
    "sample_psf",
    "generate_sequence",
    "persistently_exciting",
]

DEFAULT_MEM_BUDGET = 1 << 29  # 512 MiB of observation data before spilling to disk


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ------------------------------------------------------------ ground truth

def ground_truth_image(shape, kind="shapes", seed=0):
    """Bundled procedural grayscale test images with values in [0, 255].

    ``"shapes"``: gradients, ellipses and a mild broadband texture (the
    texture keeps the image persistently exciting for small filters).
    ``"uniform"``: i.i.d. uniform pixels, the standard rank-experiment input.
    """
    rows, cols = (int(v) for v in shape)
    rng = _as_rng(np.random.SeedSequence(entropy=(0xA11CE, seed)))
    if kind == "uniform":
        return rng.uniform(0.0, 255.0, (rows, cols))
    if kind != "shapes":
        raise ConfigError(f"unknown ground-truth kind {kind!r}")
    i = np.arange(rows)[:, None] / max(rows - 1, 1)
    j = np.arange(cols)[None, :] / max(cols - 1, 1)
    img = 70.0 + 60.0 * i + 25.0 * np.cos(2.0 * np.pi * 3.0 * j)
    for _ in range(6):
        ci, cj = rng.uniform(0.1, 0.9, 2)
        ai, aj = rng.uniform(0.05, 0.35, 2)
        level = rng.uniform(-70.0, 90.0)
        mask = ((i - ci) / ai) ** 2 + ((j - cj) / aj) ** 2 <= 1.0
        img = np.where(mask, np.clip(img + level, 0.0, 255.0), img)
    img += rng.uniform(-12.0, 12.0, (rows, cols))
    return np.clip(img, 0.0, 255.0)


# ------------------------------------------------------------ PSF subspace

@dataclass(frozen=True)
class PsfSubspace:
    """Orthonormal basis of a PSF subspace, supported on an optional footprint.

    ``basis`` has one flattened filter per row; the first row is the
    normalized box filter on the support.
    """

    basis: np.ndarray  # (m0, psf_rows * psf_cols)
    psf_shape: tuple
    footprint: Footprint | None = None

    @property
    def m0(self):
        return self.basis.shape[0]

    def basis_images(self):
        return [row.reshape(self.psf_shape) for row in self.basis]


def sample_psf_subspace(psf_shape, m0, footprint=None, seed=0):
    """Draw an m0-dimensional orthonormal PSF basis supported on the footprint."""
    psf_shape = tuple(int(v) for v in psf_shape)
    size = psf_shape[0] * psf_shape[1]
    if footprint is not None:
        if footprint.shape != psf_shape:
            raise DimensionError(f"footprint shape {footprint.shape} != psf shape {psf_shape}")
        support = np.flatnonzero(footprint.h.reshape(-1))
    else:
        support = np.arange(size)
    if not 1 <= m0 <= support.size:
        raise ConfigError(f"m0={m0} exceeds the {support.size} free filter entries")
    rng = _as_rng(seed)
    cnt = support.size
    cols = np.empty((cnt, m0))
    cols[:, 0] = 1.0 / np.sqrt(cnt)
    if m0 > 1:
        cols[:, 1:] = rng.standard_normal((cnt, m0 - 1))
    q, _ = np.linalg.qr(cols)
    if q[:, 0] @ cols[:, 0] < 0:
        q[:, 0] = -q[:, 0]
    basis = np.zeros((m0, size))
    basis[:, support] = q.T
    return PsfSubspace(basis=basis, psf_shape=psf_shape, footprint=footprint)


def sample_psf(subspace, seed, spread=0.25, max_retries=32):
    """Draw one proper PSF from the subspace (see the module docstring).

    ``spread`` is the expected L2 size of the random component relative to
    the box-filter component.  Degenerate draws (all-zero after clipping)
    are resampled; after ``max_retries`` failures an error is raised.
    """
    rng = _as_rng(seed)
    m0 = subspace.m0
    scale = spread / np.sqrt(max(m0 - 1, 1))
    for _ in range(max_retries):
        raw = subspace.basis[0].copy()
        if m0 > 1:
            raw += (rng.standard_normal(m0 - 1) * scale) @ subspace.basis[1:]
        clipped = np.clip(raw, 0.0, None)
        total = clipped.sum()
        if total > 1e-9:
            return (clipped / total).reshape(subspace.psf_shape)
    raise ConfigError(f"all {max_retries} PSF draws degenerated to zero after clipping")


# ------------------------------------------------------------ observations

class ObservationSet:
    """A sequence of observations: the columns of the |y| x n data matrix.

    Backed either by an in-memory array or by a raw float64 file region
    (observations stored contiguously, so the matrix is column-major on
    disk).  All linear algebra goes through observation blocks of at least
    ``block_bytes`` so in-memory and off-memory sets behave identically;
    block traversal order is fixed, making reductions deterministic.
    """

    def __init__(self, y_shape, n, data=None, path=None, offset=0, block_bytes=None):
        self.y_shape = tuple(int(v) for v in y_shape)
        self.n = int(n)
        self.y_size = self.y_shape[0] * self.y_shape[1]
        if (data is None) == (path is None):
            raise ConfigError("exactly one of data/path must be given")
        if data is not None:
            data = np.asarray(data, dtype=np.float64)
            if data.shape != (self.n, self.y_size):
                raise DimensionError(f"data shape {data.shape} != ({self.n}, {self.y_size})")
        self._data = data
        self._path = path
        self._offset = int(offset)
        self.block_bytes = int(block_bytes) if block_bytes else max(self.y_size * 8, 1 << 20)

    @classmethod
    def from_array(cls, arr, y_shape=None):
        """Wrap an (n, rows, cols) stack or an (n, |y|) matrix of observations."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim == 3:
            y_shape = arr.shape[1:]
            arr = arr.reshape(arr.shape[0], -1)
        elif y_shape is None:
            y_shape = (1, arr.shape[1])
        return cls(y_shape, arr.shape[0], data=arr.reshape(arr.shape[0], -1))

    @classmethod
    def from_file(cls, path, y_shape, n, offset=0, block_bytes=None):
        return cls(y_shape, n, path=path, offset=offset, block_bytes=block_bytes)

    @property
    def in_memory(self):
        return self._data is not None

    def _mmap(self):
        return np.memmap(self._path, dtype="<f8", mode="r", offset=self._offset,
                         shape=(self.n, self.y_size))

    def _rows(self, j0, j1):
        if self._data is not None:
            return self._data[j0:j1]
        return np.asarray(self._mmap()[j0:j1], dtype=np.float64)

    def blocks(self, block_cols=None):
        """Yield ``(j0, block)`` pairs; ``block`` holds observations as rows."""
        if block_cols is None:
            block_cols = max(1, self.block_bytes // (self.y_size * 8))
        for j0 in range(0, self.n, block_cols):
            j1 = min(self.n, j0 + block_cols)
            yield j0, self._rows(j0, j1)

    def observation(self, i):
        """The i-th observation as a 2-D image."""
        return self._rows(i, i + 1).reshape(self.y_shape)

    def matmul(self, w):
        """Y @ w for an (n, p) array, accumulated over blocks."""
        w = np.asarray(w, dtype=np.float64)
        out = np.zeros((self.y_size, w.shape[1]))
        for j0, block in self.blocks():
            out += block.T @ w[j0:j0 + block.shape[0]]
        return out

    def rmatmul(self, z):
        """Y^T @ z for a (|y|, p) array, filled block by block."""
        z = np.asarray(z, dtype=np.float64)
        out = np.empty((self.n, z.shape[1]))
        for j0, block in self.blocks():
            out[j0:j0 + block.shape[0]] = block @ z
        return out

    def to_matrix(self, mem_budget=None):
        """The |y| x n matrix in memory; refuses beyond ``mem_budget`` bytes."""
        bytes_needed = self.y_size * self.n * 8
        if mem_budget is not None and bytes_needed > mem_budget:
            raise MemoryBudgetError(
                f"{bytes_needed} bytes of observations exceed the {mem_budget} byte budget")
        return self._rows(0, self.n).T.copy()

    def mean_value(self):
        """Mean pixel value over all observations."""
        total = 0.0
        for _, block in self.blocks():
            total += block.sum()
        return total / (self.n * self.y_size)

    def cropped(self, offset, shape):
        """New in-memory set of the same window cropped from every observation."""
        r0, c0 = offset
        r1, c1 = r0 + shape[0], c0 + shape[1]
        if r0 < 0 or c0 < 0 or r1 > self.y_shape[0] or c1 > self.y_shape[1]:
            raise DimensionError(f"section {shape} at {offset} leaves observations {self.y_shape}")
        out = np.empty((self.n, shape[0] * shape[1]))
        for j0, block in self.blocks():
            imgs = block.reshape(-1, *self.y_shape)
            out[j0:j0 + block.shape[0]] = imgs[:, r0:r1, c0:c1].reshape(block.shape[0], -1)
        return ObservationSet(shape, self.n, data=out)


@dataclass(frozen=True)
class SequenceSpec:
    """Everything that determines a synthetic sequence (bit-reproducibly)."""

    ground_truth: np.ndarray
    psf_shape: tuple
    m0: int
    n: int
    noise_var: float = 0.0
    seed: int = 0
    footprint: Footprint | None = None
    psf_spread: float = 0.25
    mem_budget: int = field(default=DEFAULT_MEM_BUDGET, repr=False)

    def __post_init__(self):
        x = as_image(self.ground_truth, "ground truth")
        object.__setattr__(self, "ground_truth", x)
        ps = tuple(int(v) for v in self.psf_shape)
        object.__setattr__(self, "psf_shape", ps)
        if ps[0] >= x.shape[0] and ps[1] >= x.shape[1]:
            raise ConfigError(f"psf shape {ps} must be smaller than the image {x.shape}")
        if self.n < 1:
            raise ConfigError("n must be at least 1")
        if self.noise_var < 0:
            raise ConfigError("noise_var must be non-negative")


def generate_sequence(spec, storage_dir=None):
    """Generate ``(observations, psfs)`` for a :class:`SequenceSpec`.

    The PSFs that produced each frame are returned for test oracles only.
    Sequences larger than ``spec.mem_budget`` bytes are written to a raw
    float64 scratch file under ``storage_dir`` (or the system tmpdir).
    Generation is sequential so identical specs give bit-identical output.
    """
    x = spec.ground_truth
    ys = valid_shape(x.shape, spec.psf_shape)
    y_size = ys[0] * ys[1]
    root = np.random.SeedSequence(spec.seed)
    seed_sub, seed_coeff, seed_noise = root.spawn(3)
    subspace = sample_psf_subspace(spec.psf_shape, spec.m0, spec.footprint, seed=seed_sub)
    rng_coeff = np.random.default_rng(seed_coeff)
    rng_noise = np.random.default_rng(seed_noise)
    sigma = np.sqrt(spec.noise_var)

    total_bytes = spec.n * y_size * 8
    spill = total_bytes > spec.mem_budget
    if spill:
        fd, path = tempfile.mkstemp(suffix=".mfbd-raw", dir=storage_dir)
        sink = os.fdopen(fd, "wb")
    else:
        buf = np.empty((spec.n, y_size))

    psfs = []
    for i in range(spec.n):
        a = sample_psf(subspace, rng_coeff, spread=spec.psf_spread)
        psfs.append(a)
        y = conv_valid(x, a)
        if sigma > 0:
            y = y + rng_noise.normal(0.0, sigma, ys)
        if spill:
            sink.write(y.astype("<f8").tobytes())
        else:
            buf[i] = y.reshape(-1)
    if spill:
        sink.close()
        obs = ObservationSet.from_file(path, ys, spec.n)
    else:
        obs = ObservationSet(ys, spec.n, data=buf)
    return obs, psfs


# ---------------------------------------------------- persistent excitation

def persistently_exciting(x, psf_shape, rel_tol=1e-10, probe_elements=4_000_000):
    """True iff the valid-convolution operator of ``x`` has full column rank.

    Small problems build the window matrix densely; above ``probe_elements``
    window entries the Gram matrix is accumulated over row strips instead
    (same result, bounded memory).
    """
    x = as_image(x, "x")
    psf_shape = tuple(int(v) for v in psf_shape)
    if psf_shape[0] >= x.shape[0] and psf_shape[1] >= x.shape[1]:
        raise DimensionError(f"psf shape {psf_shape} must be smaller than the image {x.shape}")
    ys = valid_shape(x.shape, psf_shape)
    a_size = psf_shape[0] * psf_shape[1]
    if a_size * ys[0] * ys[1] <= probe_elements:
        c = window_matrix(x, psf_shape)
        gram = c @ c.T
    else:
        gram = np.zeros((a_size, a_size))
        strip = max(1, probe_elements // (a_size * ys[1]))
        for r0 in range(0, ys[0], strip):
            r1 = min(ys[0], r0 + strip)
            sub = x[r0:r1 + psf_shape[0] - 1, :]
            c = window_matrix(sub, psf_shape)
            gram += c @ c.T
    ev = np.linalg.eigvalsh(gram)
    top = ev[-1]
    if top <= 0:
        return False
    rank = int(np.count_nonzero(ev > rel_tol * top))
    return rank == a_size
