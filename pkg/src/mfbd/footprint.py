"""PSF footprints: binary masks over filter entries, and the pixel masks they induce.

A footprint marks which filter entries are nonzero in at least one frame of
the sequence.  It is stored in filter-entry order (same layout as a PSF
array).  Because filter entry ``(k, l)`` weights the image window at offset
``(rows-1-k, cols-1-l)``, code that works with windows uses
:meth:`Footprint.window_mask`, the flipped copy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .conv import as_image, conv_full, flip2
from .errors import DimensionError

__all__ = ["Footprint", "observed_mask", "unobserved_penalty_mask", "dilate",
           "disk_footprint"]


@dataclass(frozen=True)
class Footprint:
    """Binary mask over filter entries; at least one entry must be set."""

    h: np.ndarray  # 2-D uint8 array, filter-entry order

    def __post_init__(self):
        h = np.asarray(self.h)
        if h.ndim != 2 or h.size == 0:
            raise DimensionError(f"footprint must be 2-D, got shape {h.shape}")
        if not np.isin(h, (0, 1)).all():
            raise DimensionError("footprint entries must be 0 or 1")
        if h.sum() < 1:
            raise DimensionError("footprint must have at least one active entry")
        object.__setattr__(self, "h", h.astype(np.uint8))

    @property
    def shape(self):
        return self.h.shape

    @property
    def count(self):
        """Number of active filter entries."""
        return int(self.h.sum())

    def window_mask(self):
        """The same mask in window-offset order (both axes reversed)."""
        return flip2(self.h).copy()

    def __eq__(self, other):
        return isinstance(other, Footprint) and self.h.shape == other.h.shape \
            and bool((self.h == other.h).all())

    @classmethod
    def all_ones(cls, shape):
        return cls(np.ones(shape, dtype=np.uint8))

    @classmethod
    def from_psfs(cls, psfs, tol=0.0):
        """Footprint of a PSF collection: entries nonzero in at least one frame."""
        stack = np.stack([as_image(p, "psf") for p in psfs])
        return cls((np.abs(stack) > tol).any(axis=0).astype(np.uint8))


def observed_mask(h, y_shape):
    """Boolean image mask of pixels covered by at least one active window.

    ``h`` is a footprint array in filter-entry order (or a :class:`Footprint`);
    the output has the image shape ``y_shape + h.shape - 1``.  A pixel is
    observed iff it lies in some window whose offset is active, which is the
    full convolution of the flipped footprint with an all-ones observation.
    """
    if isinstance(h, Footprint):
        h = h.h
    h = np.asarray(h, dtype=np.float64)
    cover = conv_full(flip2(h), np.ones(tuple(y_shape)))
    return cover >= 0.5


def unobserved_penalty_mask(h, y_shape):
    """Float 0/1 mask of unobserved pixels (the diagonal penalty weights)."""
    return 1.0 - observed_mask(h, y_shape).astype(np.float64)


def dilate(footprint, d_shape):
    """Footprint of shift-inflated filters: the mask dilated by a d-shaped box.

    Inflating convolves every filter with shifted deltas of shape
    ``d_shape``, so the inflated filters live on the original support
    dilated by the delta grid; the result has shape ``h.shape + d_shape - 1``.
    """
    h = footprint.h if isinstance(footprint, Footprint) else np.asarray(footprint)
    cover = conv_full(h.astype(np.float64), np.ones(tuple(d_shape)))
    return Footprint((cover >= 0.5).astype(np.uint8))


def disk_footprint(shape, count):
    """Deterministic blob-shaped footprint with exactly ``count`` active entries.

    Cells are ranked by distance from the grid center (row-major tie break)
    and the nearest ``count`` are activated.  Used by the bundled experiment
    presets, e.g. 57 active entries in a 10 x 10 filter.
    """
    rows, cols = (int(v) for v in shape)
    if not 1 <= count <= rows * cols:
        raise DimensionError(f"count {count} out of range for {shape} footprint")
    ci, cj = (rows - 1) / 2.0, (cols - 1) / 2.0
    cells = [((i - ci) ** 2 + (j - cj) ** 2, i, j) for i in range(rows) for j in range(cols)]
    cells.sort()
    h = np.zeros((rows, cols), dtype=np.uint8)
    for _, i, j in cells[:count]:
        h[i, j] = 1
    return Footprint(h)
