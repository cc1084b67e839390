"""Quantitative evaluation: norm-invariant RMS, subspace angles, masks.

The norm-invariant RMS rescales the estimate to the ground truth's norm
before measuring, so it is blind to the overall brightness ambiguity of
blind deconvolution.  Eigenvector estimates also carry an arbitrary sign;
the metric minimizes over both signs of the rescaling factor (the raw
formula would report spuriously large errors for anti-correlated inputs).
Unobserved pixels (those outside every retained filter window) can be
masked out of the evaluation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, MetricError
from .footprint import Footprint, observed_mask

__all__ = ["EvalMask", "ni_rms", "subspace_angle", "write_csv"]


@dataclass(frozen=True)
class EvalMask:
    """Per-pixel evaluation mask; True marks observed pixels."""

    observed: np.ndarray

    def __post_init__(self):
        obs = np.asarray(self.observed, dtype=bool)
        if obs.ndim != 2 or not obs.any():
            raise DimensionError("mask must be 2-D with at least one observed pixel")
        object.__setattr__(self, "observed", obs)

    @property
    def shape(self):
        return self.observed.shape

    @classmethod
    def from_footprint(cls, footprint, y_shape):
        """Pixels contributing to at least one retained filter window."""
        h = footprint.h if isinstance(footprint, Footprint) else footprint
        return cls(observed_mask(h, y_shape))


def ni_rms(x, x_true, mask=None):
    """Norm-invariant RMS error of ``x`` against ``x_true``.

    Computes ``min_s (1/sqrt(N)) * ||x_true - s * (||x_true||/||x||) * x||``
    over the sign ``s`` in {+1, -1}, restricted to the masked pixels (norms
    and the pixel count N included).  Raises for a zero-norm estimate.
    """
    x = np.asarray(x, dtype=np.float64)
    t = np.asarray(x_true, dtype=np.float64)
    if x.shape != t.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {t.shape}")
    if mask is not None:
        keep = mask.observed if isinstance(mask, EvalMask) else np.asarray(mask, dtype=bool)
        if keep.shape != x.shape:
            raise DimensionError(f"mask shape {keep.shape} does not match {x.shape}")
        x, t = x[keep], t[keep]
    x, t = x.ravel(), t.ravel()
    nx = np.linalg.norm(x)
    if nx == 0.0:
        raise MetricError("norm-invariant RMS is undefined for a zero estimate")
    scaled = (np.linalg.norm(t) / nx) * x
    plus = np.linalg.norm(t - scaled)
    minus = np.linalg.norm(t + scaled)
    return min(plus, minus) / np.sqrt(x.size)


def subspace_angle(u1, u2):
    """Principal angles (radians, ascending) between the column spans.

    Cross-Gram singular values after orthonormalization give the cosines;
    angles whose cosine is close to 1 are recomputed from the sine-based
    complement, which stays accurate near zero.
    """
    q1 = _orth(u1)
    q2 = _orth(u2)
    if q1.shape[0] != q2.shape[0]:
        raise DimensionError("subspaces live in different ambient dimensions")
    if q1.shape[1] > q2.shape[1]:
        q1, q2 = q2, q1
    cosines = np.linalg.svd(q1.T @ q2, compute_uv=False)
    cosines = np.clip(cosines, -1.0, 1.0)
    theta = np.arccos(cosines)  # ascending (cosines are descending)
    small = cosines ** 2 >= 0.5
    if small.any():
        sines = np.linalg.svd(q2 - q1 @ (q1.T @ q2), compute_uv=False)
        sines = np.sort(np.clip(sines, -1.0, 1.0))[:q1.shape[1]]  # ascending, paired
        theta[small] = np.arcsin(sines[small])
    return theta


def _orth(u):
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] == 0:
        raise DimensionError("expected a non-empty 2-D basis array")
    q, r = np.linalg.qr(u)
    if np.abs(np.diag(r)).min() <= 1e-12 * max(np.abs(np.diag(r)).max(), 1e-300):
        raise DimensionError("rank-deficient basis passed to subspace_angle")
    return q


def write_csv(path, header, rows):
    """Write a metric table with stable float formatting (repr round-trip)."""
    def fmt(v):
        if isinstance(v, (float, np.floating)):
            return repr(float(v))
        if isinstance(v, (int, np.integer)):
            return str(int(v))
        return str(v)

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
