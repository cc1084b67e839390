"""Direct likelihood maximization over the image, with the filters eliminated.

The objective is ``phi(x) = sum_i lam_i ||P_X u_i||^2`` where ``P_X``
projects onto the range of the valid-convolution matrix of ``x`` and
``(u_i, lam_i)`` are the signal-subspace eigenpairs.  ``phi`` is maximized
by the image explaining the observed variance best; it is invariant to
scaling of ``x`` and non-convex, which is why the eigenvector method
exists.  This module keeps the plain gradient-ascent solver both as a
usable method and as the reference demonstrating that non-convexity.

Evaluation is matrix-free in the image: the only dense object is the small
filter-sized Gram matrix, assembled from the image windows and factorized
once per evaluation point.  All window bookkeeping is done in window-offset
order, in which the gradient takes the convenient form
``2 * conv_full(residual_i, coeff_i)`` with no index reversals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .conv import as_image, conv_full, valid_shape, window_matrix
from .errors import DimensionError, RankDeficiencyError
from .metrics import ni_rms, write_csv

__all__ = ["MleState", "phi", "grad_phi", "phi_and_grad", "gradient_ascent",
           "export_history"]


@dataclass
class MleState:
    """Result of a gradient-ascent run.

    ``history`` holds one entry per visited iterate (length ``t + 1``):
    objective value, gradient norm, and the norm-invariant RMS against the
    ground truth when one was supplied.
    """

    x: np.ndarray
    t: int
    history: dict = field(default_factory=dict)
    diverged: bool = False
    converged: bool = False


def _factor_gram(x, psf_shape):
    """Window matrix and Cholesky factor of the filter-sized Gram matrix."""
    crops = window_matrix(x, psf_shape)
    gram = crops @ crops.T
    try:
        cho = scipy.linalg.cho_factor(gram, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise RankDeficiencyError(
            f"image is not persistently exciting for filter shape {tuple(psf_shape)}") from exc
    return crops, cho


def _check_shapes(x, sig, psf_shape):
    if valid_shape(x.shape, psf_shape) != sig.y_shape:
        raise DimensionError(
            f"image {x.shape} with filter {tuple(psf_shape)} does not produce "
            f"observations of shape {sig.y_shape}")


def phi(x, sig, psf_shape):
    """The likelihood objective: weighted projection energy of the eigenvectors."""
    return phi_and_grad(x, sig, psf_shape, need_grad=False)[0]


def grad_phi(x, sig, psf_shape):
    """Analytic gradient of :func:`phi` with respect to the image."""
    return phi_and_grad(x, sig, psf_shape)[1]


def phi_and_grad(x, sig, psf_shape, need_grad=True):
    """Evaluate ``phi`` and (optionally) its gradient in one factorization.

    For each retained eigenvector: solve the Gram system for the optimal
    filter coefficients, measure the projection length, and accumulate the
    gradient as a full convolution of the projection residual with the
    coefficient filter.
    """
    x = as_image(x, "x")
    psf_shape = tuple(int(v) for v in psf_shape)
    _check_shapes(x, sig, psf_shape)
    crops, cho = _factor_gram(x, psf_shape)
    u = sig.signal_basis()
    lam = sig.lam[:sig.m]
    cu = crops @ u  # filter-coefficient right-hand sides, one column per u_i
    w = scipy.linalg.cho_solve(cho, cu, check_finite=False)
    value = float(np.sum(lam * np.sum(cu * w, axis=0)))
    if not need_grad:
        return value, None
    resid = u - crops.T @ w
    grad = np.zeros(x.shape)
    for i in range(u.shape[1]):
        grad += (2.0 * lam[i]) * conv_full(resid[:, i].reshape(sig.y_shape),
                                           w[:, i].reshape(psf_shape))
    return value, grad


def gradient_ascent(x0, sig, psf_shape, tau=1.0, max_iter=1000, grad_tol=None,
                    x_true=None, divergence_patience=10, callback=None):
    """Fixed-step gradient ascent ``x <- x + tau * grad(x)``.

    Stops at ``max_iter`` or when the gradient norm falls below ``grad_tol``
    (default ``1e-8 * lam_1``).  A sustained decrease of the objective over
    ``divergence_patience`` consecutive steps is reported via the state's
    ``diverged`` flag and stops the run; it is not an error.  When
    ``x_true`` is given the history also tracks the norm-invariant RMS.
    """
    if tau < 0:
        raise DimensionError("step size must be non-negative")
    if grad_tol is None:
        grad_tol = 1e-8 * sig.lam[0]
    x = as_image(x0, "x0").copy()
    hist = {"phi": [], "grad_norm": []}
    if x_true is not None:
        hist["ni_rms"] = []

    def record(value, grad):
        hist["phi"].append(value)
        hist["grad_norm"].append(float(np.linalg.norm(grad)))
        if x_true is not None:
            hist["ni_rms"].append(ni_rms(x, x_true))

    value, grad = phi_and_grad(x, sig, psf_shape)
    record(value, grad)
    state = MleState(x=x, t=0, history=hist)
    drops = 0
    for t in range(1, max_iter + 1):
        if hist["grad_norm"][-1] < grad_tol:
            state.converged = True
            break
        if tau == 0.0:
            break
        x += tau * grad
        value_new, grad = phi_and_grad(x, sig, psf_shape)
        record(value_new, grad)
        state.t = t
        if callback is not None:
            callback(state)
        drops = drops + 1 if value_new < value else 0
        value = value_new
        if drops > divergence_patience:
            state.diverged = True
            break
    state.x = x
    return state


def export_history(state, path):
    """Write the ascent history as CSV: iteration, phi, grad norm, NI-RMS."""
    has_rms = "ni_rms" in state.history
    header = ["iteration", "phi", "grad_norm"] + (["ni_rms"] if has_rms else [])
    rows = []
    for t in range(len(state.history["phi"])):
        row = [t, state.history["phi"][t], state.history["grad_norm"][t]]
        if has_rms:
            row.append(state.history["ni_rms"][t])
        rows.append(row)
    write_csv(path, header, rows)
