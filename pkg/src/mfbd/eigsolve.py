"""The eigenvector method: the image estimate as a bottom eigenvector.

For a signal subspace with orthonormal basis ``U`` and an image ``x``, the
operator applied here measures how much of each filter window of ``x``
falls outside the subspace:

    M* x = Q x + alpha * sum_{active windows w} B_w^T (I - U U^T) B_w x

where ``B_w`` crops the window at offset ``w``, the active windows are the
ones selected by the PSF footprint, and ``Q`` is the diagonal 0/1 penalty
on pixels not covered by any active window (which would otherwise be a
free, meaningless degree of freedom).  ``M*`` is symmetric positive
semidefinite with eigenvalues bounded by ``1 + alpha * |a|``, and the
undeteriorated image is its eigenvector of smallest eigenvalue (exactly in
the noise-free full-dimension case, approximately otherwise).

Two solvers are provided: Rayleigh quotient iteration (cubically
convergent; each step solves a shifted symmetric system with MINRES) and a
spectrum-shifted power iteration used for the cheap refinements inside the
footprint-estimation loop.

Footprints are stored in filter-entry order; this module converts to
window-offset order (a flip of both axes) in exactly one place, the
operator constructor.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator as ScipyLinearOperator
from scipy.sparse.linalg import minres

from .conv import MatrixFreeOperator, as_image, full_shape, valid_shape
from .errors import ConfigError, DimensionError, SolverError
from .footprint import Footprint, unobserved_penalty_mask
from .metrics import write_csv
from .subspace import SignalSubspace, SvdBackendChoice, estimate_dimension, identify_subspace
from .synth import ObservationSet

__all__ = [
    "SolveReport",
    "SubspaceResidualOperator",
    "rayleigh_solve",
    "power_refine",
    "estimate_footprint",
    "estimate_footprint_sectioned",
    "post_scale",
    "estimate_gap",
    "export_report",
]


@dataclass
class SolveReport:
    """Diagnostics of one eigenvector solve.

    ``mu_history`` holds the Rayleigh quotient per iteration (including the
    initial value, so its length is ``iterations + 1``); for the power
    solver the quotient is reported with respect to the residual operator
    itself, not the shifted one.  ``gap`` is the estimated distance to the
    second-smallest eigenvalue when it was computed; values close to zero
    mean the eigenvector is not uniquely determined.
    """

    mu_history: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_residual: float = float("nan")
    method: str = ""
    fallback: bool = False
    gap: float | None = None


class SubspaceResidualOperator(MatrixFreeOperator):
    """Matrix-free symmetric PSD operator of the eigenvector method.

    Immutable after construction; concurrent ``apply`` calls are safe and
    bit-identical to sequential ones (window batches are reduced in a fixed
    order).  The dense representation is never needed: windows are cropped,
    projected against ``U`` in batches (one GEMM per batch instead of one
    per window), and padded back.  Batch size defaults to ``max(8, m)``
    windows, keeping peak scratch memory at O(|x| + m |y|).
    """

    def __init__(self, sig, psf_shape, footprint=None, alpha=None, batch=None):
        if not isinstance(sig, SignalSubspace):
            raise ConfigError("a SignalSubspace is required")
        psf_shape = tuple(int(v) for v in psf_shape)
        footprint = footprint or Footprint.all_ones(psf_shape)
        if footprint.shape != psf_shape:
            raise DimensionError(f"footprint {footprint.shape} != filter shape {psf_shape}")
        self.sig = sig
        self.psf_shape = psf_shape
        self.footprint = footprint
        self.y_shape = sig.y_shape
        self.x_shape = full_shape(sig.y_shape, psf_shape)
        self.in_shape = self.out_shape = self.x_shape
        self.psf_size = psf_shape[0] * psf_shape[1]
        self.alpha = float(alpha) if alpha is not None else 1.0 / self.psf_size
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        self.U = np.ascontiguousarray(sig.signal_basis())
        self.m = self.U.shape[1]
        # single place where filter-entry order becomes window-offset order
        wm = footprint.window_mask()
        self.active_offsets = np.argwhere(wm == 1)
        self.penalty = unobserved_penalty_mask(footprint.h, self.y_shape)
        self.batch = int(batch) if batch else max(8, self.m)

    @property
    def upper_bound(self):
        """Upper bound on the spectrum: 1 + alpha * |a|."""
        return 1.0 + self.alpha * self.psf_size

    def with_footprint(self, footprint):
        """Same subspace and weights, different footprint."""
        return SubspaceResidualOperator(self.sig, self.psf_shape, footprint,
                                        alpha=self.alpha, batch=self.batch)

    def _window_batches(self, x):
        views = np.lib.stride_tricks.sliding_window_view(x, self.y_shape)
        for k0 in range(0, len(self.active_offsets), self.batch):
            chunk = self.active_offsets[k0:k0 + self.batch]
            rows = views[chunk[:, 0], chunk[:, 1]].reshape(len(chunk), -1)
            yield chunk, rows

    def apply(self, x):
        x = as_image(x, "x")
        if x.shape != self.x_shape:
            raise DimensionError(f"expected image shape {self.x_shape}, got {x.shape}")
        out = self.penalty * x
        yr, yc = self.y_shape
        for chunk, rows in self._window_batches(x):
            coeff = rows @ self.U
            proj = rows - coeff @ self.U.T
            proj *= self.alpha
            for (i, j), row in zip(chunk, proj):
                out[i:i + yr, j:j + yc] += row.reshape(yr, yc)
        return out

    apply_adjoint = apply  # symmetric

    def window_responses(self, x):
        """Per-active-window residual energies ``x^T M_w x`` (window order).

        Returns ``(offsets, responses)`` where offsets are the active window
        offsets in fixed row-major order.
        """
        x = as_image(x, "x")
        responses = np.empty(len(self.active_offsets))
        pos = 0
        for _, rows in self._window_batches(x):
            coeff = rows @ self.U
            responses[pos:pos + len(rows)] = (
                np.einsum("ij,ij->i", rows, rows) - np.einsum("ij,ij->i", coeff, coeff))
            pos += len(rows)
        return self.active_offsets.copy(), responses

    def shifted_scipy_operator(self, mu):
        """scipy LinearOperator of ``M* - mu I`` on flattened images."""
        n = self.in_size
        shape = self.x_shape

        def matvec(v):
            img = v.reshape(shape)
            return (self.apply(img) - mu * img).reshape(-1)

        return ScipyLinearOperator((n, n), matvec=matvec, rmatvec=matvec, dtype=np.float64)


def _normalized(v):
    nrm = np.linalg.norm(v)
    if nrm == 0:
        raise SolverError("solver produced a zero vector")
    return v / nrm


def _mean_sign(x):
    return -x if x.sum() < 0 else x


def rayleigh_solve(op, mu0=0.0, mu_delta=1e-3, seed=0, max_outer=60,
                   inner_rtol=1e-8, inner_maxiter=400):
    """Smallest-eigenvalue eigenvector via Rayleigh quotient iteration.

    Random unit start; each outer iteration solves the shifted system
    ``(M* - mu I) x' = x`` with MINRES (restarted once if the residual
    target is missed), normalizes, and updates ``mu`` to the Rayleigh
    quotient; iteration stops when ``mu`` moves less than ``mu_delta``.

    The inner shift is safeguarded by a tiny offset below ``mu``: the
    target eigenvalue sits at (or numerically near) zero, and an exactly
    singular shifted system would make a Krylov solver suppress precisely
    the eigenvector component being sought.  The offset keeps the first
    ``mu0 = 0`` solve consistent while changing nothing measurable in the
    regular noisy regime.  Inexact inner solves are fine; if MINRES stalls
    outright the solver falls back to power-iteration refinement (reported
    via the ``fallback`` flag).  Exceeding ``max_outer`` raises
    ``SolverError`` with the report attached.

    Returns ``(x, report)`` with unit-norm ``x`` flipped to non-negative mean.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0xE16, seed)))
    x = _normalized(rng.random(op.in_size))
    safeguard = 1e-6 * op.upper_bound
    report = SolveReport(mu_history=[float(mu0)], method="rayleigh")
    mu_next = float(mu0)
    mx = None
    for outer in range(1, max_outer + 1):
        mu = mu_next
        aop = op.shifted_scipy_operator(mu - safeguard)
        sol, info = minres(aop, x, rtol=inner_rtol, maxiter=inner_maxiter)
        if info > 0:
            sol, info = minres(aop, x, x0=sol, rtol=inner_rtol, maxiter=inner_maxiter)
        if info > 0:
            # a huge iterate along the eigenvector is RQI progress, not a
            # failure; a residual stuck at ||b|| with no growth is a stall
            resid = np.linalg.norm(aop.matvec(sol) - x)
            if resid > 0.9 and np.linalg.norm(sol) < 10.0:
                xw, rep = power_refine(op, x.reshape(op.x_shape), mu_delta=mu_delta / 10)
                rep.method = "rayleigh, stalled inner solve, power fallback"
                rep.fallback = True
                return xw, rep
        x = _normalized(sol)
        img = x.reshape(op.x_shape)
        mx = op.apply(img).reshape(-1)
        mu_next = float(x @ mx)
        report.mu_history.append(mu_next)
        report.iterations = outer
        if abs(mu_next - mu) < mu_delta:
            report.converged = True
            report.final_residual = float(np.linalg.norm(mx - mu_next * x))
            xout = _mean_sign(img)
            return xout / np.linalg.norm(xout), report
    report.final_residual = float(np.linalg.norm(mx - mu_next * x))
    raise SolverError(f"no convergence in {max_outer} Rayleigh iterations", report=report)


def power_refine(op, x0, mu_delta=1e-4, max_iter=100_000, mu_up=None):
    """Refine an estimate by power iterations on the shifted operator.

    Iterates ``Z = mu_up I - M*`` whose top eigenvector is the bottom
    eigenvector of ``M*``; ``mu_up`` defaults to the operator's spectrum
    bound.  Stops when the quotient moves less than ``mu_delta``.  The
    reported quotients are with respect to ``M*`` (i.e. ``mu_up - mu_Z``).

    Returns ``(x, report)``, unit norm, non-negative mean.
    """
    x0 = as_image(x0, "x0")
    if np.linalg.norm(x0) == 0:
        raise SolverError("power refinement needs a nonzero start")
    if mu_up is None:
        mu_up = op.upper_bound

    def z_apply(img):
        return mu_up * img - op.apply(img)

    x = x0 / np.linalg.norm(x0)
    w = z_apply(x)
    mu = float(np.vdot(x, w))
    report = SolveReport(mu_history=[mu_up - mu], method="power")
    for it in range(1, max_iter + 1):
        mu_prev = mu
        x = w / np.linalg.norm(w)
        w = z_apply(x)
        mu = float(np.vdot(x, w))
        report.mu_history.append(mu_up - mu)
        report.iterations = it
        if abs(mu - mu_prev) < mu_delta:
            report.converged = True
            break
    report.final_residual = float(np.linalg.norm(w - mu * x))
    xout = _mean_sign(x)
    return xout / np.linalg.norm(xout), report


def estimate_gap(op, x_hat, iters=60, seed=0):
    """Rough spectral gap: second-smallest minus smallest eigenvalue of M*.

    Runs a few power iterations on the shifted operator deflated against
    ``x_hat``.  Only used for reporting near-degenerate eigenvectors.
    """
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0x6A9, seed)))
    xh = (x_hat / np.linalg.norm(x_hat)).reshape(-1)
    mu_up = op.upper_bound
    v = rng.standard_normal(op.in_size)
    v -= (v @ xh) * xh
    v = _normalized(v)
    for _ in range(iters):
        w = mu_up * v - op.apply(v.reshape(op.x_shape)).reshape(-1)
        w -= (w @ xh) * xh
        v = _normalized(w)
    mu2 = v @ (op.apply(v.reshape(op.x_shape)).reshape(-1))
    img = xh.reshape(op.x_shape)
    mu_min = xh @ op.apply(img).reshape(-1)
    return float(mu2 - mu_min)


def _zero_count(active, m):
    """How many footprint entries to zero this round: ceil(excess/4), in [1, 8]."""
    excess = active - m
    return max(1, min(8, math.ceil(excess / 4), excess))


def estimate_footprint(sig, psf_shape, alpha=None, m=None, seed=0,
                       mu_delta=1e-3, refine_mu_delta=1e-4, batch=None,
                       polish_mu_delta=1e-6, max_polish=8):
    """Estimate the PSF footprint by alternating eigenvector and mask updates.

    Phase one starts from an all-ones footprint and a Rayleigh-quotient
    solve; each round scores every active window by its residual energy on
    the current estimate, zeroes the highest-scoring entries (ties to the
    lowest flattened window index), and refines the estimate with power
    iterations; the phase ends when the footprint has exactly ``m`` active
    entries (``m`` defaults to the subspace's selected dimension).

    Because the early rounds score against an estimate polluted by the
    still-active wrong windows, phase two polishes the mask to a fixed
    point of the underlying alternating minimization: solve accurately for
    the current mask, re-score all windows, keep the ``m`` smallest.  A
    mask cycle (unstable response ordering) stops the polish with the
    best-scoring mask seen and a warning.

    Returns ``(footprint, x_hat)`` with the footprint in filter-entry order.
    """
    psf_shape = tuple(int(v) for v in psf_shape)
    m = int(m) if m is not None else sig.m
    psf_size = psf_shape[0] * psf_shape[1]
    if m > psf_size:
        raise ConfigError(f"m={m} exceeds the filter size {psf_size}")
    op = SubspaceResidualOperator(sig, psf_shape, Footprint.all_ones(psf_shape),
                                  alpha=alpha, batch=batch)
    scorer = op
    x_hat, _ = rayleigh_solve(op, mu_delta=mu_delta, seed=seed)
    window_mask = np.ones(psf_shape, dtype=np.uint8)
    while int(window_mask.sum()) > m:
        offsets, responses = op.window_responses(x_hat)
        spread = responses.max() - responses.min()
        if spread <= 1e-12 * max(abs(responses.max()), 1e-300):
            warnings.warn("window responses are indistinguishable; stopping the "
                          "footprint search early", RuntimeWarning, stacklevel=2)
            return Footprint(window_mask[::-1, ::-1]), x_hat
        order = np.argsort(-responses, kind="stable")
        for k in order[:_zero_count(int(window_mask.sum()), m)]:
            window_mask[offsets[k][0], offsets[k][1]] = 0
        op = op.with_footprint(Footprint(window_mask[::-1, ::-1]))
        x_hat, _ = power_refine(op, x_hat, mu_delta=refine_mu_delta)

    seen = set()
    best = (np.inf, window_mask, x_hat)
    for _ in range(max_polish):
        op = scorer.with_footprint(Footprint(window_mask[::-1, ::-1]))
        x_hat, report = rayleigh_solve(op, mu_delta=polish_mu_delta, seed=seed)
        if report.mu_history[-1] < best[0]:
            best = (report.mu_history[-1], window_mask, x_hat)
        offsets, responses = scorer.window_responses(x_hat)
        order = np.argsort(responses, kind="stable")
        new_mask = np.zeros(psf_shape, dtype=np.uint8)
        for k in order[:m]:
            new_mask[offsets[k][0], offsets[k][1]] = 1
        if np.array_equal(new_mask, window_mask):
            break
        key = new_mask.tobytes()
        if key in seen:
            warnings.warn("footprint response ordering is unstable (cycle); "
                          "keeping the best mask seen", RuntimeWarning, stacklevel=2)
            _, window_mask, x_hat = best
            break
        seen.add(window_mask.tobytes())
        window_mask = new_mask
    return Footprint(window_mask[::-1, ::-1]), x_hat


def estimate_footprint_sectioned(obs, psf_shape, section_scale=4, choice=None,
                                 m=None, alpha=None, seed=0, inflate_d=None,
                                 mu_delta=1e-3, refine_mu_delta=1e-4):
    """Two-step footprint estimation on centered observation sections.

    Rebuilds the signal subspace from a centered section of every
    observation (width and height ``section_scale`` times the filter size,
    clipped to the frame) and runs :func:`estimate_footprint` there; only
    the footprint is returned, the full-size estimate is then computed by a
    direct :func:`rayleigh_solve` with it.  With ``inflate_d`` the sections
    are taken at all shift offsets, which sections the inflated sequence
    without materializing it; the returned footprint then lives on the
    inflated filter grid ``psf_shape + inflate_d - 1``.
    """
    if not isinstance(obs, ObservationSet):
        raise ConfigError("an ObservationSet is required")
    psf_shape = tuple(int(v) for v in psf_shape)
    d = tuple(int(v) for v in inflate_d) if inflate_d else (1, 1)
    eff_psf = (psf_shape[0] + d[0] - 1, psf_shape[1] + d[1] - 1)
    grid = valid_shape(obs.y_shape, d)
    sec = (min(int(section_scale * eff_psf[0]), grid[0]),
           min(int(section_scale * eff_psf[1]), grid[1]))
    if sec[0] < 3 * eff_psf[0] or sec[1] < 3 * eff_psf[1]:
        raise ConfigError(f"sections of {sec} are smaller than 3x the filter {eff_psf}")
    base = ((grid[0] - sec[0]) // 2, (grid[1] - sec[1]) // 2)
    pieces = [obs.cropped((base[0] + t1, base[1] + t2), sec).to_matrix().T
              for t1 in range(d[0]) for t2 in range(d[1])]
    sections = ObservationSet.from_array(np.concatenate(pieces, axis=0), y_shape=sec)
    choice = choice or SvdBackendChoice()
    strategy = "threshold" if m is None else "known"
    sub = identify_subspace(sections, eff_psf, choice, strategy=strategy, known_m=m)
    footprint, _ = estimate_footprint(sub, eff_psf, alpha=alpha, m=m, seed=seed,
                                      mu_delta=mu_delta, refine_mu_delta=refine_mu_delta)
    return footprint


def post_scale(x_hat, obs, clamp_nonneg=False):
    """Scale a unit-norm estimate so its mean matches the observations' mean.

    A zero-mean estimate cannot be scaled this way; it is returned unscaled
    with a warning.  ``clamp_nonneg`` clips negative pixels afterwards.
    """
    x_hat = as_image(x_hat, "x_hat")
    target = obs.mean_value() if isinstance(obs, ObservationSet) else float(np.mean(obs))
    mean = x_hat.mean()
    if abs(mean) < 1e-12 * max(np.abs(x_hat).max(), 1e-300):
        warnings.warn("estimate has (near-)zero mean; skipping brightness scaling",
                      RuntimeWarning, stacklevel=2)
        out = x_hat.copy()
    else:
        out = x_hat * (target / mean)
    if clamp_nonneg:
        out = np.clip(out, 0.0, None)
    return out


def export_report(report, path):
    """Write a solve report as CSV (one row per outer iteration)."""
    rows = [[i, mu] for i, mu in enumerate(report.mu_history)]
    write_csv(path, ["iteration", "mu"], rows)
