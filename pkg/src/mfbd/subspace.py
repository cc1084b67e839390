"""Signal-subspace identification from observation sequences.

The signal subspace is the span of the noise-free observations.  It is
recovered from the top eigenpairs of the empirical covariance
``(1/n) Y Y^T`` (PCA without mean subtraction), obtained through a
truncated SVD of ``Y``: the left singular vectors are the eigenvectors and
``lambda_i = s_i^2 / n``.  Three interchangeable backends are provided:

``dense``
    The in-memory reference; exact up to the dense SVD itself.
``randomized``
    Sketch-based with subspace (power) iterations; touches ``Y`` only
    through block dot products, so it works on off-memory sets.
``single_pass``
    Streams the observations exactly once against two sketches.  Cheap,
    but known to lose accuracy on noisy data; prefer ``randomized`` there.

Inflation synthesizes shifted observations to raise the subspace dimension.
Because ``range(D_t Y) = range(D_t U S)``, it never materializes the
shifted sequence: it stacks cropped, singular-value-scaled eigenvector
images and runs a small dense SVD on the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conv import valid_shape
from .errors import ConfigError, DimensionError, MemoryBudgetError
from .synth import ObservationSet

__all__ = [
    "SignalSubspace",
    "SvdBackendChoice",
    "svd_truncated",
    "identify_subspace",
    "estimate_dimension",
    "inflate",
]

DENSE_BUDGET_DEFAULT = 2 << 30  # bytes of observation data the dense backend will load


@dataclass(frozen=True)
class SignalSubspace:
    """Truncated eigenpairs of the observation covariance.

    ``U`` has orthonormal columns (eigenvector images, flattened row-major
    over ``y_shape``); ``lam`` is descending and non-negative; ``m`` is the
    selected signal dimension; ``n`` the number of observations behind the
    estimate.
    """

    U: np.ndarray
    lam: np.ndarray
    m: int
    n: int
    y_shape: tuple

    def __post_init__(self):
        if self.U.shape[0] != self.y_shape[0] * self.y_shape[1]:
            raise DimensionError("eigenvector length does not match y_shape")
        if self.U.shape[1] != self.lam.shape[0]:
            raise DimensionError("eigenvalue count does not match eigenvector count")
        if np.any(np.diff(self.lam) > 1e-12 * max(self.lam[0], 1.0)):
            raise DimensionError("eigenvalues must be sorted descending")
        if not 1 <= self.m <= self.U.shape[1]:
            raise DimensionError(f"m={self.m} out of range for rank {self.U.shape[1]}")

    @property
    def rank(self):
        return self.U.shape[1]

    def signal_basis(self):
        """The first m eigenvector columns."""
        return self.U[:, :self.m]

    def eigenvector_image(self, i):
        return self.U[:, i].reshape(self.y_shape)


@dataclass(frozen=True)
class SvdBackendChoice:
    """Which truncated-SVD backend to run and with what knobs.

    ``oversampling`` trades work for noise robustness in the sketched
    backends; ``power_iters`` applies to the randomized backend only;
    ``block_bytes`` bounds the per-block memory of off-memory products.
    """

    kind: str = "dense"
    rank: int = 0  # 0 = caller decides (identify_subspace uses the filter size)
    oversampling: int = 10
    power_iters: int = 2
    block_bytes: int = 0  # 0 = the observation set's default
    seed: int = 0
    dense_budget: int = field(default=DENSE_BUDGET_DEFAULT, repr=False)

    def __post_init__(self):
        if self.kind not in ("dense", "randomized", "single_pass"):
            raise ConfigError(f"unknown svd backend {self.kind!r}")
        if self.rank < 0 or self.oversampling < 0:
            raise ConfigError("rank and oversampling must be non-negative")


def _as_observation_set(y):
    if isinstance(y, ObservationSet):
        return y
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError("expected an ObservationSet or a 2-D matrix")
    # interpret a plain matrix as |y| x n with row-vector pixel layout
    return ObservationSet.from_array(arr.T, y_shape=(1, arr.shape[0]))


def _orthonormalize(a):
    q, _ = np.linalg.qr(a)
    return q


def _svd_dense(obs, rank, choice):
    y = obs.to_matrix(mem_budget=choice.dense_budget)
    u, s, vt = np.linalg.svd(y, full_matrices=False)
    return u[:, :rank], s[:rank], vt[:rank].T


def _svd_randomized(obs, rank, choice):
    p = min(rank + choice.oversampling, min(obs.y_size, obs.n))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0x5BD, choice.seed)))
    sketch = obs.matmul(rng.standard_normal((obs.n, p)))
    for _ in range(choice.power_iters):
        sketch = obs.matmul(obs.rmatmul(_orthonormalize(sketch)))
    q = _orthonormalize(sketch)
    b = obs.rmatmul(q).T  # p x n
    ub, s, vt = np.linalg.svd(b, full_matrices=False)
    return (q @ ub)[:, :rank], s[:rank], vt[:rank].T


def _svd_single_pass(obs, rank, choice):
    p = min(rank + choice.oversampling, min(obs.y_size, obs.n))
    rng = np.random.default_rng(np.random.SeedSequence(entropy=(0x51A55, choice.seed)))
    omega = rng.standard_normal((obs.n, p))
    psi = rng.standard_normal((obs.y_size, p))
    range_sketch = np.zeros((obs.y_size, p))
    corange_sketch = np.empty((obs.n, p))
    for j0, block in obs.blocks():  # the single pass over the columns of Y
        range_sketch += block.T @ omega[j0:j0 + block.shape[0]]
        corange_sketch[j0:j0 + block.shape[0]] = block @ psi
    q = _orthonormalize(range_sketch)
    qt = _orthonormalize(corange_sketch)
    # psi^T Y qt ~= (psi^T q) b  with  b = q^T Y qt
    b, *_ = np.linalg.lstsq(psi.T @ q, corange_sketch.T @ qt, rcond=None)
    ub, s, vbt = np.linalg.svd(b, full_matrices=False)
    return (q @ ub)[:, :rank], s[:rank], (qt @ vbt.T)[:, :rank]


_BACKENDS = {"dense": _svd_dense, "randomized": _svd_randomized, "single_pass": _svd_single_pass}


def svd_truncated(y, choice=None, rank=None):
    """Truncated SVD of the observation matrix via the chosen backend.

    Returns ``(V, s, W)`` with orthonormal ``V`` columns and descending
    ``s``; ``rank`` overrides ``choice.rank``.  ``y`` may be an
    :class:`ObservationSet` or a plain |y| x n array.
    """
    choice = choice or SvdBackendChoice()
    obs = _as_observation_set(y)
    r = rank if rank is not None else choice.rank
    if r < 1:
        raise ConfigError("a positive target rank is required")
    if r > min(obs.y_size, obs.n):
        raise ConfigError(f"rank {r} exceeds min(|y|, n) = {min(obs.y_size, obs.n)}")
    return _BACKENDS[choice.kind](obs, r, choice)


def estimate_dimension(lam, n=None, strategy="threshold", rel_tol=1e-10, abs_tol=0.0,
                       known=None):
    """Select the signal-subspace dimension from descending eigenvalues.

    ``threshold``: count eigenvalues above ``rel_tol * lam[0] + abs_tol``
    (the noise-free rank rule).  ``kink``: the largest consecutive ratio
    after the first eigenvalue, a heuristic for noisy spectra whose first
    eigenvalue reflects the non-zero mean.  ``known``: trust the caller.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if strategy == "known":
        if known is None or not 1 <= int(known) <= lam.size:
            raise ConfigError(f"known dimension {known!r} out of range")
        return int(known)
    if strategy == "threshold":
        cut = rel_tol * (lam[0] if lam.size else 0.0) + abs_tol
        return max(1, int(np.count_nonzero(lam > cut)))
    if strategy == "kink":
        if lam.size < 3:
            return lam.size
        with np.errstate(divide="ignore"):
            ratios = lam[1:-1] / np.maximum(lam[2:], 1e-300)
        return int(np.argmax(ratios)) + 2
    raise ConfigError(f"unknown dimension strategy {strategy!r}")


def identify_subspace(y, psf_dim, choice=None, strategy="threshold", known_m=None,
                      rel_tol=1e-10, abs_tol=0.0):
    """Identify the signal subspace of an observation sequence.

    ``psf_dim`` is the filter entry count (or a filter shape); the top
    ``choice.rank or psf_dim`` eigenpairs of ``(1/n) Y Y^T`` are computed
    through :func:`svd_truncated` and ``m`` is selected per ``strategy``.
    """
    choice = choice or SvdBackendChoice()
    obs = _as_observation_set(y)
    if not np.isscalar(psf_dim):
        psf_dim = int(psf_dim[0]) * int(psf_dim[1])
    r = choice.rank or int(psf_dim)
    r = min(r, obs.y_size, obs.n)
    v, s, _ = svd_truncated(obs, choice, rank=r)
    lam = s * s / obs.n
    m = estimate_dimension(lam, obs.n, strategy=strategy, rel_tol=rel_tol,
                           abs_tol=abs_tol, known=known_m)
    return SignalSubspace(U=v, lam=lam, m=m, n=obs.n, y_shape=obs.y_shape)


def inflate(source, d_shape, psf_shape=None, choice=None, strategy="threshold",
            known_m=None, rel_tol=1e-10):
    """Inflate a signal subspace by synthesizing shift-cropped observations.

    ``source`` is a :class:`SignalSubspace` (or an :class:`ObservationSet`,
    identified first with ``choice``).  Every eigenvector image is cropped
    at each of the ``d_shape`` offsets and scaled by its singular value;
    a dense SVD of the stack gives the inflated subspace.  Observation
    windows shrink to ``y_shape - d_shape + 1`` and filters grow to
    ``psf_shape + d_shape - 1``; the effective sample count becomes
    ``n * |d|``.  Returns ``(subspace, new_psf_shape)`` where the new shape
    is ``None`` when ``psf_shape`` was not given.
    """
    d_shape = tuple(int(v) for v in d_shape)
    if d_shape[0] < 1 or d_shape[1] < 1:
        raise DimensionError("inflation filter must be at least 1 x 1")
    if isinstance(source, ObservationSet) or not isinstance(source, SignalSubspace):
        obs = _as_observation_set(source)
        if psf_shape is None:
            raise ConfigError("psf_shape is required when inflating raw observations")
        source = identify_subspace(obs, psf_shape, choice, strategy=strategy,
                                   known_m=known_m, rel_tol=rel_tol)
    ys = source.y_shape
    if d_shape[0] >= ys[0] or d_shape[1] >= ys[1]:
        raise DimensionError(f"inflation filter {d_shape} too large for observations {ys}")
    new_ys = valid_shape(ys, d_shape)
    m0 = source.m
    s = np.sqrt(source.lam[:m0] * source.n)
    scaled = (source.U[:, :m0] * s).T.reshape(m0, *ys)
    blocks = []
    for t1 in range(d_shape[0]):
        for t2 in range(d_shape[1]):
            win = scaled[:, t1:t1 + new_ys[0], t2:t2 + new_ys[1]]
            blocks.append(win.reshape(m0, -1).T)
    stacked = np.concatenate(blocks, axis=1)
    u, sv, _ = np.linalg.svd(stacked, full_matrices=False)
    n_eff = source.n * d_shape[0] * d_shape[1]
    lam = sv * sv / n_eff
    m = estimate_dimension(lam, n_eff, strategy=strategy, rel_tol=rel_tol, known=known_m)
    sub = SignalSubspace(U=u, lam=lam, m=m, n=n_eff, y_shape=new_ys)
    new_psf = None
    if psf_shape is not None:
        new_psf = (psf_shape[0] + d_shape[0] - 1, psf_shape[1] + d_shape[1] - 1)
    return sub, new_psf
