import numpy as np
import pytest
import scipy.linalg

from mfbd import subspace, synth
from mfbd.errors import ConfigError, MemoryBudgetError
from mfbd.metrics import subspace_angle
from mfbd.subspace import SvdBackendChoice, estimate_dimension, identify_subspace, inflate


def _rank_limited_matrix(rng, rows, cols, rank, gap=4.0):
    u = np.linalg.qr(rng.normal(size=(rows, rank)))[0]
    w = np.linalg.qr(rng.normal(size=(cols, rank)))[0]
    s = gap ** np.arange(rank, 0, -1)
    return (u * s) @ w.T


def test_rank_one_outer_product():
    rng = np.random.default_rng(0)
    u = rng.normal(size=30)
    v = rng.normal(size=12)
    y = np.outer(u, v)
    vv, s, _ = subspace.svd_truncated(y, SvdBackendChoice("dense", rank=4))
    assert abs(s[0] - np.linalg.norm(u) * np.linalg.norm(v)) < 1e-10 * s[0]
    assert np.all(s[1:] < 1e-10 * s[0])


def test_randomized_matches_dense():
    rng = np.random.default_rng(1)
    y = _rank_limited_matrix(rng, 200, 500, 20, gap=2.0)
    y = y + 1e-8 * rng.normal(size=y.shape)
    dv, ds, _ = subspace.svd_truncated(y, SvdBackendChoice("dense", rank=20))
    rv, rs, _ = subspace.svd_truncated(
        y, SvdBackendChoice("randomized", rank=20, oversampling=10, power_iters=2, seed=3))
    assert np.abs(rs - ds).max() < 1e-6 * ds[0]
    assert subspace_angle(dv, rv).max() < 1e-4


def test_single_pass_exact_on_noise_free_synthetic():
    x = synth.ground_truth_image((24, 24), kind="uniform", seed=2)
    spec = synth.SequenceSpec(x, (4, 4), m0=10, n=300, noise_var=0.0, seed=5,
                              psf_spread=0.1)
    obs, _ = synth.generate_sequence(spec)
    dv, _, _ = subspace.svd_truncated(obs, SvdBackendChoice("dense", rank=10))
    sv, _, _ = subspace.svd_truncated(obs, SvdBackendChoice("single_pass", rank=10, seed=1))
    assert subspace_angle(dv, sv).max() < 1e-6


def test_backends_reconstruct_full_svd_triplet():
    rng = np.random.default_rng(7)
    y = _rank_limited_matrix(rng, 60, 40, 8)
    for kind in ("dense", "randomized", "single_pass"):
        v, s, w = subspace.svd_truncated(y, SvdBackendChoice(kind, rank=8, seed=2))
        assert np.abs((v * s) @ w.T - y).max() < 1e-6 * s[0]
        np.testing.assert_allclose(v.T @ v, np.eye(8), atol=1e-8)


def test_rank_too_large_and_budget_errors():
    y = np.random.default_rng(0).normal(size=(10, 6))
    with pytest.raises(ConfigError):
        subspace.svd_truncated(y, SvdBackendChoice("dense", rank=7))
    with pytest.raises(MemoryBudgetError):
        subspace.svd_truncated(y, SvdBackendChoice("dense", rank=3, dense_budget=16))


def test_eigenvalue_law_and_consistency():
    x = synth.ground_truth_image((14, 14), kind="uniform", seed=0)
    spec = synth.SequenceSpec(x, (3, 3), m0=9, n=40, noise_var=0.5, seed=1)
    obs, _ = synth.generate_sequence(spec)
    sub = identify_subspace(obs, (3, 3), SvdBackendChoice("dense"))
    y = obs.to_matrix()
    # lambda_i = s_i^2 / n against an independent eigendecomposition
    ev = np.linalg.eigvalsh(y @ y.T / obs.n)[::-1][:sub.rank]
    assert np.abs(sub.lam - ev).max() < 1e-10 * max(ev[0], 1.0)
    # eigenvalue/eigenvector consistency of the dense backend
    cov = y @ y.T / obs.n
    for i in range(sub.m):
        r = cov @ sub.U[:, i] - sub.lam[i] * sub.U[:, i]
        assert np.linalg.norm(r) <= 1e-6 * sub.lam[0]


def test_identify_subspace_n_equals_1():
    x = synth.ground_truth_image((10, 10), seed=3)
    spec = synth.SequenceSpec(x, (3, 3), m0=9, n=1, noise_var=0.0, seed=0)
    obs, _ = synth.generate_sequence(spec)
    sub = identify_subspace(obs, (3, 3), SvdBackendChoice("dense"))
    assert sub.m == 1 and sub.rank == 1


def test_estimate_dimension_strategies():
    lam = np.array([5.0, 3.0, 1e-14, 1e-16])
    assert estimate_dimension(lam) == 2
    lam_flat = np.full(6, 2.5)
    assert estimate_dimension(lam_flat) == 6
    assert estimate_dimension(lam, strategy="known", known=3) == 3
    with pytest.raises(ConfigError):
        estimate_dimension(lam, strategy="known", known=9)
    # kink ignores the first drop-off
    lam_kink = np.array([100.0, 9.0, 8.0, 7.5, 0.9, 0.8, 0.7])
    assert estimate_dimension(lam_kink, strategy="kink") == 4


def test_fig4_style_kink_noise_free():
    # 1-D generator: m0=10, |a|=70, |y|=1000, noise-free
    rng = np.random.default_rng(11)
    x = rng.uniform(0, 255, (1, 1069))
    spec = synth.SequenceSpec(x, (1, 70), m0=10, n=600, noise_var=0.0, seed=4,
                              psf_spread=0.1)
    obs, _ = synth.generate_sequence(spec)
    sub = identify_subspace(obs, (1, 70), SvdBackendChoice("randomized", seed=1))
    assert sub.m == 10
    assert estimate_dimension(sub.lam, strategy="kink") == 10


def test_noisy_eigenvalue_shift():
    # lam_noisy ~= lam_clean + sigma^2 for the signal part, at large n
    rng = np.random.default_rng(5)
    x = rng.uniform(0, 16, (1, 129))
    var = 30.0
    clean = synth.SequenceSpec(x, (1, 30), m0=6, n=50_000, noise_var=0.0, seed=9,
                               psf_spread=0.3)
    noisy = synth.SequenceSpec(x, (1, 30), m0=6, n=50_000, noise_var=var, seed=9,
                               psf_spread=0.3)
    obs_c, _ = synth.generate_sequence(clean)
    obs_n, _ = synth.generate_sequence(noisy)
    choice = SvdBackendChoice("randomized", rank=8, seed=0)
    lam_c = identify_subspace(obs_c, (1, 30), choice).lam
    lam_n = identify_subspace(obs_n, (1, 30), choice).lam
    want = lam_c[:6] + var
    assert np.all(np.abs(lam_n[:6] - want) <= 0.10 * want)


def test_misalignment_monotone_in_noise():
    # mean principal angle between estimated and true signal subspace
    # is non-decreasing in the noise level (averaged over seeds)
    levels = [0.0, 0.1, 1.0, 10.0]
    means = np.zeros(len(levels))
    n_seeds = 5
    for seed in range(n_seeds):
        rng = np.random.default_rng(100 + seed)
        x = rng.uniform(0, 255, (1, 279))
        ref_spec = synth.SequenceSpec(x, (1, 30), m0=8, n=2000, noise_var=0.0,
                                      seed=seed, psf_spread=0.2)
        obs_ref, _ = synth.generate_sequence(ref_spec)
        true_sub = identify_subspace(obs_ref, (1, 30), SvdBackendChoice("dense", rank=8))
        for li, var in enumerate(levels):
            spec = synth.SequenceSpec(x, (1, 30), m0=8, n=2000, noise_var=var,
                                      seed=seed, psf_spread=0.2)
            obs, _ = synth.generate_sequence(spec)
            est = identify_subspace(obs, (1, 30), SvdBackendChoice("dense", rank=8),
                                    strategy="known", known_m=8)
            ang = subspace_angle(true_sub.U[:, :8], est.U[:, :8])
            means[li] += ang.mean() / n_seeds
    assert np.all(np.diff(means) >= -1e-12)


def test_inflate_identity_for_1x1():
    x = synth.ground_truth_image((16, 16), kind="uniform", seed=1)
    spec = synth.SequenceSpec(x, (3, 3), m0=5, n=60, noise_var=0.0, seed=2,
                              psf_spread=0.1)
    obs, _ = synth.generate_sequence(spec)
    sub = identify_subspace(obs, (3, 3), SvdBackendChoice("dense"))
    inflated, new_psf = inflate(sub, (1, 1), psf_shape=(3, 3))
    assert new_psf == (3, 3)
    assert inflated.y_shape == sub.y_shape
    assert subspace_angle(sub.U[:, :sub.m], inflated.U[:, :inflated.m]).max() < 1e-8


def test_inflate_shapes_and_monotone_growth():
    x = synth.ground_truth_image((32, 32), kind="uniform", seed=4)
    for m0 in (5, 10):
        spec = synth.SequenceSpec(x, (5, 5), m0=m0, n=400, noise_var=0.0, seed=3,
                                  psf_spread=0.05)
        obs, _ = synth.generate_sequence(spec)
        sub = identify_subspace(obs, (5, 5), SvdBackendChoice("dense", rank=25))
        assert sub.m == m0
        last = 0
        reached = False
        for k in range(1, 6):
            inflated, new_psf = inflate(sub, (k, k), psf_shape=(5, 5))
            assert new_psf == (5 + k - 1, 5 + k - 1)
            assert inflated.y_shape == (sub.y_shape[0] - k + 1, sub.y_shape[1] - k + 1)
            assert inflated.m >= last
            last = inflated.m
            if inflated.m == new_psf[0] * new_psf[1]:
                reached = True
                break
        assert reached


def test_inflate_range_identity():
    # range(D_t Y) equals range(D_t U S) when the SVD keeps the full rank
    rng = np.random.default_rng(8)
    x = rng.uniform(0, 255, (16, 16))
    spec = synth.SequenceSpec(x, (3, 3), m0=9, n=30, noise_var=1.0, seed=6)
    obs, _ = synth.generate_sequence(spec)
    y = obs.to_matrix()
    sub = identify_subspace(obs, (3, 3), SvdBackendChoice("dense", rank=30),
                            strategy="known", known_m=30)
    s = np.sqrt(sub.lam * sub.n)
    us = (sub.U * s).reshape(*sub.y_shape, -1)
    d_shape = (2, 2)
    new_ys = (sub.y_shape[0] - 1, sub.y_shape[1] - 1)
    for t1 in range(d_shape[0]):
        for t2 in range(d_shape[1]):
            dy = y.reshape(*sub.y_shape, -1)[t1:t1 + new_ys[0], t2:t2 + new_ys[1]]
            dus = us[t1:t1 + new_ys[0], t2:t2 + new_ys[1]]
            ang = subspace_angle(dy.reshape(-1, y.shape[1]),
                                 dus.reshape(-1, sub.rank))
            assert ang.max() < 1e-8


def test_subspace_angle_matches_scipy():
    rng = np.random.default_rng(12)
    for _ in range(10):
        a = rng.normal(size=(10, 3))
        b = rng.normal(size=(10, 3))
        mine = np.sort(subspace_angle(a, b))
        ref = np.sort(scipy.linalg.subspace_angles(a, b))
        assert np.abs(mine - ref).max() < 1e-10
