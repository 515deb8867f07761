import math

import numpy as np
import pytest

from routeseq.encoders import (
    Codebook,
    DiagGmm,
    KdTree,
    condition_number,
    fisher_encode,
    fit_codebook,
    fit_context_encoder,
    fit_gmm,
    kmeans,
    load_encoder,
    save_encoder,
    soft_assign,
    vlad_encode,
)
from routeseq.rng import SplitMix64


def rand(rng, *shape):
    return 2.0 * rng.uniform_array(shape) - 1.0


def make_gmm(weights, means, variances):
    return DiagGmm(
        weights=np.asarray(weights, dtype=np.float64),
        means=np.asarray(means, dtype=np.float64),
        variances=np.asarray(variances, dtype=np.float64),
    )


# --- naive oracles ---------------------------------------------------------


def naive_soft_assign(gmm, w):
    scores = []
    for k in range(gmm.K):
        quad = sum(
            (w[j] - gmm.means[k, j]) ** 2 / gmm.variances[k, j]
            for j in range(gmm.D)
        )
        scores.append(math.exp(-0.5 * quad))
    total = sum(scores)
    return [s / total for s in scores]


def naive_fisher_unnormalized(gmm, W):
    n = len(W)
    q = [naive_soft_assign(gmm, w) for w in W]
    mean_block = np.zeros((gmm.K, gmm.D))
    var_block = np.zeros((gmm.K, gmm.D))
    for k in range(gmm.K):
        for j in range(gmm.D):
            sigma = math.sqrt(gmm.variances[k, j])
            acc_m = sum(
                q[i][k] * (W[i][j] - gmm.means[k, j]) / sigma for i in range(n)
            )
            acc_s = sum(
                q[i][k] * (((W[i][j] - gmm.means[k, j]) / sigma) ** 2 - 1.0)
                for i in range(n)
            )
            mean_block[k, j] = acc_m / (n * math.sqrt(gmm.weights[k]))
            var_block[k, j] = acc_s / (n * math.sqrt(2.0 * gmm.weights[k]))
    return np.concatenate([mean_block.ravel(), var_block.ravel()])


# --- GMM fitting -----------------------------------------------------------


def test_fit_gmm_k1_closed_form():
    rng = SplitMix64(0)
    data = rand(rng, 50, 3) * 2.0 + 0.7
    gmm = fit_gmm(data, K=1, seed=1)
    assert np.allclose(gmm.means[0], data.mean(axis=0), atol=1e-12)
    assert np.allclose(gmm.variances[0], data.var(axis=0), atol=1e-12)
    assert gmm.weights[0] == pytest.approx(1.0)


def test_fit_gmm_k1_pair_example():
    gmm = fit_gmm(np.array([[1.0, 1.0], [3.0, 3.0], [1.0, 3.0], [3.0, 1.0]]), K=1, seed=0)
    assert np.allclose(gmm.means[0], [2.0, 2.0])
    assert np.allclose(gmm.variances[0], [1.0, 1.0])


def test_fit_gmm_separated_clusters():
    rng = SplitMix64(2)
    a = 0.1 * rand(rng, 100, 2) + 10.0
    b = 0.1 * rand(rng, 100, 2) - 10.0
    data = np.vstack([a, b])
    gmm = fit_gmm(data, K=2, seed=3)
    found = sorted(gmm.means[:, 0])
    assert abs(found[0] - b[:, 0].mean()) < 1e-3
    assert abs(found[1] - a[:, 0].mean()) < 1e-3
    assert np.allclose(gmm.weights, [0.5, 0.5], atol=1e-6)


def test_fit_gmm_loglik_monotone():
    rng = SplitMix64(4)
    data = rand(rng, 120, 4)
    gmm = fit_gmm(data, K=3, seed=5)
    path = gmm.loglik_path
    assert len(path) >= 2
    for a, b in zip(path, path[1:]):
        assert b >= a - 1e-9 * abs(a)


def test_fit_gmm_rejects_too_few_points():
    with pytest.raises(ValueError):
        fit_gmm(np.zeros((3, 2)), K=3, seed=0)


def test_fit_gmm_variance_floor():
    data = np.zeros((10, 2))
    data[:, 1] = np.linspace(0, 1, 10)
    gmm = fit_gmm(data, K=1, seed=0)
    assert gmm.variances[0, 0] >= 1e-6  # constant dimension gets floored


# --- soft assignment -------------------------------------------------------


def test_soft_assign_k1():
    gmm = make_gmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    assert soft_assign(gmm, np.array([3.0, -1.0])).tolist() == [1.0]


def test_soft_assign_symmetric_components():
    gmm = make_gmm([0.9, 0.1], [[1.0], [-1.0]], [[2.0], [2.0]])
    # the paper-form assignment ignores mixture weights, so symmetry wins
    q = soft_assign(gmm, np.array([0.0]))
    assert np.allclose(q, [0.5, 0.5])


def test_soft_assign_weighted_flag_uses_mixture_weights():
    gmm = make_gmm([0.9, 0.1], [[1.0], [-1.0]], [[2.0], [2.0]])
    q = soft_assign(gmm, np.array([0.0]), weighted=True)
    assert q[0] > 0.8


def test_soft_assign_matches_naive_and_sums_to_one():
    rng = SplitMix64(6)
    for _ in range(25):
        K, D = 4, 3
        gmm = make_gmm(
            rng.uniform_array(K) + 0.1,
            rand(rng, K, D),
            rng.uniform_array((K, D)) + 0.5,
        )
        gmm.weights /= gmm.weights.sum()
        w = rand(rng, D) * 2.0
        q = soft_assign(gmm, w)
        assert abs(q.sum() - 1.0) < 1e-12
        assert np.allclose(q, naive_soft_assign(gmm, w), atol=1e-12)


def test_soft_assign_stable_for_extreme_inputs():
    gmm = make_gmm([0.5, 0.5], [[0.0], [1.0]], [[1e-6], [1e-6]])
    q = soft_assign(gmm, np.array([100.0]))
    assert np.isfinite(q).all()
    assert abs(q.sum() - 1.0) < 1e-12


# --- Fisher encoding -------------------------------------------------------


def test_fisher_encode_at_mean_closed_form():
    D = 4
    gmm = make_gmm([1.0], [[0.5] * D], [[2.0] * D])
    enc = fisher_encode(gmm, np.array([[0.5] * D]))
    expected = np.concatenate([np.zeros(D), -np.ones(D) / math.sqrt(D)])
    assert np.allclose(enc.values, expected, atol=1e-12)
    assert not enc.is_zero


def test_fisher_dimension_is_2kd():
    rng = SplitMix64(7)
    K, D = 3, 5
    data = rand(rng, 60, D)
    gmm = fit_gmm(data, K=K, seed=8)
    enc = fisher_encode(gmm, rand(rng, 2, D))
    assert enc.values.shape == (2 * K * D,)


def test_fisher_matches_naive_oracle():
    rng = SplitMix64(9)
    K, D, N = 2, 3, 5
    gmm = make_gmm(
        [0.3, 0.7], rand(rng, K, D), rng.uniform_array((K, D)) + 0.5
    )
    W = rand(rng, N, D)
    enc = fisher_encode(gmm, W)
    raw = naive_fisher_unnormalized(gmm, W)
    assert np.allclose(enc.values, raw / np.linalg.norm(raw), atol=1e-12)
    assert abs(np.linalg.norm(enc.values) - 1.0) < 1e-9


def test_fisher_sigma_scaling_rescales_mean_block():
    rng = SplitMix64(10)
    D = 4
    mu = rand(rng, 1, D)
    var = rng.uniform_array((1, D)) + 0.5
    W = rand(rng, 3, D)
    c = 2.5
    base = naive_fisher_unnormalized(make_gmm([1.0], mu, var), W)
    scaled = naive_fisher_unnormalized(make_gmm([1.0], mu, var * c * c), W)
    lib = fisher_encode(make_gmm([1.0], mu, var * c * c), W)
    # K=1 keeps q == 1, so scaling sigma by c divides the mean block by c
    assert np.allclose(scaled[:D], base[:D] / c, atol=1e-12)
    assert np.allclose(lib.values, scaled / np.linalg.norm(scaled), atol=1e-12)


# --- K-means / KD-tree -----------------------------------------------------


def test_kmeans_k1_is_mean():
    rng = SplitMix64(11)
    data = rand(rng, 40, 3)
    centroids, _, _ = kmeans(data, K=1, seed=0)
    assert np.allclose(centroids[0], data.mean(axis=0), atol=1e-12)


def test_kmeans_k_equals_n_zero_inertia():
    rng = SplitMix64(12)
    data = rand(rng, 8, 2)
    centroids, labels, inertia = kmeans(data, K=8, seed=0)
    assert inertia[-1] == pytest.approx(0.0, abs=1e-20)
    assert sorted(labels.tolist()) == list(range(8))


def test_kmeans_inertia_monotone():
    rng = SplitMix64(13)
    data = rand(rng, 200, 2)
    _, _, inertia = kmeans(data, K=5, seed=1)
    for a, b in zip(inertia, inertia[1:]):
        assert b <= a + 1e-12


def test_kdtree_matches_linear_scan():
    rng = SplitMix64(14)
    points = rand(rng, 64, 3)
    tree = KdTree(points)
    for _ in range(1000):
        q = rand(rng, 3) * 1.5
        d2 = np.sum((points - q) ** 2, axis=1)
        assert tree.nearest(q) == int(np.argmin(d2))


def test_kdtree_single_point_and_duplicates():
    tree = KdTree(np.array([[1.0, 1.0]]))
    assert tree.nearest(np.array([5.0, 5.0])) == 0
    dup = KdTree(np.array([[1.0, 0.0], [1.0, 0.0], [2.0, 0.0]]))
    assert dup.nearest(np.array([0.9, 0.0])) == 0  # tie -> lowest index


# --- VLAD ------------------------------------------------------------------


def make_codebook(centroids):
    c = np.asarray(centroids, dtype=np.float64)
    return Codebook(centroids=c, tree=KdTree(c))


def test_vlad_k1_single_descriptor():
    cb = make_codebook([[1.0, 2.0]])
    w = np.array([[4.0, 6.0]])
    enc = vlad_encode(cb, w)
    resid = np.array([3.0, 4.0])
    assert np.allclose(enc.values, resid / 5.0)


def test_vlad_descriptor_at_centroid_contributes_zero():
    cb = make_codebook([[1.0, 2.0], [5.0, 5.0]])
    enc = vlad_encode(cb, np.array([[1.0, 2.0], [6.0, 5.0]]))
    assert np.allclose(enc.values[:2], 0.0)
    assert not enc.is_zero


def test_vlad_all_zero_flagged():
    cb = make_codebook([[1.0, 2.0]])
    enc = vlad_encode(cb, np.array([[1.0, 2.0]]))
    assert enc.is_zero
    assert np.allclose(enc.values, 0.0)


def test_vlad_k1_residual_identity():
    # algebraic identity: sum of residuals = N (mean(W) - mu)
    rng = SplitMix64(15)
    mu = rand(rng, 1, 4)
    cb = make_codebook(mu)
    W = rand(rng, 7, 4)
    enc = vlad_encode(cb, W)
    raw = 7.0 * (W.mean(axis=0) - mu[0])
    assert np.allclose(enc.values, raw / np.linalg.norm(raw), atol=1e-12)


def test_vlad_unit_norm():
    rng = SplitMix64(16)
    data = rand(rng, 30, 4)
    cb = fit_codebook(data, K=4, seed=2)
    enc = vlad_encode(cb, rand(rng, 3, 4))
    assert abs(np.linalg.norm(enc.values) - 1.0) < 1e-9


# --- condition number ------------------------------------------------------


def test_condition_number():
    gmm = make_gmm([1.0], [[0.0, 0.0]], [[4.0, 1.0]])
    assert condition_number(gmm, 0) == 4.0
    eye = make_gmm([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    assert condition_number(eye, 0) == 1.0


# --- fitted-encoder container ----------------------------------------------


def test_fit_context_encoder_dims():
    rng = SplitMix64(17)
    contexts = rand(rng, 40, 6)
    fisher = fit_context_encoder(contexts, "fisher", K=1, seed=3)
    assert fisher.out_dim == 12  # 2 * 1 * 6
    vlad = fit_context_encoder(contexts, "vlad", K=1, seed=3)
    assert vlad.out_dim == 6
    assert np.allclose(vlad.codebook.centroids[0], contexts.mean(axis=0), atol=1e-12)


def test_encoder_file_roundtrip(tmp_path):
    rng = SplitMix64(18)
    contexts = rand(rng, 40, 5)
    for kind in ("fisher", "vlad"):
        enc = fit_context_encoder(contexts, kind, K=2, seed=4)
        path = tmp_path / f"{kind}.enc"
        save_encoder(path, enc)
        back = load_encoder(path)
        w = rand(rng, 2, 5)
        assert np.allclose(back.encode(w).values, enc.encode(w).values, atol=0)
        path2 = tmp_path / f"{kind}2.enc"
        save_encoder(path2, back)
        assert path.read_bytes() == path2.read_bytes()
