import itertools

import numpy as np
import pytest

import cpac


def test_blobs_shapes_and_labels():
    x, labels = cpac.synth_blobs(60, 4, 3, 8.0, seed=1)
    assert x.shape == (60, 4)
    assert sorted(set(labels)) == [0, 1, 2]


def test_corrupted_blobs_share_values():
    x, labels = cpac.synth_blobs(100, 5, 4, 10.0, seed=2)
    xc, lc, graph = cpac.synth_corrupted_blobs(100, 5, 4, 10.0, seed=2, noise=0.1)
    np.testing.assert_array_equal(x, xc)
    assert list(labels) == list(lc)
    moved = np.flatnonzero(np.any(graph != x, axis=1))
    assert len(moved) == 10


def brute_mknn(x, k):
    d = ((x[:, None, :] - x[None, :, :]) ** 2).sum(-1)
    np.fill_diagonal(d, np.inf)
    knn = [set(np.argsort(row, kind="stable")[:k]) for row in d]
    return {(p, q) for p in range(len(x)) for q in knn[p] if p < q and p in knn[q]}


def test_mknn_matches_brute_force():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(80, 3))
    pairs, weights = cpac.mknn_edges(x, 6)
    assert {tuple(p) for p in pairs} == brute_mknn(x, 6)
    assert len(weights) == len(pairs)


def test_lambda_matches_dense_svd():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(50, 3))
    z = rng.normal(size=(50, 4))
    pairs, w = cpac.mknn_edges(x, 8)
    lap = np.zeros((50, 50))
    for (p, q), wt in zip(pairs, w):
        lap[p, q] -= wt
        lap[q, p] -= wt
        lap[p, p] += wt
        lap[q, q] += wt
    expected = np.linalg.norm(z, 2) / np.linalg.norm(lap, 2)
    assert cpac.compute_lambda(z, x, 8) == pytest.approx(expected, rel=1e-6)


def test_geman_mcclure():
    assert cpac.geman_mcclure(1.0, 1.0) == 0.5
    assert cpac.geman_mcclure_grad(1.0, 1.0) == 0.25


def test_components_and_extraction():
    labels, count = cpac.connected_components(4, np.array([[0, 1], [1, 2]]))
    assert list(labels) == [0, 0, 0, 1]
    assert count == 2
    u = np.array([[0.0], [0.1], [5.0], [5.1]])
    pairs = np.array([[0, 1], [1, 2], [2, 3]])
    labels, count = cpac.extract_clusters(u, pairs, 0.5)
    assert count == 2
    assert cpac.final_threshold(u, pairs) == pytest.approx(0.1)


def test_metrics_hand_cases():
    assert cpac.nmi([0, 0, 1, 1], [1, 1, 0, 0]) == 1.0
    assert cpac.nmi([0, 0, 1, 1], [5, 5, 5, 5]) == 0.0
    assert cpac.acc([0, 0, 1, 1], [0, 1, 0, 1]) == 0.5
    assert cpac.acc([0, 0, 0, 1], [0, 0, 0, 0]) == 0.75


def test_acc_matches_permutation_search():
    rng = np.random.default_rng(3)
    truth = rng.integers(0, 4, size=30)
    pred = rng.integers(0, 4, size=30)
    best = max(sum(perm[p] == t for t, p in zip(truth, pred)) for perm in itertools.permutations(range(4)))
    assert cpac.acc(truth.tolist(), pred.tolist()) == pytest.approx(best / 30)


def test_pca_variances():
    rng = np.random.default_rng(4)
    x = rng.normal(size=(40, 5)) * np.arange(1, 6)
    coords, variances = cpac.pca_project(x, 2)
    assert coords.shape == (40, 2)
    eig = np.sort(np.linalg.eigvalsh(np.cov(x.T, bias=True)))[::-1]
    np.testing.assert_allclose(variances, eig[:2], rtol=1e-6)


def test_errors_become_python_exceptions():
    with pytest.raises(cpac.CpacError):
        cpac.mknn_edges(np.zeros((3, 2)), 5)
    with pytest.raises(ValueError):
        cpac.nmi([0, 1], [0])


def test_cluster_small_run_is_deterministic():
    x, labels = cpac.synth_blobs(90, 6, 3, 8.0, seed=5)
    kwargs = dict(labels=list(labels), k=6, seed=5, epochs=5, hidden=[24, 3], pretrain_epochs=3)
    a = cpac.cluster(x, **kwargs)
    b = cpac.cluster(x, **kwargs)
    assert a["labels"] == b["labels"]
    assert len(a["labels"]) == 90
    assert a["embedding"].shape == (90, 3)
    assert 0.0 <= a["nmi"] <= 1.0
    assert a["clusters"] == len(set(a["labels"]))
