import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grouplatent.errors import ShapeError, ValidationError
from grouplatent.evaluation import (
    classify_batch,
    confusion_from_predictions,
    confusion_matrix,
    cosine_similarity_score,
    histogram_intersection,
    histogram_scores,
    ll_separation,
    nearest_neighbor_scores,
    pca_project,
    score_distributions,
    train_softmax_classifier,
)
from grouplatent.gmm import GmmModel


def blobs(rng, n=200, gap=8.0):
    X = np.vstack([rng.standard_normal((n, 2)) - gap / 2, rng.standard_normal((n, 2)) + gap / 2])
    return X, np.repeat([0, 1], n)


# -- classifier -------------------------------------------------------------


def test_classifier_separable(rng):
    X, y = blobs(rng)
    clf = train_softmax_classifier(X, y, 2, "axis", ("a", "b"))
    assert np.mean(classify_batch(clf, X) == y) >= 0.99
    losses = clf.meta["losses"]
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    cm = confusion_matrix(clf, X, y)
    assert cm.accuracy >= 0.99
    assert cm.counts[0, 0] > cm.counts[0, 1] and cm.counts[1, 1] > cm.counts[1, 0]


def test_classifier_zero_epochs_uniform(rng):
    X, y = blobs(rng)
    clf = train_softmax_classifier(X, y, 2, epochs=0)
    logits = clf.logits(X)
    assert np.all(logits == 0.0)
    assert np.mean(classify_batch(clf, X) == y) == pytest.approx(0.5)


def test_classifier_order_invariant(rng):
    X, y = blobs(rng, n=50)
    perm = rng.permutation(len(y))
    a = train_softmax_classifier(X, y, 2, epochs=50)
    b = train_softmax_classifier(X[perm], y[perm], 2, epochs=50)
    np.testing.assert_allclose(a.weights, b.weights, rtol=1e-9, atol=1e-12)


def test_classifier_validation(rng):
    with pytest.raises(ValidationError):
        train_softmax_classifier(rng.standard_normal((5, 2)), np.zeros(5, int), 2)
    X, y = blobs(rng, n=5)
    clf = train_softmax_classifier(X, y, 2, epochs=5)
    with pytest.raises(ShapeError):
        clf.logits(np.zeros((2, 3)))


# -- confusion --------------------------------------------------------------


def test_confusion_bookkeeping(tmp_path):
    true = np.repeat([0, 1], 1000)
    cm = confusion_from_predictions(true, np.zeros(2000, int), 2, "gender", ("male", "female"))
    assert cm.counts.sum() == 2000
    assert np.count_nonzero(cm.counts.sum(axis=0)) == 1
    np.testing.assert_array_equal(cm.recall, [1.0, 0.0])
    path = tmp_path / "cm.csv"
    cm.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "true\\predicted,male,female,recall"
    assert lines[1] == "male,1000,0,1.000000"
    assert lines[-1] == "accuracy,0.500000"


# -- similarity scores ------------------------------------------------------


def test_similarity_fixed_points():
    u = np.array([0.3, -1.2, 2.0])
    assert cosine_similarity_score(u, u) == 0.0
    assert cosine_similarity_score(u, -u) == -2.0
    assert cosine_similarity_score([1, 0], [0, 1]) == -1.0
    with pytest.raises(ValidationError):
        cosine_similarity_score([0, 0], [1, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=3, max_size=3).filter(lambda v: any(abs(x) > 1e-3 for x in v)))
def test_self_similarity_exact(v):
    assert cosine_similarity_score(v, v) == 0.0


def test_score_distribution_counts(rng):
    u = rng.standard_normal(4)
    same = score_distributions(np.stack([u, u]))
    assert same.count == 1 and same.scores[0] == 0.0
    assert same.counts[-1] == 1
    assert score_distributions(rng.standard_normal((100, 5))).count == 4950
    assert len(same.edges) == 101
    np.testing.assert_allclose(np.diff(same.edges), 0.02)


def test_orthogonal_sets_concentrate_near_minus_one(rng):
    q, _ = np.linalg.qr(rng.standard_normal((8, 8)))
    A = q[:, :4].T
    B = q[:, 4:].T
    d = score_distributions(A, B, mode="between")
    np.testing.assert_allclose(d.scores, -1.0, atol=1e-12)


def test_score_distribution_errors(rng):
    with pytest.raises(ValidationError):
        score_distributions(np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        score_distributions(rng.standard_normal((3, 2)), rng.standard_normal((3, 3)), mode="between")
    with pytest.raises(ValidationError):
        score_distributions(rng.standard_normal((3, 2)), mode="sideways")


def test_histogram_intersection_bounds(rng):
    a = histogram_scores(rng.uniform(-2, 0, 500), "a")
    assert histogram_intersection(a, a) == pytest.approx(1.0)
    far = histogram_scores(np.full(10, -1.99), "far")
    near = histogram_scores(np.full(10, -0.01), "near")
    assert histogram_intersection(far, near) == 0.0


def test_nearest_neighbor_scores(rng):
    X = rng.standard_normal((20, 4))
    X[1] = X[0] * 1.001  # parallel and nearest
    s = nearest_neighbor_scores(X)
    assert len(s) == 20 and s[0] == pytest.approx(0.0, abs=1e-12)


# -- likelihood separation --------------------------------------------------


def test_ll_separation_same_model_is_half(rng):
    m = GmmModel([1.0], [[0.0, 0.0]], [[1.0, 1.0]])
    Xg, Xh = rng.standard_normal((100, 2)), rng.standard_normal((100, 2))
    rep = ll_separation(m, m, Xg, Xh)
    assert rep.accuracy == pytest.approx(0.5)
    assert rep.rows.shape == (200, 3)


def test_ll_separation_well_separated(rng, tmp_path):
    g = GmmModel([1.0], [[-5.0]], [[1.0]])
    h = GmmModel([1.0], [[5.0]], [[1.0]])
    rep = ll_separation(g, h, rng.standard_normal((50, 1)) - 5, rng.standard_normal((60, 1)) + 5, names=("g", "h"))
    assert rep.accuracy >= 0.99 and len(rep.rows) == 110
    rep.write_csv(tmp_path / "ll.csv")
    assert (tmp_path / "ll.csv").read_text().splitlines()[0] == "true_group,ll_g,ll_h"
    with pytest.raises(ShapeError):
        ll_separation(g, h, np.zeros((2, 2)), np.zeros((2, 1)))


# -- PCA --------------------------------------------------------------------


def test_pca_plane_and_isotropic(rng):
    basis, _ = np.linalg.qr(rng.standard_normal((6, 2)))
    plane = rng.standard_normal((300, 2)) @ basis.T + 3.0
    assert pca_project(plane).explained.sum() == pytest.approx(1.0, abs=1e-8)
    iso = pca_project(rng.standard_normal((5000, 8)), 8)
    assert np.all(np.abs(iso.explained - 1 / 8) < 0.02)


def test_pca_deterministic_and_signed(rng):
    X = rng.standard_normal((50, 5))
    a, b = pca_project(X), pca_project(X.copy())
    np.testing.assert_array_equal(a.coords, b.coords)
    for comp in a.components:
        assert comp[np.argmax(np.abs(comp))] > 0


def test_pca_degenerate():
    with pytest.raises(ValidationError):
        pca_project(np.ones((5, 3)))
    with pytest.raises(ValidationError):
        pca_project(np.ones((1, 3)))
