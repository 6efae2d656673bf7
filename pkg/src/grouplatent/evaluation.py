"""Evaluation: softmax classifier checks, likelihood separation, PCA, similarity scores."""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import ShapeError, ValidationError
from .gmm import score_samples

SCORE_BIN_WIDTH = 0.02
SCORE_RANGE = (-2.0, 0.0)


# --------------------------------------------------------------------------
# softmax classifier
# --------------------------------------------------------------------------


@dataclass(eq=False)
class SoftmaxClassifier:
    weights: np.ndarray  # (q + 1, k); last row is the bias
    axis: str
    classes: tuple
    mean: np.ndarray
    scale: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_classes(self):
        return self.weights.shape[1]

    def logits(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[0] - 1:
            raise ShapeError(f"classifier expects width {self.weights.shape[0] - 1}, got {X.shape}")
        return _design(X, self.mean, self.scale) @ self.weights


def _design(X, mean, scale):
    Z = (X - mean) / scale
    return np.hstack([Z, np.ones((Z.shape[0], 1))])


def _xent(W, Xd, Y):
    logits = Xd @ W
    lse = logsumexp(logits, axis=1, keepdims=True)
    loss = float(np.mean(lse[:, 0] - np.sum(logits * Y, axis=1)))
    grad = Xd.T @ (np.exp(logits - lse) - Y) / Xd.shape[0]
    return loss, grad


def train_softmax_classifier(X, labels, n_classes=None, axis="", classes=None, epochs=300, lr=1.0, seed=0):
    """Multinomial logistic regression by full-batch gradient descent.

    Features are standardized internally. A step that raises the loss is
    rejected and retried with half the learning rate, so the recorded loss
    never increases. ``seed`` is recorded only; the fit is deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    k = int(n_classes if n_classes is not None else labels.max() + 1)
    if len(np.unique(labels)) < 2:
        raise ValidationError("classifier training needs at least two classes present")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 1e-12, scale, 1.0)
    Xd = _design(X, mean, scale)
    Y = np.eye(k)[labels]
    W = np.zeros((X.shape[1] + 1, k))
    loss, grad = _xent(W, Xd, Y)
    losses = [loss]
    for _ in range(epochs):
        step = lr
        while step > 1e-12:
            W_new = W - step * grad
            new_loss, new_grad = _xent(W_new, Xd, Y)
            if new_loss <= loss:
                break
            step *= 0.5
        else:
            break
        W, loss, grad = W_new, new_loss, new_grad
        lr = step
        losses.append(loss)
    classes = tuple(classes) if classes is not None else tuple(str(i) for i in range(k))
    return SoftmaxClassifier(W, axis, classes, mean, scale, {"losses": losses, "seed": seed})


def classify_batch(clf, X):
    """Argmax class; ties go to the lowest index."""
    return np.argmax(clf.logits(X), axis=1)


@dataclass
class ConfusionMatrix:
    axis: str
    classes: tuple
    counts: np.ndarray  # (k, k) true x predicted

    @property
    def recall(self):
        rows = self.counts.sum(axis=1)
        return np.diag(self.counts) / np.maximum(rows, 1)

    @property
    def accuracy(self):
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true\\predicted"] + list(self.classes) + ["recall"])
            for i, cls in enumerate(self.classes):
                w.writerow([cls] + [int(c) for c in self.counts[i]] + [f"{self.recall[i]:.6f}"])
            w.writerow(["accuracy", f"{self.accuracy:.6f}"])


def confusion_from_predictions(true_labels, predicted, k, axis="", classes=None):
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (np.asarray(true_labels, dtype=np.int64), np.asarray(predicted, dtype=np.int64)), 1)
    return ConfusionMatrix(axis, tuple(classes) if classes else tuple(str(i) for i in range(k)), counts)


def confusion_matrix(clf, X, true_labels):
    pred = classify_batch(clf, X)
    return confusion_from_predictions(true_labels, pred, clf.n_classes, clf.axis, clf.classes)


# --------------------------------------------------------------------------
# similarity scores
# --------------------------------------------------------------------------


def cosine_similarity_score(u, v):
    """Cosine similarity shifted by -1, so it spans [-2, 0]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    uu, vv = float(u @ u), float(v @ v)
    if uu == 0.0 or vv == 0.0:
        raise ValidationError("similarity is undefined for a zero vector")
    # sqrt(uu * vv) keeps S(u, u) exactly 0
    return min(0.0, max(-2.0, float(u @ v) / np.sqrt(uu * vv) - 1.0))


@dataclass
class ScoreDistribution:
    label: str
    scores: np.ndarray = field(repr=False)
    edges: np.ndarray = field(repr=False)
    counts: np.ndarray = field(repr=False)

    @property
    def count(self):
        return int(self.scores.size)

    def density(self):
        return self.counts / max(self.counts.sum(), 1)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["label", "bin_low", "bin_high", "count"])
            for lo, hi, c in zip(self.edges[:-1], self.edges[1:], self.counts):
                w.writerow([self.label, f"{lo:.4f}", f"{hi:.4f}", int(c)])


def score_edges(bin_width=SCORE_BIN_WIDTH):
    n = int(round((SCORE_RANGE[1] - SCORE_RANGE[0]) / bin_width))
    return np.linspace(SCORE_RANGE[0], SCORE_RANGE[1], n + 1)


def histogram_scores(scores, label, bin_width=SCORE_BIN_WIDTH):
    scores = np.asarray(scores, dtype=np.float64)
    edges = score_edges(bin_width)
    counts, _ = np.histogram(np.clip(scores, *SCORE_RANGE), bins=edges)
    return ScoreDistribution(label, scores, edges, counts)


def _check_nonzero(X, name):
    norms = np.einsum("ij,ij->i", X, X)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValidationError(f"zero vector at index {int(zero[0])} of {name}")


def score_distributions(setA, setB=None, mode="within", label=None, bin_width=SCORE_BIN_WIDTH):
    """All-pairs similarity scores binned over [-2, 0].

    ``within`` scores every unordered pair of ``setA``; ``between`` scores
    every ``(a, b)`` cross pair.
    """
    A = np.atleast_2d(np.asarray(setA, dtype=np.float64))
    _check_nonzero(A, "setA")
    if mode == "within":
        scores = _kernels.cosine_within(A)
    elif mode == "between":
        if setB is None:
            raise ValidationError("between mode needs setB")
        B = np.atleast_2d(np.asarray(setB, dtype=np.float64))
        if B.shape[1] != A.shape[1]:
            raise ShapeError(f"set widths differ: {A.shape[1]} vs {B.shape[1]}")
        _check_nonzero(B, "setB")
        scores = _kernels.cosine_between(A, B)
    else:
        raise ValidationError(f"mode must be 'within' or 'between', got {mode!r}")
    return histogram_scores(scores, label or mode, bin_width)


def nearest_neighbor_scores(X):
    """Scores between each vector and its nearest other vector.

    Stands in for genuine pairs where no identity labels exist.
    """
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    d2 = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.fill_diagonal(d2, np.inf)
    nn = np.argmin(d2, axis=1)
    return np.array([cosine_similarity_score(X[i], X[j]) for i, j in enumerate(nn)])


def histogram_intersection(a, b):
    """Sum of bin-wise minima of two normalized histograms (1 = identical)."""
    return float(np.minimum(a.density(), b.density()).sum())


# --------------------------------------------------------------------------
# likelihood separation
# --------------------------------------------------------------------------


@dataclass
class LlSeparationReport:
    groups: tuple  # (name_g, name_h)
    rows: np.ndarray  # (n, 3): true group (0 = g, 1 = h), LL under g, LL under h

    @property
    def accuracy(self):
        pred = (self.rows[:, 2] > self.rows[:, 1]).astype(int)
        return float(np.mean(pred == self.rows[:, 0]))

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["true_group", f"ll_{self.groups[0]}", f"ll_{self.groups[1]}"])
            for t, a, b in self.rows:
                w.writerow([self.groups[int(t)], repr(float(a)), repr(float(b))])


def ll_separation(model_g, model_h, test_g, test_h, names=("g", "h")):
    """Score both test sets under both models; ties count as group ``g``."""
    for m in (model_g, model_h):
        for X in (test_g, test_h):
            if np.asarray(X).shape[1] != m.dim:
                raise ShapeError(f"model width {m.dim} does not match data width {np.asarray(X).shape[1]}")
    rows = []
    for t, X in enumerate((test_g, test_h)):
        rows.append(np.column_stack([np.full(len(X), t), score_samples(model_g, X), score_samples(model_h, X)]))
    return LlSeparationReport(tuple(names), np.vstack(rows))


# --------------------------------------------------------------------------
# projection
# --------------------------------------------------------------------------


@dataclass
class Projection:
    coords: np.ndarray
    explained: np.ndarray
    components: np.ndarray
    mean: np.ndarray


def write_projection_csv(path, proj, ids, group_names):
    """One row per point: id, group name, and the projected coordinates."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "group"] + [f"pc{i + 1}" for i in range(proj.coords.shape[1])])
        for i, name, row in zip(ids, group_names, proj.coords):
            w.writerow([int(i), name] + [repr(float(x)) for x in row])


def pca_project(X, out_dim=2):
    """Project onto the top principal axes.

    Each axis is signed so its largest-magnitude loading is positive, which
    makes the output deterministic.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValidationError("pca_project needs at least 2 samples")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    total = float(np.sum(s * s))
    if not total > 0.0:
        raise ValidationError("data has rank 0; nothing to project")
    k = min(out_dim, Vt.shape[0])
    comps = Vt[:k].copy()
    for i in range(k):
        j = np.argmax(np.abs(comps[i]))
        if comps[i, j] < 0:
            comps[i] = -comps[i]
    explained = (s[:k] ** 2) / total
    return Projection(Xc @ comps.T, explained, comps, mean)
