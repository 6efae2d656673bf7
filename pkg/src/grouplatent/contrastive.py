"""Lifted structured contrastive loss, the combined objective, and training."""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .autoencoder import (
    activation_signature,
    adam_step,
    backward_pass,
    forward,
    init_adam,
)
from .dataset import make_batches
from .errors import ConfigError, NumericError, ValidationError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ContrastiveConfig:
    alpha: float = 1.0
    axis_weights: tuple = None  # one weight per schema axis; None means all 1.0
    lambda1: float = 100.0
    lambda2: float = 1.0
    squared_recon: bool = True
    recon_per_dim: bool = False  # divide the reconstruction term by d

    def __post_init__(self):
        if not self.alpha > 0:
            raise ConfigError("alpha (negative margin) must be > 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or (self.lambda1 == 0 and self.lambda2 == 0):
            raise ConfigError("lambda1, lambda2 must be >= 0 and not both zero")
        if self.axis_weights is not None:
            w = tuple(float(x) for x in self.axis_weights)
            if any(x < 0 for x in w):
                raise ConfigError("axis weights must be >= 0")
            object.__setattr__(self, "axis_weights", w)

    def weights_for(self, n_axes):
        if self.axis_weights is None:
            return (1.0,) * n_axes
        if len(self.axis_weights) != n_axes:
            raise ConfigError(f"{len(self.axis_weights)} axis weights for {n_axes} axes")
        return self.axis_weights

    def to_json(self):
        return {
            "alpha": self.alpha,
            "axis_weights": list(self.axis_weights) if self.axis_weights is not None else None,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "squared_recon": self.squared_recon,
            "recon_per_dim": self.recon_per_dim,
        }


@dataclass
class PairSets:
    positives: np.ndarray  # (p, 2) with i < j
    negatives: np.ndarray  # (m, 2) with i < j
    n: int

    def masks(self):
        pos = np.zeros((self.n, self.n), dtype=bool)
        neg = np.zeros((self.n, self.n), dtype=bool)
        for mask, pairs in ((pos, self.positives), (neg, self.negatives)):
            if len(pairs):
                mask[pairs[:, 0], pairs[:, 1]] = True
                mask[pairs[:, 1], pairs[:, 0]] = True
        return pos, neg


@dataclass
class LossBreakdown:
    total: float
    recon: float
    contrastive: dict  # axis name -> unweighted lifted loss
    contrastive_total: float
    dB: np.ndarray = field(repr=False)
    dW: np.ndarray = field(repr=False)
    signature: object = field(default=None, repr=False)


def build_pair_sets(labels):
    """Exhaustive lexicographic unordered pairs split by label equality."""
    labels = np.asarray(labels)
    n = len(labels)
    if n < 2:
        raise ValidationError("need at least 2 samples to form pairs")
    i, j = np.triu_indices(n, 1)
    same = labels[i] == labels[j]
    pairs = np.stack([i, j], axis=1)
    return PairSets(pairs[same], pairs[~same], n)


def label_masks(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    np.fill_diagonal(same, False)
    neg = labels[:, None] != labels[None, :]
    return same, neg


def lifted_structured_loss(B, pairs, alpha):
    """Lifted structured loss and its gradient w.r.t. the embeddings.

    ``pairs`` is a :class:`PairSets` or a 1-D label array. Positive pairs
    whose endpoints have no negatives contribute zero; an empty positive
    set gives zero loss.
    """
    B = np.asarray(B, dtype=np.float64)
    if isinstance(pairs, PairSets):
        if pairs.n != B.shape[0]:
            raise ValidationError(f"pair sets built for {pairs.n} samples, got {B.shape[0]}")
        pos, neg = pairs.masks()
    else:
        pos, neg = label_masks(pairs)
    return _lifted_from_masks(B, pos, neg, alpha)


def _lifted_from_masks(B, pos, neg, alpha):
    if not np.all(np.isfinite(B)):
        raise NumericError("non-finite embedding passed to the lifted loss", where="embedding")
    return _kernels.lifted_loss(B, pos, neg, alpha)


def _hinge_signature(B, pos, neg, alpha):
    """Which positive pairs are past the hinge; for gradient-check region tests."""
    D = np.sqrt(np.sum((B[:, None, :] - B[None, :, :]) ** 2, axis=-1))
    with np.errstate(divide="ignore"):
        lse = np.logaddexp.reduce(np.where(neg, alpha - D, -np.inf), axis=1)
    pi, pj = np.nonzero(np.triu(pos, 1))
    return np.logaddexp(lse[pi], lse[pj]) + D[pi, pj] > 0


def combined_contrastive_loss(B, batch_labels, cfg, axis_names=None):
    """Weighted sum of per-axis lifted losses.

    Returns ``(per_axis, total, dB, signature)`` where ``per_axis`` maps
    axis name (or index) to the unweighted loss.
    """
    batch_labels = np.asarray(batch_labels)
    if batch_labels.ndim == 1:
        batch_labels = batch_labels[:, None]
    n_axes = batch_labels.shape[1]
    if n_axes < 1:
        raise ValidationError("need at least one demographic axis")
    weights = cfg.weights_for(n_axes)
    names = axis_names or list(range(n_axes))
    B = np.asarray(B, dtype=np.float64)
    per_axis, total = {}, 0.0
    dB = np.zeros_like(B)
    signature = []
    for a in range(n_axes):
        pos, neg = label_masks(batch_labels[:, a])
        loss, grad = _lifted_from_masks(B, pos, neg, cfg.alpha)
        per_axis[names[a]] = loss
        total += weights[a] * loss
        if weights[a] != 0.0:
            dB += weights[a] * grad
        signature.append((pos, neg))
    return per_axis, total, dB, signature


def reconstruction_loss(W, W_star, squared=True, per_dim=False):
    """Batch mean of ``||w - w*||^2`` (or ``||w - w*||`` when not squared).

    With ``per_dim`` the squared form is divided by ``d`` and the plain
    form by ``sqrt(d)``.
    """
    W = np.asarray(W, dtype=np.float64)
    R = np.asarray(W_star, dtype=np.float64) - W
    n, d = W.shape
    if squared:
        div = n * d if per_dim else n
        return float(np.sum(R * R) / div), 2.0 * R / div
    div = n * np.sqrt(d) if per_dim else n
    norms = np.sqrt(np.sum(R * R, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.where(norms[:, None] > 0, R / norms[:, None], 0.0) / div
    return float(norms.sum() / div), grad


def total_training_loss(model, W, labels, cfg, axis_names=None, trace=None):
    """Weighted reconstruction + contrastive objective with output-side gradients."""
    W = np.asarray(W)
    if W.shape[0] < 2:
        raise ValidationError("batch size must be >= 2")
    if trace is None:
        trace = forward(model, W)
    B = trace.bottleneck.astype(np.float64)
    per_axis, c_total, dB, sig = combined_contrastive_loss(B, labels, cfg, axis_names)
    recon, dW = reconstruction_loss(trace.inputs, trace.reconstruction, cfg.squared_recon, cfg.recon_per_dim)
    total = cfg.lambda1 * c_total + cfg.lambda2 * recon
    hinge = [_hinge_signature(B, pos, neg, cfg.alpha) for pos, neg in sig] if cfg.lambda1 else []
    return LossBreakdown(
        total=float(total),
        recon=recon,
        contrastive=per_axis,
        contrastive_total=float(c_total),
        dB=cfg.lambda1 * dB,
        dW=cfg.lambda2 * dW,
        signature=(activation_signature(trace), hinge),
    )


def total_loss_evaluator(W, labels, cfg):
    """Loss evaluator for :func:`gradient_check` on the full training objective."""
    W = np.asarray(W, dtype=np.float64)

    def evaluate(model):
        trace = forward(model, W)
        br = total_training_loss(model, W, labels, cfg, trace=trace)
        grads = backward_pass(model, trace, br.dB, br.dW)
        return br.total, grads, br.signature

    return evaluate


def _fast_loss(model, W, labels, cfg, axis_names):
    trace = forward(model, W)
    B = trace.bottleneck.astype(np.float64)
    per_axis, c_total, dB, _ = combined_contrastive_loss(B, labels, cfg, axis_names)
    recon, dW = reconstruction_loss(trace.inputs, trace.reconstruction, cfg.squared_recon, cfg.recon_per_dim)
    br = LossBreakdown(
        total=float(cfg.lambda1 * c_total + cfg.lambda2 * recon),
        recon=recon,
        contrastive=per_axis,
        contrastive_total=float(c_total),
        dB=cfg.lambda1 * dB,
        dW=cfg.lambda2 * dW,
    )
    return trace, br


def training_step(model, state, W, labels, cfg, axis_names=None, where=""):
    """Forward, loss, backward, Adam. Returns ``(model, state, LossBreakdown)``."""
    with np.errstate(over="ignore", invalid="ignore"):
        trace, br = _fast_loss(model, W, labels, cfg, axis_names)
    for term, value in (("total", br.total), ("recon", br.recon), ("contrastive", br.contrastive_total)):
        if not np.isfinite(value):
            raise NumericError(f"non-finite {term} loss {where}", where=f"{where} term={term}")
    grads = backward_pass(model, trace, br.dB, br.dW)
    model, state = adam_step(model, grads, state)
    return model, state, br


@dataclass
class TrainHistory:
    axis_names: list
    rows: list = field(default_factory=list)  # (epoch, step, total, recon, *per_axis)

    def append(self, epoch, step, br):
        self.rows.append(
            (epoch, step, br.total, br.recon, *(br.contrastive[a] for a in self.axis_names))
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "total", "recon"] + [f"contrastive_{a}" for a in self.axis_names])
            for row in self.rows:
                w.writerow([row[0], row[1]] + [repr(float(x)) for x in row[2:]])


def train_autoencoder(model, ds, cfg, epochs, batch_size=192, seed=0, state=None, progress=None):
    """Mini-batch training on an already standardized dataset.

    Batches are uniform seeded shuffles with no re-balancing of groups.
    """
    names = ds.schema.names
    state = state or init_adam(model)
    history = TrainHistory(names)
    X = ds.vectors.astype(model.dtype)
    labels = ds.labels.astype(np.int64)
    step = 0
    for epoch in range(epochs):
        for batch in make_batches(len(ds), batch_size, seed, epoch):
            model, state, br = training_step(
                model, state, X[batch], labels[batch], cfg, names, where=f"epoch={epoch} step={step}"
            )
            history.append(epoch, step, br)
            step += 1
        if progress is not None:
            progress(epoch, history.rows[-1])
    return model, state, history
