"""Gaussian mixtures on the bottleneck space: EM fitting, likelihoods, sampling."""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .dataset import GroupSelector
from .errors import ConfigError, FormatError, ShapeError, ValidationError

log = logging.getLogger(__name__)

LGMM_MAGIC = b"LGMM"
LGMM_VERSION = 1
PAPER_N_COMPONENTS = 1000
KMEANS_ITERS = 10
_COV_CODES = {"diag": 0, "full": 1}


def desk_components(n):
    """Component count used at desk scale: ``min(1000, n // 20)``, at least 1."""
    return max(1, min(PAPER_N_COMPONENTS, n // 20))


@dataclass(frozen=True)
class EmConfig:
    n_components: int = PAPER_N_COMPONENTS
    covariance: str = "diag"
    max_iters: int = 200
    tol: float = 1e-6
    reg_covar: float = 1e-6  # variance floor
    restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.covariance not in _COV_CODES:
            raise ConfigError(f"covariance must be 'diag' or 'full', got {self.covariance!r}")
        if not self.reg_covar > 0:
            raise ConfigError("reg_covar (covariance floor) must be > 0")
        if not self.tol > 0:
            raise ConfigError("tol must be > 0")
        if self.max_iters < 1 or self.restarts < 1:
            raise ConfigError("max_iters and restarts must be >= 1")

    def to_json(self):
        return {
            "n_components": self.n_components,
            "covariance": self.covariance,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "reg_covar": self.reg_covar,
            "restarts": self.restarts,
            "seed": self.seed,
        }


@dataclass(eq=False)
class GmmModel:
    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, q)
    covariances: np.ndarray  # (M, q) diag or (M, q, q) full
    covariance: str = "diag"
    group: GroupSelector = field(default_factory=GroupSelector)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.covariances = np.asarray(self.covariances, dtype=np.float64)
        M, q = self.means.shape
        if self.weights.shape != (M,):
            raise ShapeError(f"weights shape {self.weights.shape} != ({M},)")
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValidationError("mixture weights must be non-negative and sum to 1")
        want = (M, q) if self.covariance == "diag" else (M, q, q)
        if self.covariances.shape != want:
            raise ShapeError(f"covariances shape {self.covariances.shape} != {want}")
        if self.covariance == "diag":
            if np.any(self.covariances <= 0):
                raise ValidationError("diagonal variances must be positive")
            self._chol = None
        else:
            try:
                self._chol = np.linalg.cholesky(self.covariances)
            except np.linalg.LinAlgError:
                raise ValidationError("full covariance is not positive definite") from None

    @property
    def n_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]

    def component_log_density(self, X):
        """``(n, M)`` array of ``log N(x | mu_m, Sigma_m)``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise ShapeError(f"expected vectors of width {self.dim}, got shape {X.shape}")
        if self.covariance == "diag":
            return _kernels.diag_log_gauss(X, self.means, self.covariances)
        return _full_log_gauss(X, self.means, self._chol)

    def weighted_log_density(self, X):
        with np.errstate(divide="ignore"):
            return self.component_log_density(X) + np.log(self.weights)[None, :]


def _full_log_gauss(X, means, chols):
    n, q = X.shape
    out = np.empty((n, means.shape[0]))
    for m, (mu, L) in enumerate(zip(means, chols)):
        sol = np.linalg.solve(L, (X - mu).T)
        log_det = 2.0 * np.sum(np.log(np.diag(L)))
        out[:, m] = -0.5 * (q * _kernels.LOG_2PI + log_det + np.sum(sol * sol, axis=0))
    return out


def score_samples(model, X):
    """Per-sample log-likelihood ``log sum_m w_m N(x | m)``."""
    return logsumexp(model.weighted_log_density(X), axis=1)


def log_likelihood(model, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("log_likelihood takes a single vector; use score_samples for batches")
    return float(score_samples(model, x[None, :])[0])


def mean_log_likelihood(model, X):
    return float(np.mean(score_samples(model, X)))


def e_step_responsibilities(model, X):
    """Row-stochastic ``(n, M)`` responsibilities normalized in the log domain."""
    logp = model.weighted_log_density(X)
    return np.exp(logp - logsumexp(logp, axis=1, keepdims=True))


# --------------------------------------------------------------------------
# fitting
# --------------------------------------------------------------------------


def kmeanspp_init(X, n_components, seed):
    """k-means++ seeding: first center uniform, the rest proportional to D^2."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < n_components:
        raise ValidationError(f"need at least {n_components} samples, got {n}")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = _kernels.min_sq_dist_update(X, X[chosen[0]], np.full(n, np.inf))
    for _ in range(1, n_components):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point coincides with a center
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = _kernels.min_sq_dist_update(X, X[idx], d2)
    return X[chosen].copy()


def _sq_dists(X, centers):
    return np.stack([np.sum((X - c) ** 2, axis=1) for c in centers], axis=1)


def _lloyd(X, centers, iters):
    """A few k-means refinement passes; empty clusters keep their center."""
    d2 = _sq_dists(X, centers)
    assign = np.argmin(d2, axis=1)
    for _ in range(iters):
        new = centers.copy()
        for m in range(len(centers)):
            members = assign == m
            if members.any():
                new[m] = X[members].mean(axis=0)
        d2 = _sq_dists(X, new)
        moved = np.argmin(d2, axis=1)
        centers = new
        if np.array_equal(moved, assign):
            break
        assign = moved
    return centers, assign, d2


def _m_step(X, resp, cov_type, floor):
    n, q = X.shape
    nk = resp.sum(axis=0)
    weights = nk / n
    weights = weights / weights.sum()
    safe = np.where(nk > 0, nk, 1.0)
    means = (resp.T @ X) / safe[:, None]
    M = resp.shape[1]
    if cov_type == "diag":
        covs = np.empty((M, q))
        for m in range(M):
            d = X - means[m]
            covs[m] = (resp[:, m] @ (d * d)) / safe[m]
        covs = np.maximum(covs, floor)
    else:
        covs = np.empty((M, q, q))
        for m in range(M):
            d = X - means[m]
            S = (d * resp[:, m : m + 1]).T @ d / safe[m]
            S = 0.5 * (S + S.T)
            # eigenvalue clipping is the constrained MLE for Sigma >= floor*I
            vals, vecs = np.linalg.eigh(S)
            covs[m] = (vecs * np.maximum(vals, floor)) @ vecs.T
            covs[m] = 0.5 * (covs[m] + covs[m].T)
    return weights, means, covs


def _rescue_empty(X, resp, logp_rows, cov_type, floor, events):
    """Re-seed zero-mass components at the worst-explained points."""
    nk = resp.sum(axis=0)
    empty = np.flatnonzero(nk < 1e-10)
    if empty.size == 0:
        return resp
    resp = resp.copy()
    order = np.argsort(logp_rows, kind="stable")
    for rank, m in enumerate(empty):
        i = order[rank % len(order)]
        resp[i, :] = 0.0
        resp[i, m] = 1.0
        events.append({"component": int(m), "reseeded_at": int(i)})
        log.info("EM: component %d had no mass; re-seeded at sample %d", m, i)
    return resp


def _fit_once(X, cfg, seed):
    n, q = X.shape
    M = cfg.n_components
    centers, assign, d2 = _lloyd(X, kmeanspp_init(X, M, seed), KMEANS_ITERS)
    resp = np.zeros((n, M))
    resp[np.arange(n), assign] = 1.0
    events = []
    resp = _rescue_empty(X, resp, -np.min(d2, axis=1), cfg.covariance, cfg.reg_covar, events)
    w, mu, cov = _m_step(X, resp, cfg.covariance, cfg.reg_covar)
    model = GmmModel(w, mu, cov, cfg.covariance)

    history = []
    converged = False
    n_iter = 0
    for it in range(cfg.max_iters + 1):
        logp = model.weighted_log_density(X)
        rows = logsumexp(logp, axis=1)
        ll = float(np.mean(rows))
        history.append(ll)
        if it > 0 and abs(ll - history[-2]) <= cfg.tol * abs(history[-2]):
            converged = True
            break
        if it == cfg.max_iters:
            break
        resp = np.exp(logp - rows[:, None])
        resp = _rescue_empty(X, resp, rows, cfg.covariance, cfg.reg_covar, events)
        w, mu, cov = _m_step(X, resp, cfg.covariance, cfg.reg_covar)
        model = GmmModel(w, mu, cov, cfg.covariance)
        n_iter = it + 1
    return model, history, converged, n_iter, events


def em_fit(X, cfg, group=None):
    """Fit a mixture by EM. Returns ``(GmmModel, ll_history)``.

    ``ll_history`` holds the per-sample mean log-likelihood of the initial
    parameters followed by one entry per EM iteration. With several
    restarts the run with the highest final likelihood wins.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError("em_fit expects an (n, q) array")
    if X.shape[0] < cfg.n_components:
        raise ValidationError(f"{X.shape[0]} samples cannot support {cfg.n_components} components")
    if not np.all(np.isfinite(X)):
        raise ValidationError("em_fit input contains non-finite values")
    best = None
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    for r, ss in enumerate(seeds):
        result = _fit_once(X, cfg, int(ss.generate_state(1)[0]))
        if best is None or result[1][-1] > best[1][-1]:
            best = result + (r,)
    model, history, converged, n_iter, events, restart = best
    model.group = group if group is not None else GroupSelector()
    model.meta = {
        "final_ll": history[-1],
        "iterations": n_iter,
        "converged": converged,
        "seed": cfg.seed,
        "restart": restart,
        "n_samples": int(X.shape[0]),
        "reseed_events": events,
    }
    return model, history


def gmm_sample(model, n, seed):
    """Draw ``n`` samples: seeded categorical component choice, then a Gaussian draw."""
    rng = np.random.default_rng(seed)
    comps = rng.choice(model.n_components, size=n, p=model.weights)
    z = rng.standard_normal((n, model.dim))
    if model.covariance == "diag":
        return model.means[comps] + np.sqrt(model.covariances[comps]) * z
    return model.means[comps] + np.einsum("nij,nj->ni", model._chol[comps], z)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def gmm_to_bytes(model):
    blob = json.dumps(
        {"group": model.group.to_json(), "meta": model.meta}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    head = struct.pack("<4sII", LGMM_MAGIC, LGMM_VERSION, len(blob))
    dims = struct.pack("<IIB", model.n_components, model.dim, _COV_CODES[model.covariance])
    arrays = [np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (model.weights, model.means, model.covariances)]
    return b"".join([head, blob, dims] + arrays)


def gmm_from_bytes(buf):
    if len(buf) < 12:
        raise FormatError("file too short for an LGMM header")
    magic, version, blob_len = struct.unpack_from("<4sII", buf, 0)
    if magic != LGMM_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {LGMM_MAGIC!r}")
    if version != LGMM_VERSION:
        raise FormatError(f"unsupported LGMM version {version}")
    off = 12
    try:
        meta = json.loads(buf[off : off + blob_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable LGMM metadata: {exc}") from None
    off += blob_len
    if len(buf) < off + 9:
        raise FormatError("truncated LGMM header")
    M, q, code = struct.unpack_from("<IIB", buf, off)
    off += 9
    cov_type = {v: k for k, v in _COV_CODES.items()}.get(code)
    if cov_type is None:
        raise FormatError(f"unknown covariance code {code}")
    ncov = M * q if cov_type == "diag" else M * q * q
    expected = off + 8 * (M + M * q + ncov)
    if len(buf) != expected:
        raise FormatError(f"LGMM size mismatch: expected {expected} bytes, got {len(buf)}")
    w = np.frombuffer(buf, "<f8", M, off).copy()
    off += 8 * M
    mu = np.frombuffer(buf, "<f8", M * q, off).reshape(M, q).copy()
    off += 8 * M * q
    cov = np.frombuffer(buf, "<f8", ncov, off).copy()
    cov = cov.reshape((M, q) if cov_type == "diag" else (M, q, q))
    return GmmModel(w, mu, cov, cov_type, GroupSelector.from_json(meta.get("group", [])), meta.get("meta", {}))


def save_gmm(model, path):
    Path(path).write_bytes(gmm_to_bytes(model))


def load_gmm(path):
    return gmm_from_bytes(Path(path).read_bytes())
