"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``GROUPLATENT_DISABLE_NUMBA`` is unset or ``0``. Both paths are
always importable as ``numpy_impl`` / ``numba_impl`` (the latter is ``None``
without numba) so tests and benchmarks can compare them directly.

Kernels
-------
lifted_loss(B, pos, neg, alpha) -> (loss, dB)
    Lifted structured loss on float64 embeddings, with boolean positive and
    negative pair masks (symmetric, zero diagonal).
diag_log_gauss(X, means, variances) -> (n, M) array
    Per-component diagonal Gaussian log densities.
cosine_within(A) / cosine_between(A, B) -> 1-D array of shifted cosine scores
min_sq_dist_update(X, center, current) -> updated min squared distances
"""

import os
import types

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def _env_disabled():
    flag = os.environ.get("GROUPLATENT_DISABLE_NUMBA", "0").strip().lower()
    return flag not in ("", "0", "false", "no")


# --------------------------------------------------------------------------
# numpy path
# --------------------------------------------------------------------------


def _np_pairwise_dist(B):
    diff = B[:, None, :] - B[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)), diff


def _np_lifted_loss(B, pos, neg, alpha):
    n = B.shape[0]
    iu = np.triu(pos, 1)
    n_pos = int(iu.sum())
    if n_pos == 0:
        return 0.0, np.zeros_like(B)
    D, diff = _np_pairwise_dist(B)

    A = np.where(neg, alpha - D, -np.inf)
    has_neg = neg.any(axis=1)
    m = np.where(has_neg, A.max(axis=1), 0.0)
    with np.errstate(divide="ignore"):
        lse = np.where(has_neg, m + np.log(np.exp(A - m[:, None]).sum(axis=1)), -np.inf)

    pi, pj = np.nonzero(iu)
    log_s = np.logaddexp(lse[pi], lse[pj])
    L = log_s + D[pi, pj]
    active = L > 0.0
    if not active.any():
        return 0.0, np.zeros_like(B)
    pi, pj, L, log_s = pi[active], pj[active], L[active], log_s[active]
    loss = float(np.sum(L * L) / (2.0 * n_pos))
    c = L / n_pos

    G = np.zeros((n, n))
    np.add.at(G, (pi, pj), c)
    u = np.zeros(n)
    np.add.at(u, pi, c * np.exp(lse[pi] - log_s))
    np.add.at(u, pj, c * np.exp(lse[pj] - log_s))
    safe_lse = np.where(np.isfinite(lse), lse, 0.0)
    with np.errstate(invalid="ignore"):
        W = np.where(neg, np.exp(A - safe_lse[:, None]), 0.0)
    G -= u[:, None] * W

    Gs = G + G.T
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(D > 0.0, Gs / np.where(D > 0.0, D, 1.0), 0.0)
    dB = np.einsum("ij,ijk->ik", coef, diff)
    return loss, dB


def _np_diag_log_gauss(X, means, variances):
    # direct differences: the expanded quadratic form cancels badly for tiny variances
    q = X.shape[1]
    quad = np.empty((X.shape[0], means.shape[0]))
    for m in range(means.shape[0]):
        d = X - means[m]
        quad[:, m] = (d * d) @ (1.0 / variances[m])
    log_det = np.sum(np.log(variances), axis=1)
    return -0.5 * (q * LOG_2PI + log_det[None, :] + quad)


def _np_norms(A):
    return np.sqrt(np.einsum("ij,ij->i", A, A))


def _np_cosine_between(A, B):
    na = np.einsum("ij,ij->i", A, A)
    nb = np.einsum("ij,ij->i", B, B)
    dots = A @ B.T
    s = dots / np.sqrt(np.outer(na, nb)) - 1.0
    return np.clip(s, -2.0, 0.0).ravel()


def _np_cosine_within(A):
    na = np.einsum("ij,ij->i", A, A)
    i, j = np.triu_indices(A.shape[0], 1)
    dots = np.einsum("ij,ij->i", A[i], A[j])
    s = dots / np.sqrt(na[i] * na[j]) - 1.0
    return np.clip(s, -2.0, 0.0)


def _np_min_sq_dist_update(X, center, current):
    d = X - center[None, :]
    return np.minimum(current, np.einsum("ij,ij->i", d, d))


numpy_impl = types.SimpleNamespace(
    name="numpy",
    lifted_loss=_np_lifted_loss,
    diag_log_gauss=_np_diag_log_gauss,
    cosine_within=_np_cosine_within,
    cosine_between=_np_cosine_between,
    min_sq_dist_update=_np_min_sq_dist_update,
)


# --------------------------------------------------------------------------
# numba path
# --------------------------------------------------------------------------


def _build_numba():
    try:
        import numba
    except ImportError:
        return None

    njit = numba.njit(cache=True, nogil=True)

    @njit
    def lifted_loss(B, pos, neg, alpha):
        n, q = B.shape
        dB = np.zeros((n, q))
        n_pos = 0
        for i in range(n):
            for j in range(i + 1, n):
                if pos[i, j]:
                    n_pos += 1
        if n_pos == 0:
            return 0.0, dB

        D = np.zeros((n, n))
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(q):
                    t = B[i, k] - B[j, k]
                    acc += t * t
                d = np.sqrt(acc)
                D[i, j] = d
                D[j, i] = d

        lse = np.empty(n)
        for i in range(n):
            m = -np.inf
            for k in range(n):
                if neg[i, k]:
                    a = alpha - D[i, k]
                    if a > m:
                        m = a
            if m == -np.inf:
                lse[i] = -np.inf
                continue
            s = 0.0
            for k in range(n):
                if neg[i, k]:
                    s += np.exp(alpha - D[i, k] - m)
            lse[i] = m + np.log(s)

        G = np.zeros((n, n))
        u = np.zeros(n)
        loss = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                if not pos[i, j]:
                    continue
                a, b = lse[i], lse[j]
                if a == -np.inf and b == -np.inf:
                    continue
                hi = a if a > b else b
                lo = b if a > b else a
                log_s = hi + np.log1p(np.exp(lo - hi))
                L = log_s + D[i, j]
                if L <= 0.0:
                    continue
                loss += L * L
                c = L / n_pos
                G[i, j] += c
                u[i] += c * np.exp(a - log_s)
                u[j] += c * np.exp(b - log_s)
        if loss == 0.0:
            return 0.0, dB
        loss /= 2.0 * n_pos

        for i in range(n):
            if u[i] == 0.0:
                continue
            for k in range(n):
                if neg[i, k]:
                    G[i, k] -= u[i] * np.exp(alpha - D[i, k] - lse[i])

        for i in range(n):
            for k in range(i + 1, n):
                g = G[i, k] + G[k, i]
                if g == 0.0 or D[i, k] == 0.0:
                    continue
                c = g / D[i, k]
                for t in range(q):
                    delta = c * (B[i, t] - B[k, t])
                    dB[i, t] += delta
                    dB[k, t] -= delta
        return loss, dB

    @njit
    def diag_log_gauss(X, means, variances):
        n, q = X.shape
        M = means.shape[0]
        out = np.empty((n, M))
        log_2pi = np.log(2.0 * np.pi)
        for m in range(M):
            log_det = 0.0
            for k in range(q):
                log_det += np.log(variances[m, k])
            const = -0.5 * (q * log_2pi + log_det)
            for i in range(n):
                acc = 0.0
                for k in range(q):
                    t = X[i, k] - means[m, k]
                    acc += t * t / variances[m, k]
                out[i, m] = const - 0.5 * acc
        return out

    @njit
    def _sq_norms(A):
        n, q = A.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for k in range(q):
                acc += A[i, k] * A[i, k]
            out[i] = acc
        return out

    @njit
    def _clip_score(dot, na, nb):
        s = dot / np.sqrt(na * nb) - 1.0
        if s < -2.0:
            return -2.0
        if s > 0.0:
            return 0.0
        return s

    @njit
    def cosine_within(A):
        n, q = A.shape
        na = _sq_norms(A)
        out = np.empty(n * (n - 1) // 2)
        p = 0
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(q):
                    acc += A[i, k] * A[j, k]
                out[p] = _clip_score(acc, na[i], na[j])
                p += 1
        return out

    @njit
    def cosine_between(A, B):
        # the cross products go through BLAS; only the normalization is looped
        n, m = A.shape[0], B.shape[0]
        na = _sq_norms(A)
        nb = _sq_norms(B)
        dots = np.dot(A, np.ascontiguousarray(B.T))
        out = np.empty(n * m)
        for i in range(n):
            for j in range(m):
                out[i * m + j] = _clip_score(dots[i, j], na[i], nb[j])
        return out

    @njit
    def min_sq_dist_update(X, center, current):
        n, q = X.shape
        out = np.empty(n)
        for i in range(n):
            acc = 0.0
            for k in range(q):
                t = X[i, k] - center[k]
                acc += t * t
            out[i] = acc if acc < current[i] else current[i]
        return out

    return types.SimpleNamespace(
        name="numba",
        lifted_loss=lifted_loss,
        diag_log_gauss=diag_log_gauss,
        cosine_within=cosine_within,
        cosine_between=cosine_between,
        min_sq_dist_update=min_sq_dist_update,
    )


numba_impl = _build_numba()

active = numpy_impl if (numba_impl is None or _env_disabled()) else numba_impl
BACKEND = active.name


def lifted_loss(B, pos, neg, alpha):
    B = np.ascontiguousarray(B, dtype=np.float64)
    pos = np.ascontiguousarray(pos, dtype=np.bool_)
    neg = np.ascontiguousarray(neg, dtype=np.bool_)
    return active.lifted_loss(B, pos, neg, float(alpha))


def diag_log_gauss(X, means, variances):
    return active.diag_log_gauss(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(means, dtype=np.float64),
        np.ascontiguousarray(variances, dtype=np.float64),
    )


def cosine_within(A):
    return active.cosine_within(np.ascontiguousarray(A, dtype=np.float64))


def cosine_between(A, B):
    return active.cosine_between(
        np.ascontiguousarray(A, dtype=np.float64),
        np.ascontiguousarray(B, dtype=np.float64),
    )


def min_sq_dist_update(X, center, current):
    return active.min_sq_dist_update(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(center, dtype=np.float64),
        np.ascontiguousarray(current, dtype=np.float64),
    )
