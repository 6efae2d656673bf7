import os
import subprocess
import sys

import numpy as np
import pytest

from grouplatent import _kernels

needs_numba = pytest.mark.skipif(_kernels.numba_impl is None, reason="numba not installed")


def _masks(labels):
    labels = np.asarray(labels)
    pos = labels[:, None] == labels[None, :]
    np.fill_diagonal(pos, False)
    return pos, labels[:, None] != labels[None, :]


@pytest.mark.parametrize("impl", ["numpy", pytest.param("numba", marks=needs_numba)])
def test_lifted_loss_worked_example(impl):
    ns = _kernels.numpy_impl if impl == "numpy" else _kernels.numba_impl
    B = np.array([[0.0], [1.0], [5.0]])
    pos, neg = _masks([0, 0, 1])
    loss, _ = ns.lifted_loss(B, pos, neg, 4.0)
    assert loss == pytest.approx(0.5 * (np.log(1 + np.exp(-1.0)) + 1.0) ** 2, abs=1e-12)
    loss2, grad2 = ns.lifted_loss(B, pos, neg, 2.0)
    assert loss2 == 0.0
    assert not grad2.any()


@needs_numba
@pytest.mark.parametrize("seed", range(5))
def test_lifted_loss_backends_agree(seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((40, 6))
    pos, neg = _masks(rng.integers(0, 3, 40))
    B[3] = B[7]  # a zero-distance pair exercises the l=0 gradient rule
    a = _kernels.numpy_impl.lifted_loss(B, pos, neg, 1.0)
    b = _kernels.numba_impl.lifted_loss(B, pos, neg, 1.0)
    assert a[0] == pytest.approx(b[0], rel=1e-12)
    np.testing.assert_allclose(a[1], b[1], rtol=1e-10, atol=1e-12)


@needs_numba
def test_other_kernels_backends_agree(rng):
    X = rng.standard_normal((300, 5))
    means = rng.standard_normal((4, 5))
    var = rng.uniform(0.1, 3.0, (4, 5))
    np.testing.assert_allclose(
        _kernels.numpy_impl.diag_log_gauss(X, means, var), _kernels.numba_impl.diag_log_gauss(X, means, var), rtol=1e-12
    )
    A, C = rng.standard_normal((30, 8)), rng.standard_normal((20, 8))
    np.testing.assert_allclose(_kernels.numpy_impl.cosine_within(A), _kernels.numba_impl.cosine_within(A), atol=1e-13)
    np.testing.assert_allclose(_kernels.numpy_impl.cosine_between(A, C), _kernels.numba_impl.cosine_between(A, C), atol=1e-13)
    cur = np.full(300, np.inf)
    np.testing.assert_allclose(
        _kernels.numpy_impl.min_sq_dist_update(X, X[0], cur), _kernels.numba_impl.min_sq_dist_update(X, X[0], cur),
        rtol=1e-14,
    )


def test_cosine_kernel_ordering():
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]])
    np.testing.assert_allclose(_kernels.cosine_within(A), [-1.0, -2.0, -1.0])
    np.testing.assert_allclose(_kernels.cosine_between(A[:1], A), [0.0, -1.0, -2.0])


def test_env_flag_selects_numpy():
    env = dict(os.environ, GROUPLATENT_DISABLE_NUMBA="1")
    out = subprocess.run(
        [sys.executable, "-c", "from grouplatent import _kernels; print(_kernels.BACKEND)"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"


def test_wrappers_accept_non_contiguous_float32():
    X = np.asfortranarray(np.random.default_rng(0).standard_normal((20, 3)).astype(np.float32))
    out = _kernels.diag_log_gauss(X, np.zeros((1, 3)), np.ones((1, 3)))
    assert out.shape == (20, 1) and out.dtype == np.float64
