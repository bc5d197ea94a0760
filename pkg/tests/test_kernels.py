"""Both kernel backends against each other and against plain numpy."""

import numpy as np
import pytest

from neural_galerkin import _pykernels, kernels
from neural_galerkin.errors import KernelError


def test_backend_selected():
    assert kernels.BACKEND in ("compiled", "python")
    assert "python" in kernels.backends()


def test_cholesky(backend, rng):
    R = rng.standard_normal((9, 9))
    A = R @ R.T + np.eye(9)
    L = backend.cholesky(A)
    assert np.allclose(np.triu(L, 1), 0)
    assert np.allclose(L @ L.T, A, atol=1e-12)


def test_cholesky_pivot_failure(backend):
    with pytest.raises(KernelError):
        backend.cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_cho_solve(backend, rng):
    R = rng.standard_normal((8, 8))
    A = R @ R.T + np.eye(8)
    L = np.linalg.cholesky(A)
    B = rng.standard_normal((8, 3))
    assert np.allclose(A @ backend.cho_solve(L, B), B, atol=1e-11)
    b = rng.standard_normal(8)
    assert np.allclose(A @ backend.cho_solve(L, b), b, atol=1e-11)


def test_householder_r(backend, rng):
    A = rng.standard_normal((20, 6))
    R = backend.householder_r(A)
    assert R.shape == (6, 6)
    assert np.allclose(np.tril(R, -1), 0)
    assert np.allclose(R.T @ R, A.T @ A, atol=1e-11)


@pytest.mark.parametrize("shape", [(6, 6), (12, 5), (4, 9)])
def test_jacobi_svd(backend, rng, shape):
    A = rng.standard_normal(shape)
    W, V, sweeps = backend.jacobi_svd(A)
    assert np.allclose(W, A @ V, atol=1e-12)
    assert np.allclose(V.T @ V, np.eye(V.shape[1]), atol=1e-12)
    G = W.T @ W
    assert np.allclose(G - np.diag(np.diag(G)), 0, atol=1e-10)


@pytest.mark.parametrize("n", [1, 2, 8, 64])
def test_fft_matches_numpy(backend, rng, n):
    x = rng.standard_normal((3, n)) + 1j * rng.standard_normal((3, n))
    assert np.allclose(backend.fft_radix2(x), np.fft.fft(x, axis=-1), atol=1e-12)
    assert np.allclose(backend.fft_radix2(x, True), np.fft.ifft(x, axis=-1), atol=1e-12)


def test_fft_rejects_non_power_of_two(backend):
    with pytest.raises(ValueError):
        backend.fft_radix2(np.ones(6))


def test_double_well_load(backend, rng):
    Phi = rng.standard_normal((50, 7))
    w = rng.random(50)
    beta = rng.standard_normal(7) * 0.5
    g, pot = backend.double_well_load(Phi, w, beta, 5.0)
    u = Phi @ beta
    assert np.allclose(g, Phi.T @ (w * 5.0 * (u ** 3 - u)), atol=1e-12)
    assert np.isclose(pot, 5.0 * np.sum(w * 0.25 * (u * u - 1) ** 2), atol=1e-12)


def _stream_case(rng):
    S, n, w = 5, 7, 4
    A = rng.standard_normal((S, n, w))
    partner = np.array([-1, -1, -1, 1, 2], dtype=np.int64)  # slots 3, 4 pair with 1, 2
    return A, partner


def test_stream_forward_formula(backend, rng):
    A, partner = _stream_case(rng)
    out = backend.stream_tanh_forward(A, partner)
    Z = np.tanh(A[0])
    c = 1 - Z * Z
    assert np.allclose(out[0], Z, atol=1e-15)
    assert np.allclose(out[1], c * A[1], atol=1e-14)
    assert np.allclose(out[3], c * (A[3] - 2 * Z * A[1] ** 2), atol=1e-14)


def test_stream_backward_is_adjoint(backend, rng):
    A, partner = _stream_case(rng)
    G = rng.standard_normal(A.shape)
    gA = backend.stream_tanh_backward(G, A, partner)
    h = 1e-6
    dA = rng.standard_normal(A.shape)
    fp = np.sum(G * backend.stream_tanh_forward(A + h * dA, partner))
    fm = np.sum(G * backend.stream_tanh_forward(A - h * dA, partner))
    assert np.isclose(np.sum(gA * dA), (fp - fm) / (2 * h), rtol=1e-7)


def test_backends_agree(rng):
    mods = kernels.backends()
    if len(mods) < 2:
        pytest.skip("compiled extension not built")
    c, p = mods["compiled"], mods["python"]
    A, partner = _stream_case(rng)
    assert np.allclose(c.stream_tanh_forward(A, partner), p.stream_tanh_forward(A, partner), atol=1e-14)
    G = rng.standard_normal(A.shape)
    assert np.allclose(c.stream_tanh_backward(G, A, partner), p.stream_tanh_backward(G, A, partner), atol=1e-13)
    M = rng.standard_normal((10, 10))
    M = M @ M.T + np.eye(10)
    assert np.allclose(c.cholesky(M), p.cholesky(M), atol=1e-13)
    X = rng.standard_normal(16)
    assert np.allclose(c.fft_radix2(X), p.fft_radix2(X), atol=1e-13)


def test_pure_python_module_has_full_api():
    for name in ("cholesky", "cho_solve", "householder_r", "jacobi_svd", "fft_radix2", "double_well_load",
                 "stream_tanh_forward", "stream_tanh_backward"):
        assert callable(getattr(_pykernels, name))
