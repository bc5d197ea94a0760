"""Pure-numpy twins of the compiled kernels in ``_kernels.pyx``.

Same signatures, same contracts. The algorithms are vectorised over the
inner loops, so results agree with the compiled path only up to
floating-point reduction order.
"""

import numpy as np

from .errors import KernelError


def cholesky(A, rel_pivot_tol=1e-14):
    a = np.asarray(A, dtype=np.float64)
    n = a.shape[0]
    L = np.zeros((n, n))
    if n == 0:
        return L
    dmax = float(np.max(np.diag(a)))
    if dmax <= 0.0:
        raise KernelError(0)
    floor = rel_pivot_tol * dmax
    for j in range(n):
        s = a[j, j] - L[j, :j] @ L[j, :j]
        if not s > floor:
            raise KernelError(j)
        L[j, j] = np.sqrt(s)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L


def cho_solve(L, B):
    L = np.asarray(L, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    vector = B.ndim == 1
    x = np.array(B.reshape(B.shape[0], -1), dtype=np.float64)
    n = L.shape[0]
    for i in range(n):
        x[i] = (x[i] - L[i, :i] @ x[:i]) / L[i, i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - L[i + 1:, i] @ x[i + 1:]) / L[i, i]
    return x[:, 0] if vector else x


def householder_r(A):
    a = np.array(A, dtype=np.float64)
    n, m = a.shape
    for k in range(min(m, n)):
        x = a[k:, k]
        norm = np.sqrt(x @ x)
        if norm == 0.0:
            continue
        alpha = -norm if x[0] >= 0.0 else norm
        v = x.copy()
        v[0] -= alpha
        vtv = v @ v
        if vtv == 0.0:
            continue
        a[k:, k + 1:] -= np.outer(v, (2.0 / vtv) * (v @ a[k:, k + 1:]))
        a[k, k] = alpha
        a[k + 1:, k] = 0.0
    return np.triu(a[:m, :])


def _round_robin(m):
    """Tournament pairings: m - 1 rounds of disjoint (p, q) pairs covering all pairs."""
    players = list(range(m)) + ([-1] if m % 2 else [])
    size = len(players)
    rounds = []
    for _ in range(size - 1):
        pairs = [(players[i], players[size - 1 - i]) for i in range(size // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p >= 0 and q >= 0]
        rounds.append((np.array([p for p, _ in pairs], dtype=np.intp),
                       np.array([q for _, q in pairs], dtype=np.intp)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_svd(A, tol=1e-15, max_sweeps=80):
    # rows of a/vt are columns of A/V; each round rotates disjoint pairs at once
    a = np.array(np.asarray(A, dtype=np.float64).T)
    m = a.shape[0]
    vt = np.eye(m)
    rounds = _round_robin(m) if m > 1 else []
    sweep = 0
    rotated = True
    while rotated and sweep < max_sweeps:
        rotated = False
        sweep += 1
        for p, q in rounds:
            ap, aq = a[p], a[q]
            alpha = np.einsum("ij,ij->i", ap, ap)
            beta = np.einsum("ij,ij->i", aq, aq)
            gamma = np.einsum("ij,ij->i", ap, aq)
            act = (gamma != 0.0) & (np.abs(gamma) > tol * np.sqrt(alpha * beta))
            if not act.any():
                continue
            rotated = True
            p, q = p[act], q[act]
            alpha, beta, gamma = alpha[act], beta[act], gamma[act]
            # a tiny gamma overflows zeta to inf, which gives t = 0 (no rotation)
            with np.errstate(over="ignore"):
                zeta = (beta - alpha) / (2.0 * gamma)
            t = np.sign(zeta) / (np.abs(zeta) + np.hypot(1.0, zeta))
            t[zeta == 0.0] = 1.0
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = (c * t)[:, None]
            c = c[:, None]
            ap, aq = a[p], a[q]
            a[p], a[q] = c * ap - s * aq, s * ap + c * aq
            vp, vq = vt[p], vt[q]
            vt[p], vt[q] = c * vp - s * vq, s * vp + c * vq
    return np.ascontiguousarray(a.T), np.ascontiguousarray(vt.T), sweep


def fft_radix2(X, inverse=False):
    x = np.array(X, dtype=np.complex128)
    N = x.shape[-1]
    if N == 0 or N & (N - 1):
        raise ValueError("length must be a power of two")
    bits = N.bit_length() - 1
    idx = np.arange(N)
    rev = np.zeros(N, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    x = x[..., rev]
    sign = 1.0 if inverse else -1.0
    lead = x.shape[:-1]
    size = 2
    while size <= N:
        half = size // 2
        tw = np.exp(sign * 2j * np.pi * np.arange(half) / size)
        blocks = x.reshape(lead + (N // size, size))
        u = blocks[..., :half].copy()
        v = blocks[..., half:] * tw
        blocks[..., :half] = u + v
        blocks[..., half:] = u - v
        x = blocks.reshape(lead + (N,))
        size *= 2
    if inverse:
        x /= N
    return x


def double_well_load(Phi, w, beta, kappa):
    Phi = np.asarray(Phi, dtype=np.float64)
    u = Phi @ np.asarray(beta, dtype=np.float64)
    u2 = u * u
    g = Phi.T @ (w * kappa * (u2 * u - u))
    return g, kappa * float(w @ (0.25 * (u2 - 1.0) ** 2))


def stream_tanh_forward(A, partner):
    A = np.ascontiguousarray(A, dtype=np.float64)
    Z = np.tanh(A[0])
    c = 1.0 - Z * Z
    out = np.empty_like(A)
    out[0] = Z
    out[1:] = c * A[1:]
    for k in range(1, A.shape[0]):
        f = partner[k]
        if f >= 0:
            out[k] -= 2.0 * Z * c * A[f] * A[f]
    return out


def stream_tanh_backward(G, A, partner):
    A = np.ascontiguousarray(A, dtype=np.float64)
    Z = np.tanh(A[0])
    c = 1.0 - Z * Z
    zc = Z * c
    gA = c * G
    for k in range(1, A.shape[0]):
        if partner[k] < 0:
            gA[0] -= 2.0 * zc * A[k] * G[k]
    for k in range(1, A.shape[0]):
        f = partner[k]
        if f >= 0:
            gA[0] -= 2.0 * zc * A[k] * G[k] + 2.0 * (c * (1.0 - 3.0 * Z * Z)) * A[f] * A[f] * G[k]
            gA[f] -= 4.0 * zc * A[f] * G[k]
    return gA
