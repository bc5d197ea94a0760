# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled dense kernels.

Every function here has a numpy twin in :mod:`neural_galerkin._pykernels`
with the same signature and the same numerical contract. Inputs are
converted to C-contiguous float64 (complex128 for the FFT) on entry.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, cos, sin, expm1, M_PI

cnp.import_array()


from neural_galerkin.errors import KernelError


def cholesky(A, double rel_pivot_tol=1e-14):
    """Lower Cholesky factor of a symmetric matrix, no pivoting.

    Raises ``KernelError`` with the failing column index when a pivot is
    below ``rel_pivot_tol * max(diag(A))``.
    """
    cdef double[:, ::1] a = np.ascontiguousarray(A, dtype=np.float64)
    cdef Py_ssize_t n = a.shape[0]
    out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] L = out
    cdef Py_ssize_t i, j, k
    cdef double s, dmax = 0.0, floor
    for i in range(n):
        if a[i, i] > dmax:
            dmax = a[i, i]
    floor = rel_pivot_tol * dmax
    if n == 0:
        return out
    if dmax <= 0.0:
        raise KernelError(0)
    for j in range(n):
        s = a[j, j]
        for k in range(j):
            s -= L[j, k] * L[j, k]
        if not (s > floor):
            raise KernelError(j)
        L[j, j] = sqrt(s)
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / L[j, j]
    return out


def cho_solve(L_in, B_in):
    """Solve ``L L^T X = B`` given the lower factor ``L``; ``B`` is 1-D or 2-D."""
    cdef double[:, ::1] L = np.ascontiguousarray(L_in, dtype=np.float64)
    cdef double[:, ::1] U = np.ascontiguousarray(L_in.T, dtype=np.float64)
    B = np.asarray(B_in, dtype=np.float64)
    vector = B.ndim == 1
    # one contiguous row per right-hand side
    Bt = np.array(B.reshape(B.shape[0], -1).T, dtype=np.float64, order="C")
    cdef double[:, ::1] x = Bt
    cdef Py_ssize_t n = L.shape[0], nrhs = x.shape[0]
    cdef Py_ssize_t r, i, j
    cdef double s
    for r in range(nrhs):
        for i in range(n):
            s = x[r, i]
            for j in range(i):
                s -= L[i, j] * x[r, j]
            x[r, i] = s / L[i, i]
        for i in range(n - 1, -1, -1):
            s = x[r, i]
            for j in range(i + 1, n):
                s -= U[i, j] * x[r, j]
            x[r, i] = s / U[i, i]
    if vector:
        return Bt[0].copy()
    return np.ascontiguousarray(Bt.T)


def householder_r(A):
    """Upper-triangular factor R of a Householder QR of a tall matrix (rows >= cols)."""
    At = np.array(np.asarray(A, dtype=np.float64).T, order="C")
    cdef double[:, ::1] a = At  # a[j, :] is column j of A
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    cdef Py_ssize_t k, j, i
    cdef double norm, alpha, vtv, dot, scale
    v_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] v = v_arr
    for k in range(min(m, n)):
        norm = 0.0
        for i in range(k, n):
            norm += a[k, i] * a[k, i]
        norm = sqrt(norm)
        if norm == 0.0:
            continue
        alpha = -norm if a[k, k] >= 0.0 else norm
        for i in range(k, n):
            v[i] = a[k, i]
        v[k] -= alpha
        vtv = 0.0
        for i in range(k, n):
            vtv += v[i] * v[i]
        if vtv == 0.0:
            continue
        a[k, k] = alpha
        for i in range(k + 1, n):
            a[k, i] = 0.0
        for j in range(k + 1, m):
            dot = 0.0
            for i in range(k, n):
                dot += v[i] * a[j, i]
            scale = 2.0 * dot / vtv
            for i in range(k, n):
                a[j, i] -= scale * v[i]
    R = np.zeros((m, m), dtype=np.float64)
    cdef double[:, ::1] r = R
    for j in range(m):
        for i in range(min(j + 1, n)):
            r[i, j] = a[j, i]
    return R


def jacobi_svd(A, double tol=1e-15, int max_sweeps=80):
    """One-sided (Hestenes) Jacobi SVD of ``A`` (any shape).

    Returns ``(W, V, sweeps)`` where the columns of ``W = A V`` are mutually
    orthogonal; singular values are the column norms of ``W``. Sorting and
    normalisation are left to the caller.
    """
    At = np.array(np.asarray(A, dtype=np.float64).T, order="C")
    cdef double[:, ::1] a = At  # rows of a are columns of A
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1]
    Vt_arr = np.eye(m, dtype=np.float64)
    cdef double[:, ::1] vt = Vt_arr  # rows of vt are columns of V
    cdef Py_ssize_t p, q, i
    cdef double alpha, beta, gamma, zeta, t, c, s, ap, aq
    cdef int sweep, rotated = 1
    sweep = 0
    while rotated and sweep < max_sweeps:
        rotated = 0
        sweep += 1
        for p in range(m - 1):
            for q in range(p + 1, m):
                alpha = 0.0
                beta = 0.0
                gamma = 0.0
                for i in range(n):
                    alpha += a[p, i] * a[p, i]
                    beta += a[q, i] * a[q, i]
                    gamma += a[p, i] * a[q, i]
                if gamma == 0.0 or fabs(gamma) <= tol * sqrt(alpha * beta):
                    continue
                rotated = 1
                zeta = (beta - alpha) / (2.0 * gamma)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + sqrt(1.0 + zeta * zeta))
                else:
                    t = -1.0 / (-zeta + sqrt(1.0 + zeta * zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(n):
                    ap = a[p, i]
                    aq = a[q, i]
                    a[p, i] = c * ap - s * aq
                    a[q, i] = s * ap + c * aq
                for i in range(m):
                    ap = vt[p, i]
                    aq = vt[q, i]
                    vt[p, i] = c * ap - s * aq
                    vt[q, i] = s * ap + c * aq
    return np.ascontiguousarray(At.T), np.ascontiguousarray(Vt_arr.T), sweep


cdef inline Py_ssize_t _bit_reverse(Py_ssize_t x, int bits) nogil:
    cdef Py_ssize_t r = 0
    cdef int b
    for b in range(bits):
        r = (r << 1) | (x & 1)
        x >>= 1
    return r


def fft_radix2(X, bint inverse=False):
    """Iterative radix-2 FFT along the last axis; length must be a power of two.

    The inverse transform includes the ``1/N`` normalisation.
    """
    arr = np.asarray(X, dtype=np.complex128)
    shape = arr.shape
    cdef Py_ssize_t N = shape[len(shape) - 1]
    if N == 0 or N & (N - 1):
        raise ValueError("length must be a power of two")
    re_arr = np.ascontiguousarray(arr.real.reshape(-1, N), dtype=np.float64).copy()
    im_arr = np.ascontiguousarray(arr.imag.reshape(-1, N), dtype=np.float64).copy()
    cdef double[:, ::1] re = re_arr
    cdef double[:, ::1] im = im_arr
    cdef Py_ssize_t rows = re.shape[0]
    cdef int bits = 0
    while (<Py_ssize_t>1 << bits) < N:
        bits += 1
    cdef Py_ssize_t nt = N // 2 if N > 1 else 1
    twr_arr = np.empty(nt, dtype=np.float64)
    twi_arr = np.empty(nt, dtype=np.float64)
    cdef double[::1] twr = twr_arr
    cdef double[::1] twi = twi_arr
    cdef double sign = 1.0 if inverse else -1.0
    cdef Py_ssize_t k, r, i, j, size, half, step, start, a, b
    cdef double ur, ui, vr, vi, wr, wi, tmp, inv_n = 1.0 / N
    for k in range(N // 2):
        twr[k] = cos(2.0 * M_PI * k / N)
        twi[k] = sign * sin(2.0 * M_PI * k / N)
    for r in range(rows):
        for i in range(N):
            j = _bit_reverse(i, bits)
            if j > i:
                tmp = re[r, i]
                re[r, i] = re[r, j]
                re[r, j] = tmp
                tmp = im[r, i]
                im[r, i] = im[r, j]
                im[r, j] = tmp
        size = 2
        while size <= N:
            half = size // 2
            step = N // size
            start = 0
            while start < N:
                for k in range(half):
                    a = start + k
                    b = a + half
                    wr = twr[k * step]
                    wi = twi[k * step]
                    vr = re[r, b] * wr - im[r, b] * wi
                    vi = re[r, b] * wi + im[r, b] * wr
                    ur = re[r, a]
                    ui = im[r, a]
                    re[r, a] = ur + vr
                    im[r, a] = ui + vi
                    re[r, b] = ur - vr
                    im[r, b] = ui - vi
                start += size
            size *= 2
        if inverse:
            for i in range(N):
                re[r, i] *= inv_n
                im[r, i] *= inv_n
    return (re_arr + 1j * im_arr).reshape(shape)


def double_well_load(Phi, w, beta, double kappa):
    """Fused nonlinear load for the double-well potential.

    Returns ``(g, potential)`` with ``g_i = sum_q w_q kappa f(u_q) Phi[q, i]``
    and ``potential = sum_q w_q kappa F(u_q)``, ``u = Phi @ beta``.
    """
    cdef double[:, ::1] P = np.ascontiguousarray(Phi, dtype=np.float64)
    cdef double[::1] W = np.ascontiguousarray(w, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(beta, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0], m = P.shape[1]
    g_arr = np.zeros(m, dtype=np.float64)
    cdef double[::1] g = g_arr
    cdef Py_ssize_t q, i
    cdef double u, u2, coef, pot = 0.0
    for q in range(n):
        u = 0.0
        for i in range(m):
            u += P[q, i] * b[i]
        u2 = u * u
        pot += W[q] * 0.25 * (u2 - 1.0) * (u2 - 1.0)
        coef = W[q] * kappa * (u2 * u - u)
        for i in range(m):
            g[i] += coef * P[q, i]
    return g_arr, kappa * pot


cdef inline double _tanh(double a) nogil:
    cdef double e
    if a > 20.0:
        return 1.0
    if a < -20.0:
        return -1.0
    e = expm1(2.0 * a)
    return e / (e + 2.0)


def stream_tanh_forward(A_in, partner_in):
    """Fused tanh layer on a packed stream stack ``A`` of shape (S, n, w).

    Slot 0 holds pre-activations; slot ``k > 0`` is a first-order stream when
    ``partner[k] < 0`` and otherwise the pure second derivative paired with
    first-order slot ``partner[k]``. Returns the propagated stack.
    """
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef long long[::1] partner = np.ascontiguousarray(partner_in, dtype=np.int64)
    cdef Py_ssize_t S = A.shape[0], n = A.shape[1], w = A.shape[2]
    out_arr = np.empty((S, n, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    zbuf = np.empty(w, dtype=np.float64)
    cbuf = np.empty(w, dtype=np.float64)
    cdef double[::1] Z = zbuf
    cdef double[::1] C = cbuf
    cdef Py_ssize_t i, j, k
    cdef long long f
    cdef double z, c, af
    for i in range(n):
        for j in range(w):
            z = _tanh(A[0, i, j])
            Z[j] = z
            C[j] = 1.0 - z * z
            out[0, i, j] = z
        for k in range(1, S):
            f = partner[k]
            if f < 0:
                for j in range(w):
                    out[k, i, j] = C[j] * A[k, i, j]
            else:
                for j in range(w):
                    af = A[f, i, j]
                    out[k, i, j] = C[j] * (A[k, i, j] - 2.0 * Z[j] * af * af)
    return out_arr


def stream_tanh_backward(G_in, A_in, partner_in):
    """Adjoint of :func:`stream_tanh_forward` with respect to ``A``."""
    cdef double[:, :, ::1] G = np.ascontiguousarray(G_in, dtype=np.float64)
    cdef double[:, :, ::1] A = np.ascontiguousarray(A_in, dtype=np.float64)
    cdef long long[::1] partner = np.ascontiguousarray(partner_in, dtype=np.int64)
    cdef Py_ssize_t S = A.shape[0], n = A.shape[1], w = A.shape[2]
    gA_arr = np.empty((S, n, w), dtype=np.float64)
    cdef double[:, :, ::1] gA = gA_arr
    zbuf = np.empty(w, dtype=np.float64)
    cbuf = np.empty(w, dtype=np.float64)
    cdef double[::1] Z = zbuf
    cdef double[::1] C = cbuf
    cdef Py_ssize_t i, j, k
    cdef long long f
    cdef double z, c, af, gq
    for i in range(n):
        for j in range(w):
            z = _tanh(A[0, i, j])
            Z[j] = z
            C[j] = 1.0 - z * z
            gA[0, i, j] = C[j] * G[0, i, j]
        for k in range(1, S):
            for j in range(w):
                gA[k, i, j] = C[j] * G[k, i, j]
            if partner[k] < 0:
                for j in range(w):
                    gA[0, i, j] -= 2.0 * Z[j] * C[j] * A[k, i, j] * G[k, i, j]
        for k in range(1, S):
            f = partner[k]
            if f >= 0:
                for j in range(w):
                    af = A[f, i, j]
                    gq = G[k, i, j]
                    z = Z[j]
                    c = C[j]
                    gA[0, i, j] -= 2.0 * z * c * A[k, i, j] * gq + 2.0 * c * (1.0 - 3.0 * z * z) * af * af * gq
                    gA[f, i, j] -= 4.0 * z * c * af * gq
    return gA_arr
