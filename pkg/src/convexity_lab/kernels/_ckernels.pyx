# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for batched ReLU networks with frozen switches.

Same contract as ``_pykernels``; matrix products go through BLAS dgemm,
elementwise masking and reductions are plain C loops in fixed order.
"""
import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

BACKEND = "cython"


cdef void _mm(const double[:, ::1] A, bint ta, const double[:, ::1] B, bint tb,
              double[:, ::1] C, double alpha, double beta) noexcept nogil:
    # row-major C = alpha * op(A) @ op(B) + beta * C, via C^T = op(B)^T op(A)^T
    cdef int m = C.shape[0]
    cdef int n = C.shape[1]
    cdef int k = A.shape[0] if ta else A.shape[1]
    cdef char transa = b'T' if tb else b'N'
    cdef char transb = b'T' if ta else b'N'
    cdef int lda = B.shape[1]
    cdef int ldb = A.shape[1]
    cdef int ldc = n
    cdef Py_ssize_t i, j
    if m == 0 or n == 0:
        return
    if k == 0:
        for i in range(m):
            for j in range(n):
                C[i, j] = beta * C[i, j] if beta != 0.0 else 0.0
        return
    dgemm(&transa, &transb, &n, &m, &k, &alpha, <double*>&B[0, 0], &lda,
          <double*>&A[0, 0], &ldb, &beta, &C[0, 0], &ldc)


cdef inline void _mask(double[:, ::1] X, const double[:, ::1] M) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(X.shape[0]):
        for j in range(X.shape[1]):
            X[i, j] *= M[i, j]


cdef inline cnp.ndarray _empty(Py_ssize_t r, Py_ssize_t c):
    return np.empty((r, c), dtype=np.float64)


cdef inline cnp.ndarray _zeros(Py_ssize_t r, Py_ssize_t c):
    return np.zeros((r, c), dtype=np.float64)


def forward(A, Ws):
    cdef Py_ssize_t N = A.shape[0], i, j
    cdef double[:, ::1] z, h
    hs = [A]
    zs = []
    prev = A
    for W in Ws:
        zarr = _empty(N, W.shape[1])
        harr = _empty(N, W.shape[1])
        z = zarr
        h = harr
        _mm(prev, False, W, False, z, 1.0, 0.0)
        for i in range(N):
            for j in range(z.shape[1]):
                h[i, j] = z[i, j] if z[i, j] > 0.0 else 0.0
        zs.append(zarr)
        hs.append(harr)
        prev = harr
    return hs, zs


def frozen_forward(A, Ws, masks):
    cdef Py_ssize_t N = A.shape[0]
    cdef double[:, ::1] h
    hs = [A]
    prev = A
    for k in range(len(Ws)):
        W = Ws[k]
        harr = _empty(N, W.shape[1])
        h = harr
        _mm(prev, False, W, False, h, 1.0, 0.0)
        _mask(h, masks[k])
        hs.append(harr)
        prev = harr
    return hs


cdef cnp.ndarray _output_delta(const double[:] dy, const double[:, ::1] Mout, double scale):
    cdef Py_ssize_t N = dy.shape[0], i
    arr = _empty(N, 1)
    cdef double[:, ::1] d = arr
    for i in range(N):
        d[i, 0] = scale * dy[i] * Mout[i, 0]
    return arr


def backprop(hs, Ws, masks, dy):
    cdef Py_ssize_t H = len(Ws) - 1, N = hs[0].shape[0]
    cdef double[:, ::1] g, nd
    grads = [None] * (H + 1)
    delta = _output_delta(dy, masks[H], 1.0)
    for k in range(H, -1, -1):
        W = Ws[k]
        garr = _empty(W.shape[0], W.shape[1])
        g = garr
        _mm(hs[k], True, delta, False, g, 1.0, 0.0)
        grads[k] = garr
        if k:
            ndarr = _empty(N, W.shape[0])
            nd = ndarr
            _mm(delta, False, W, True, nd, 1.0, 0.0)
            _mask(nd, masks[k - 1])
            delta = ndarr
    return grads


def hvp(hs, Ws, masks, dy, Xs, double curv):
    cdef Py_ssize_t H = len(Ws) - 1, N = hs[0].shape[0], i
    cdef double[:, ::1] hd, o, nd, ndd
    hdots = [_zeros(N, hs[0].shape[1])]
    for k in range(H + 1):
        W = Ws[k]
        hdarr = _empty(N, W.shape[1])
        hd = hdarr
        _mm(hdots[k], False, W, False, hd, 1.0, 0.0)
        _mm(hs[k], False, Xs[k], False, hd, 1.0, 1.0)
        _mask(hd, masks[k])
        hdots.append(hdarr)
    cdef double[:, ::1] last = hdots[H + 1]
    cdef const double[:, ::1] Mout = masks[H]
    ddarr = _empty(N, 1)
    cdef double[:, ::1] dd = ddarr
    for i in range(N):
        dd[i, 0] = curv * last[i, 0] * Mout[i, 0]
    delta = _output_delta(dy, Mout, 1.0)
    ddelta = ddarr
    out = [None] * (H + 1)
    for k in range(H, -1, -1):
        W = Ws[k]
        oarr = _empty(W.shape[0], W.shape[1])
        o = oarr
        _mm(hdots[k], True, delta, False, o, 1.0, 0.0)
        _mm(hs[k], True, ddelta, False, o, 1.0, 1.0)
        out[k] = oarr
        if k:
            nddarr = _empty(N, W.shape[0])
            ndd = nddarr
            _mm(ddelta, False, W, True, ndd, 1.0, 0.0)
            _mm(delta, False, Xs[k], True, ndd, 1.0, 1.0)
            _mask(ndd, masks[k - 1])
            ndarr = _empty(N, W.shape[0])
            nd = ndarr
            _mm(delta, False, W, True, nd, 1.0, 0.0)
            _mask(nd, masks[k - 1])
            ddelta = nddarr
            delta = ndarr
    return out


def jet2(hs, Ws, masks, Xs):
    cdef Py_ssize_t N = hs[0].shape[0], i
    cdef double[:, ::1] a, b
    hd = _zeros(N, hs[0].shape[1])
    hdd = _zeros(N, hs[0].shape[1])
    for k in range(len(Ws)):
        W = Ws[k]
        barr = _empty(N, W.shape[1])
        b = barr
        _mm(hdd, False, W, False, b, 1.0, 0.0)
        _mm(hd, False, Xs[k], False, b, 2.0, 1.0)
        _mask(b, masks[k])
        aarr = _empty(N, W.shape[1])
        a = aarr
        _mm(hd, False, W, False, a, 1.0, 0.0)
        _mm(hs[k], False, Xs[k], False, a, 1.0, 1.0)
        _mask(a, masks[k])
        hd = aarr
        hdd = barr
    ydot = np.empty(N)
    yddot = np.empty(N)
    cdef double[:] yd = ydot, ydd = yddot
    cdef double[:, ::1] fa = hd, fb = hdd
    for i in range(N):
        yd[i] = fa[i, 0]
        ydd[i] = fb[i, 0]
    return ydot, yddot


def sq_jacobian_rows(hs, Ws, masks):
    cdef Py_ssize_t H = len(Ws) - 1, N = hs[0].shape[0], i, j
    cdef double sh, sg
    total = np.zeros(N)
    cdef double[:] t = total
    cdef const double[:, ::1] hk, gk
    cdef double[:, ::1] nd
    g = np.array(masks[H], dtype=np.float64, copy=True)
    for k in range(H, -1, -1):
        hk = hs[k]
        gk = g
        for i in range(N):
            sh = 0.0
            for j in range(hk.shape[1]):
                sh += hk[i, j] * hk[i, j]
            sg = 0.0
            for j in range(gk.shape[1]):
                sg += gk[i, j] * gk[i, j]
            t[i] += sh * sg
        if k:
            W = Ws[k]
            ndarr = _empty(N, W.shape[0])
            nd = ndarr
            _mm(g, False, W, True, nd, 1.0, 0.0)
            _mask(nd, masks[k - 1])
            g = ndarr
    return total
