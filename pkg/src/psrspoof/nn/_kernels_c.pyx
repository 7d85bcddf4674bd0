# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: the LSTM recurrence and a fused GELU.

Same contract as ``_kernels_py``: LSTM gates ordered [input, forget, cell,
output], zero initial state, float64 arrays.  The per-step matrix products
go straight to BLAS; the gate arithmetic is fused in C loops.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fmax, fmin
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()

# exp arguments are clamped so no intermediate overflows (results saturate below 1e-17)
cdef double CLAMP = 40.0


def lstm_forward(xw_in, w_hh_in):
    cdef cnp.ndarray[double, ndim=3, mode="c"] xw = np.ascontiguousarray(xw_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef int T = xw.shape[0], R = xw.shape[1], G = xw.shape[2]
    cdef int H = G // 4
    cdef cnp.ndarray[double, ndim=3, mode="c"] h = np.zeros((T, R, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] c = np.zeros((T, R, H))
    cdef cnp.ndarray[double, ndim=3, mode="c"] gates = np.empty((T, R, G))
    cdef cnp.ndarray[double, ndim=2, mode="c"] a = np.empty((R, G))
    cdef int t, r, j
    cdef double one = 1.0, zero = 0.0
    cdef char nt = b'N'
    with nogil:
        for t in range(T):
            # a = xw[t] + h[t-1] @ w_hh   (column-major view: a^T = w_hh^T h^T)
            for r in range(R):
                for j in range(G):
                    a[r, j] = xw[t, r, j]
            if t > 0:
                dgemm(&nt, &nt, &G, &R, &H, &one, &w_hh[0, 0], &G, &h[t - 1, 0, 0], &H,
                      &one, &a[0, 0], &G)
            # branch-free inner loops so the compiler can vectorise the math
            for r in range(R):
                for j in range(2 * H):
                    gates[t, r, j] = 1.0 / (1.0 + exp(fmin(fmax(-a[r, j], -CLAMP), CLAMP)))
                for j in range(2 * H, 3 * H):
                    gates[t, r, j] = 2.0 / (1.0 + exp(fmin(fmax(-2.0 * a[r, j], -CLAMP), CLAMP))) - 1.0
                for j in range(3 * H, G):
                    gates[t, r, j] = 1.0 / (1.0 + exp(fmin(fmax(-a[r, j], -CLAMP), CLAMP)))
                if t > 0:
                    for j in range(H):
                        c[t, r, j] = gates[t, r, H + j] * c[t - 1, r, j] + gates[t, r, j] * gates[t, r, 2 * H + j]
                else:
                    for j in range(H):
                        c[t, r, j] = gates[t, r, j] * gates[t, r, 2 * H + j]
                for j in range(H):
                    h[t, r, j] = gates[t, r, 3 * H + j] * (2.0 / (1.0 + exp(fmin(fmax(-2.0 * c[t, r, j], -CLAMP), CLAMP))) - 1.0)
    return h, c, gates


def lstm_backward(dh_in, gates_in, c_in, w_hh_in):
    cdef cnp.ndarray[double, ndim=3, mode="c"] dh = np.ascontiguousarray(dh_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] gates = np.ascontiguousarray(gates_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=3, mode="c"] c = np.ascontiguousarray(c_in, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=2, mode="c"] w_hh = np.ascontiguousarray(w_hh_in, dtype=np.float64)
    cdef int T = gates.shape[0], R = gates.shape[1], G = gates.shape[2]
    cdef int H = G // 4
    cdef cnp.ndarray[double, ndim=3, mode="c"] dgates = np.empty((T, R, G))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dh_next = np.zeros((R, H))
    cdef cnp.ndarray[double, ndim=2, mode="c"] dc_next = np.zeros((R, H))
    cdef int t, r, j
    cdef double one = 1.0, zero = 0.0
    cdef double ig, fg, gg, og, tc, dht, dc, cp
    cdef char tr = b'T'
    cdef char nt = b'N'
    with nogil:
        for t in range(T - 1, -1, -1):
            for r in range(R):
                for j in range(H):
                    ig = gates[t, r, j]
                    fg = gates[t, r, H + j]
                    gg = gates[t, r, 2 * H + j]
                    og = gates[t, r, 3 * H + j]
                    tc = 2.0 / (1.0 + exp(fmin(fmax(-2.0 * c[t, r, j], -CLAMP), CLAMP))) - 1.0
                    dht = dh[t, r, j] + dh_next[r, j]
                    dc = dc_next[r, j] + dht * og * (1.0 - tc * tc)
                    cp = c[t - 1, r, j] if t > 0 else 0.0
                    dgates[t, r, j] = dc * gg * ig * (1.0 - ig)
                    dgates[t, r, H + j] = dc * cp * fg * (1.0 - fg)
                    dgates[t, r, 2 * H + j] = dc * ig * (1.0 - gg * gg)
                    dgates[t, r, 3 * H + j] = dht * tc * og * (1.0 - og)
                    dc_next[r, j] = dc * fg
            # dh_next = dgates[t] @ w_hh^T   (column-major: dh^T = w_hh dgates^T)
            dgemm(&tr, &nt, &H, &R, &G, &one, &w_hh[0, 0], &G, &dgates[t, 0, 0], &G,
                  &zero, &dh_next[0, 0], &H)
    return dgates


def gelu(x_in):
    """tanh-approximated GELU and its derivative in one pass."""
    cdef cnp.ndarray[double, ndim=1, mode="c"] x = np.ascontiguousarray(x_in, dtype=np.float64).ravel()
    cdef Py_ssize_t n = x.shape[0], i
    cdef cnp.ndarray[double, ndim=1, mode="c"] y = np.empty(n)
    cdef cnp.ndarray[double, ndim=1, mode="c"] dy = np.empty(n)
    cdef double xi, u, t
    cdef double c = 0.7978845608028654, a = 0.044715
    with nogil:
        for i in range(n):
            xi = x[i]
            u = c * (xi + a * xi * xi * xi)
            t = 2.0 / (1.0 + exp(fmin(fmax(-2.0 * u, -CLAMP), CLAMP))) - 1.0
            y[i] = 0.5 * xi * (1.0 + t)
            dy[i] = 0.5 * (1.0 + t) + 0.5 * xi * (1.0 - t * t) * c * (1.0 + 3.0 * a * xi * xi)
    shape = np.shape(x_in)
    return y.reshape(shape), dy.reshape(shape)
