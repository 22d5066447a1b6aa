# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled sequential matrix-product scans used by the transition tables."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _matmul(const double[:, :] a, const double[:, :] b, double[:, :] out) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += a[i, k] * b[k, j]
            out[i, j] = s


def chain_products(steps, Py_ssize_t stride):
    """Running products ``P[k+1] = steps[k] @ P[k]`` sampled every ``stride`` steps."""
    cdef const double[:, :, :] S = np.ascontiguousarray(steps, dtype=np.float64)
    cdef Py_ssize_t M = S.shape[0]
    cdef Py_ssize_t n = S.shape[1]
    if M % stride != 0:
        raise ValueError("number of steps must be a multiple of stride")
    cdef Py_ssize_t nodes = M // stride + 1
    out_arr = np.zeros((nodes, n, n))
    cdef double[:, :, :] out = out_arr
    cdef double[:, :] cur = np.eye(n)
    cdef double[:, :] tmp = np.empty((n, n))
    cdef Py_ssize_t k, i, j
    with nogil:
        for i in range(n):
            out[0, i, i] = 1.0
        for k in range(M):
            _matmul(S[k], cur, tmp)
            cur[:, :] = tmp
            if (k + 1) % stride == 0:
                out[(k + 1) // stride, :, :] = cur
    return out_arr


def pairwise_products(steps, Py_ssize_t stride):
    """All node-to-node products ``out[i, j] = steps[i*stride-1] @ ... @ steps[j*stride]``.

    Entries with ``i < j`` are left zero; the diagonal is the identity.
    """
    cdef const double[:, :, :] S = np.ascontiguousarray(steps, dtype=np.float64)
    cdef Py_ssize_t M = S.shape[0]
    cdef Py_ssize_t n = S.shape[1]
    if M % stride != 0:
        raise ValueError("number of steps must be a multiple of stride")
    cdef Py_ssize_t nodes = M // stride + 1
    out_arr = np.zeros((nodes, nodes, n, n))
    cdef double[:, :, :, :] out = out_arr
    cdef double[:, :] cur = np.empty((n, n))
    cdef double[:, :] tmp = np.empty((n, n))
    cdef Py_ssize_t j, k, i, a
    with nogil:
        for j in range(nodes):
            cur[:, :] = 0.0
            for a in range(n):
                cur[a, a] = 1.0
            out[j, j, :, :] = cur
            for k in range(j * stride, M):
                _matmul(S[k], cur, tmp)
                cur[:, :] = tmp
                if (k + 1) % stride == 0:
                    out[(k + 1) // stride, j, :, :] = cur
    return out_arr
