"""Pure-numpy versions of the compiled scans in ``_kernels.pyx``."""

import numpy as np


def chain_products(steps, stride):
    steps = np.asarray(steps, dtype=float)
    M, n, _ = steps.shape
    if M % stride != 0:
        raise ValueError("number of steps must be a multiple of stride")
    out = np.empty((M // stride + 1, n, n))
    cur = np.eye(n)
    out[0] = cur
    for k in range(M):
        cur = steps[k] @ cur
        if (k + 1) % stride == 0:
            out[(k + 1) // stride] = cur
    return out


def pairwise_products(steps, stride):
    steps = np.asarray(steps, dtype=float)
    M, n, _ = steps.shape
    if M % stride != 0:
        raise ValueError("number of steps must be a multiple of stride")
    nodes = M // stride + 1
    out = np.zeros((nodes, nodes, n, n))
    for j in range(nodes):
        cur = np.eye(n)
        out[j, j] = cur
        for k in range(j * stride, M):
            cur = steps[k] @ cur
            if (k + 1) % stride == 0:
                out[(k + 1) // stride, j] = cur
    return out
