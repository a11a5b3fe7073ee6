"""Finite-difference weights on arbitrary 1-D grids.

Weights come from Fornberg's recursion, so the same code serves uniform
grids (classical centered stencils) and the nonuniform grids produced by
Legendre reconstruction.  Near the ends the stencil is shifted inwards,
giving one-sided formulas of the same width.
"""

from functools import lru_cache

import numpy as np
from scipy import sparse


def fornberg_weights(z, x, m):
    """Weights for derivatives 0..m at point `z` from nodes `x`.

    Returns an array ``c`` of shape (m + 1, len(x)); ``c[k] @ f(x)``
    approximates the k-th derivative of f at z.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    c = np.zeros((m + 1, n))
    c1 = 1.0
    c4 = x[0] - z
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - z
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[k, i] = c1 * (k * c[k - 1, i - 1] - c5 * c[k, i - 1]) / c2
                c[0, i] = -c1 * c5 * c[0, i - 1] / c2
            for k in range(mn, 0, -1):
                c[k, j] = (c4 * c[k, j] - k * c[k - 1, j]) / c3
            c[0, j] = c4 * c[0, j] / c3
        c1 = c2
    return c


def _stencil_start(i, n, width):
    start = i - width // 2
    return min(max(start, 0), n - width)


def derivative_matrices(x, max_order=4, width=7):
    """Sparse matrices D[k] (k = 1..max_order) approximating d^k/dx^k.

    `width` nodes are used for every row; with width 7 the centered
    stencils are 6th order for the first two derivatives and 4th order
    for the third and fourth.
    """
    return _derivative_matrices(tuple(np.asarray(x, dtype=float)), max_order, width)


@lru_cache(maxsize=64)
def _derivative_matrices(xt, max_order, width):
    x = np.array(xt)
    n = len(x)
    if n < width:
        raise ValueError(f"grid of {n} nodes is shorter than stencil width {width}")
    rows, cols = [], []
    vals = [[] for _ in range(max_order)]
    for i in range(n):
        s = _stencil_start(i, n, width)
        idx = np.arange(s, s + width)
        w = fornberg_weights(x[i], x[idx], max_order)
        rows.extend([i] * width)
        cols.extend(idx)
        for k in range(max_order):
            vals[k].extend(w[k + 1])
    mats = {}
    for k in range(max_order):
        mats[k + 1] = sparse.csr_matrix((vals[k], (rows, cols)), shape=(n, n))
    return mats
