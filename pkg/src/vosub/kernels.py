"""Hot loops, each with a numba and a numpy implementation.

The public names dispatch on :data:`vosub._jit.USE_NUMBA`. Both variants
are importable directly (``*_numba`` / ``*_numpy``) for testing and the
benchmark.
"""

import numpy as np

from ._jit import USE_NUMBA, njit

# --------------------------------------------------------------------------
# P1 element data


def element_stiffness_numpy(vertices, triangles, sigma_tri):
    """Signed areas and local stiffness matrices of all triangles.

    Returns ``(area, Ke)`` with ``Ke`` of shape ``(ntri, 3, 3)``.
    """
    p = vertices[triangles]  # (nt, 3, 2)
    x, y = p[..., 0], p[..., 1]
    # b_i = (y_j - y_k, x_k - x_j) for cyclic (i, j, k)
    bx = np.roll(y, -1, axis=1) - np.roll(y, -2, axis=1)
    by = np.roll(x, -2, axis=1) - np.roll(x, -1, axis=1)
    area = 0.5 * (bx[:, 0] * by[:, 1] - bx[:, 1] * by[:, 0])
    g = bx[:, :, None] * bx[:, None, :] + by[:, :, None] * by[:, None, :]
    Ke = (sigma_tri / (4.0 * area))[:, None, None] * g
    return area, Ke


@njit
def element_stiffness_numba(vertices, triangles, sigma_tri):
    nt = triangles.shape[0]
    area = np.empty(nt)
    Ke = np.empty((nt, 3, 3))
    bx = np.empty(3)
    by = np.empty(3)
    for t in range(nt):
        for i in range(3):
            j = triangles[t, (i + 1) % 3]
            k = triangles[t, (i + 2) % 3]
            bx[i] = vertices[j, 1] - vertices[k, 1]
            by[i] = vertices[k, 0] - vertices[j, 0]
        a = 0.5 * (bx[0] * by[1] - bx[1] * by[0])
        area[t] = a
        s = sigma_tri[t] / (4.0 * a)
        for i in range(3):
            for j in range(3):
                Ke[t, i, j] = s * (bx[i] * bx[j] + by[i] * by[j])
    return area, Ke


def corner_lump_numpy(triangles, area, corner_vals, n):
    """Vertex-rule load ``b_i = sum_T |T|/3 * f_T(x_i)``."""
    w = (area / 3.0)[:, None] * corner_vals
    return np.bincount(triangles.ravel(), weights=w.ravel(), minlength=n)


@njit
def corner_lump_numba(triangles, area, corner_vals, n):
    b = np.zeros(n)
    for t in range(triangles.shape[0]):
        a3 = area[t] / 3.0
        for i in range(3):
            b[triangles[t, i]] += a3 * corner_vals[t, i]
    return b


# --------------------------------------------------------------------------
# L1 history


def history_dot_numpy(w, D, out):
    """``out[:] = sum_s w[s] * D[s, :]``."""
    np.dot(w, D, out=out)
    return out


# reassociation lets the inner loop vectorize; memory bound like BLAS gemv
@njit(fastmath=True)
def history_dot_numba(w, D, out):
    m, n = D.shape
    for j in range(n):
        out[j] = 0.0
    for s in range(m):
        ws = w[s]
        for j in range(n):
            out[j] += ws * D[s, j]
    return out


if USE_NUMBA:
    element_stiffness = element_stiffness_numba
    corner_lump = corner_lump_numba
    history_dot = history_dot_numba
else:
    element_stiffness = element_stiffness_numpy
    corner_lump = corner_lump_numpy
    history_dot = history_dot_numpy
