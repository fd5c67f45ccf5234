"""Finite-difference stencils on uniform tensor-product grids.

Every differential operator in the package goes through this module so that the
array path (``partials``) and the sparse-matrix path (``derivative_matrices``)
use identical stencils: centered second-order differences in the interior and
one-sided second-order differences on the outermost nodes.

Fields that grow like ``exp(beta * w)`` are differentiated through their
"profile" ``v = f * exp(-beta * w)``; the exponential factor is then restored
with the exact product rule.  A pure exponential therefore has exact derivatives,
which is what lets the hyperbolic model reproduce closed forms to rounding.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def d1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """First derivative along ``axis`` (second order everywhere)."""
    return np.gradient(values, h, axis=axis, edge_order=2)


def d2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative along ``axis``; 3-point interior, 4-point one-sided edges."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2.0 * v[1:-1] + v[:-2]) / h**2
    out[0] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / h**2
    out[-1] = (2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def _broadcast_rate(rate, w: np.ndarray, ndim_grid: int, comp_shape: tuple) -> np.ndarray:
    beta = np.broadcast_to(np.asarray(rate, dtype=float), comp_shape)
    w_b = w.reshape((-1,) + (1,) * (ndim_grid - 1) + (1,) * len(comp_shape))
    return beta, w_b


def partials(values: np.ndarray, spacing: tuple, w: np.ndarray, rate=0.0,
             second: bool = True):
    """First (and optionally second) partial derivatives of a weighted field.

    ``values`` has shape ``grid_shape + comp_shape`` where ``grid_shape`` has
    ``len(spacing)`` axes and axis 0 is the radial axis sampled at ``w``.
    ``rate`` is a scalar or an array broadcastable to ``comp_shape``.

    Returns ``(first, second)`` with shapes ``grid + (d,) + comp`` and
    ``grid + (d, d) + comp``; ``second`` is ``None`` when not requested.
    """
    d = len(spacing)
    comp_shape = values.shape[d:]
    beta, w_b = _broadcast_rate(rate, w, d, comp_shape)
    weighted = bool(np.any(beta != 0.0))
    if weighted:
        scale = np.exp(beta * w_b)
        v = values / scale
    else:
        scale = None
        v = values

    dv = [d1(v, spacing[i], i) for i in range(d)]
    first = np.stack(dv, axis=d)
    if weighted:
        first = first * np.expand_dims(scale, d)
        first[(slice(None),) * d + (0,)] += beta * values

    if not second:
        return first, None

    ddv = np.empty(values.shape[:d] + (d, d) + comp_shape)
    for i in range(d):
        ddv[(slice(None),) * d + (i, i)] = d2(v, spacing[i], i)
        for j in range(i + 1, d):
            mixed = d1(dv[j], spacing[i], i)
            ddv[(slice(None),) * d + (i, j)] = mixed
            ddv[(slice(None),) * d + (j, i)] = mixed
    if weighted:
        # d_00 f = e^{bw}(b^2 v + 2 b v_0 + v_00), d_0m f = e^{bw}(b v_m + v_0m)
        ddv[(slice(None),) * d + (0, 0)] += 2.0 * beta * dv[0] + beta**2 * v
        for j in range(1, d):
            ddv[(slice(None),) * d + (0, j)] += beta * dv[j]
            ddv[(slice(None),) * d + (j, 0)] += beta * dv[j]
        ddv *= np.expand_dims(np.expand_dims(scale, d), d)
    return first, ddv


# --------------------------------------------------------------------------
# sparse operators (flattened C order, radial axis slowest)

def _d1_matrix(m: int, h: float) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i]
        cols += [i - 1, i + 1]
        vals += [-0.5 / h, 0.5 / h]
    rows += [0, 0, 0, m - 1, m - 1, m - 1]
    cols += [0, 1, 2, m - 1, m - 2, m - 3]
    vals += [-1.5 / h, 2.0 / h, -0.5 / h, 1.5 / h, -2.0 / h, 0.5 / h]
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _d2_matrix(m: int, h: float) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    for i in range(1, m - 1):
        rows += [i, i, i]
        cols += [i - 1, i, i + 1]
        vals += [1.0 / h**2, -2.0 / h**2, 1.0 / h**2]
    for edge, step in ((0, 1), (m - 1, -1)):
        for k, c in enumerate((2.0, -5.0, 4.0, -1.0)):
            rows.append(edge)
            cols.append(edge + step * k)
            vals.append(c / h**2)
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, m))


def _embed(op: sp.spmatrix, axis: int, shape: tuple) -> sp.csr_matrix:
    mats = [sp.identity(m, format="csr") for m in shape]
    mats[axis] = op
    out = mats[0]
    for m in mats[1:]:
        out = sp.kron(out, m, format="csr")
    return out


def derivative_matrices(shape: tuple, spacing: tuple):
    """Sparse first/second derivative operators acting on flattened fields.

    Returns ``(D1, D2)`` where ``D1[i]`` differentiates along axis ``i`` and
    ``D2[i][j]`` is the second derivative (pure for ``i == j``, composed first
    derivatives otherwise), matching :func:`partials` stencil for stencil.
    """
    d = len(shape)
    D1 = [_embed(_d1_matrix(shape[i], spacing[i]), i, shape) for i in range(d)]
    D2 = [[None] * d for _ in range(d)]
    for i in range(d):
        D2[i][i] = _embed(_d2_matrix(shape[i], spacing[i]), i, shape)
        for j in range(i + 1, d):
            D2[i][j] = (D1[i] @ D1[j]).tocsr()
            D2[j][i] = D2[i][j]
    return D1, D2


def boundary_mask(shape: tuple) -> np.ndarray:
    """Boolean mask of nodes lying on any face of the box."""
    mask = np.zeros(shape, dtype=bool)
    for ax, m in enumerate(shape):
        idx = [slice(None)] * len(shape)
        idx[ax] = 0
        mask[tuple(idx)] = True
        idx[ax] = m - 1
        mask[tuple(idx)] = True
    return mask
