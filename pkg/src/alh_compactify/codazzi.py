"""Codazzi-type systems ``nabla_i T_jk - nabla_j T_ik = f_ijk``.

On a flat background a traceless symmetric ``T`` satisfies
``Lap T_jk = d_i f_ijk + d_j f_iki`` (sums over ``i``), so it can be recovered
from ``f`` and its boundary values by componentwise Poisson solves.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import fd
from .errors import PreconditionError
from .operators import solve_dirichlet
from .tensor_core import TensorField, ZeroShiftMetric, christoffel_generic

SOLVER_TOL = 1e-10


def codazzi_residual(metric: ZeroShiftMetric, T: TensorField) -> TensorField:
    """``f_ijk = nabla_i T_jk - nabla_j T_ik``, antisymmetric in ``(i, j)`` by construction."""
    if T.rank != 2 or T.grid != metric.grid:
        raise PreconditionError("T must be a rank-2 field on the metric's grid")
    C = T.components
    if np.max(np.abs(C - np.swapaxes(C, -1, -2))) > 1e-12 * max(np.max(np.abs(C)), 1.0):
        raise PreconditionError("T must be symmetric")
    grid = metric.grid
    g, dg, _ = metric.metric_partials(second=False)
    gamma = christoffel_generic(g, metric.inverse(), dg)
    dT, _ = fd.partials(T.components, grid.spacing, grid.w, T.rate, second=False)
    # the Gamma^l_ij T_lk terms cancel under antisymmetrization and are dropped
    X = dT - np.einsum("...lik,...jl->...ijk", gamma, T.components)
    f = X - np.swapaxes(X, -3, -2)
    return TensorField(grid, f, 3)


def traceless_flat(T: np.ndarray) -> np.ndarray:
    """Euclidean traceless projection of the trailing two indices."""
    d = T.shape[-1]
    return T - (np.trace(T, axis1=-2, axis2=-1) / d)[..., None, None] * np.eye(d)


def poisson_reduce(f: np.ndarray, spacing) -> np.ndarray:
    """``S_jk = d_i f_ijk + d_j f_iki`` in flat indices, symmetrized in ``(j, k)``.

    For ``f`` coming from a symmetric traceless ``T`` the reduction is already
    symmetric (it equals ``Lap T``); for other antisymmetric ``f`` only the
    symmetric part is meaningful as a source for a symmetric unknown.
    """
    d = len(spacing)
    S = sum(fd.d1(f[..., i, :, :], spacing[i], i) for i in range(d))
    trace = np.einsum("...iki->...k", f)
    S = S + np.stack([fd.d1(trace, spacing[j], j) for j in range(d)], axis=-2)
    return 0.5 * (S + np.swapaxes(S, -1, -2))


def flat_codazzi(T: np.ndarray, spacing) -> np.ndarray:
    """``f_ijk = d_i T_jk - d_j T_ik`` by finite differences on a flat box."""
    d = len(spacing)
    dT = np.stack([fd.d1(T, spacing[i], i) for i in range(d)], axis=d)
    return dT - np.swapaxes(dT, -3, -2)


def flat_laplacian(values: np.ndarray, spacing) -> np.ndarray:
    return sum(fd.d2(values, spacing[i], i) for i in range(len(spacing)))


@dataclass(frozen=True, eq=False)
class CodazziSolution:
    T: np.ndarray
    source: np.ndarray
    ratio: float
    norms: dict


def _lq(values: np.ndarray, h: float, q: float, dim: int, sel=None) -> float:
    v = values if sel is None else values[sel]
    mag = np.abs(v).reshape(v.shape[:dim] + (-1,))
    pointwise = np.linalg.norm(mag, axis=-1)
    return float((np.sum(pointwise**q) * h**dim) ** (1.0 / q))


def solve_codazzi_flat(f: np.ndarray, T_boundary: np.ndarray, h: float, q: float = 2.0,
                       inner: float = 0.25, tol: float = SOLVER_TOL) -> CodazziSolution:
    """Recover ``T`` from ``f`` and its boundary values on a uniform cube of spacing ``h``.

    Each component solves ``Lap T_jk = S_jk`` (the reduced source) with
    Dirichlet data from ``T_boundary``.  ``ratio`` is
    ``|T|_{W^{1,q}(inner box)} / (|f|_{L^q} + |T|_{L^q})``, the inner box
    dropping the fraction ``inner`` of the side at each face.
    """
    shape = f.shape[:-3]
    d = len(shape)
    if f.shape[-3:] != (d, d, d) or T_boundary.shape != shape + (d, d):
        raise PreconditionError("f must be grid + (d, d, d) and T_boundary grid + (d, d)")
    spacing = (h,) * d
    S = poisson_reduce(f, spacing)
    _, D2 = fd.derivative_matrices(shape, spacing)
    L = sum((D2[i][i] for i in range(1, d)), D2[0][0]).tocsr()
    bnd = fd.boundary_mask(shape)
    T = np.empty(shape + (d, d))
    for j in range(d):
        for k in range(j, d):
            sol, _ = solve_dirichlet(L, S[..., j, k].ravel(), bnd, T_boundary[..., j, k].ravel(), tol)
            T[..., j, k] = T[..., k, j] = sol.reshape(shape)
    m = shape[0]
    cut = int(round(inner * (m - 1)))
    sel = (slice(cut, m - cut),) * d
    dT = np.stack([fd.d1(T, h, i) for i in range(d)], axis=d)
    w1q = (_lq(T, h, q, d, sel) ** q + _lq(dT, h, q, d, sel) ** q) ** (1.0 / q)
    norms = {"T_W1q_inner": w1q, "f_Lq": _lq(f, h, q, d), "T_Lq": _lq(T, h, q, d)}
    denom = norms["f_Lq"] + norms["T_Lq"]
    ratio = w1q / denom if denom > 0 else 0.0
    return CodazziSolution(T, S, float(ratio), norms)


def traceless_projection(T: np.ndarray, g: np.ndarray, ginv: Optional[np.ndarray] = None) -> np.ndarray:
    """``T - (g^{kl} T_kl / dim) g``."""
    ginv = np.linalg.inv(g) if ginv is None else ginv
    dim = g.shape[-1]
    tr = np.einsum("...ij,...ij->...", ginv, T)
    return T - (tr / dim)[..., None, None] * g
