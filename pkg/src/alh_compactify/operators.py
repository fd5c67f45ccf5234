"""Sparse assembly of second-order operators and Dirichlet solves.

The discrete Laplacian here is the trace of the array Hessian of
:func:`alh_compactify.tensor_core.hessian_scalar`, stencil for stencil, so a
solution of the discrete problem has a Hessian whose trace equals the solver
residual up to rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fd
from .errors import SolverError
from .tensor_core import ZeroShiftMetric, christoffel_zero_shift

DIRECT_LIMIT = 60_000
MAX_REFINE = 8


def laplacian_matrix(metric: ZeroShiftMetric, rate: float = 0.0) -> sp.csr_matrix:
    """Matrix of ``v -> e^{-beta w} Lap(e^{beta w} v)`` on flattened fields."""
    grid = metric.grid
    d = grid.dim
    D1, D2 = fd.derivative_matrices(grid.shape, grid.spacing)
    ginv = metric.inverse().reshape(-1, d, d)
    gamma = christoffel_zero_shift(metric).components.reshape(-1, d, d, d)
    c = np.einsum("pij,pkij->pk", ginv, gamma)
    size = grid.size
    I = sp.identity(size, format="csr")
    diag = lambda v: sp.diags(v, format="csr")
    b = float(rate)
    A = sp.csr_matrix((size, size))
    for i in range(d):
        for j in range(d):
            op = D2[i][j]
            if b:
                if i == 0:
                    op = op + b * D1[j]
                if j == 0:
                    op = op + b * D1[i]
                if i == 0 and j == 0:
                    op = op + b * b * I
            A = A + diag(ginv[:, i, j]) @ op
    for k in range(d):
        op = D1[k] + (b * I if (b and k == 0) else 0 * I)
        A = A - diag(c[:, k]) @ op
    return A.tocsr()


@dataclass(frozen=True)
class SolveInfo:
    method: str
    iterations: int
    residual: float


def solve_dirichlet(A: sp.csr_matrix, rhs: np.ndarray, boundary: np.ndarray,
                    values: np.ndarray, tol: float = 1e-10, method: str = "auto"):
    """Solve ``A u = rhs`` at interior nodes with ``u = values`` on ``boundary``.

    ``method`` is ``direct``, ``gmres`` (ILU-preconditioned) or ``auto``,
    which picks the direct factorization below ``DIRECT_LIMIT`` unknowns.
    The solve is refined until the largest row residual is below
    ``tol * max|u|``; the returned :class:`SolveInfo` reports that ratio.
    """
    bmask = boundary.ravel()
    inner = np.nonzero(~bmask)[0]
    outer = np.nonzero(bmask)[0]
    u = np.zeros(A.shape[0])
    u[outer] = values.ravel()[outer]
    Aii = A[inner][:, inner].tocsc()
    b = rhs.ravel()[inner] - A[inner][:, outer] @ u[outer]
    if method == "auto":
        method = "direct" if inner.size <= DIRECT_LIMIT else "gmres"
    if method == "direct":
        lu = spla.splu(Aii)
        step = lu.solve
    elif method == "gmres":
        ilu = spla.spilu(Aii, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(Aii.shape, ilu.solve)

        def step(r):
            x, info = spla.gmres(Aii, r, M=M, rtol=1e-8, atol=0.0, restart=200, maxiter=50)
            if info != 0:
                raise SolverError(f"GMRES did not converge (info={info})")
            return x
    else:
        raise SolverError(f"unknown linear solver {method!r}")
    # iterative refinement until the pointwise residual is below tol * max|u|
    x = np.zeros_like(b)
    its = 0
    scale = max(np.max(np.abs(u)), 1e-300)
    res = np.inf
    for its in range(1, MAX_REFINE + 1):
        r = b - Aii @ x
        res = float(np.max(np.abs(r))) / max(scale, np.max(np.abs(x)), 1e-300)
        if res <= tol * 1e-2:
            break
        x = x + step(r)
    r = b - Aii @ x
    res = float(np.max(np.abs(r))) / max(scale, np.max(np.abs(x)), 1e-300)
    if not np.all(np.isfinite(x)) or res > tol:
        raise SolverError(f"linear solve residual {res:.3e} exceeds tolerance {tol:.1e}")
    u[inner] = x
    return u, SolveInfo(method, its, res)
