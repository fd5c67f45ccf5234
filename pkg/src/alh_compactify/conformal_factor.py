"""The radial eigenfunction ``t`` with ``Lap t = (n+1) t`` and its traceless Hessian.

The unknown is the profile ``v = t e^{-w}``; the discrete operator acts on
``e^{w} v`` with exact exponential factors, so ``t = e^w`` is reproduced to
rounding on the hyperbolic model.  Dirichlet data ``v = 1`` (``t_1 = 0``) is
imposed on every face of the truncated box.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import fd
from .errors import DomainError, InternalConsistencyError, PreconditionError
from .operators import laplacian_matrix, solve_dirichlet
from .tensor_core import (HalfSpaceGrid, ScalarField, TensorField, ZeroShiftMetric,
                          hessian_array, tensor_norm)
from .window_norms import DecayFit, fit_decay_rate, stations_for

SOLVER_TOL = 1e-10
SWEEP_TOL = 0.01


def mean_curvature(metric: ZeroShiftMetric) -> ScalarField:
    """``H = g^{mu nu} d_0 g_{mu nu} / (2N)``."""
    grid = metric.grid
    d, _ = fd.partials(metric.gt.components, grid.spacing, grid.w, metric.gt.rate, second=False)
    gti = np.linalg.inv(metric.gt.components)
    H = np.einsum("...mn,...mn->...", gti, d[..., 0, :, :]) / (2.0 * metric.N.values)
    return ScalarField(grid, H)


def reporting_mask(grid: HalfSpaceGrid, buffer: float = 1.0) -> np.ndarray:
    """Nodes at least ``buffer`` from the radial faces and ``buffer`` hyperbolic
    units (``buffer * e^{-w}`` in ``x``) from the lateral faces."""
    mesh = grid.mesh()
    W = mesh[0]
    mask = (W >= grid.w0 + buffer - 1e-12) & (W <= grid.w_max - buffer + 1e-12)
    lateral = np.maximum(buffer * np.exp(-W), grid.dx)
    for X in mesh[1:]:
        mask &= np.abs(X) <= grid.L - lateral + 1e-12
    return mask


@dataclass(frozen=True, eq=False)
class RadialEigenfunction:
    t: ScalarField
    t1: ScalarField
    residual: float
    iterations: int
    method: str
    report_mask: np.ndarray
    sweep_change: Optional[float] = None
    a_hint: Optional[float] = None
    seconds: float = 0.0
    diagnostics: dict = field(default_factory=dict)

    @property
    def grid(self) -> HalfSpaceGrid:
        return self.t.grid

    def rows(self, every: int = 1) -> list:
        """``(w, x..., t, t1)`` rows for CSV export."""
        pts = self.grid.points()[::every]
        return [tuple(p) + (float(a), float(b)) for p, a, b in
                zip(pts, self.t.values.ravel()[::every], self.t1.values.ravel()[::every])]


def _solve_once(metric: ZeroShiftMetric, tol: float, method: str):
    grid = metric.grid
    A = laplacian_matrix(metric, rate=1.0)
    A = A - (grid.dim) * _identity(grid.size)
    bnd = fd.boundary_mask(grid.shape)
    v, info = solve_dirichlet(A, np.zeros(grid.size), bnd, np.ones(grid.size), tol, method)
    return v.reshape(grid.shape), info


def _identity(size):
    import scipy.sparse as sp
    return sp.identity(size, format="csr")


def _on_grid(values: np.ndarray, src: HalfSpaceGrid, dst: HalfSpaceGrid) -> np.ndarray:
    """Restrict ``values`` on ``src`` to the nodes of ``dst`` (same spacing, nested box)."""
    i0 = int(round((dst.w0 - src.w0) / src.dw))
    j0 = int(round((dst.x[0] - src.x[0]) / src.dx))
    idx = (slice(i0, i0 + dst.Nw),) + (slice(j0, j0 + dst.Nx),) * dst.n
    return values[idx]


def solve_radial_eigenfunction(metric: ZeroShiftMetric, a_hint: Optional[float] = None,
                               buffer: float = 1.0, sweep: bool = True,
                               tol: float = SOLVER_TOL, method: str = "auto",
                               sweep_tol: float = SWEEP_TOL) -> RadialEigenfunction:
    """Solve ``Lap t = (n+1) t`` with ``t = e^w`` on all truncation faces.

    With ``sweep`` the problem is re-solved on a box one unit taller with a
    doubled lateral half-width (same spacings, model rebuilt through the
    metric's ``builder``); the solution is accepted when ``t_1`` changes on the
    reporting subdomain by less than ``sweep_tol`` relative to ``sup t``
    there.  ``a_hint`` never enters the solve; when given, the box must be tall
    enough that ``e^{-a w_max} <= 0.01``.
    """
    grid = metric.grid
    if a_hint is not None and math.exp(-a_hint * grid.w_max) > 0.01:
        raise PreconditionError(f"w_max = {grid.w_max} is too low for order {a_hint}: "
                                f"need e^(-a w_max) <= 0.01")
    start = time.perf_counter()
    v, info = _solve_once(metric, tol, method)
    ew = np.exp(grid.w_column())
    t_vals = ew * v
    if np.any(t_vals <= 0):
        raise DomainError("eigenfunction is not positive on the box")
    t1_vals = ew * (v - 1.0)
    mask = reporting_mask(grid, buffer)
    if not mask.any():
        raise DomainError("reporting subdomain is empty; enlarge the box")
    change = None
    if sweep:
        if metric.builder is None:
            raise PreconditionError("truncation sweep needs a metric builder")
        wider = HalfSpaceGrid(grid.n, grid.w0, grid.w_max + 1.0,
                              grid.Nw + int(round(1.0 / grid.dw)), 2.0 * grid.L,
                              2 * (grid.Nx - 1) + 1)
        v2, _ = _solve_once(metric.builder(wider), tol, method)
        t1_big = _on_grid(np.exp(wider.w_column()) * (v2 - 1.0), wider, grid)
        change = float(np.max(np.abs(t1_big - t1_vals)[mask]) / np.max(t_vals[mask]))
        if change >= sweep_tol:
            raise DomainError(f"truncation sweep changed t1 by {change:.3%} of t; enlarge the box")
    elapsed = time.perf_counter() - start
    return RadialEigenfunction(
        t=ScalarField(grid, t_vals, rate=1.0),
        t1=ScalarField(grid, t1_vals, rate=1.0),
        residual=info.residual,
        iterations=info.iterations,
        method=info.method,
        report_mask=mask,
        sweep_change=change,
        a_hint=a_hint,
        seconds=elapsed,
    )


def barrier_exponent(a: float) -> float:
    """Growth exponent ``1 - a`` of the comparison function for ``t_1``."""
    return 1.0 - a


@dataclass(frozen=True, eq=False)
class TracelessHessian:
    T: TensorField
    norm: np.ndarray
    trace_defect: float
    fit: Optional[DecayFit]


def traceless_hessian_T(metric: ZeroShiftMetric, eig, tol: float = SOLVER_TOL,
                        stations: Optional[np.ndarray] = None) -> TracelessHessian:
    """``T = Hess(t) - t g`` with its pointwise norm and a decay fit of the slice sup.

    ``eig`` is a :class:`RadialEigenfunction` or a bare scalar field (then the
    whole interior is checked).  The trace ``g^{ij} T_ij`` must stay within
    ``10 tol`` of zero relative to ``t`` on the reporting subdomain.
    """
    t = eig.t if isinstance(eig, RadialEigenfunction) else eig
    grid = metric.grid
    mask = eig.report_mask if isinstance(eig, RadialEigenfunction) else reporting_mask(grid, 1.0)
    H, _ = hessian_array(metric, t)
    g = metric.full()
    T = H - t.values[..., None, None] * g
    ginv = metric.inverse()
    tr = np.einsum("...ij,...ij->...", ginv, T)
    defect = float(np.max(np.abs(tr[mask]) / t.values[mask]))
    if defect > 10.0 * tol:
        raise InternalConsistencyError(f"trace of T is {defect:.2e} relative to t")
    norm = tensor_norm(T, ginv, 2)
    fit = None
    if stations is None:
        w = grid.w
        lo, hi = w[mask.reshape(grid.Nw, -1).any(axis=1)][[0, -1]]
        stations = stations_for(grid, lo=math.ceil(lo) + 1.0, hi=math.floor(hi))
    if len(stations) >= 4:
        fit = fit_decay_rate(stations, masked_slice_sup(norm, grid, mask, stations))
    return TracelessHessian(TensorField(grid, T, 2, ((0, 1),)), norm, defect, fit)


def masked_slice_sup(values: np.ndarray, grid: HalfSpaceGrid, mask: np.ndarray,
                     stations) -> np.ndarray:
    """Sup of ``|values|`` over the masked nodes of the slice nearest each station."""
    idx = np.rint((np.asarray(stations) - grid.w0) / grid.dw).astype(int)
    return np.array([np.max(np.abs(values[i][mask[i]])) for i in idx])


def t1_decay_fit(eig: RadialEigenfunction, stations) -> DecayFit:
    """Decay fit of ``sup |t_1|`` over reporting slices; growth shows as negative rate."""
    return fit_decay_rate(stations, masked_slice_sup(eig.t1.values, eig.grid, eig.report_mask,
                                                     stations))
