"""Harmonic coordinates: boundary charts at infinity, interior extension, model solver.

Boundary charts solve ``d_a(A^{ab} d_b y^mu) = 0`` on the unit ball in zoomed
coordinates ``z = lam (x - c)`` with ``A = sqrt(det gbar) gbar^{-1}`` and
``y = z + u``, ``u = 0`` on the (staircase) ball boundary.  The discrete
operator is conservative: compact half-point fluxes for the diagonal terms,
centred products for the mixed ones.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator

from . import fd
from .conformal_factor import RadialEigenfunction, masked_slice_sup, reporting_mask
from .errors import ChartRejected, PreconditionError, SolverError
from .operators import laplacian_matrix, solve_dirichlet
from .tensor_core import (ScalarField, ZeroShiftMetric, curvature_tensors, hessian_array,
                          laplacian, traceless)
from .window_norms import fit_decay_rate, stations_for

JACOBIAN_MIN = 0.5
MAX_ZOOM = 2**10
SOLVER_TOL = 1e-10

BoundaryMetric = Union[Callable, tuple]


# --------------------------------------------------------------------------
# divergence-form operators on uniform boxes

def _forward_difference(shape: tuple, axis: int, h: float) -> sp.csr_matrix:
    m = shape[axis]
    D = sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m)) / h
    before = int(np.prod(shape[:axis], dtype=int))
    after = int(np.prod(shape[axis + 1:], dtype=int))
    return sp.kron(sp.kron(sp.identity(before), D), sp.identity(after)).tocsr()


def _half_average(values: np.ndarray, axis: int) -> np.ndarray:
    lo = np.take(values, range(values.shape[axis] - 1), axis=axis)
    hi = np.take(values, range(1, values.shape[axis]), axis=axis)
    return 0.5 * (lo + hi)


def divergence_matrix(A: np.ndarray, h: float) -> sp.csr_matrix:
    """Matrix of ``u -> d_a(A^{ab} d_b u)`` for nodal coefficients ``A`` (``shape + (d, d)``)."""
    shape = A.shape[:-2]
    d = len(shape)
    size = int(np.prod(shape))
    L = sp.csr_matrix((size, size))
    D1, _ = fd.derivative_matrices(shape, (h,) * d)
    for i in range(d):
        Dp = _forward_difference(shape, i, h)
        L = L - Dp.T @ sp.diags(_half_average(A[..., i, i], i).ravel()) @ Dp
        for j in range(d):
            if j != i:
                L = L + D1[i] @ sp.diags(A[..., i, j].ravel()) @ D1[j]
    return L.tocsr()


def flux_divergence(F: np.ndarray, h: float) -> np.ndarray:
    """Compact discrete ``d_a F^a`` with fluxes averaged to half points (interior nodes)."""
    shape = F.shape[:-1]
    out = np.zeros(shape)
    for i in range(len(shape)):
        Dp = _forward_difference(shape, i, h)
        out -= (Dp.T @ _half_average(F[..., i], i).ravel()).reshape(shape)
    return out


def solve_divergence_dirichlet(A: np.ndarray, source: np.ndarray, h: float, boundary: np.ndarray,
                               values: Optional[np.ndarray] = None, tol: float = SOLVER_TOL,
                               method: str = "auto") -> np.ndarray:
    """Solve ``d_a(A^{ab} d_b u) = source`` with ``u = values`` on ``boundary`` nodes."""
    L = divergence_matrix(A, h)
    vals = np.zeros(source.shape) if values is None else values
    u, _ = solve_dirichlet(L, source.ravel(), boundary, vals, tol, method)
    return u.reshape(source.shape)


# --------------------------------------------------------------------------
# boundary charts

def _metric_callable(g_inf: BoundaryMetric) -> Callable:
    if callable(g_inf):
        return g_inf
    axes, values = g_inf
    interp = RegularGridInterpolator(tuple(axes), np.asarray(values), method="linear",
                                     bounds_error=True)

    def sampled(X):
        pts = np.stack([np.asarray(x).ravel() for x in X], axis=-1)
        out = interp(pts)
        return out.reshape(np.shape(X[0]) + out.shape[-2:])

    return sampled


def flat_metric(n: int) -> Callable:
    return lambda X: np.broadcast_to(np.eye(n), np.shape(X[0]) + (n, n)).copy()


@dataclass(frozen=True, eq=False)
class BoundaryChart:
    """Chart functions ``y = z + u`` on the unit ``z``-ball around ``center``."""

    center: tuple
    lam: float
    z: np.ndarray
    ball: np.ndarray
    u: np.ndarray
    jacobian_min: float
    proxy: float

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def y(self) -> np.ndarray:
        Z = np.stack(np.meshgrid(*([self.z] * self.n), indexing="ij"), axis=-1)
        return Z + self.u

    def x_of_z(self) -> list:
        return [c + self.z / self.lam for c in self.center]

    def rows(self) -> list:
        """``(z..., u...)`` at ball nodes."""
        Z = np.meshgrid(*([self.z] * self.n), indexing="ij")
        pts = np.stack([c[self.ball] for c in Z], axis=-1)
        return [tuple(p) + tuple(v) for p, v in zip(pts.tolist(), self.u[self.ball].tolist())]


def chart_coefficients(g_inf: BoundaryMetric, center: Sequence[float], lam: float,
                       z: np.ndarray) -> np.ndarray:
    """``sqrt(det gbar) gbar^{-1}`` evaluated at ``x = center + z / lam``."""
    n = len(center)
    Z = np.meshgrid(*([z] * n), indexing="ij")
    X = [c + zz / lam for c, zz in zip(center, Z)]
    G = np.asarray(_metric_callable(g_inf)(X), dtype=float)
    try:
        np.linalg.cholesky(G)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError("boundary metric is not positive definite on the chart") from exc
    return np.sqrt(np.linalg.det(G))[..., None, None] * np.linalg.inv(G)


def solve_boundary_harmonic(g_inf: BoundaryMetric, center: Sequence[float], lam: float = 1.0,
                            M: int = 33, tol: float = SOLVER_TOL,
                            jacobian_min: float = JACOBIAN_MIN) -> BoundaryChart:
    """Harmonic chart of ``g_inf`` on the ball of radius ``1/lam`` about ``center``.

    ``g_inf`` is a callable ``X -> (..., n, n)`` or a pair ``(axes, samples)``
    interpolated linearly.  Raises :class:`ChartRejected` when the Jacobian of
    ``y`` drops below ``jacobian_min`` at some ball node.
    """
    if lam < 1:
        raise PreconditionError(f"zoom must be at least 1, got {lam}")
    center = tuple(float(c) for c in center)
    n = len(center)
    z = np.linspace(-1.0, 1.0, M)
    h = z[1] - z[0]
    Z = np.meshgrid(*([z] * n), indexing="ij")
    r2 = sum(zz**2 for zz in Z)
    ball = (r2 < 1.0 - 1e-12) & ~fd.boundary_mask(r2.shape)
    A = chart_coefficients(g_inf, center, lam, z)
    L = divergence_matrix(A, h)
    u = np.empty(r2.shape + (n,))
    for mu in range(n):
        # the discrete operator applied to z^mu, so that y = z + u is discretely harmonic
        rhs = -(L @ Z[mu].ravel())
        sol, _ = solve_dirichlet(L, rhs, ~ball, np.zeros(r2.size), tol)
        u[..., mu] = sol.reshape(r2.shape)
    grads = np.stack([np.stack(np.gradient(u[..., mu], h, edge_order=2), axis=-1)
                      if n > 1 else np.gradient(u[..., mu], h, edge_order=2)[..., None]
                      for mu in range(n)], axis=-2)
    jac = np.linalg.det(np.eye(n) + grads)
    jmin = float(np.min(jac[ball]))
    proxy = float(np.max(np.linalg.norm(grads[ball], axis=(-1, -2))))
    if not jmin >= jacobian_min:
        raise ChartRejected(f"chart Jacobian {jmin:.3f} below {jacobian_min} at lam={lam}",
                            proxy, jmin)
    return BoundaryChart(center, float(lam), z, ball, u, jmin, proxy)


def zoom_lambda_search(g_inf: BoundaryMetric, center: Sequence[float], M: int = 33,
                       max_lambda: float = MAX_ZOOM, tol: float = SOLVER_TOL) -> BoundaryChart:
    """First accepted chart along ``lam = 1, 2, 4, ...``; its zoom is ``chart.lam``."""
    lam = 1.0
    last = None
    while lam <= max_lambda:
        try:
            return solve_boundary_harmonic(g_inf, center, lam, M, tol)
        except ChartRejected as exc:
            last = exc
            lam *= 2.0
    raise SolverError(f"no acceptable chart up to lam={max_lambda:g}; last gradient proxy "
                      f"{last.proxy:.3f}, Jacobian {last.jacobian_min:.3f}")


# --------------------------------------------------------------------------
# interior extension

@dataclass(frozen=True, eq=False)
class InteriorHarmonic:
    phi: ScalarField
    phi0: ScalarField
    phi1: ScalarField
    psi_norm: np.ndarray
    pairing: np.ndarray
    residual: float
    top_gap: float
    report_mask: np.ndarray
    fits: dict = field(default_factory=dict)


def _lateral_values(grid, phi_inf) -> np.ndarray:
    X = grid.mesh()[1:]
    if callable(phi_inf):
        vals = np.asarray(phi_inf(X), dtype=float)
    else:
        lateral = np.asarray(phi_inf, dtype=float)
        if lateral.shape != (grid.Nx,) * grid.n:
            raise PreconditionError("sampled chart function must live on the lateral grid")
        vals = np.broadcast_to(lateral, grid.shape)
    return np.broadcast_to(vals, grid.shape).copy()


def extend_harmonic_interior(metric: ZeroShiftMetric, phi_inf, g_inf: Optional[Callable] = None,
                             stations: Optional[np.ndarray] = None, buffer: float = 1.0,
                             tol: float = SOLVER_TOL, method: str = "auto") -> InteriorHarmonic:
    """Harmonic ``phi = phi0 + phi1`` with ``phi0 = phi_inf(x)`` constant in ``w``.

    ``phi1`` solves ``Lap phi1 = -Lap phi0`` with zero data on every face.
    Diagnostics are the comparison 1-form ``psi = dphi0 - r g gcheck^{-1} dphi0``
    (``r^2 = det gcheck / det g``, ``gcheck = dw^2 + e^{2w} g_inf``) and the
    pairing ``<dw, dphi>``, each with a decay fit over the reporting part.
    """
    grid = metric.grid
    n = grid.n
    g_inf = g_inf or flat_metric(n)
    phi0 = _lateral_values(grid, phi_inf)
    A = laplacian_matrix(metric, 0.0)
    bnd = fd.boundary_mask(grid.shape)
    rhs = -(A @ phi0.ravel())
    phi1, info = solve_dirichlet(A, rhs, bnd, np.zeros(grid.size), tol, method)
    phi1 = phi1.reshape(grid.shape)
    phi = ScalarField(grid, phi0 + phi1)
    lap = (A @ phi.values.ravel()).reshape(grid.shape)
    mask = reporting_mask(grid, buffer)
    residual = float(np.max(np.abs(lap[mask])) / max(np.max(np.abs(phi.values[mask])), 1e-300))

    gcheck = np.zeros(grid.shape + (grid.dim, grid.dim))
    gcheck[..., 0, 0] = 1.0
    e2w = np.exp(2.0 * grid.mesh()[0])
    gcheck[..., 1:, 1:] = e2w[..., None, None] * np.asarray(g_inf(grid.mesh()[1:]))
    g = metric.full()
    ginv = metric.inverse()
    r = np.sqrt(np.linalg.det(gcheck) / np.linalg.det(g))
    dphi0, _ = ScalarField(grid, phi0).partials(second=False)
    psi = dphi0 - r[..., None] * np.einsum("...ij,...jk,...k->...i", g, np.linalg.inv(gcheck), dphi0)
    psi_norm = np.sqrt(np.maximum(np.einsum("...ij,...i,...j->...", ginv, psi, psi), 0.0))
    dphi, _ = phi.partials(second=False)
    pairing = ginv[..., 0, 0] * dphi[..., 0]

    top = int(np.max(np.nonzero(mask.reshape(grid.Nw, -1).any(axis=1))[0]))
    gap = float(np.max(np.abs(phi1[top][mask[top]])))
    if stations is None:
        rows = np.nonzero(mask.reshape(grid.Nw, -1).any(axis=1))[0]
        lo, hi = grid.w[rows[0]], grid.w[rows[-1]]
        stations = stations_for(grid, lo=math.ceil(lo) + 1.0, hi=math.floor(hi))
    fits = {}
    if len(stations) >= 4:
        fits["pairing"] = fit_decay_rate(stations, masked_slice_sup(pairing, grid, mask, stations))
        fits["psi"] = fit_decay_rate(stations, masked_slice_sup(psi_norm, grid, mask, stations))
    return InteriorHarmonic(phi, ScalarField(grid, phi0), ScalarField(grid, phi1), psi_norm,
                            pairing, residual, gap, mask, fits)


# --------------------------------------------------------------------------
# model half-space problem in the ball model

@dataclass(frozen=True, eq=False)
class HalfSpaceSolution:
    x: np.ndarray
    u: np.ndarray
    ball: np.ndarray
    plane_max: float
    constant: float
    weighted: dict
    delta: float


def ball_conformal_factor(X: Sequence[np.ndarray]) -> np.ndarray:
    """``sigma = 2 / (1 - |x|^2)`` so that ``g_B = sigma^2 delta``."""
    return 2.0 / (1.0 - sum(x**2 for x in X))


def ball_distance(X: Sequence[np.ndarray]) -> np.ndarray:
    """Hyperbolic distance to the origin, ``log((1 + |x|)/(1 - |x|))``."""
    r = np.sqrt(sum(x**2 for x in X))
    return np.log((1.0 + r) / (1.0 - r))


def _reflect(X, v: Optional[Callable], w_src: Optional[Callable], n: int):
    """Evaluate data on the lower half and extend: ``w`` odd, ``v_0`` even, ``v_alpha`` odd."""
    x0 = X[0]
    lower = [-np.abs(x0)] + list(X[1:])
    sign = -np.sign(x0)  # +1 below the plane, -1 above, 0 on it
    shape = x0.shape
    W = np.zeros(shape) if w_src is None else sign * np.asarray(w_src(lower), dtype=float)
    V = np.zeros(shape + (n + 1,))
    if v is not None:
        vals = [np.broadcast_to(np.asarray(c, dtype=float), shape) for c in v(lower)]
        V[..., 0] = vals[0]
        for a in range(1, n + 1):
            V[..., a] = sign * vals[a]
    return V, W


def half_space_dirichlet_solver(v: Optional[Callable], w_src: Optional[Callable], n: int = 1,
                                delta_weight: Optional[float] = None, M: int = 41,
                                R: float = 0.8, tol: float = SOLVER_TOL) -> HalfSpaceSolution:
    """Solve ``Lap_B u = div v + w`` on the lower half ball with ``u = 0`` on ``x^0 = 0``.

    The data are reflected (``w`` odd, ``v_0`` even, tangential ``v`` odd) and
    the problem is solved on the ball ``|x| < R`` with ``u = 0`` outside, in
    the conservative form ``d_i(s^{n-1} d_i u) = d_i(s^{n-1} v_i) + s^{n+1} w``
    for ``s = 2/(1 - |x|^2)``.  ``v`` maps coordinate arrays to ``n + 1``
    Euclidean components of a 1-form, ``w_src`` to an array.

    The reported constant is ``|u|_delta / (|v|_delta + |w|_delta)`` with
    ``|f|_delta = sup e^{delta d} |f|_g`` over the lower half ball and ``d``
    the distance to the origin.
    """
    delta = n / 2.0 if delta_weight is None else float(delta_weight)
    if not 0.0 < delta < n:
        raise PreconditionError(f"weight must lie in (0, {n}), got {delta}")
    if M % 2 == 0:
        raise PreconditionError("M must be odd so that the reflection plane is a grid plane")
    if not 0.0 < R < 1.0:
        raise PreconditionError("truncation radius must lie in (0, 1)")
    x = np.linspace(-R, R, M)
    h = x[1] - x[0]
    X = np.meshgrid(*([x] * (n + 1)), indexing="ij")
    r2 = sum(c**2 for c in X)
    ball = (r2 < R * R - 1e-12) & ~fd.boundary_mask(r2.shape)
    sigma = np.where(ball, ball_conformal_factor([np.where(ball, c, 0.0) for c in X]), 1.0)
    V, W = _reflect(X, v, w_src, n)
    V[~ball] = 0.0
    W[~ball] = 0.0

    coef = sigma ** (n - 1)
    A = coef[..., None, None] * np.eye(n + 1)
    rhs = flux_divergence(coef[..., None] * V, h) + sigma ** (n + 1) * W
    L = divergence_matrix(A, h)
    u, _ = solve_dirichlet(L, rhs.ravel(), ~ball, np.zeros(r2.size), tol)
    u = u.reshape(r2.shape)

    lower = ball & (X[0] <= 0)
    dist = np.where(ball, ball_distance([np.where(ball, c, 0.0) for c in X]), 0.0)
    weight = np.exp(delta * dist)
    norm = lambda f: float(np.max(weight[lower] * np.abs(f[lower]))) if lower.any() else 0.0
    v_g = np.linalg.norm(V, axis=-1) / sigma
    weighted = {"u": norm(u), "v": norm(v_g), "w": norm(W)}
    _check_input_decay(dist, lower, v_g, W, delta)
    denom = weighted["v"] + weighted["w"]
    C = weighted["u"] / denom if denom > 0 else 0.0
    plane = ball & (np.abs(X[0]) < 0.5 * h)
    plane_max = float(np.max(np.abs(u[plane]))) if plane.any() else 0.0
    return HalfSpaceSolution(x, u, ball, plane_max, C, weighted, delta)


def _check_input_decay(dist, lower, v_g, W, delta, count: int = 6):
    """Shell sups of the data must decay at least at rate ``delta - 0.1`` in ``dist``."""
    s_max = float(np.max(dist[lower])) if lower.any() else 0.0
    if s_max <= 1.0:
        return
    stations = np.linspace(0.5, s_max - 0.25, count)
    width = 0.5 * (stations[1] - stations[0])
    data = v_g + np.abs(W)
    sups = np.array([np.max(data[lower & (np.abs(dist - s) <= width)], initial=0.0)
                     for s in stations])
    fit = fit_decay_rate(stations, sups)
    if not fit.sentinel and fit.rate < delta - 0.1:
        raise PreconditionError(f"data decay at rate {fit.rate:.2f}, below the weight {delta}")


# --------------------------------------------------------------------------
# <dt, dphi> identity

@dataclass(frozen=True, eq=False)
class IdentityResidual:
    residual: np.ndarray
    pairing: np.ndarray
    interior_max: float
    window: tuple


def verify_dtdphi_identity(metric: ZeroShiftMetric, t, phi: ScalarField,
                           window: Optional[tuple] = None, x_margin: float = 0.25) -> IdentityResidual:
    """Pointwise ``-Lap u - (n-1) u + 2 (Ric + n g)(dt, dphi) + 2 <Hess0(t), Hess(phi)>``.

    ``u = <dt, dphi>`` and ``Hess0`` is the traceless part.  The maximum is
    taken over ``window = (w_lo, w_hi)`` (default: the middle half in ``w``)
    and ``|x| <= L - x_margin``.
    """
    t = t.t if isinstance(t, RadialEigenfunction) else t
    grid = metric.grid
    n = grid.n
    g, ginv = metric.full(), metric.inverse()
    Ht, dt = hessian_array(metric, t)
    Hp, dphi = hessian_array(metric, phi)
    u = np.einsum("...ij,...i,...j->...", ginv, dt, dphi)
    lap_u = laplacian(metric, ScalarField(grid, u)).values
    ric = curvature_tensors(metric).ricci.components
    up = np.einsum("...ai,...bj,...ij->...ab", ginv, ginv, ric + n * g)
    rterm = np.einsum("...ij,...i,...j->...", up, dt, dphi)
    T0 = traceless(Ht, g, ginv)
    hterm = np.einsum("...ai,...bj,...ij,...ab->...", ginv, ginv, T0, Hp)
    res = -lap_u - (n - 1) * u + 2.0 * rterm + 2.0 * hterm
    if window is None:
        span = grid.w_max - grid.w0
        window = (grid.w0 + 0.25 * span, grid.w_max - 0.25 * span)
    mesh = grid.mesh()
    sel = (mesh[0] >= window[0] - 1e-12) & (mesh[0] <= window[1] + 1e-12)
    for X in mesh[1:]:
        sel &= np.abs(X) <= grid.L - x_margin + 1e-12
    return IdentityResidual(res, u, float(np.max(np.abs(res[sel]))), tuple(window))
