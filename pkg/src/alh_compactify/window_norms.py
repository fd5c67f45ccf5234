"""Moving-window norms on the half-space model, integration lemmas and decay fits.

The model metric is ``h = dw^2 + e^{2w} delta`` with volume density ``e^{nw}``.
A window ``Omega_{w,x}(r)`` is the product of the radial interval
``|w' - w| < r`` with the Euclidean ball ``|y - x| < r e^{-w}``.

Quadrature treats each grid node as the centre of its dual cell and weights it
by the ``h``-volume of that cell clipped to the window.  The radial factor is
integrated exactly; tangential clipping is exact for ``n = 1`` and sampled
(then renormalized to the exact ball volume) for ``n >= 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fd
from .errors import DataError, DomainError, PreconditionError, RangeError
from .tensor_core import HalfSpaceGrid, ScalarField, TensorField

FLOOR = 1e-12
PASS_TOLERANCE = 0.05
_BALL_SAMPLES = 24


# --------------------------------------------------------------------------
# decay fits

@dataclass(frozen=True)
class DecayFit:
    """Log-linear fit ``value ~ C exp(-rate * w)``.

    ``sentinel`` marks a series that never rises above the absolute floor; it
    then carries no rate.
    """

    stations: tuple
    values: tuple
    rate: Optional[float]
    log_constant: Optional[float]
    max_residual: float
    count: int
    sentinel: bool = False
    rms_residual: float = 0.0

    @property
    def exponential(self) -> bool:
        """False when the log-linear residual suggests a non-exponential series."""
        return self.sentinel or self.max_residual <= 0.1

    def fitted(self, w) -> np.ndarray:
        if self.sentinel:
            return np.zeros_like(np.asarray(w, dtype=float))
        return np.exp(self.log_constant - self.rate * np.asarray(w, dtype=float))

    def as_dict(self) -> dict:
        return {
            "stations": list(self.stations),
            "values": list(self.values),
            "rate": self.rate,
            "log_constant": self.log_constant,
            "max_residual": self.max_residual,
            "count": self.count,
            "sentinel": self.sentinel,
            "rms_residual": self.rms_residual,
        }


def fit_decay_rate(stations: Sequence[float], values: Sequence[float],
                   floor: float = FLOOR) -> DecayFit:
    """Least-squares fit of ``log(value)`` against ``w``; ``rate = -slope``.

    Values at or below ``floor`` are dropped.  If fewer than four stations
    remain the series is reported as identically small.
    """
    s = np.asarray(stations, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.shape != v.shape or s.ndim != 1:
        raise DataError("stations and values must be 1-d arrays of equal length")
    if s.size < 4:
        raise RangeError(f"need at least 4 stations, got {s.size}")
    if not np.all(np.isfinite(v)) or not np.all(np.isfinite(s)):
        raise DataError("non-finite station data")
    if np.any(v < -floor):
        raise DataError("decay fit requires nonnegative values")
    keep = v > floor
    if keep.sum() < 4:
        return DecayFit(tuple(s), tuple(v), None, None, 0.0, int(s.size), sentinel=True)
    sk, lv = s[keep], np.log(v[keep])
    slope, intercept = np.polyfit(sk, lv, 1)
    resid = lv - (slope * sk + intercept)
    return DecayFit(tuple(s), tuple(v), float(-slope), float(intercept),
                    float(np.max(np.abs(resid))), int(keep.sum()),
                    rms_residual=float(np.sqrt(np.mean(resid**2))))


def stations_for(grid: HalfSpaceGrid, start: float = 2.0, step: float = 1.0,
                 top_buffer: float = 1.0, lo: Optional[float] = None,
                 hi: Optional[float] = None) -> np.ndarray:
    """Station list ``w0 + start, w0 + start + step, ...`` below ``w_max - top_buffer``."""
    first = grid.w0 + start if lo is None else lo
    last = grid.w_max - top_buffer if hi is None else hi
    count = int(math.floor((last - first) / step + 1e-9)) + 1
    return first + step * np.arange(max(count, 0))


def slice_sup(values: np.ndarray, grid: HalfSpaceGrid, stations: np.ndarray,
              x_margin: float = 0.0) -> np.ndarray:
    """Sup over the tangential slice nearest each station.

    ``x_margin`` drops tangential nodes with ``|x^mu| > L - x_margin``.
    """
    idx = np.rint((np.asarray(stations) - grid.w0) / grid.dw).astype(int)
    mask = np.ones(grid.shape[1:], dtype=bool)
    if x_margin > 0:
        for X in np.meshgrid(*([grid.x] * grid.n), indexing="ij"):
            mask &= np.abs(X) <= grid.L - x_margin + 1e-12
    return np.array([np.max(np.abs(values[i][mask])) for i in idx])


# --------------------------------------------------------------------------
# windows

@dataclass(frozen=True)
class WindowSpec:
    """``Omega_{w,x}(r)``: radial half-width ``r``, tangential radius ``r e^{-w}``."""

    w: float
    x: tuple
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise PreconditionError(f"window radius must be positive, got {self.r}")
        object.__setattr__(self, "x", tuple(float(c) for c in np.atleast_1d(self.x)))

    @property
    def tangential_radius(self) -> float:
        return self.r * math.exp(-self.w)

    def shifted(self, w: float) -> "WindowSpec":
        return WindowSpec(w, self.x, self.r)


def unit_ball_volume(n: int) -> float:
    return math.pi ** (n / 2) / math.gamma(n / 2 + 1)


def window_volume(n: int, r: float) -> float:
    """``h``-volume of ``Omega_{w,x}(r)``; independent of the centre."""
    return unit_ball_volume(n) * r**n * 2.0 * math.sinh(n * r) / n


def _radial_weights(grid: HalfSpaceGrid, lo: float, hi: float):
    w = grid.w
    a = np.maximum(np.maximum(w - grid.dw / 2, grid.w0), lo)
    b = np.minimum(np.minimum(w + grid.dw / 2, grid.w_max), hi)
    n = grid.n
    wt = np.where(b > a, (np.exp(n * b) - np.exp(n * a)) / n, 0.0)
    nz = np.nonzero(wt)[0]
    return slice(nz[0], nz[-1] + 1), wt[nz[0]: nz[-1] + 1]


def _tangential_weights(grid: HalfSpaceGrid, center: tuple, radius: float):
    x, h, n = grid.x, grid.dx, grid.n
    if n == 1:
        c = center[0]
        a = np.maximum(x - h / 2, c - radius)
        b = np.minimum(x + h / 2, c + radius)
        wt = np.clip(b - a, 0.0, None)
        nz = np.nonzero(wt)[0]
        return (slice(nz[0], nz[-1] + 1),), wt[nz[0]: nz[-1] + 1]
    # sample the bounding box of the ball, assign samples to their nearest node
    m = _BALL_SAMPLES
    offs = (np.arange(m) + 0.5) / m * 2.0 - 1.0
    pts = np.stack(np.meshgrid(*([offs] * n), indexing="ij"), axis=-1).reshape(-1, n)
    pts = pts[np.sum(pts**2, axis=1) < 1.0]
    pts = np.asarray(center) + radius * pts
    idx = np.rint((pts + grid.L) / h).astype(int)
    lo = idx.min(axis=0)
    hi = idx.max(axis=0)
    counts = np.zeros(tuple(hi - lo + 1))
    np.add.at(counts, tuple((idx - lo).T), 1.0)
    wt = counts / counts.sum() * unit_ball_volume(n) * radius**n
    return tuple(slice(l, u + 1) for l, u in zip(lo, hi)), wt


def window_weights(grid: HalfSpaceGrid, window: WindowSpec, shrink: bool = True):
    """Index box and ``h``-volume weights of the nodes meeting ``window``.

    With ``shrink`` the window must stay one cell away from every face, so
    that only centred difference stencils contribute.
    """
    if len(window.x) != grid.n:
        raise PreconditionError("window centre has the wrong tangential dimension")
    pad_w = grid.dw if shrink else 0.0
    pad_x = grid.dx if shrink else 0.0
    R = window.tangential_radius
    if (window.w - window.r < grid.w0 + pad_w - 1e-12
            or window.w + window.r > grid.w_max - pad_w + 1e-12
            or any(abs(c) + R > grid.L - pad_x + 1e-12 for c in window.x)):
        raise DomainError(f"window {window} leaves the grid domain")
    ws, wwt = _radial_weights(grid, window.w - window.r, window.w + window.r)
    xs, xwt = _tangential_weights(grid, window.x, R)
    weights = wwt.reshape((-1,) + (1,) * grid.n) * xwt[None]
    return (ws,) + xs, weights


def tangential_pointwise(T: TensorField) -> np.ndarray:
    """``|T|_{h,t}``: tangential components measured with ``h_w = e^{2w} delta``."""
    k = T.rank
    if k == 0:
        return np.abs(T.components)
    tang = T.components[(Ellipsis,) + (slice(1, None),) * k]
    sq = np.sum(tang**2, axis=tuple(range(-k, 0)))
    return np.sqrt(sq) * np.exp(-k * T.grid.w_column())


def _lp(values: np.ndarray, box, weights, p: float) -> float:
    return float(np.sum(weights * values[box] ** p) ** (1.0 / p))


def tangential_lp_norm(T, window: WindowSpec, p: float, shrink: bool = True) -> float:
    """``||T||_{L^p_t(Omega, h)}`` for a tensor field or scalar field."""
    if p < 1:
        raise PreconditionError(f"p must be at least 1, got {p}")
    if isinstance(T, ScalarField):
        T = TensorField(T.grid, T.values, 0)
    box, wt = window_weights(T.grid, window, shrink)
    return _lp(tangential_pointwise(T), box, wt, p)


def lp_norm(values: np.ndarray, grid: HalfSpaceGrid, window: WindowSpec, p: float,
            shrink: bool = True) -> float:
    """``L^p(Omega, h)`` norm of a pointwise nonnegative array."""
    box, wt = window_weights(grid, window, shrink)
    return _lp(np.abs(values), box, wt, p)


def window_average(values: np.ndarray, grid: HalfSpaceGrid, window: WindowSpec,
                   shrink: bool = True) -> float:
    box, wt = window_weights(grid, window, shrink)
    return float(np.sum(wt * values[box]) / np.sum(wt))


def h_gradient_norm(F: ScalarField) -> np.ndarray:
    """``|dF|_h = sqrt(F_w^2 + e^{-2w} |F_x|^2)``."""
    dF, _ = F.partials(second=False)
    tang = np.sum(dF[..., 1:] ** 2, axis=-1)
    return np.sqrt(dF[..., 0] ** 2 + np.exp(-2.0 * F.grid.w_column()) * tang)


def radial_derivative(T: TensorField) -> TensorField:
    """Componentwise ``d_0 T``."""
    g = T.grid
    first, _ = fd.partials(T.components, g.spacing, g.w, T.rate, second=False)
    return TensorField(g, first[(slice(None),) * len(g.shape) + (0,)], T.rank, T.symmetry)


def weighted_local_norm(u: ScalarField, k: int, p: float, delta: float,
                        centers: Sequence, r: float = 1.0) -> float:
    """``sup_c e^{delta w_c} ||u||_{W^{k,p}(Omega_c(r), h)}`` over the given centres."""
    if k not in (0, 1):
        raise PreconditionError("only k in {0, 1} is supported")
    centers = [(float(c[0]), tuple(np.atleast_1d(c[1]))) for c in centers]
    if len({c[0] for c in centers}) < 4:
        raise RangeError("need at least 4 distinct radial centres")
    grid = u.grid
    parts = [np.abs(u.values)]
    if k == 1:
        parts.append(h_gradient_norm(u))
    best = 0.0
    for wc, xc in centers:
        win = WindowSpec(wc, xc, r)
        box, wt = window_weights(grid, win)
        total = sum(np.sum(wt * q[box] ** p) for q in parts) ** (1.0 / p)
        best = max(best, math.exp(delta * wc) * float(total))
    return best


# --------------------------------------------------------------------------
# lemma checks

@dataclass(frozen=True)
class InequalityCheck:
    lhs: float
    rhs: float
    passed: bool
    slack: float
    extras: dict = field(default_factory=dict)


def _node_range(grid: HalfSpaceGrid, w0: float, w1: float) -> np.ndarray:
    i0 = int(round((w0 - grid.w0) / grid.dw))
    i1 = int(round((w1 - grid.w0) / grid.dw))
    if i1 < i0:
        raise PreconditionError("need w0 <= w1")
    return grid.w[i0: i1 + 1]


def check_moving_window1(T, p: float, w0: float, w1: float, x, r: float,
                         tolerance: float = PASS_TOLERANCE) -> InequalityCheck:
    """First moving-window inequality for a covariant tensor of rank ``k``.

    ``w0`` and ``w1`` are snapped to grid nodes; the radial integral is a
    trapezoid over the nodes in between.
    """
    if isinstance(T, ScalarField):
        T = TensorField(T.grid, T.values, 0, rate=T.rate)
    grid, k, n = T.grid, T.rank, T.grid.n
    ws = _node_range(grid, w0, w1)
    w0, w1 = float(ws[0]), float(ws[-1])
    win = WindowSpec(w1, x, r)
    dT = tangential_pointwise(radial_derivative(T))
    absT = tangential_pointwise(T)
    lhs = _lp(absT, *window_weights(grid, win), p)
    e = n / p - k
    if ws.size > 1:
        inner = np.array([_lp(dT, *window_weights(grid, win.shifted(w)), p) for w in ws])
        integral = float(np.trapezoid(np.exp(e * (w1 - ws)) * inner, ws))
    else:
        integral = 0.0
    rhs = integral + math.exp(e * (w1 - w0)) * _lp(absT, *window_weights(grid, win.shifted(w0)), p)
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1 + tolerance) + FLOOR, rhs - lhs,
                           {"integral": integral})


def window2_constants(n: int, p: float, r: float) -> tuple:
    vol = window_volume(n, r)
    base = 2.0 * r * p / (p - n - 1) * vol ** (1.0 / p - 1.0)
    return base, base * math.exp(r)


def check_moving_window2(F: ScalarField, p: float, w0: float, w1: float, x, r: float,
                         tolerance: float = PASS_TOLERANCE) -> InequalityCheck:
    """Second moving-window inequality (oscillation about the window average)."""
    grid, n = F.grid, F.grid.n
    if not p > n + 1:
        raise PreconditionError(f"need p > n + 1 = {n + 1}, got {p}")
    ws = _node_range(grid, w0, w1)
    w0, w1 = float(ws[0]), float(ws[-1])
    if not w1 > w0:
        raise PreconditionError("need w1 > w0")
    win1 = WindowSpec(w1, x, r)
    win0 = win1.shifted(w0)
    c1, c2 = window2_constants(n, p, r)
    dF, _ = F.partials(second=False)
    d0 = np.abs(dF[..., 0])
    dnorm = h_gradient_norm(F)
    avg = window_average(F.values, grid, win1)
    lhs = lp_norm(F.values - avg, grid, win1, p)
    inner = np.array([lp_norm(d0, grid, win1.shifted(w), p) for w in ws])
    integral = float(np.trapezoid(np.exp(n / p * (w1 - ws)) * inner, ws))
    rhs = (c1 * math.exp(n / p * (w1 - w0)) * lp_norm(d0, grid, win0, p)
           + c2 * math.exp(-(1 - n / p) * (w1 - w0)) * lp_norm(dnorm, grid, win0, p)
           + 2.0 * integral)
    return InequalityCheck(lhs, rhs, lhs <= rhs * (1 + tolerance) + FLOOR, rhs - lhs,
                           {"c1": c1, "c2": c2, "average": avg})


@dataclass(frozen=True)
class GronwallResult:
    premise_holds: bool
    envelope: np.ndarray
    passed: Optional[bool]


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(y)
    out[1:] = np.cumsum(0.5 * (y[1:] + y[:-1]) * np.diff(x))
    return out


def gronwall_envelope(a, b, f, w, tolerance: float = 1e-6) -> GronwallResult:
    """Check the Gronwall premise for sampled ``a, b, f`` and, if it holds, the bound.

    ``envelope(w) = a(w) + int_{w0}^w a(v) b(v) exp(int_v^w b) dv``.  Both
    comparisons allow ``tolerance`` relative to the largest magnitude involved.
    """
    a, b, f, w = (np.asarray(v, dtype=float) for v in (a, b, f, w))
    if np.any(b < 0):
        raise PreconditionError("b must be nonnegative")
    if not np.all(np.diff(w) > 0):
        raise PreconditionError("w samples must be strictly increasing")
    B = _cumtrapz(b, w)
    envelope = a + np.exp(B) * _cumtrapz(a * b * np.exp(-B), w)
    premise_rhs = a + _cumtrapz(b * f, w)
    scale = max(np.max(np.abs(f)), np.max(np.abs(a)), 1.0)
    premise = bool(np.all(f <= premise_rhs + tolerance * scale))
    if not premise:
        return GronwallResult(False, envelope, None)
    scale = max(scale, np.max(np.abs(envelope)))
    return GronwallResult(True, envelope, bool(np.all(f <= envelope + tolerance * scale)))
