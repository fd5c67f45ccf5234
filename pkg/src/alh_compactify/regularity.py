"""Compactified metric, Hölder exponent estimation, component battery, bootstrap limit.

``gbar = t^{-2} g`` is expressed in coordinates ``(rho, y)`` with ``rho = 1/t``
and ``y`` either the Fermi coordinates ``x`` or harmonic chart functions.  Its
inverse is assembled from the gradients of the new coordinates,
``gbar^{ab} = t^2 g^{ij} d_i z^a d_j z^b``, then inverted pointwise and
resampled to a grid uniform in ``rho`` (and in ``y`` when charts are used).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator

from . import fd
from .conformal_factor import RadialEigenfunction, masked_slice_sup, reporting_mask
from .errors import DomainError, PreconditionError, RangeError
from .tensor_core import (ScalarField, TensorField, ZeroShiftMetric, christoffel_generic,
                          conformal_hessian, tensor_norm)
from .window_norms import (FLOOR, DecayFit, WindowSpec, fit_decay_rate, stations_for,
                           tangential_lp_norm)


# --------------------------------------------------------------------------
# compactification

@dataclass(frozen=True, eq=False)
class CompactifiedMetric:
    """``gbar`` on a grid uniform in ``(rho, y)``; component index 0 is ``rho``."""

    rho: np.ndarray
    y: np.ndarray
    components: np.ndarray
    coordinates: str
    native: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.components.ndim - 3

    @property
    def spacing(self) -> tuple:
        return (self.rho[1] - self.rho[0],) + (self.y[1] - self.y[0],) * self.n

    @property
    def shape(self) -> tuple:
        return self.components.shape[:-2]

    def partials(self):
        first, _ = fd.partials(self.components, self.spacing, self.rho, 0.0, second=False)
        return first

    def christoffel(self) -> np.ndarray:
        ginv = np.linalg.inv(self.components)
        return christoffel_generic(self.components, ginv, self.partials())

    def flat_deviation(self) -> float:
        """``max |gbar - (d rho^2 + delta)|``."""
        return float(np.max(np.abs(self.components - np.eye(self.n + 1))))


def _coordinate_gradients(metric: ZeroShiftMetric, t: ScalarField, charts):
    grid = metric.grid
    dt, _ = t.partials(second=False)
    rho_grad = -dt / (t.values**2)[..., None]
    grads = [rho_grad]
    if charts is None:
        for mu in range(grid.n):
            e = np.zeros(grid.shape + (grid.dim,))
            e[..., mu + 1] = 1.0
            grads.append(e)
    else:
        for phi in charts:
            dphi, _ = phi.partials(second=False)
            grads.append(dphi)
    return np.stack(grads, axis=-2)  # [..., a, i] = d_i z^a


def native_components(metric: ZeroShiftMetric, t: ScalarField, charts=None) -> np.ndarray:
    """``gbar_{ab}`` in ``(rho, y)`` coordinates at the original grid nodes."""
    J = _coordinate_gradients(metric, t, charts)
    ginv = metric.inverse()
    inv = np.einsum("...ai,...ij,...bj->...ab", J, ginv, J) * (t.values**2)[..., None, None]
    return np.linalg.inv(inv)


def fermi_components(metric: ZeroShiftMetric, t: ScalarField) -> np.ndarray:
    """Closed-form ``gbar`` in ``(rho, x)``: an independent check of :func:`native_components`."""
    n = metric.n
    dt, _ = t.partials(second=False)
    tw, tx = dt[..., 0], dt[..., 1:]
    N2, tv = metric.N.values**2, t.values
    out = np.zeros(metric.grid.shape + (n + 1, n + 1))
    out[..., 0, 0] = N2 * tv**2 / tw**2
    out[..., 0, 1:] = (N2 / tw**2)[..., None] * tx
    out[..., 1:, 0] = out[..., 0, 1:]
    out[..., 1:, 1:] = (metric.gt.components
                        + (N2 / tw**2)[..., None, None] * np.einsum("...m,...n->...mn", tx, tx)) \
        / (tv**2)[..., None, None]
    return out


def _t_field(t) -> ScalarField:
    return t.t if isinstance(t, RadialEigenfunction) else t


def compactify(metric: ZeroShiftMetric, t, charts: Optional[Sequence[ScalarField]] = None,
               buffer: float = 1.0, x_buffer: Optional[float] = None,
               n_rho: Optional[int] = None, n_y: Optional[int] = None) -> CompactifiedMetric:
    """Resample ``gbar = t^{-2} g`` to a uniform ``(rho, y)`` grid.

    The ``rho`` range is ``[max 1/t(w_max - buffer), min 1/t(w0 + buffer)]``
    over the retained columns, so every sample is an interpolation.  Columns
    within ``x_buffer`` of the lateral faces are dropped (default
    ``buffer * e^{-(w0 + buffer)}``).  Charts are supported for ``n = 1``.
    """
    tf = _t_field(t)
    grid = metric.grid
    if charts is not None and grid.n != 1:
        raise PreconditionError("chart resampling is implemented for n = 1 only")
    if x_buffer is None:
        x_buffer = buffer * math.exp(-(grid.w0 + buffer))
    comps = native_components(metric, tf, charts)
    tv = tf.values
    keep_x = np.abs(grid.x) <= grid.L - x_buffer + 1e-12
    i_lo = int(np.ceil((buffer - 1e-9) / grid.dw))
    i_hi = grid.Nw - 1 - i_lo
    sub_t = tv[i_lo:i_hi + 1]
    if np.any(np.diff(sub_t, axis=0) <= 0):
        raise DomainError("t is not increasing along every column; it is not a radial coordinate")
    index = np.ix_(*([np.arange(i_lo, i_hi + 1)] + [np.nonzero(keep_x)[0]] * grid.n))
    comps = comps[index]
    rho_cols = 1.0 / tv[index]
    rho_lo = float(np.max(rho_cols[-1]))
    rho_hi = float(np.min(rho_cols[0]))
    # at least 513 rows so a face-trimmed field still has five dyadic scales
    n_rho = n_rho or max(513, 2 ** int(math.ceil(math.log2(grid.Nw - 1))) + 1)
    rho = np.linspace(rho_lo, rho_hi, n_rho)
    d = grid.dim
    cols = rho_cols.reshape(rho_cols.shape[0], -1)
    flat = comps.reshape(comps.shape[0], -1, d, d)
    out = np.empty((n_rho, cols.shape[1], d, d))
    for c in range(cols.shape[1]):
        r = cols[::-1, c]
        out[:, c] = PchipInterpolator(r, flat[::-1, c], axis=0)(rho)
    xs = grid.x[keep_x]
    out = out.reshape((n_rho,) + (xs.size,) * grid.n + (d, d))
    coords = "fermi"
    y = xs
    if charts is not None:
        coords = "harmonic"
        yvals = charts[0].values[index]
        ycols = np.empty((n_rho, xs.size))
        for c in range(xs.size):
            ycols[:, c] = PchipInterpolator(rho_cols[::-1, c], yvals[::-1, c])(rho)
        if np.any(np.diff(ycols, axis=1) <= 0):
            raise DomainError("chart function is not monotone along rho-slices")
        y_lo, y_hi = float(np.max(ycols[:, 0])), float(np.min(ycols[:, -1]))
        y = np.linspace(y_lo, y_hi, n_y or xs.size)
        res = np.empty((n_rho, y.size, d, d))
        for k in range(n_rho):
            res[k] = PchipInterpolator(ycols[k], out[k], axis=0)(y)
        out = res
    out = 0.5 * (out + np.swapaxes(out, -1, -2))
    return CompactifiedMetric(rho, y, out, coords,
                              native={"components": comps, "rho": rho_cols})


# --------------------------------------------------------------------------
# Hölder exponents

@dataclass(frozen=True)
class HolderEstimate:
    exponent: float
    raw_slope: float
    saturated: bool
    cap: float
    residual: float
    direction_slopes: dict
    moduli: dict

    def as_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "raw_slope": self.raw_slope,
            "saturated": self.saturated,
            "cap": self.cap,
            "residual": self.residual,
            "direction_slopes": dict(self.direction_slopes),
        }


def dyadic_steps(m: int) -> list:
    """Node offsets ``(m-1)/2^j`` for ``j = 2 .. J-2`` with ``J = floor(log2(m-1))``."""
    J = int(math.floor(math.log2(m - 1)))
    return [int(round((m - 1) / 2**j)) for j in range(2, J - 1)]


def modulus(values: np.ndarray, axis: int, step: int) -> float:
    v = np.moveaxis(values, axis, 0)
    return float(np.max(np.abs(v[step:] - v[:-step])))


def holder_exponent(values: np.ndarray, spacing: Sequence[float], axes=None,
                    floor: float = FLOOR) -> HolderEstimate:
    """Min over directions of the log-log slope of the modulus of continuity.

    Separations are dyadic fractions of each axis length; the two finest
    scales are left out, and axes too short for five scales are skipped.
    Directions whose modulus stays below ``floor`` are
    treated as constant.  The exponent is capped at ``1 - 2/(scale count)``.
    """
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise DomainError("field has non-finite values")
    axes = range(values.ndim) if axes is None else axes
    slopes, moduli, resid = {}, {}, {}
    counts = []
    for ax in axes:
        steps = dyadic_steps(values.shape[ax])
        if len(steps) < 5:
            continue
        counts.append(len(steps))
        om = np.array([modulus(values, ax, s) for s in steps])
        sep = np.array(steps) * spacing[ax]
        moduli[ax] = list(zip(sep.tolist(), om.tolist()))
        if np.max(om) <= floor or np.min(om) <= floor:
            continue
        k, c = np.polyfit(np.log(sep), np.log(om), 1)
        slopes[ax] = float(k)
        resid[ax] = float(np.max(np.abs(np.log(om) - (k * np.log(sep) + c))))
    if not counts:
        raise RangeError(f"no axis of shape {values.shape} offers 5 dyadic scales")
    cap = 1.0 - 2.0 / min(counts)
    if not slopes:
        return HolderEstimate(cap, math.inf, True, cap, 0.0, slopes, moduli)
    worst = min(slopes, key=slopes.get)
    raw = slopes[worst]
    alpha = min(max(raw, 0.0), cap)
    return HolderEstimate(alpha, raw, raw >= cap, cap, resid[worst], slopes, moduli)


def metric_holder(cm: CompactifiedMetric) -> HolderEstimate:
    """Worst Hölder estimate over the independent components of ``gbar``."""
    return _worst([holder_exponent(cm.components[..., i, j], cm.spacing)
                   for i in range(cm.n + 1) for j in range(i, cm.n + 1)])


def christoffel_holder(cm: CompactifiedMetric, margin: int = 2, floor: float = 1e-8) -> HolderEstimate:
    """Worst Hölder estimate over the Christoffel symbols of ``gbar``.

    ``margin`` nodes are trimmed at every face to drop one-sided stencils.
    The default ``floor`` sits above the differentiation noise of a flat ``gbar``.
    """
    G = cm.christoffel()
    core = tuple(slice(margin, m - margin) for m in cm.shape)
    d = cm.n + 1
    ests = [holder_exponent(G[core + (k, i, j)], cm.spacing, floor=floor)
            for k in range(d) for i in range(d) for j in range(i, d)]
    return _worst(ests)


def _worst(ests: list) -> HolderEstimate:
    return min(ests, key=lambda e: (e.exponent, e.raw_slope))


# --------------------------------------------------------------------------
# component battery

@dataclass(frozen=True)
class BatteryRow:
    estimate_id: str
    paper_ref: str
    predicted_rate: float
    measured_rate: Optional[float]
    margin: Optional[float]
    passed: bool
    fit: Optional[DecayFit] = None
    note: str = ""

    def csv_fields(self) -> tuple:
        fmt = lambda v: "" if v is None else f"{v:.6f}"
        measured = "sentinel" if self.fit is not None and self.fit.sentinel else fmt(self.measured_rate)
        return (self.estimate_id, self.paper_ref, f"{self.predicted_rate:.6f}", measured,
                fmt(self.margin), "pass" if self.passed else "fail")


ESTIMATES = {
    "lapse": ("lapse function estimate", lambda a: a),
    "d0_gbar": ("normal derivative of gbar, d_0 form", lambda a: a),
    "drho_gbar": ("normal derivative of gbar", lambda a: a - 1.0),
    "drho_N": ("lapse derivatives, radial", lambda a: a - 1.0),
    "dmu_N": ("lapse derivatives, tangential", lambda a: a - 1.0),
    "tangential_dgbar": ("first order tangential metric estimate", lambda a: 2.0 + a),
    "g00": ("metric component g^00", lambda a: a),
    "g0mu": ("metric component g^0mu", lambda a: a + 1.0),
    "drho_norm": ("|d rho|^2 in gbar", lambda a: a),
    "hess_rho": ("Hessbar(rho)", lambda a: 1.0 + a),
    "hess_y_00": ("Hessbar(y)_00", lambda a: a + 1.0),
    "hess_y_0a": ("Hessbar(y)_0alpha", lambda a: a),
    "hess_y_tang": ("Hessbar(y) tangential L^p_t", lambda a: a + 1.0 if a < 1 else 2.0),
}

# reference label reported next to each estimate id in the battery table
PAPER_REFS = {
    "lapse": "Lem3.1-lapse",
    "d0_gbar": "Lem3.1-normal",
    "drho_gbar": "Lem3.1-normal",
    "drho_N": "Lem3.1-lapse-deriv",
    "dmu_N": "Lem3.1-lapse-deriv",
    "tangential_dgbar": "Lem3.1-tangential",
    "g00": "Lem5.1",
    "g0mu": "Lem5.1",
    "drho_norm": "Lem5.2",
    "hess_rho": "Lem5.2",
    "hess_y_00": "Lem5.3",
    "hess_y_0a": "Lem5.3",
    "hess_y_tang": "Lem5.3",
}


def _row(eid: str, a: float, stations, values, tol: float = 0.1) -> BatteryRow:
    pred = ESTIMATES[eid][1](a)
    try:
        fit = fit_decay_rate(stations, values)
    except (RangeError, ValueError) as exc:
        return BatteryRow(eid, PAPER_REFS[eid], pred, None, None, False, note=str(exc))
    if fit.sentinel:
        return BatteryRow(eid, PAPER_REFS[eid], pred, None, None, True, fit, "below floor")
    margin = fit.rate - pred
    return BatteryRow(eid, PAPER_REFS[eid], pred, fit.rate, margin, margin >= -tol, fit)


def _frame(metric: ZeroShiftMetric, t: ScalarField, charts):
    """Jacobian ``d z / d x`` for ``z = (log t, y)`` and its inverse."""
    grid = metric.grid
    dt, _ = t.partials(second=False)
    rows = [dt / t.values[..., None]]
    if charts is None:
        for mu in range(grid.n):
            e = np.zeros(grid.shape + (grid.dim,))
            e[..., mu + 1] = 1.0
            rows.append(e)
    else:
        rows += [phi.partials(second=False)[0] for phi in charts]
    J = np.stack(rows, axis=-2)
    return J, np.linalg.inv(J)


def component_order_battery(metric: ZeroShiftMetric, eig, charts=None, a: Optional[float] = None,
                            stations: Optional[np.ndarray] = None, p: Optional[float] = None,
                            tol: float = 0.1) -> list:
    """One decay fit per component estimate, compared with its predicted rate.

    Pointwise quantities are reduced to the sup over the reporting part of the
    slice nearest each station; the two ``L^p_t`` rows use unit windows
    centred at ``x = 0``.
    """
    if a is None:
        a = metric.oracle.get("a")
    if a is None:
        a = 1.0 if metric.oracle.get("kind") == "hyperbolic" else None
    if a is None:
        raise PreconditionError("ALH order a is required")
    grid = metric.grid
    n = grid.n
    t = _t_field(eig)
    mask = eig.report_mask if isinstance(eig, RadialEigenfunction) else reporting_mask(grid)
    if stations is None:
        stations = stations_for(grid, start=2.0, top_buffer=2.0)
    p = p or 2.0 * (n + 2)
    if charts is None:
        ys = [ScalarField(grid, m) for m in grid.mesh()[1:]]
    else:
        ys = list(charts)
    sup = lambda v: masked_slice_sup(v, grid, mask, stations)
    tv = t.values
    dt, _ = t.partials(second=False)
    ginv = metric.inverse()
    rows = []

    dt2 = np.einsum("...ij,...i,...j->...", ginv, dt, dt)
    n_eff = tv / np.sqrt(dt2)
    rows.append(_row("lapse", a, stations, sup(n_eff - 1.0), tol))

    # gbar in (rho, x) coordinates, differentiated along columns
    gb = fermi_components(metric, t)
    gb_t = gb[..., 1:, 1:]
    d0 = fd.d1(gb_t, grid.dw, 0)
    rows.append(_row("d0_gbar", a, stations, sup(np.max(np.abs(d0), axis=(-1, -2))), tol))
    rho = 1.0 / tv
    drho = np.gradient(rho, axis=0)
    d_rho_gb = np.gradient(gb_t, axis=0) / drho[..., None, None]
    # d/d rho = (dw/d rho) d/dw multiplies rounding noise by about t; floor it accordingly
    amp = np.exp(np.asarray(stations))
    denoise = lambda v: np.where(v > FLOOR * amp, v, 0.0)
    rows.append(_row("drho_gbar", a, stations,
                     denoise(sup(np.max(np.abs(d_rho_gb), axis=(-1, -2)))), tol))
    rows.append(_row("drho_N", a, stations, denoise(sup(np.gradient(n_eff, axis=0) / drho)), tol))
    dN = fd.d1(n_eff, grid.dw, 0)
    at_fixed_rho = [fd.d1(n_eff, grid.dx, mu + 1) - dt[..., mu + 1] / dt[..., 0] * dN
                    for mu in range(n)]
    rows.append(_row("dmu_N", a, stations, sup(np.max(np.abs(np.stack(at_fixed_rho)), axis=0)), tol))

    # tangential derivatives of gbar in L^p_t over unit windows
    dgb = np.stack([fd.d1(gb, s, ax) for ax, s in enumerate(grid.spacing)], axis=n + 1)
    full3 = np.zeros(grid.shape + (n + 1,) * 3)
    full3[..., 1:, 1:, 1:] = dgb[..., 1:, 1:, 1:]
    T3 = TensorField(grid, full3, 3)
    win_st = [s for s in stations if s - 1.0 >= grid.w0 + grid.dw and s + 1.0 <= grid.w_max - grid.dw]
    centre = (0.5,) + (0.0,) * (n - 1)
    vals = [tangential_lp_norm(T3, WindowSpec(s, centre, 1.0), p) for s in win_st]
    rows.append(_row("tangential_dgbar", a, win_st, vals, tol))

    # components in (log t, y) coordinates
    J, Jinv = _frame(metric, t, charts)
    ginv_new = np.einsum("...ai,...ij,...bj->...ab", J, ginv, J)
    rows.append(_row("g00", a, stations, sup(ginv_new[..., 0, 0] - 1.0), tol))
    rows.append(_row("g0mu", a, stations, sup(np.max(np.abs(ginv_new[..., 0, 1:]), axis=-1)), tol))
    rows.append(_row("drho_norm", a, stations, sup(dt2 / tv**2 - 1.0), tol))

    logt = ScalarField(grid, np.log(tv))
    rho_f = ScalarField(grid, rho, rate=-1.0)
    hr = conformal_hessian(metric, logt, rho_f).components
    rows.append(_row("hess_rho", a, stations, sup(tensor_norm(hr, ginv, 2)), tol))

    h00, h0a, htan = [], [], []
    for y in ys:
        hy = conformal_hessian(metric, logt, y).components
        hn = np.einsum("...ia,...jb,...ij->...ab", Jinv, Jinv, hy)
        h00.append(np.abs(hn[..., 0, 0]))
        h0a.append(np.max(np.abs(hn[..., 0, 1:]), axis=-1))
        htan.append(TensorField(grid, hn, 2))
    rows.append(_row("hess_y_00", a, stations, sup(np.max(h00, axis=0)), tol))
    rows.append(_row("hess_y_0a", a, stations, sup(np.max(h0a, axis=0)), tol))
    vals = [max(tangential_lp_norm(h, WindowSpec(s, centre, 1.0), p) for h in htan) for s in win_st]
    rows.append(_row("hess_y_tang", a, win_st, vals, tol))
    return rows


def change_of_variable_gap(rows: list) -> Optional[float]:
    """``|(rate of d_rho gbar) + 1 - (rate of d_0 gbar)|``, or ``None`` if either is missing."""
    by = {r.estimate_id: r for r in rows}
    a, b = by.get("drho_gbar"), by.get("d0_gbar")
    if a is None or b is None or a.measured_rate is None or b.measured_rate is None:
        return None
    return abs(a.measured_rate + 1.0 - b.measured_rate)


# --------------------------------------------------------------------------
# bootstrap

@dataclass(frozen=True)
class BootstrapResult:
    sequence: tuple
    limit: float
    quadratic_root: float
    printed_formula: float
    monotone: bool


def bootstrap_exponent_limit(a: float, n: int, q: float, tol: float = 1e-12,
                             max_iter: int = 100_000) -> BootstrapResult:
    """Iterate ``b' = (a - 1 - n/q)/(a - b)`` from ``b = 0`` to its fixed point.

    Requires ``a in (1, 2)`` and ``q > n/(a-1)``.  The fixed point is the
    smaller root of ``b^2 - a b + (a - 1 - n/q) = 0``; the value of the
    alternative closed form ``(a - sqrt((2-a)^2 + n/q))/2`` is reported for
    comparison.
    """
    if not 1.0 < a < 2.0:
        raise DomainError(f"a must lie in (1, 2), got {a}")
    if n < 1 or q <= 0 or not q > n / (a - 1.0):
        raise DomainError(f"need q > n/(a-1) = {n / (a - 1.0)}, got q={q}")
    c = a - 1.0 - n / q
    seq = [0.0]
    for _ in range(max_iter):
        nxt = c / (a - seq[-1])
        seq.append(nxt)
        if abs(nxt - seq[-2]) < tol:
            break
    else:
        raise RangeError("bootstrap iteration did not settle")
    root = 0.5 * (a - math.sqrt((a - 2.0) ** 2 + 4.0 * n / q))
    printed = 0.5 * (a - math.sqrt((2.0 - a) ** 2 + n / q))
    mono = all(y > x for x, y in zip(seq[:-1], seq[1:]))
    return BootstrapResult(tuple(seq), seq[-1], root, printed, mono)
