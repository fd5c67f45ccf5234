"""Riccati evolution of the shape operator and decay certificates.

Scalar form ``lambda' + lambda^2 = f(s)`` and the matrix system
``S' + S S = -R``, ``g' = 2 g S`` along a normal geodesic, where ``R`` is the
radial curvature operator ``R^i_{0j0}``.  With the curvature convention of
:mod:`alh_compactify.tensor_core`, hyperbolic space has ``R = -id`` and the
fixed point ``S = id``.

Both integrators are classical fixed-step RK4 with substeps no longer than
0.01 between consecutive output samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import eigh

from .errors import InternalConsistencyError, PreconditionError

MAX_STEP = 0.01
BLOWUP = 1e6


@dataclass(frozen=True)
class RiccatiCurve:
    """Sampled scalar solution.  ``blowup_at`` is set when ``|lambda|`` exceeded the threshold."""

    s: np.ndarray
    lam: np.ndarray
    lam0: float
    step: float
    description: str = ""
    blowup_at: Optional[float] = None

    @property
    def positive(self) -> bool:
        valid = np.isfinite(self.lam)
        return self.blowup_at is None and bool(np.all(self.lam[valid] > 0))

    def eigenvalues(self) -> np.ndarray:
        return self.lam[:, None]

    def rows(self) -> list:
        return [(float(s), float(v)) for s, v in zip(self.s, self.lam)]


@dataclass(frozen=True)
class ShapeEvolution:
    """Sampled ``S(s)`` (mixed, g-self-adjoint) and ``g_w(s)``."""

    s: np.ndarray
    S: np.ndarray
    g: np.ndarray
    failure_at: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of ``S`` at each sample, ascending."""
        out = np.full(self.S.shape[:2], np.nan)
        for i, (S, g) in enumerate(zip(self.S, self.g)):
            if not np.all(np.isfinite(S)):
                break
            gS = g @ S
            if np.max(np.abs(gS - gS.T)) > 1e-8 * max(1.0, np.max(np.abs(gS))):
                raise InternalConsistencyError(f"S lost self-adjointness at s={self.s[i]}")
            out[i] = eigh(0.5 * (gS + gS.T), g, eigvals_only=True)
        return out

    def rows(self) -> list:
        ev = self.eigenvalues()
        return [(float(s),) + tuple(float(v) for v in e) for s, e in zip(self.s, ev)]


def _as_callable(f, s_grid: np.ndarray) -> Callable:
    if callable(f):
        return f
    vals = np.asarray(f, dtype=float)
    if vals.shape != s_grid.shape:
        raise PreconditionError("sampled f must match s_grid")
    return CubicSpline(s_grid, vals)


def _substeps(s_grid: np.ndarray, max_step: float) -> list:
    return [max(1, math.ceil((b - a) / max_step - 1e-9)) for a, b in zip(s_grid[:-1], s_grid[1:])]


def _rk4(rhs, y, s, h):
    k1 = rhs(s, y)
    k2 = rhs(s + h / 2, y + h / 2 * k1)
    k3 = rhs(s + h / 2, y + h / 2 * k2)
    k4 = rhs(s + h, y + h * k3)
    return y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_scalar_riccati(f, lam0: float, s_grid: Sequence[float], strict: bool = True,
                             max_step: float = MAX_STEP) -> RiccatiCurve:
    """Solve ``lambda' = f(s) - lambda^2`` from ``lambda(s_0) = lam0``.

    ``f`` is a callable or samples on ``s_grid`` (interpolated by a cubic
    spline).  With ``strict`` the hypotheses ``lam0 > 0`` and ``f > 0`` are
    enforced; otherwise the curve is integrated anyway so that blow-up can be
    observed.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or s_grid.size < 2 or np.any(np.diff(s_grid) <= 0):
        raise PreconditionError("s_grid must be strictly increasing with at least 2 samples")
    fc = _as_callable(f, s_grid)
    if strict:
        if not lam0 > 0:
            raise PreconditionError(f"initial value must be positive, got {lam0}")
        if np.min(fc(s_grid)) <= 0:
            raise PreconditionError("f must be positive")
    # integrate the deviation from 1 to keep precision once lambda is close to it
    rhs = lambda s, mu: (fc(s) - 1.0) - mu * (2.0 + mu)
    out = np.full(s_grid.shape, np.nan)
    mu = float(lam0) - 1.0
    out[0] = lam0
    blow = None
    steps = _substeps(s_grid, max_step)
    for i, m in enumerate(steps):
        h = (s_grid[i + 1] - s_grid[i]) / m
        s = s_grid[i]
        for _ in range(m):
            mu = _rk4(rhs, mu, s, h)
            s += h
            if not math.isfinite(mu) or abs(mu + 1.0) > BLOWUP:
                blow = s
                break
        if blow is not None:
            break
        out[i + 1] = 1.0 + mu
    desc = getattr(f, "__name__", "sampled") if callable(f) else "sampled"
    return RiccatiCurve(s_grid, out, float(lam0), float(min(max_step, np.min(np.diff(s_grid)))),
                        desc, blow)


def _symmetrize(S: np.ndarray, g: np.ndarray) -> np.ndarray:
    gS = g @ S
    return np.linalg.solve(g, 0.5 * (gS + gS.T))


def integrate_riccati_system(Rrad: Callable, S0, g0, s_grid: Sequence[float],
                             max_step: float = MAX_STEP) -> ShapeEvolution:
    """Evolve ``S' = -S S - R(s)`` and ``g' = 2 g S`` jointly.

    ``Rrad(s)`` returns the mixed matrix ``R^i_{0j0}``.  ``S`` is projected back
    to the g-self-adjoint matrices after every step.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    S = np.array(S0, dtype=float)
    g = np.array(g0, dtype=float)
    n = S.shape[0]
    try:
        np.linalg.cholesky(g)
    except np.linalg.LinAlgError as exc:
        raise PreconditionError("initial metric must be positive definite") from exc
    S = _symmetrize(S, g)
    if np.min(eigh(g @ S, g, eigvals_only=True)) <= 0:
        raise PreconditionError("initial shape operator must be positive definite")

    def rhs(s, y):
        Sy, gy = y[:n * n].reshape(n, n), y[n * n:].reshape(n, n)
        dS = -Sy @ Sy - np.asarray(Rrad(s), dtype=float)
        dg = gy @ Sy
        return np.concatenate([dS.ravel(), (dg + dg.T).ravel()])

    Ss = np.full((s_grid.size, n, n), np.nan)
    gs = np.full((s_grid.size, n, n), np.nan)
    Ss[0], gs[0] = S, g
    y = np.concatenate([S.ravel(), g.ravel()])
    fail = None
    for i, m in enumerate(_substeps(s_grid, max_step)):
        h = (s_grid[i + 1] - s_grid[i]) / m
        s = s_grid[i]
        for _ in range(m):
            y = _rk4(rhs, y, s, h)
            s += h
            Sy, gy = y[:n * n].reshape(n, n), y[n * n:].reshape(n, n)
            gy = 0.5 * (gy + gy.T)
            try:
                np.linalg.cholesky(gy)
            except np.linalg.LinAlgError:
                fail = s
                break
            if not np.all(np.isfinite(Sy)) or np.max(np.abs(Sy)) > BLOWUP:
                fail = s
                break
            y = np.concatenate([_symmetrize(Sy, gy).ravel(), gy.ravel()])
        if fail is not None:
            break
        Ss[i + 1] = y[:n * n].reshape(n, n)
        gs[i + 1] = y[n * n:].reshape(n, n)
    return ShapeEvolution(s_grid, Ss, gs, fail)


@dataclass(frozen=True)
class ShapeBounds:
    C_lower: float
    C_upper: float
    passed: bool
    growth: float


def verify_shape_bounds(evo, a: float, tail: float = 0.25, slack: float = 0.01,
                        floor: float = 1e-12) -> ShapeBounds:
    """Smallest ``C`` with ``(1 - C e^{-as}) <= eig(S) <= (1 + C e^{-as})`` at all samples.

    A finite sample always admits some ``C``; the verdict asks that the
    required constant has stopped growing, i.e. the running requirement over
    the last ``tail`` fraction of samples does not exceed the requirement over
    the rest by more than ``slack`` (relative).
    """
    ev = evo.eigenvalues()
    s = np.asarray(evo.s)
    ok = np.all(np.isfinite(ev), axis=1)
    if not np.any(ok):
        return ShapeBounds(math.inf, math.inf, False, math.inf)
    ev, s = ev[ok], s[ok]
    weight = np.exp(a * s)
    # deviations at rounding level carry no information about the rate
    dev_up = np.where(ev[:, -1] - 1.0 > floor, ev[:, -1] - 1.0, 0.0)
    dev_lo = np.where(1.0 - ev[:, 0] > floor, 1.0 - ev[:, 0], 0.0)
    up, lo = dev_up * weight, dev_lo * weight
    need = np.maximum(up, lo)
    cut = int(round((1.0 - tail) * need.size))
    head = float(np.max(need[:cut])) if cut > 0 else 0.0
    rest = float(np.max(need[cut:])) if cut < need.size else 0.0
    growth = (rest - head) / head if head > 0 else (math.inf if rest > 0 else 0.0)
    finite = bool(np.isfinite(up).all() and np.isfinite(lo).all())
    broke = getattr(evo, "blowup_at", None) is not None or getattr(evo, "failure_at", None) is not None
    passed = finite and not broke and growth <= slack
    return ShapeBounds(float(np.max(lo)), float(np.max(up)), passed, float(growth))


def decay_samples(curve: RiccatiCurve, lo: float = 5.0, hi: float = 15.0):
    """``(s, |lambda - 1|)`` restricted to ``[lo, hi]``."""
    mask = (curve.s >= lo - 1e-12) & (curve.s <= hi + 1e-12)
    return curve.s[mask], np.abs(curve.lam[mask] - 1.0)
