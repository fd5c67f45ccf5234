"""Model ALH metrics with known order.

Three families, all zero-shift:

* hyperbolic: ``dw^2 + e^{2w} delta``
* warped: ``dw^2 + f(w)^2 delta`` for a supplied radial profile with analytic
  first and second derivatives
* perturbed: ``N = 1 + eps_N e^{-aw} nu(x)`` and
  ``g_w = e^{2w} (delta + eps e^{-aw} kappa(x) B)``

The bump profiles are ``(1 - |x|^2)^4`` clipped to zero outside the unit ball,
and ``B`` is a fixed symmetric matrix of unit spectral norm, so the tangential
metric stays positive definite as long as ``eps * e^{-a w0} < 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import AmplitudeError, ConfigError, DomainError
from .tensor_core import (HalfSpaceGrid, ScalarField, TensorField, ZeroShiftMetric,
                          curvature_tensors)
from .window_norms import DecayFit, fit_decay_rate, slice_sup, stations_for

KINDS = ("hyperbolic", "warped", "perturbed")


def bump(X: list) -> np.ndarray:
    """``(1 - |x|^2)^4`` on the unit ball, zero outside."""
    r2 = sum(x**2 for x in X)
    return np.clip(1.0 - r2, 0.0, None) ** 4


BUMPS = {"poly4": bump}


def pattern_matrix(n: int) -> np.ndarray:
    """Symmetric tangential pattern with spectral norm exactly one."""
    if n == 1:
        return np.ones((1, 1))
    B = np.eye(n)
    B[0, 0] = 1.0
    for i in range(1, n):
        B[i, i] = -0.5
        B[0, i] = B[i, 0] = 0.5
    return B / np.max(np.abs(np.linalg.eigvalsh(B)))


@dataclass(frozen=True)
class ModelSpec:
    """Parameters of a model metric.

    ``a`` is the ALH order, ``eps`` the tangential amplitude, ``eps_N`` the
    lapse amplitude and ``kappa`` names the bump profile used for both.
    """

    kind: str = "perturbed"
    n: int = 1
    a: float = 0.5
    eps: float = 0.05
    eps_N: float = 0.05
    kappa: str = "poly4"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}")
        if self.kappa not in BUMPS:
            raise ConfigError(f"unknown bump profile {self.kappa!r}")
        if self.kind != "hyperbolic" and not 0.0 < self.a < 2.0:
            raise ConfigError(f"order a must lie in (0, 2), got {self.a}")
        if self.eps < 0 or self.eps_N < 0:
            raise ConfigError("amplitudes must be nonnegative")
        if self.eps >= 1.0 or self.eps_N >= 1.0:
            raise AmplitudeError(f"amplitudes must be below 1 (eps={self.eps}, eps_N={self.eps_N})")

    def halved(self) -> "ModelSpec":
        return ModelSpec(self.kind, self.n, self.a, self.eps / 2, self.eps_N / 2, self.kappa)


def _check_grid(grid: HalfSpaceGrid, n: int):
    if grid.n != n:
        raise ConfigError(f"model is for n={n} but grid has n={grid.n}")


def make_hyperbolic(grid: HalfSpaceGrid) -> ZeroShiftMetric:
    """``N = 1``, ``g_{mu nu} = e^{2w} delta``; derivatives are exact."""
    n = grid.n
    N = ScalarField(grid, np.ones(grid.shape))
    e2w = np.broadcast_to(np.exp(2.0 * grid.w_column()), grid.shape)
    gt = TensorField(grid, e2w[..., None, None] * np.eye(n), 2, ((0, 1),), rate=2.0)
    return ZeroShiftMetric(grid, N, gt, builder=make_hyperbolic,
                           oracle={"kind": "hyperbolic", "a": None, "H": float(n)})


def make_warped(grid: HalfSpaceGrid, f: Callable, fp: Callable, fpp: Callable,
                label: str = "warped", a: Optional[float] = None) -> ZeroShiftMetric:
    """``dw^2 + f(w)^2 delta`` with an analytic curvature and mean-curvature oracle."""
    w = grid.w
    fw, fpw, fppw = f(w), fp(w), fpp(w)
    if np.any(fw <= 0):
        raise DomainError("warping profile must be positive on the grid")
    n = grid.n
    N = ScalarField(grid, np.ones(grid.shape))
    f2 = np.broadcast_to((fw**2).reshape((-1,) + (1,) * n), grid.shape)
    gt = TensorField(grid, f2[..., None, None] * np.eye(n), 2, ((0, 1),), rate=2.0)
    oracle = {
        "kind": label,
        "a": a,
        "sec_radial": -fppw / fw,
        # flat fibre: no 1/f^2 term as there would be for a round one
        "sec_tangential": -fpw**2 / fw**2,
        "H": n * fpw / fw,
        "profile": (f, fp, fpp),
    }
    return ZeroShiftMetric(grid, N, gt, builder=lambda g: make_warped(g, f, fp, fpp, label, a),
                           oracle=oracle)


def warped_profile(a: float, c: float = 0.1):
    """``f = e^w (1 + c e^{-aw})`` and its first two derivatives."""
    f = lambda w: np.exp(w) * (1.0 + c * np.exp(-a * w))
    fp = lambda w: np.exp(w) + c * (1.0 - a) * np.exp((1.0 - a) * w)
    fpp = lambda w: np.exp(w) + c * (1.0 - a) ** 2 * np.exp((1.0 - a) * w)
    return f, fp, fpp


def make_warped_order(grid: HalfSpaceGrid, a: float, c: float = 0.1) -> ZeroShiftMetric:
    f, fp, fpp = warped_profile(a, c)
    return make_warped(grid, f, fp, fpp, label=f"warped(a={a}, c={c})", a=a)


def make_perturbed(grid: HalfSpaceGrid, spec: ModelSpec) -> ZeroShiftMetric:
    """x-dependent order-``a`` perturbation of the hyperbolic model."""
    if spec.kind == "hyperbolic":
        return make_hyperbolic(grid)
    if spec.kind == "warped":
        return make_warped_order(grid, spec.a, spec.eps if spec.eps > 0 else 0.1)
    _check_grid(grid, spec.n)
    n, a = grid.n, spec.a
    mesh = grid.mesh()
    W, X = mesh[0], mesh[1:]
    kappa = BUMPS[spec.kappa](X)
    decay = np.exp(-a * W)
    N = 1.0 + spec.eps_N * decay * kappa
    B = pattern_matrix(n)
    profile = np.eye(n) + (spec.eps * decay * kappa)[..., None, None] * B
    gt_vals = np.exp(2.0 * W)[..., None, None] * profile
    try:
        metric = ZeroShiftMetric(
            grid, ScalarField(grid, N), TensorField(grid, gt_vals, 2, ((0, 1),), rate=2.0),
            builder=lambda g: make_perturbed(g, spec),
            oracle={"kind": "perturbed", "a": a, "spec": spec})
    except DomainError as exc:
        raise AmplitudeError(f"perturbation amplitude too large: {exc}") from exc
    return metric


def make_model(grid: HalfSpaceGrid, spec: ModelSpec) -> ZeroShiftMetric:
    if spec.kind == "hyperbolic":
        return make_hyperbolic(grid)
    return make_perturbed(grid, spec)


def curvature_deviation(metric: ZeroShiftMetric) -> np.ndarray:
    """Pointwise ``|R + K|_g``."""
    return curvature_tensors(metric).E_norm()


def verify_alh_order(metric: ZeroShiftMetric, stations: Optional[np.ndarray] = None,
                     x_margin: Optional[float] = None) -> DecayFit:
    """Fit the decay rate of the slice sup of ``|R + K|_g``.

    Stations default to unit spacing from ``w0 + 2`` to ``w_max - 1``; the
    lateral boundary layer of one cell is excluded.
    """
    grid = metric.grid
    if stations is None:
        stations = stations_for(grid)
    E = curvature_deviation(metric)
    margin = grid.dx if x_margin is None else x_margin
    return fit_decay_rate(stations, slice_sup(E, grid, stations, margin))
