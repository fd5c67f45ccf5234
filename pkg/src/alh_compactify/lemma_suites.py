"""Seeded property suites for the window inequalities, Gronwall and Codazzi checks.

Shared by the test-suite and the ``verify-lemmas`` command.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .codazzi import poisson_reduce, solve_codazzi_flat
from .tensor_core import HalfSpaceGrid, ScalarField, TensorField
from .window_norms import check_moving_window1, check_moving_window2, gronwall_envelope


@dataclass
class SuiteResult:
    name: str
    cases: int = 0
    failures: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.cases > 0 and not self.failures

    def summary(self) -> str:
        return f"{self.name}: {self.cases - len(self.failures)}/{self.cases} passed"


WINDOW_GRIDS = {
    1: HalfSpaceGrid(1, 0.0, 5.0, 101, 1.0, 65),
    2: HalfSpaceGrid(2, 0.0, 4.0, 41, 1.0, 33),
}


def random_smooth_values(grid: HalfSpaceGrid, rng: np.random.Generator, modes: int = 3) -> np.ndarray:
    """Sum of a few random plane waves in ``(w, x)`` plus a constant."""
    mesh = grid.mesh()
    out = np.full(grid.shape, rng.normal())
    for _ in range(modes):
        k = rng.normal(scale=2.0, size=grid.dim)
        phase = rng.uniform(0, 2 * np.pi)
        out = out + rng.normal() * np.sin(sum(kk * X for kk, X in zip(k, mesh)) + phase)
    return out


def random_tensor_field(grid: HalfSpaceGrid, rank: int, rng: np.random.Generator) -> TensorField:
    """Rank-``rank`` covariant field whose tangential part has ``h``-norm of order one."""
    d = grid.dim
    comps = np.empty(grid.shape + (d,) * rank)
    for idx in np.ndindex(*((d,) * rank)):
        comps[(Ellipsis,) + idx] = random_smooth_values(grid, rng)
    scale = np.exp(rank * grid.w_column())
    comps = comps * scale.reshape(scale.shape + (1,) * rank)
    return TensorField(grid, comps, rank, rate=float(rank))


def window_suite(seed: int = 0, count: int = 100, which: int = 1) -> SuiteResult:
    """``count`` random fields against the first (``which=1``) or second window inequality."""
    rng = np.random.default_rng([seed, which])
    res = SuiteResult(f"moving_window{which}")
    for case in range(count):
        n = 1 if case % 4 else 2
        grid = WINDOW_GRIDS[n]
        p = (n + 2.0) if case % 2 else (2.0 * n + 4.0)
        w1 = float(rng.uniform(grid.w0 + 2.0, grid.w_max - 1.2))
        w0 = float(rng.uniform(grid.w0 + 1.1, w1 - 0.3))
        x = tuple(rng.uniform(-0.4, 0.4, size=n))
        r = float(rng.uniform(0.3, 1.0))
        w1, w0 = round(w1 / grid.dw) * grid.dw, round(w0 / grid.dw) * grid.dw
        if which == 1:
            rank = case % 4
            field_ = random_tensor_field(grid, rank, rng)
            chk = check_moving_window1(field_, p, w0, w1, x, r)
        else:
            field_ = ScalarField(grid, random_smooth_values(grid, rng))
            chk = check_moving_window2(field_, p, w0, w1, x, r)
        res.cases += 1
        if not chk.passed:
            res.failures.append({"case": case, "n": n, "p": p, "w0": w0, "w1": w1,
                                 "lhs": chk.lhs, "rhs": chk.rhs})
    return res


def gronwall_triple(rng: np.random.Generator, w: np.ndarray, eta_min: float = 0.05):
    """Random ``(a, b, f)`` with ``f = a + int b f - eta`` for some ``eta >= eta_min``.

    ``G = int b f`` solves ``G' = b (a + G - eta)``; the premise then holds with
    margin ``eta``.
    """
    ca, cb = rng.normal(size=3), rng.uniform(0.1, 1.0, size=3)
    a = lambda s: 1.0 + 0.5 * np.sin(ca[0] * s + ca[1]) + 0.3 * ca[2] * s
    b = lambda s: cb[0] + cb[1] * np.cos(cb[2] * s) ** 2
    eta = eta_min + rng.uniform(0.0, 0.5)
    sol = solve_ivp(lambda s, G: b(s) * (a(s) + G - eta), (w[0], w[-1]), [0.0],
                    t_eval=w, rtol=1e-11, atol=1e-12)
    G = sol.y[0]
    return a(w), b(w), a(w) + G - eta


def gronwall_suite(seed: int = 0, count: int = 50) -> SuiteResult:
    rng = np.random.default_rng([seed, 7])
    w = np.linspace(0.0, 3.0, 3001)
    res = SuiteResult("gronwall")
    for case in range(count):
        a, b, f = gronwall_triple(rng, w)
        out = gronwall_envelope(a, b, f, w)
        res.cases += 1
        if not (out.premise_holds and out.passed):
            res.failures.append({"case": case, "premise": out.premise_holds, "passed": out.passed})
    return res


def _plane_wave_traceless(X, rng_params):
    """Traceless part of the Hessian of a sum of plane waves, and its flat Codazzi tensor."""
    d = len(X)
    H = 0.0
    F = 0.0
    for k, amp, phase in rng_params:
        arg = sum(kk * x for kk, x in zip(k, X)) + phase
        H = H - amp * np.sin(arg)[..., None, None] * np.einsum("i,j->ij", k, k)
        F = F - amp * np.cos(arg)[..., None, None, None] * np.einsum("i,j,l->ijl", k, k, k)
    eye = np.eye(d)
    T = H - (np.trace(H, axis1=-2, axis2=-1) / d)[..., None, None] * eye
    dT = F - (np.trace(F, axis1=-2, axis2=-1) / d)[..., None, None] * eye
    return T, dT - np.swapaxes(dT, -3, -2)


def manufactured_codazzi(M: int, params, d: int = 2):
    x = np.linspace(0.0, 1.0, M)
    X = np.meshgrid(*([x] * d), indexing="ij")
    T, f = _plane_wave_traceless(X, params)
    return x[1] - x[0], T, f


def codazzi_suite(seed: int = 0, count: int = 5, sizes=(17, 33, 65)) -> SuiteResult:
    """Recovery order in ``[1.7, 2.3]`` and exact symmetry of the reduced source."""
    rng = np.random.default_rng([seed, 11])
    res = SuiteResult("codazzi")
    for case in range(count):
        params = [(rng.normal(scale=1.5, size=2), rng.normal(), rng.uniform(0, 6)) for _ in range(3)]
        errs = []
        for M in sizes:
            h, T, f = manufactured_codazzi(M, params)
            sol = solve_codazzi_flat(f, T, h)
            errs.append(np.sqrt(np.sum((sol.T - T) ** 2) * h * h))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        rf = rng.normal(size=(9, 9, 2, 2, 2))
        rf = rf - np.swapaxes(rf, -3, -2)
        S = poisson_reduce(rf, (0.1, 0.1))
        sym = float(np.max(np.abs(S - np.swapaxes(S, -1, -2))))
        res.cases += 1
        if not (np.all((orders >= 1.7) & (orders <= 2.3)) and sym <= 1e-12):
            res.failures.append({"case": case, "orders": orders.tolist(), "symmetry": sym})
    return res
