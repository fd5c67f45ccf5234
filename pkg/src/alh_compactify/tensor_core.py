"""Grids, tensor fields and the differential geometry of zero-shift metrics.

Index convention: component index 0 is the radial coordinate ``w`` and indices
``1..n`` are the tangential coordinates ``x^1..x^n``.  Tensor components are
stored trailing the grid axes, so a rank-2 field on a grid of shape ``S`` has
shape ``S + (n+1, n+1)``.

Curvature follows the convention
``nabla_i nabla_j X^k - nabla_j nabla_i X^k = R^k_{lij} X^l`` with
``R_{ijkl} = g_{im} R^m_{jkl}``; the unit sphere then has
``R_{ijkl} = g_ik g_jl - g_il g_jk``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import fd
from .errors import ConfigError, DomainError, PreconditionError


# --------------------------------------------------------------------------
# grid and fields

@dataclass(frozen=True)
class HalfSpaceGrid:
    """Uniform grid on ``[w0, w_max] x [-L, L]^n``.

    Points are enumerated in C order over ``(w, x^1, ..., x^n)``: the radial
    index varies slowest.
    """

    n: int
    w0: float
    w_max: float
    Nw: int
    L: float
    Nx: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ConfigError(f"boundary dimension must be a positive integer, got {self.n}")
        if not self.w_max > self.w0:
            raise ConfigError(f"inverted radial bounds: w0={self.w0}, w_max={self.w_max}")
        if self.Nw < 8 or self.Nx < 8:
            raise ConfigError(f"need Nw >= 8 and Nx >= 8, got Nw={self.Nw}, Nx={self.Nx}")
        if not self.L > 0:
            raise ConfigError(f"tangential half-width must be positive, got L={self.L}")

    @property
    def dim(self) -> int:
        return self.n + 1

    @property
    def dw(self) -> float:
        return (self.w_max - self.w0) / (self.Nw - 1)

    @property
    def dx(self) -> float:
        return 2.0 * self.L / (self.Nx - 1)

    @property
    def spacing(self) -> tuple:
        return (self.dw,) + (self.dx,) * self.n

    @property
    def shape(self) -> tuple:
        return (self.Nw,) + (self.Nx,) * self.n

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def w(self) -> np.ndarray:
        return np.linspace(self.w0, self.w_max, self.Nw)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.Nx)

    def axes(self) -> list:
        return [self.w] + [self.x] * self.n

    def mesh(self) -> list:
        """Coordinate arrays ``[W, X1, ..., Xn]`` each of full grid shape."""
        return np.meshgrid(*self.axes(), indexing="ij")

    def points(self) -> np.ndarray:
        """All grid points as an ``(size, n+1)`` array in enumeration order."""
        return np.stack([m.ravel() for m in self.mesh()], axis=1)

    def w_column(self) -> np.ndarray:
        """``w`` reshaped to broadcast against a full grid array."""
        return self.w.reshape((-1,) + (1,) * self.n)

    def refined(self, factor: int = 2) -> "HalfSpaceGrid":
        """Same box with every spacing divided by ``factor``."""
        return HalfSpaceGrid(self.n, self.w0, self.w_max, factor * (self.Nw - 1) + 1,
                             self.L, factor * (self.Nx - 1) + 1)


def build_grid(n, w0, w_max, Nw, L, Nx) -> HalfSpaceGrid:
    """Validated constructor; raises :class:`ConfigError` on bad bounds or counts."""
    for name, val in (("Nw", Nw), ("Nx", Nx)):
        if int(val) != val or val <= 0:
            raise ConfigError(f"{name} must be a positive integer, got {val}")
    return HalfSpaceGrid(int(n), float(w0), float(w_max), int(Nw), float(L), int(Nx))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """One real value per grid point.

    ``rate`` records an exponential profile ``exp(rate * w)`` that derivatives
    treat exactly; it does not change the stored values.
    """

    grid: HalfSpaceGrid
    values: np.ndarray
    rate: float = 0.0

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise DomainError("scalar field has non-finite values")
        object.__setattr__(self, "values", vals)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * c, self.rate)

    __rmul__ = __mul__

    def partials(self, second: bool = True):
        return fd.partials(self.values, self.grid.spacing, self.grid.w, self.rate, second)


@dataclass(frozen=True, eq=False)
class TensorField:
    """Rank-k tensor sampled on a grid; components trail the grid axes.

    ``symmetry`` lists index pairs that are symmetrized on construction, so the
    declared symmetries hold exactly.  ``variance`` is a string of ``'d'``
    (covariant) and ``'u'`` (contravariant) markers, one per index.
    """

    grid: HalfSpaceGrid
    components: np.ndarray
    rank: int
    symmetry: tuple = ()
    rate: object = 0.0
    variance: Optional[str] = None

    def __post_init__(self):
        comp = np.array(self.components, dtype=float)
        g = self.grid
        if comp.shape[: len(g.shape)] != g.shape or comp.ndim != len(g.shape) + self.rank:
            raise ValueError(f"component shape {comp.shape} does not match rank {self.rank} on {g.shape}")
        m = comp.shape[len(g.shape):]
        if len(set(m)) > 1:
            raise ValueError("all tensor index ranges must agree")
        off = len(g.shape)
        for a, b in self.symmetry:
            comp = 0.5 * (comp + np.swapaxes(comp, off + a, off + b))
        if not np.all(np.isfinite(comp)):
            raise DomainError("tensor field has non-finite components")
        object.__setattr__(self, "components", comp)
        if self.variance is None:
            object.__setattr__(self, "variance", "d" * self.rank)

    @property
    def index_range(self) -> int:
        return self.components.shape[-1] if self.rank else 1

    def __mul__(self, c: float) -> "TensorField":
        return TensorField(self.grid, self.components * c, self.rank, self.symmetry,
                           self.rate, self.variance)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ZeroShiftMetric:
    """``g = N^2 dw^2 + g_{mu nu} dx^mu dx^nu`` on a half-space grid.

    ``builder`` optionally rebuilds the same analytic model on another grid;
    solvers use it for truncation sweeps.  ``oracle`` holds analytic side data
    attached by model constructors (for instance warped-product curvatures).
    """

    grid: HalfSpaceGrid
    N: ScalarField
    gt: TensorField
    builder: Optional[Callable] = None
    oracle: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.N.values <= 0.0):
            raise DomainError("lapse must be positive everywhere")
        if self.gt.rank != 2 or self.gt.index_range != self.grid.n:
            raise ValueError("gt must be a rank-2 tangential tensor")
        try:
            np.linalg.cholesky(self.gt.components)
        except np.linalg.LinAlgError as exc:
            raise DomainError("tangential metric is not positive definite") from exc

    @property
    def n(self) -> int:
        return self.grid.n

    def full(self) -> np.ndarray:
        """Full ``(n+1) x (n+1)`` metric components."""
        n = self.n
        g = np.zeros(self.grid.shape + (n + 1, n + 1))
        g[..., 0, 0] = self.N.values**2
        g[..., 1:, 1:] = self.gt.components
        return g

    def inverse(self) -> np.ndarray:
        n = self.n
        gi = np.zeros(self.grid.shape + (n + 1, n + 1))
        gi[..., 0, 0] = self.N.values**-2
        gi[..., 1:, 1:] = np.linalg.inv(self.gt.components)
        return gi

    def rates(self) -> np.ndarray:
        """Exponential profile per full-metric component."""
        d = self.n + 1
        r = np.zeros((d, d))
        r[0, 0] = 2.0 * self.N.rate
        r[1:, 1:] = np.broadcast_to(np.asarray(self.gt.rate, dtype=float), (d - 1, d - 1))
        return r

    def sqrt_det(self) -> np.ndarray:
        return self.N.values * np.sqrt(np.linalg.det(self.gt.components))

    def metric_partials(self, second: bool = True):
        """``(g, dg, ddg)`` with ``dg[..., k, i, j] = d_k g_ij``."""
        g = self.full()
        dg, ddg = fd.partials(g, self.grid.spacing, self.grid.w, self.rates(), second)
        return g, dg, ddg


def full_metric_field(metric: ZeroShiftMetric) -> TensorField:
    return TensorField(metric.grid, metric.full(), 2, ((0, 1),), metric.rates())


# --------------------------------------------------------------------------
# algebra helpers

def tensor_norm(A: np.ndarray, ginv: np.ndarray, rank: int) -> np.ndarray:
    """Pointwise norm of an all-covariant tensor with respect to ``ginv``."""
    B = A
    letters = "abcdefgh"
    for k in range(rank):
        # raise index k
        idx_in = "".join(letters[:rank])
        idx_out = idx_in[:k] + "z" + idx_in[k + 1:]
        B = np.einsum(f"...z{letters[k]},...{idx_in}->...{idx_out}", ginv, B)
    idx = "".join(letters[:rank])
    sq = np.einsum(f"...{idx},...{idx}->...", A, B)
    return np.sqrt(np.maximum(sq, 0.0))


def traceless(T: np.ndarray, g: np.ndarray, ginv: np.ndarray) -> np.ndarray:
    """``T - (g^{kl} T_kl / dim) g``."""
    dim = g.shape[-1]
    tr = np.einsum("...ij,...ij->...", ginv, T)
    return T - (tr / dim)[..., None, None] * g


def kulkarni_nomizu(A, B):
    """``(A ∧ B)_{ijkl} = A_ik B_jl + A_jl B_ik - A_il B_jk - A_jk B_il``.

    Accepts arrays (components trailing) or :class:`TensorField` pairs.
    """
    if isinstance(A, TensorField):
        out = kulkarni_nomizu(A.components, B.components)
        return TensorField(A.grid, out, 4)
    return (np.einsum("...ik,...jl->...ijkl", A, B) + np.einsum("...jl,...ik->...ijkl", A, B)
            - np.einsum("...il,...jk->...ijkl", A, B) - np.einsum("...jk,...il->...ijkl", A, B))


def constant_curvature_tensor(g: np.ndarray) -> np.ndarray:
    """``K_{ijkl} = g_ik g_jl - g_il g_jk`` (sectional curvature +1)."""
    return np.einsum("...ik,...jl->...ijkl", g, g) - np.einsum("...il,...jk->...ijkl", g, g)


# --------------------------------------------------------------------------
# Christoffel symbols

def christoffel_generic(g: np.ndarray, ginv: np.ndarray, dg: np.ndarray) -> np.ndarray:
    """``Gamma^k_ij = 1/2 g^{ka}(d_i g_aj + d_j g_ia - d_a g_ij)`` from full-metric partials."""
    first = 0.5 * (np.einsum("...iaj->...aij", dg) + np.einsum("...jia->...aij", dg) - dg)
    return np.einsum("...ka,...aij->...kij", ginv, first)


def christoffel_zero_shift(metric: ZeroShiftMetric) -> TensorField:
    """Christoffel symbols from the zero-shift closed forms.

    The six families are assembled block by block from partials of ``N`` and
    ``g_{mu nu}``; ``Gamma^mu_00 = -N g^{mu nu} d_nu N``.
    """
    n = metric.n
    N = metric.N.values
    dN, _ = metric.N.partials(second=False)
    dgt, _ = fd.partials(metric.gt.components, metric.grid.spacing, metric.grid.w,
                         metric.gt.rate, second=False)
    gti = np.linalg.inv(metric.gt.components)
    G = np.zeros(metric.grid.shape + (n + 1,) * 3)
    G[..., 0, 0, 0] = dN[..., 0] / N
    G[..., 0, 0, 1:] = dN[..., 1:] / N[..., None]
    G[..., 0, 1:, 0] = G[..., 0, 0, 1:]
    G[..., 1:, 0, 0] = -N[..., None] * np.einsum("...mn,...n->...m", gti, dN[..., 1:])
    d0g = dgt[..., 0, :, :]
    G[..., 0, 1:, 1:] = -0.5 * d0g / (N**2)[..., None, None]
    mixed = 0.5 * np.einsum("...ms,...sn->...mn", gti, d0g)
    G[..., 1:, 0, 1:] = mixed
    G[..., 1:, 1:, 0] = mixed
    dtan = dgt[..., 1:, :, :]
    G[..., 1:, 1:, 1:] = christoffel_generic(metric.gt.components, gti, dtan)
    return TensorField(metric.grid, G, 3, ((1, 2),), variance="udd")


# --------------------------------------------------------------------------
# curvature

@dataclass(frozen=True, eq=False)
class CurvatureSet:
    riemann: TensorField
    ricci: TensorField
    K: TensorField
    E: TensorField
    g: np.ndarray
    ginv: np.ndarray

    def sectional(self, i: int, j: int) -> np.ndarray:
        """Sectional curvature of the coordinate plane ``(i, j)``."""
        R = self.riemann.components
        g = self.g
        return R[..., i, j, i, j] / (g[..., i, i] * g[..., j, j] - g[..., i, j] ** 2)

    def E_norm(self) -> np.ndarray:
        return tensor_norm(self.E.components, self.ginv, 4)


def riemann_from_partials(g: np.ndarray, ginv: np.ndarray, dg: np.ndarray,
                          ddg: np.ndarray) -> np.ndarray:
    """All-covariant Riemann tensor from metric partials up to second order.

    Second derivatives of Christoffel symbols are never formed by differencing;
    ``R_{ijkl} = d_k Gamma_{i,lj} - d_l Gamma_{i,kj}
    + Gamma_{m,li} Gamma^m_{kj} - Gamma_{m,ki} Gamma^m_{lj}``.
    """
    # ddg[..., a, b, i, j] = d_a d_b g_ij
    first = 0.5 * (np.einsum("...iaj->...aij", dg) + np.einsum("...jia->...aij", dg) - dg)
    second_kind = np.einsum("...ka,...aij->...kij", ginv, first)
    lin = 0.5 * (np.einsum("...kjil->...ijkl", ddg) - np.einsum("...kilj->...ijkl", ddg)
                 - np.einsum("...ljik->...ijkl", ddg) + np.einsum("...likj->...ijkl", ddg))
    quad = (np.einsum("...mli,...mkj->...ijkl", first, second_kind)
            - np.einsum("...mki,...mlj->...ijkl", first, second_kind))
    return lin + quad


def curvature_tensors(metric: ZeroShiftMetric) -> CurvatureSet:
    """Riemann (4,0), Ricci, the unit curvature tensor K and E = R + K."""
    g, dg, ddg = metric.metric_partials()
    ginv = metric.inverse()
    R = riemann_from_partials(g, ginv, dg, ddg)
    ric = np.einsum("...ik,...ijkl->...jl", ginv, R)
    K = constant_curvature_tensor(g)
    grid = metric.grid
    return CurvatureSet(
        riemann=TensorField(grid, R, 4),
        ricci=TensorField(grid, ric, 2, ((0, 1),)),
        K=TensorField(grid, K, 4),
        E=TensorField(grid, R + K, 4),
        g=g,
        ginv=ginv,
    )


# --------------------------------------------------------------------------
# Hessians and Laplacians

def hessian_array(metric: ZeroShiftMetric, phi: ScalarField, gamma: Optional[np.ndarray] = None):
    """Covariant Hessian components plus the partials it was built from."""
    if phi.grid != metric.grid:
        raise PreconditionError("field and metric live on different grids")
    if gamma is None:
        gamma = christoffel_zero_shift(metric).components
    dphi, ddphi = phi.partials()
    H = ddphi - np.einsum("...kij,...k->...ij", gamma, dphi)
    return H, dphi


def hessian_scalar(metric: ZeroShiftMetric, phi: ScalarField) -> TensorField:
    """``Hess(phi)_ij = d_i d_j phi - Gamma^k_ij d_k phi``."""
    H, _ = hessian_array(metric, phi)
    return TensorField(metric.grid, H, 2, ((0, 1),))


def laplacian(metric: ZeroShiftMetric, phi: ScalarField) -> ScalarField:
    """Trace of the Hessian, ``g^{ij} Hess_ij(phi)``."""
    H, _ = hessian_array(metric, phi)
    return ScalarField(metric.grid, np.einsum("...ij,...ij->...", metric.inverse(), H))


def laplacian_divergence(metric: ZeroShiftMetric, phi: ScalarField) -> ScalarField:
    """Divergence-form Laplacian ``(1/sqrt g) d_i(sqrt g g^{ij} d_j phi)``.

    Assembled independently of the Christoffel symbols; used as a cross-check.
    """
    grid = metric.grid
    sq = metric.sqrt_det()
    dphi, _ = phi.partials(second=False)
    flux = sq[..., None] * np.einsum("...ij,...j->...i", metric.inverse(), dphi)
    div = sum(fd.d1(flux[..., i], grid.spacing[i], i) for i in range(grid.dim))
    return ScalarField(grid, div / sq)


def gradient_pairing(metric: ZeroShiftMetric, a: ScalarField, b: ScalarField) -> np.ndarray:
    """``<da, db>_g`` pointwise."""
    da, _ = a.partials(second=False)
    db, _ = b.partials(second=False)
    return np.einsum("...ij,...i,...j->...", metric.inverse(), da, db)


def conformal_hessian(metric: ZeroShiftMetric, w_field: ScalarField, phi: ScalarField) -> TensorField:
    """Hessian of ``phi`` for ``gbar = exp(-2 w_field) g``.

    ``Hessbar = Hess + dw ⊗ dphi + dphi ⊗ dw - <dw, dphi> g``.
    """
    H, dphi = hessian_array(metric, phi)
    dw, _ = w_field.partials(second=False)
    g = metric.full()
    pair = np.einsum("...ij,...i,...j->...", metric.inverse(), dw, dphi)
    Hb = H + np.einsum("...i,...j->...ij", dw, dphi) + np.einsum("...i,...j->...ij", dphi, dw) \
        - pair[..., None, None] * g
    return TensorField(metric.grid, Hb, 2, ((0, 1),))


def conformal_riemann(metric: ZeroShiftMetric, t_field: ScalarField) -> TensorField:
    """All-covariant Riemann tensor of ``gbar = t^{-2} g``.

    ``Rbar = t^{-2} (R + (Hess t / t) ∧ g - 1/2 |dt/t|^2 g ∧ g)``.
    """
    t = t_field.values
    if np.any(t <= 0.0):
        raise DomainError("conformal factor t must be positive")
    curv = curvature_tensors(metric)
    H, dt = hessian_array(metric, t_field)
    g = curv.g
    gg = kulkarni_nomizu(g, g)
    s = np.einsum("...ij,...i,...j->...", curv.ginv, dt, dt) / t**2
    Rb = curv.riemann.components + kulkarni_nomizu(H / t[..., None, None], g) \
        - 0.5 * s[..., None, None, None, None] * gg
    Rb = Rb / (t**2)[..., None, None, None, None]
    return TensorField(metric.grid, Rb, 4)


def riemann_31_norm(metric: ZeroShiftMetric, Rbar: TensorField, t_field: ScalarField) -> np.ndarray:
    """``g``-norm of ``Rbar^i_{jkl}`` (first index raised with ``gbar``)."""
    t = t_field.values
    return (t**2) * tensor_norm(Rbar.components, metric.inverse(), 4)


def interior_slices(grid: HalfSpaceGrid, margin: int = 1) -> tuple:
    """Index tuple dropping ``margin`` nodes at every face."""
    return tuple(slice(margin, m - margin) for m in grid.shape)


def riemann_symmetry_defect(R: np.ndarray) -> float:
    """Largest violation of pair (anti)symmetries, normalized by ``max |R|``."""
    scale = max(np.max(np.abs(R)), 1e-300)
    defects = [
        R + np.einsum("...ijkl->...jikl", R),
        R + np.einsum("...ijkl->...ijlk", R),
        R - np.einsum("...ijkl->...klij", R),
    ]
    return max(float(np.max(np.abs(x))) for x in defects) / scale


def bianchi_defect(R: np.ndarray) -> float:
    """First Bianchi cyclic sum ``R_ijkl + R_iklj + R_iljk``, normalized."""
    scale = max(np.max(np.abs(R)), 1e-300)
    cyc = R + np.einsum("...ijkl->...iklj", R) + np.einsum("...ijkl->...iljk", R)
    return float(np.max(np.abs(cyc))) / scale


__all__ = [name for name in dir() if not name.startswith("_") and name not in {
    "annotations", "itertools", "dataclass", "field", "Callable", "Optional", "np", "fd"}]
