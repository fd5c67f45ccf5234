import numpy as np
import pytest
import sympy as sp

from alh_compactify.conformal_factor import solve_radial_eigenfunction
from alh_compactify.errors import ConfigError
from alh_compactify.metric_zoo import make_hyperbolic, make_warped, make_warped_order
from alh_compactify.tensor_core import (HalfSpaceGrid, ScalarField, TensorField, ZeroShiftMetric,
                                        bianchi_defect, build_grid, christoffel_generic,
                                        christoffel_zero_shift, conformal_hessian,
                                        conformal_riemann, constant_curvature_tensor,
                                        curvature_tensors, hessian_scalar, interior_slices,
                                        kulkarni_nomizu, laplacian, laplacian_divergence,
                                        riemann_31_norm, riemann_symmetry_defect)
from alh_compactify.window_norms import fit_decay_rate, slice_sup

w_sym = sp.Symbol("w")


def _lambdify(expr):
    return sp.lambdify(w_sym, expr, "numpy")


# -- grids -----------------------------------------------------------------

def test_build_grid_spacing():
    g = build_grid(1, 0, 10, 201, 1, 65)
    assert g.dw == pytest.approx(0.05)
    assert g.dx == pytest.approx(1 / 32)


def test_build_grid_counts_2d():
    g = build_grid(2, 0, 8, 161, 1, 33)
    assert g.shape == (161, 33, 33)
    assert g.points().shape == (161 * 33 * 33, 3)


@pytest.mark.parametrize("args", [(1, 5, 3, 41, 1, 17), (1, 0, 1, 3, 1, 17), (0, 0, 1, 41, 1, 17),
                                  (1, 0, 1, 41, -1, 17), (1, 0, 1, 40.5, 1, 17)])
def test_build_grid_rejects(args):
    with pytest.raises(ConfigError):
        build_grid(*args)


def test_refined_halves_spacing():
    g = build_grid(1, 0, 4, 41, 1, 17)
    r = g.refined()
    assert r.dw == pytest.approx(g.dw / 2) and r.dx == pytest.approx(g.dx / 2)


# -- Christoffel symbols -----------------------------------------------------

def test_christoffel_hyperbolic_closed_form(hyp_metric):
    G = christoffel_zero_shift(hyp_metric).components
    e2w = np.exp(2 * hyp_metric.grid.w)[:, None]
    assert np.allclose(G[..., 0, 1, 1], -e2w, rtol=1e-12)
    assert np.allclose(G[..., 1, 0, 1], 1.0, atol=1e-12)
    assert np.allclose(G[..., 0, 0, 0], 0.0, atol=1e-12)


def _lapse_metric(grid):
    """``N = 1 + e^{-2w}`` over a hyperbolic slice metric."""
    N = 1.0 + np.exp(-2.0 * np.broadcast_to(grid.w_column(), grid.shape))
    e2w = np.broadcast_to(np.exp(2 * grid.w_column()), grid.shape)
    gt = TensorField(grid, e2w[..., None, None] * np.eye(grid.n), 2, ((0, 1),), rate=2.0)
    return ZeroShiftMetric(grid, ScalarField(grid, N), gt)


def test_christoffel_lapse_against_symbolic():
    Nexpr = 1 + sp.exp(-2 * w_sym)
    oracle = _lambdify(sp.diff(Nexpr, w_sym) / Nexpr)
    errs = []
    for Nw in (41, 81, 161):
        grid = HalfSpaceGrid(1, 0.0, 4.0, Nw, 1.0, 9)
        G = christoffel_zero_shift(_lapse_metric(grid)).components[..., 0, 0, 0]
        inner = slice(1, -1)
        errs.append(np.max(np.abs(G[inner, 4] - oracle(grid.w[inner]))))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders > 1.8), orders


def test_christoffel_matches_generic(rng):
    """Random metric whose profiles are quadratic, so every difference is exact."""
    grid = HalfSpaceGrid(2, 0.0, 2.0, 21, 1.0, 11)
    W, X, Y = grid.mesh()
    c = rng.uniform(-0.1, 0.1, size=3)
    N = 1.0 + c[0] * W + c[1] * X + c[2] * Y
    base = np.broadcast_to(np.eye(2), grid.shape + (2, 2)).copy()
    for mono in (W, X, Y, W * X, X * Y, Y * Y):
        A = rng.normal(scale=0.03, size=(2, 2))
        base += mono[..., None, None] * (A + A.T)
    gt = np.exp(2 * W)[..., None, None] * base
    metric = ZeroShiftMetric(grid, ScalarField(grid, N), TensorField(grid, gt, 2, ((0, 1),), rate=2.0))
    g, dg, _ = metric.metric_partials(second=False)
    oracle = christoffel_generic(g, metric.inverse(), dg)
    G = christoffel_zero_shift(metric).components
    assert np.max(np.abs(G - oracle)) <= 1e-10 * np.max(np.abs(oracle))


# -- curvature ---------------------------------------------------------------

def test_hyperbolic_curvature_deviation(hyp_metric):
    E = curvature_tensors(hyp_metric).E_norm()
    assert np.max(E[interior_slices(hyp_metric.grid)]) <= 1e-6


def test_warped_sectional_curvatures_against_symbolic():
    f = sp.exp(w_sym) * (1 + sp.Rational(1, 10) * sp.exp(-w_sym))
    sec_rad = _lambdify(-sp.diff(f, w_sym, 2) / f)
    # the fibre is flat, so the tangential curvature is -f'^2/f^2
    sec_tan = _lambdify(-sp.diff(f, w_sym) ** 2 / f**2)
    fn, fp, fpp = (_lambdify(e) for e in (f, sp.diff(f, w_sym), sp.diff(f, w_sym, 2)))
    errs = []
    for Nw in (41, 81):
        grid = HalfSpaceGrid(2, 0.0, 3.0, Nw, 1.0, 9)
        curv = curvature_tensors(make_warped(grid, fn, fp, fpp))
        core = (slice(1, -1), 4, 4)
        w = grid.w[1:-1]
        e_rad = np.max(np.abs(curv.sectional(0, 1)[core] - sec_rad(w)))
        e_tan = np.max(np.abs(curv.sectional(1, 2)[core] - sec_tan(w)))
        errs.append(max(e_rad, e_tan))
    assert errs[0] < 1e-2
    assert errs[0] / errs[1] > 3.5


def test_flat_product_is_flat():
    grid = HalfSpaceGrid(2, 0.0, 2.0, 21, 1.0, 9)
    N = ScalarField(grid, np.ones(grid.shape))
    gt = TensorField(grid, np.broadcast_to(np.eye(2), grid.shape + (2, 2)), 2)
    curv = curvature_tensors(ZeroShiftMetric(grid, N, gt))
    assert np.max(np.abs(curv.riemann.components)) == 0.0
    assert np.array_equal(curv.E.components, curv.K.components)


def test_riemann_symmetries_perturbed(order05):
    R = curvature_tensors(order05).riemann.components[interior_slices(order05.grid, 2)]
    assert riemann_symmetry_defect(R) < 1e-8
    assert bianchi_defect(R) < 1e-8


# -- Hessian -------------------------------------------------------------------

def _refinement_errors(make_err, sizes):
    errs = np.array([make_err(n) for n in sizes])
    return errs, np.log2(errs[:-1] / errs[1:])


def test_hessian_of_exponential_is_conformal():
    def err(Nw):
        grid = HalfSpaceGrid(1, 0.0, 4.0, Nw, 1.0, 9)
        m = make_hyperbolic(grid)
        # no exponential profile: the differencing error is genuinely O(dw^2)
        phi = ScalarField(grid, np.broadcast_to(np.exp(grid.w_column()), grid.shape))
        H = hessian_scalar(m, phi).components
        target = phi.values[..., None, None] * m.full()
        rel = np.abs(H - target)[1:-1] / np.exp(2 * grid.w_column()[1:-1, None, None, None])
        return np.max(rel)
    errs, orders = _refinement_errors(err, (81, 161, 321))
    assert np.all(orders > 1.8), orders


def test_hessian_of_exponential_exact_with_profile(hyp_metric):
    grid = hyp_metric.grid
    phi = ScalarField(grid, np.broadcast_to(np.exp(grid.w_column()), grid.shape), rate=1.0)
    H = hessian_scalar(hyp_metric, phi).components
    target = phi.values[..., None, None] * hyp_metric.full()
    assert np.max(np.abs(H - target) / np.abs(target).max(axis=(-1, -2))[..., None, None]) < 1e-10


def test_hessian_of_constant_is_zero(order05):
    phi = ScalarField(order05.grid, np.full(order05.grid.shape, 3.7))
    # one-sided stencils leave rounding of size eps / h^2
    assert np.max(np.abs(hessian_scalar(order05, phi).components)) <= 1e-10


def test_coordinate_function_harmonic_in_model(hyp_metric):
    grid = hyp_metric.grid
    phi = ScalarField(grid, grid.mesh()[1])
    lap = laplacian(hyp_metric, phi).values
    lap_div = laplacian_divergence(hyp_metric, phi).values
    core = interior_slices(grid)
    assert np.max(np.abs(lap[core])) < 1e-8
    assert np.max(np.abs(lap_div[core])) < 1e-8


def test_laplacian_matches_divergence_form(order05):
    grid = order05.grid
    W, X = grid.mesh()
    phi = ScalarField(grid, np.sin(2 * X) * np.exp(-0.3 * W))
    core = interior_slices(grid, 2)
    a = laplacian(order05, phi).values[core]
    b = laplacian_divergence(order05, phi).values[core]
    assert np.max(np.abs(a - b)) < 5e-3 * np.max(np.abs(b))


# -- Kulkarni-Nomizu --------------------------------------------------------

def test_kulkarni_nomizu_of_metric(rng):
    A = rng.normal(size=(5, 3, 3))
    g = np.einsum("...ij,...kj->...ik", A, A) + 3 * np.eye(3)
    assert np.allclose(0.5 * kulkarni_nomizu(g, g), constant_curvature_tensor(g), atol=1e-12)


def test_kulkarni_nomizu_zero():
    B = np.eye(3)
    assert not np.any(kulkarni_nomizu(np.zeros((3, 3)), B))


def test_kulkarni_nomizu_bianchi(rng):
    A = rng.normal(size=(20, 4, 4))
    B = rng.normal(size=(20, 4, 4))
    A, B = A + np.swapaxes(A, -1, -2), B + np.swapaxes(B, -1, -2)
    R = kulkarni_nomizu(A, B)
    cyc = R + np.einsum("...ijkl->...iklj", R) + np.einsum("...ijkl->...iljk", R)
    assert np.max(np.abs(cyc)) <= 1e-12 * np.max(np.abs(R))


# -- conformal change -------------------------------------------------------

def test_conformal_hessian_of_w_hyperbolic(hyp_metric):
    grid = hyp_metric.grid
    wf = ScalarField(grid, np.broadcast_to(grid.w_column(), grid.shape))
    Hb = conformal_hessian(hyp_metric, wf, wf).components
    # in rho = e^{-w}: gbar = drho^2 + dx^2, Hessbar(-log rho) = rho^{-2} drho^2 = dw^2
    target = np.zeros(grid.shape + (2, 2))
    target[..., 0, 0] = 1.0
    scale = np.abs(hyp_metric.full()).max(axis=(-1, -2))[..., None, None]
    assert np.max((np.abs(Hb - target) / scale)[interior_slices(grid)]) < 1e-12


def test_conformal_hessian_of_constant(order05):
    grid = order05.grid
    wf = ScalarField(grid, np.broadcast_to(grid.w_column(), grid.shape))
    c = ScalarField(grid, np.ones(grid.shape))
    assert np.max(np.abs(conformal_hessian(order05, wf, c).components)) <= 1e-10


def test_conformal_hessian_matches_direct_gbar():
    """Against the Hessian of phi for gbar assembled as its own zero-shift metric."""
    def err(Nw):
        grid = HalfSpaceGrid(1, 0.0, 3.0, Nw, 1.0, (Nw - 1) // 2 + 1)
        W, X = grid.mesh()
        N = 1.0 + 0.1 * np.exp(-W) * np.cos(X)
        gt = np.exp(2 * W) * (1 + 0.1 * np.sin(X) * np.exp(-W))
        m = ZeroShiftMetric(grid, ScalarField(grid, N),
                            TensorField(grid, gt[..., None, None], 2, rate=2.0))
        sigma = W + 0.05 * np.sin(X + W)
        phi = ScalarField(grid, np.sin(X) * np.cos(0.5 * W))
        Hb = conformal_hessian(m, ScalarField(grid, sigma), phi).components
        bar = ZeroShiftMetric(grid, ScalarField(grid, N * np.exp(-sigma)),
                              TensorField(grid, (gt * np.exp(-2 * sigma))[..., None, None], 2))
        direct = hessian_scalar(bar, phi).components
        core = interior_slices(grid, 2)
        return np.max(np.abs(Hb - direct)[core])
    errs, orders = _refinement_errors(err, (61, 121, 241))
    assert np.all(orders > 1.7), (errs, orders)


def test_conformal_riemann_hyperbolic_flat(hyp_metric):
    grid = hyp_metric.grid
    t = ScalarField(grid, np.broadcast_to(np.exp(grid.w_column()), grid.shape), rate=1.0)
    Rb = conformal_riemann(hyp_metric, t)
    norm = riemann_31_norm(hyp_metric, Rb, t)
    assert np.max(norm[interior_slices(grid)]) <= 1e-5


def test_conformal_riemann_identity_factor(order05):
    grid = order05.grid
    one = ScalarField(grid, np.ones(grid.shape))
    Rb = conformal_riemann(order05, one).components
    R = curvature_tensors(order05).riemann.components
    assert np.max(np.abs(Rb - R)) <= 1e-12 * np.max(np.abs(R))


@pytest.mark.parametrize("a", [0.5, 1.5])
def test_conformal_riemann_decay_warped(a):
    """The (3,1) curvature of gbar decays like e^{-aw}; rate measured by a fit."""
    grid = HalfSpaceGrid(1, 0.0, 14.0, 281, 1.0, 17)
    m = make_warped_order(grid, a)
    eig = solve_radial_eigenfunction(m, a, sweep=False)
    Rb = conformal_riemann(m, eig.t)
    norm = riemann_31_norm(m, Rb, eig.t)
    stations = np.arange(2.0, 12.0)
    fit = fit_decay_rate(stations, slice_sup(norm, grid, stations, x_margin=0.25))
    assert fit.rate >= a - 0.05, fit.rate
