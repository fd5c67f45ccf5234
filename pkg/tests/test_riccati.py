import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alh_compactify.errors import PreconditionError
from alh_compactify.riccati import (decay_samples, integrate_riccati_system,
                                    integrate_scalar_riccati, verify_shape_bounds)
from alh_compactify.window_norms import fit_decay_rate

S = np.linspace(0.0, 15.0, 301)


def _coth_oracle(s):
    return 1.0 / np.tanh(s + math.atanh(0.5))


def test_fixed_point():
    curve = integrate_scalar_riccati(lambda s: np.ones_like(s), 1.0, S)
    assert np.all(curve.lam == 1.0)


def test_coth_solution():
    curve = integrate_scalar_riccati(lambda s: np.ones_like(s), 2.0, S)
    assert np.max(np.abs(curve.lam - _coth_oracle(S))) <= 1e-8
    fine = integrate_scalar_riccati(lambda s: np.ones_like(s), 2.0, S, max_step=0.005)
    assert np.max(np.abs(curve.lam - fine.lam)) <= 1e-8
    s, dev = decay_samples(curve)
    assert fit_decay_rate(s, dev).rate == pytest.approx(2.0, abs=1e-3)


def test_perturbed_rate():
    curve = integrate_scalar_riccati(lambda s: 1.0 + 0.5 * np.exp(-0.5 * s), 1.5, S)
    s, dev = decay_samples(curve)
    assert fit_decay_rate(s, dev).rate >= 0.45


def test_sampled_f_matches_callable():
    f = lambda s: 1.0 + 0.3 * np.exp(-s)
    a = integrate_scalar_riccati(f, 0.5, S)
    b = integrate_scalar_riccati(f(S), 0.5, S)
    assert np.max(np.abs(a.lam - b.lam)) < 1e-6


@pytest.mark.parametrize("lam0", [0.0, -1.0])
def test_rejects_nonpositive_start(lam0):
    with pytest.raises(PreconditionError):
        integrate_scalar_riccati(lambda s: np.ones_like(s), lam0, S)


def test_rejects_nonpositive_f():
    with pytest.raises(PreconditionError):
        integrate_scalar_riccati(lambda s: np.zeros_like(s), 1.0, S)


def test_negative_start_blows_up_when_not_strict():
    # lambda' = 1 - lambda^2 from -2 reaches -infinity at s = artanh(1/2)
    curve = integrate_scalar_riccati(lambda s: np.ones_like(s), -2.0, S, strict=False)
    assert curve.blowup_at == pytest.approx(math.atanh(0.5), abs=0.02)
    assert not curve.positive


@settings(max_examples=40, deadline=None)
@given(J=st.floats(0.0, 2.0), a=st.floats(0.2, 1.8), lam0=st.floats(1.0, 4.0))
def test_comparison_stays_above_one(J, a, lam0):
    """f >= 1 and lambda(0) >= 1 keep lambda >= 1 (1 is a sub-solution)."""
    curve = integrate_scalar_riccati(lambda s: 1.0 + J * np.exp(-a * s), lam0, S[:101])
    assert np.min(curve.lam) >= 1.0 - 1e-12


# -- matrix system -----------------------------------------------------------

def test_system_hyperbolic_fixed_point():
    evo = integrate_riccati_system(lambda s: -np.eye(2), np.eye(2), np.eye(2), S[:101])
    assert np.max(np.abs(evo.S - np.eye(2))) <= 1e-12
    expected = np.exp(2 * S[:101])[:, None, None] * np.eye(2)
    # RK4 at step 0.01 on g' = 2g: relative truncation of about 1e-8 over s in [0, 5]
    assert np.max(np.abs(evo.g - expected) / expected.max(axis=(1, 2))[:, None, None]) <= 1e-7
    b = verify_shape_bounds(evo, 1.0)
    assert b.C_lower == 0.0 and b.C_upper == 0.0 and b.passed


def test_system_diagonal_reduces_to_scalar():
    evo = integrate_riccati_system(lambda s: -np.eye(3), 2.0 * np.eye(3), np.eye(3), S)
    ev = evo.eigenvalues()
    assert np.max(np.abs(ev - _coth_oracle(S)[:, None])) <= 1e-8


def test_system_sandwich_and_scalar_certificate():
    R = lambda s: -(1.0 + 0.3 * np.exp(-s)) * np.eye(2)
    evo = integrate_riccati_system(R, 1.5 * np.eye(2), np.eye(2), S)
    bounds = verify_shape_bounds(evo, 1.0)
    assert bounds.passed
    scalar = integrate_scalar_riccati(lambda s: 1.0 + 0.3 * np.exp(-s), 1.5, S)
    c_scalar = np.max(np.abs(scalar.lam - 1.0) * np.exp(S))
    assert max(bounds.C_lower, bounds.C_upper) == pytest.approx(c_scalar, rel=0.01)


def test_system_overstated_order_fails():
    R = lambda s: -(1.0 + 0.3 * np.exp(-s)) * np.eye(2)
    evo = integrate_riccati_system(R, 1.5 * np.eye(2), np.eye(2), S)
    bad = verify_shape_bounds(evo, 1.9)
    assert not bad.passed and bad.growth > 1.0


def test_system_nondiagonal_start():
    """Non-diagonal g0 and S0: eigenvalues still approach one."""
    g0 = np.array([[2.0, 0.3], [0.3, 1.0]])
    S0 = np.linalg.solve(g0, np.array([[3.0, 0.2], [0.2, 1.5]]))
    R = lambda s: -(1.0 + 0.5 * np.exp(-0.5 * s)) * np.eye(2)
    evo = integrate_riccati_system(R, S0, g0, S)
    assert verify_shape_bounds(evo, 0.5).passed


def test_system_rejects_indefinite_start():
    with pytest.raises(PreconditionError):
        integrate_riccati_system(lambda s: -np.eye(2), -np.eye(2), np.eye(2), S)
    with pytest.raises(PreconditionError):
        integrate_riccati_system(lambda s: -np.eye(2), np.eye(2), -np.eye(2), S)
