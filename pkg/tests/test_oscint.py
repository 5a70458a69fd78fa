import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subwave.models import register_builtin
from subwave.oscint import (CriticalPointData, CriticalPointError, converged_integral,
                            critical_point_data, find_critical_point, gaussian_fresnel, get_problem,
                            leading_term_errors, loglog_slope, mixed_phase_critical,
                            oscillatory_integral, signature, stationary_phase_leading)

BOX = [(-2.2, 2.2)]


def quad_phase(p):
    return -0.5 * p[:, 0] ** 2


def gauss_amp(p):
    return np.exp(-8.0 * p[:, 0] ** 2)


def test_zero_amplitude():
    assert oscillatory_integral(quad_phase, lambda p: np.zeros(len(p)), 50.0, BOX) == 0


def test_gaussian_fresnel_oracle():
    val, _, _ = converged_integral(quad_phase, gauss_amp, 50.0, BOX)
    ref = gaussian_fresnel(50.0)
    assert abs(val - ref) <= 1e-6 * abs(ref)
    # independent check of the closed form itself
    s = np.linspace(-3, 3, 200001)
    direct = np.trapezoid(np.exp(-0.5j * 50 * s ** 2 - 8 * s ** 2), s)
    assert abs(direct - ref) <= 1e-9


def test_quadrature_doubling_converges():
    p = get_problem("cubic1d")
    a = oscillatory_integral(p.phase, p.amplitude, 256.0, p.box, 512)
    b = oscillatory_integral(p.phase, p.amplitude, 256.0, p.box, 1024)
    assert abs(a - b) <= 1e-6 * abs(b)


def test_leading_term_pure_gaussian_phase():
    cp = critical_point_data([0.0], 0.0, [[-1.0]])
    lead = stationary_phase_leading(cp, 1.0, 100.0)
    assert abs(lead - np.sqrt(2 * np.pi / 100) * np.exp(-0.25j * np.pi)) <= 1e-15


def test_non_stationary_decay():
    # no critical point: f' = 1 on the support of a smooth bump
    bump = lambda p: np.where(np.abs(p[:, 0]) < 1,
                              np.exp(1 - 1 / np.clip(1 - p[:, 0] ** 2, 1e-300, None)), 0.0)
    lams = [8.0, 16.0, 32.0, 64.0]
    vals = [abs(converged_integral(lambda p: p[:, 0], bump, lam, [(-1, 1)])[0]) for lam in lams]
    slope, _ = loglog_slope(lams, vals)
    assert slope <= -3


@pytest.mark.parametrize("name,d", [("cubic1d", 1), ("euclid-mixed", 2)])
def test_leading_term_error_order(name, d):
    _, slope, r2 = leading_term_errors(get_problem(name), [2.0 ** k for k in range(5, 11)])
    assert abs(slope + (d / 2 + 1)) <= 0.2
    assert r2 >= 0.95


def test_unknown_problem():
    with pytest.raises(ValueError):
        get_problem("nope")


@given(st.lists(st.floats(0.1, 5.0), min_size=1, max_size=4), st.integers(0, 2**31),
       st.lists(st.booleans(), min_size=4, max_size=4))
@settings(max_examples=40, deadline=None)
def test_signature_counts_eigenvalue_signs(mags, seed, signs):
    ev = np.array([m if s else -m for m, s in zip(mags, signs)])
    Q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(ev.size, ev.size)))
    Hm = Q @ np.diag(ev) @ Q.T
    assert signature(Hm) == int(np.sum(ev > 0) - np.sum(ev < 0))
    cp = critical_point_data(np.zeros(ev.size), 0.0, Hm)
    assert np.isclose(cp.det_abs, np.prod(np.abs(ev)))


def test_degenerate_and_invalid_critical_data():
    with pytest.raises(CriticalPointError):
        signature(np.diag([1.0, 0.0]))
    with pytest.raises(ValueError):
        CriticalPointData(np.zeros(2), 0.0, np.array([[1.0, 2.0], [0.0, 1.0]]), 0, 1.0)


def test_newton_critical_point():
    grad = lambda z: np.array([2 * (z[0] - 1), 4 * (z[1] + 2) ** 3 + (z[1] + 2)])
    hess = lambda z: np.diag([2.0, 12 * (z[1] + 2) ** 2 + 1])
    np.testing.assert_allclose(find_critical_point(grad, hess, [0.0, 0.0]), [1.0, -2.0], atol=1e-10)


def test_mixed_phase_euclidean_1d():
    e1 = register_builtin("euclidean(1)")
    mc = mixed_phase_critical(e1, [0.8], [-0.7], 0.7)
    np.testing.assert_allclose(mc.data.location, [0.8, -0.8], atol=1e-7)
    assert mc.data.signature == 0
    assert np.isclose(mc.data.det_abs, 1.0, rtol=1e-5)


def test_mixed_phase_euclidean_2d_is_radial(euclid2):
    x = np.array([0.3, -0.5])
    mc = mixed_phase_critical(euclid2, x, -x + 0.05, np.linalg.norm(x) + 0.05)
    xi = mc.data.location[1:]
    np.testing.assert_allclose(xi / np.linalg.norm(xi), -x / np.linalg.norm(x), atol=1e-7)


def test_mixed_phase_heisenberg_factorisation(heis):
    from subwave.eikonal import forward_point
    xi = np.array([0.5, -0.4, 0.3])
    t = float(np.sqrt(heis.H(np.zeros(3), xi)))
    x = forward_point(heis, t, np.zeros(3), xi)
    mc = mixed_phase_critical(heis, x, xi * 1.02, t * 0.98)
    assert mc.factor_rel_error <= 1e-3
    np.testing.assert_allclose(mc.data.location[1:], xi, atol=1e-6)
