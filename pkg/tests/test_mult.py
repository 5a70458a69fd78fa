import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subwave.mult import (CutoffSpec, Eigensystem, MultiplierGrid, ResolutionError,
                          apply_multiplier_spectral, euclidean_opnorm_L1, grid_from_function,
                          grushin_fiber_eigenvalues, grushin_operator_matrix, matrix_norm_1,
                          matrix_norm_inf, mh_lowerbound_experiment, mp_lowerbound_experiment,
                          schrodinger_multiplier, schrodinger_value_quad, sobolev_sloc_norm,
                          spectral_operator, stable_lambda0, wave_multiplier)

CHI = CutoffSpec.bump(0.5, 1.5)


@pytest.fixture(scope="module")
def grushin_eig():
    G = grushin_operator_matrix()
    return G, Eigensystem.of(G.matrix)


def test_cutoff_validation():
    with pytest.raises(ValueError):
        CutoffSpec.bump(1.0, 0.5)
    with pytest.raises(ValueError):
        CutoffSpec("triangle", (0, 1))
    assert CutoffSpec.from_dict(CHI.as_dict()) == CHI
    assert CHI(1.0) == pytest.approx(1.0)
    assert CHI(0.5) == 0 and CHI(2.0) == 0


def test_schrodinger_matches_quadrature():
    m = schrodinger_multiplier(CHI, 64.0)
    for s in (0.0, 20.0, 64.0, 90.0, 130.0):
        assert abs(m(s) - schrodinger_value_quad(CHI, 64.0, s)) <= 1e-8 * m.max_abs


def test_schrodinger_evenness_and_peak():
    m = schrodinger_multiplier(CHI, 64.0)
    assert m.even_defect() == 0.0
    s_peak = abs(m.s_grid[np.argmax(np.abs(m.values))])
    assert 0.5 * 64 <= s_peak <= 1.5 * 64
    m.check()


@given(st.floats(8.0, 200.0))
@settings(max_examples=10, deadline=None)
def test_schrodinger_is_even(lam):
    m = schrodinger_multiplier(CHI, lam)
    s = np.linspace(0, 1.5 * lam, 37)
    np.testing.assert_allclose(m(s), m(-s), atol=1e-12 * m.max_abs)


def test_schrodinger_requires_bump():
    with pytest.raises(ValueError):
        schrodinger_multiplier(CutoffSpec.window(), 10.0)
    with pytest.raises(ValueError):
        schrodinger_multiplier(CHI, 0.0)


def test_wave_multiplier_examples():
    m = wave_multiplier(CHI, 20.0, 0.0)
    assert m(20.0) == pytest.approx(1.0)
    assert m(40.0) == 0 and m(5.0) == 0
    w = wave_multiplier(CutoffSpec.window(1.0, 0.2), 20.0, 0.3)
    s = np.linspace(0, 30, 11)
    np.testing.assert_allclose(w(s), w(-s), atol=1e-14)


def test_zero_multiplier_norms():
    z = schrodinger_multiplier(CutoffSpec.bump(0.5, 1.5), 10.0)
    zero = MultiplierGrid(z.s_grid, np.zeros_like(z.values), 1.0, "zero")
    assert sobolev_sloc_norm(zero, 1.0) == 0.0


def test_sobolev_of_fixed_bump():
    rho = CutoffSpec.bump(0.5, 2.0)
    bump = CutoffSpec.bump(0.6, 1.4)
    m = grid_from_function(bump, 5.0, 0.002)
    val = sobolev_sloc_norm(m, 0.0, t_samples=[1.0])
    u = np.linspace(0.5, 2.0, 200001)
    direct = np.sqrt(np.trapezoid((rho(u) * bump(u)) ** 2, u))
    assert abs(val - direct) <= 1e-4 * direct
    fine = sobolev_sloc_norm(m, 0.0, t_samples=[1.0], npts=8192)
    assert abs(val - fine) <= 1e-4 * fine
    with pytest.raises(ValueError):
        sobolev_sloc_norm(m, -1.0)


def test_sobolev_growth_is_scale_invariant():
    vals = []
    lams = [16.0, 64.0, 256.0]
    for lam in lams:
        vals.append(sobolev_sloc_norm(schrodinger_multiplier(CHI, lam), 1.0) / (1 + lam))
    assert max(vals) / min(vals) <= 3


def test_l1_identity_and_gaussian():
    one = grid_from_function(lambda s: np.ones_like(s), 2000.0, 0.5)
    assert euclidean_opnorm_L1(one, 1, 4.0, grid_pts=2048).value == pytest.approx(1.0, rel=0.02)
    gauss = grid_from_function(lambda s: np.exp(-s ** 2), 20.0, 0.01)
    for n in (1, 2):
        # positive kernel: the L1 norm equals the multiplier at the origin
        assert euclidean_opnorm_L1(gauss, n, 20.0).value == pytest.approx(1.0, rel=0.01)


def test_l1_schrodinger_n1():
    m = schrodinger_multiplier(CHI, 256.0)
    r = euclidean_opnorm_L1(m, 1, 2.5)
    assert r.delta <= 0.05
    coarse = euclidean_opnorm_L1(m, 1, 2.5, grid_pts=r.grid_pts // 2 * 2)
    double = euclidean_opnorm_L1(m, 1, 2.5, grid_pts=2 * r.grid_pts)
    assert abs(double.value - coarse.value) <= 0.05 * double.value
    # the kernel is sqrt(lam) chi(|x|) e^{-i lam x^2 / 2} (two half-lines)
    assert r.value == pytest.approx(2 * np.sqrt(256.0) * CHI.integral(), rel=1e-3)


def test_l1_unresolved_grid():
    m = schrodinger_multiplier(CHI, 256.0)
    with pytest.raises(ResolutionError):
        euclidean_opnorm_L1(m, 1, 2.5, grid_pts=64)


def test_grushin_matrix(grushin_eig):
    G, eig = grushin_eig
    assert np.allclose(G.matrix, G.matrix.T)
    assert eig.eigenvalues.min() >= -1e-8 * eig.eigenvalues.max()
    # a y-independent function only sees -d_x^2
    f = np.repeat(np.sin(np.pi * (G.x + 4) / 8)[:, None], G.y.size, axis=1).ravel()
    Lf = G.matrix @ f
    nx = G.x.size
    D = (2 * np.eye(nx) - np.eye(nx, k=1) - np.eye(nx, k=-1)) / G.dx ** 2
    np.testing.assert_allclose(Lf.reshape(G.shape)[:, 0], D @ f.reshape(G.shape)[:, 0], atol=1e-10)
    with pytest.raises(ValueError):
        grushin_operator_matrix(80, 80)


def test_grushin_fiber_eigenvalues():
    G = grushin_operator_matrix(65, 33)
    ev = np.sort(Eigensystem.of(G.matrix).eigenvalues)[:5]
    ref = grushin_fiber_eigenvalues(5)
    np.testing.assert_allclose(ev, ref, rtol=0.05)


def test_spectral_calculus(grushin_eig):
    G, eig = grushin_eig
    rng = np.random.default_rng(0)
    f = rng.normal(size=G.matrix.shape[0])
    np.testing.assert_allclose(apply_multiplier_spectral(eig, lambda s: np.ones_like(s), f), f,
                               atol=1e-10)
    np.testing.assert_allclose(apply_multiplier_spectral(eig, lambda s: s ** 2, f), G.matrix @ f,
                               atol=1e-8 * np.abs(G.matrix @ f).max())
    band = CutoffSpec.bump(4.0, 6.0)
    g = apply_multiplier_spectral(eig, band, f).real
    rq = g @ G.matrix @ g / (g @ g)
    assert 16.0 <= rq <= 36.0
    A = spectral_operator(eig, wave_multiplier(CHI, 10.0, 0.3, s_max=50.0))
    assert abs(matrix_norm_1(A) - matrix_norm_inf(A)) <= 1e-10 * matrix_norm_1(A)


def test_stable_lambda0():
    lams = [2.0 ** k for k in range(6)]
    vals = [1.0, 1.0, 1.0, 2.0, 4.0, 8.0]
    assert stable_lambda0(lams, vals) == 2
    assert stable_lambda0(lams, [2.0 ** k for k in range(6)]) == 0


def test_mh_euclidean_1d():
    r = mh_lowerbound_experiment("euclidean(1)", 1, [2.0 ** k for k in range(4, 11)])
    assert 0.4 <= r.slope <= 0.6 and r.r2 >= 0.95 and r.passed


def test_mh_p2_plancherel():
    r = mh_lowerbound_experiment("euclidean(2)", 2, [16.0, 32.0, 64.0, 128.0])
    assert abs(r.slope) <= 0.05
    assert all(row["value"] <= row["sup_m"] * (1 + 1e-9) for row in r.table)


def test_mp_euclidean_1d():
    r = mp_lowerbound_experiment("euclidean(1)", 1, [2.0 ** k for k in range(4, 11)])
    assert -0.1 <= r.slope <= 0.25


def test_experiment_validation():
    with pytest.raises(ValueError, match="p must be 1 or 2"):
        mh_lowerbound_experiment("euclidean(1)", 3, [2.0 ** k for k in range(4, 11)])
    with pytest.raises(ValueError):
        mh_lowerbound_experiment("euclidean(1)", 1, [16.0, 32.0])
    with pytest.raises(ValueError):
        mh_lowerbound_experiment("euclidean(5)", 1, [2.0 ** k for k in range(4, 11)])
    with pytest.raises(ValueError):
        mp_lowerbound_experiment("euclidean(1)", 1, [2.0 ** k for k in range(4, 11)], t0=0)
