import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from subwave.flow import (DegenerateCovectorError, exp_A, exp_A_batch, exp_H, flow_batch,
                          hamilton_flow)
from subwave.integrate import dopri5
from subwave.models import register_builtin


def test_euclidean_flow_is_straight(euclid2):
    tr = hamilton_flow(euclid2, ((0, 0), (1, 0)), 1.0)
    np.testing.assert_allclose(tr.states[-1].x, [2, 0], atol=1e-12)
    np.testing.assert_allclose(tr.states[-1].xi, [1, 0], atol=1e-12)


def test_grushin_harmonic_oscillator(grushin):
    tr = hamilton_flow(grushin, ((1, 0), (0, 1)), 1.7, tol=1e-11)
    t = tr.times
    z = tr.array()
    np.testing.assert_allclose(z[:, 0], np.cos(2 * t), atol=1e-8)
    np.testing.assert_allclose(z[:, 1], t + np.sin(4 * t) / 4, atol=1e-8)
    np.testing.assert_allclose(z[:, 2], -np.sin(2 * t), atol=1e-8)
    np.testing.assert_allclose(z[:, 3], 1.0, atol=1e-12)


@pytest.mark.parametrize("theta", [0.0, 0.3, -1.1])
def test_heisenberg_geodesic_matches_closed_form(heis, theta):
    xi = np.array([1.0, 0.0, theta])
    tr = hamilton_flow(heis, (np.zeros(3), xi), 2.0)
    for t, p in zip(tr.times[::8], tr.states[::8]):
        np.testing.assert_allclose(p.x, oracles.heisenberg_exp(xi, t), atol=1e-8)


def test_energy_is_conserved(heis):
    tr = hamilton_flow(heis, ((0.2, -0.1, 0.4), (1, 0.5, 0.3)), 2.0, tol=1e-10)
    assert tr.check_energy()
    assert tr.energy_drift / tr.energy[0] <= 1e-8


def test_exp_H_examples(euclid2, heis):
    x, xi = np.array([0.5, -1.0]), np.array([0.3, 2.0])
    np.testing.assert_allclose(exp_H(euclid2, x, xi), x + 2 * xi, atol=1e-12)
    for s in (0.5, 1.0, 7.0):
        np.testing.assert_allclose(exp_H(heis, np.zeros(3), [0, 0, s]), np.zeros(3), atol=1e-14)


def test_exp_A_examples(euclid2, heis):
    y, xi = np.array([0.5, -1.0]), np.array([3.0, 4.0])
    np.testing.assert_allclose(exp_A(euclid2, y, xi, 0.8), y + 0.8 * xi / 5, atol=1e-12)
    np.testing.assert_allclose(exp_A(heis, [0.1, 0.2, 0.3], [1, 0.5, 0.2], 0.0), [0.1, 0.2, 0.3])
    with pytest.raises(DegenerateCovectorError):
        exp_A(heis, np.zeros(3), [0, 0, 1], 0.5)


@given(st.sampled_from([2.0, 10.0]), st.floats(-0.9, 0.9))
@settings(max_examples=20, deadline=None)
def test_exp_A_is_zero_homogeneous(scale, t):
    heis = register_builtin("heisenberg")
    y, xi = np.array([0.1, -0.3, 0.2]), np.array([0.8, -0.4, 0.5])
    np.testing.assert_allclose(exp_A(heis, y, scale * xi, t), exp_A(heis, y, xi, t), atol=1e-8)


def test_flow_scaling(heis):
    rng = np.random.default_rng(1)
    x, xi, t = rng.normal(size=(5, 3)), rng.normal(size=(5, 3)), rng.uniform(0.2, 1, 5)
    a, _ = flow_batch(heis, x, 2 * xi, t)
    b, _ = flow_batch(heis, x, xi, 2 * t)
    np.testing.assert_allclose(a, b, atol=1e-7)


def test_batch_matches_single_rows(grushin):
    y = np.array([[1.0, 0.0], [1.2, 0.3], [0.8, -0.5]])
    xi = np.array([[0.6, 0.8], [1.0, 0.0], [0.0, 1.0]])
    t = np.array([0.3, -0.5, 0.7])
    batch = exp_A_batch(grushin, y, xi, t)
    for k in range(3):
        np.testing.assert_allclose(batch[k], exp_A(grushin, y[k], xi[k], t[k]), atol=1e-9)


def test_dopri5_exponential():
    sol = dopri5(lambda s, y: -y, 0.0, 2.0, np.array([1.0, 2.0]), rtol=1e-11, atol=1e-12,
                 dense=True)
    np.testing.assert_allclose(sol.y[-1, 0], np.exp(-2) * np.array([1.0, 2.0]), rtol=1e-9)
    s = np.linspace(0, 2, 17)
    np.testing.assert_allclose(sol(s)[:, 0, 0], np.exp(-s), rtol=1e-8)


def test_invalid_tolerance(heis):
    with pytest.raises(ValueError):
        hamilton_flow(heis, (np.zeros(3), np.ones(3)), 1.0, tol=0)
