import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import oracles
from subwave.flow import exp_H
from subwave.models import InvariantViolation, register_builtin
from subwave.varjac import (conjugate_scan, dexp_A_fd, dexp_H, numerical_rank, rank_reduction_check,
                            re_witness, vertical_kernel_basis)


def test_numerical_rank_examples():
    assert numerical_rank(2 * np.eye(3)).numerical_rank == 3
    assert numerical_rank(np.diag([1.0, 1e-12])).numerical_rank == 1
    assert numerical_rank(np.zeros((3, 3))).numerical_rank == 0
    with pytest.raises(ValueError):
        numerical_rank([[np.nan]])


@given(st.integers(1, 4), st.integers(0, 2**31))
@settings(max_examples=25, deadline=None)
def test_rank_of_random_low_rank_product(k, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(5, k)) @ rng.normal(size=(k, 5))
    assert numerical_rank(M).numerical_rank == k


def test_euclidean_dexp_is_twice_identity():
    e3 = register_builtin("euclidean(3)")
    np.testing.assert_allclose(dexp_H(e3, [1, 2, 3], [0.1, -0.4, 2]), 2 * np.eye(3), atol=1e-12)


def test_heisenberg_variational_matches_differences(heis):
    xi = 0.5 * np.array([1.0, 0.0, 0.2])
    D = dexp_H(heis, np.zeros(3), xi)
    h = 1e-6
    fd = np.column_stack([(exp_H(heis, np.zeros(3), xi + h * e) - exp_H(heis, np.zeros(3), xi - h * e))
                          / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(D, fd, atol=1e-5)
    closed = np.column_stack([(oracles.heisenberg_exp(xi + h * e) - oracles.heisenberg_exp(xi - h * e))
                              / (2 * h) for e in np.eye(3)])
    np.testing.assert_allclose(D, closed, atol=1e-5)


def test_characteristic_covector_is_degenerate(heis):
    assert numerical_rank(dexp_H(heis, np.zeros(3), [0, 0, 0.7])).numerical_rank < 3


def test_euclidean_scan_has_no_conjugate_points(euclid2):
    scan = conjugate_scan(euclid2, np.zeros(2), [1.0, 0.5], -1.0, 1.0, 101)
    assert scan.roots == []
    assert np.isclose(scan.min_abs_det, 4.0)


@pytest.mark.parametrize("theta", [0.5, 1.3])
def test_heisenberg_first_conjugate_point(heis, theta):
    xi = np.array([1.0, 0.0, theta])
    ref = oracles.heisenberg_first_conjugate(xi)
    assert np.isclose(ref * 2 * theta, oracles.heisenberg_conjugate_phase(), rtol=1e-8)
    scan = conjugate_scan(heis, np.zeros(3), xi, 0.2 * ref, 1.2 * ref, 200)
    assert abs(scan.roots[0] - ref) <= 1e-4


def test_re_witness(heis):
    wit = re_witness(heis, np.zeros(3), [1.0, 0.0, 0.5])
    assert wit["sign_changes"] == []
    assert wit["min_abs_det"] >= 1e-4 * wit["max_abs_det"]


def test_scan_arguments(heis):
    with pytest.raises(ValueError):
        conjugate_scan(heis, np.zeros(3), [1, 0, 0], 1.0, 0.5)


def test_rank_reduction_examples(euclid2, heis):
    rc = rank_reduction_check(euclid2, [0.3, 0.1], [1.0, 0.0], 0.5)
    assert rc.rank_full.numerical_rank == rc.rank_restricted.numerical_rank == 1
    rc = rank_reduction_check(heis, np.zeros(3), [1.0, 0.0, 0.3], 0.4)
    assert rc.agree and rc.rank_full.numerical_rank == 2
    sv1 = rc.rank_full.singular_values[0]
    D = dexp_A_fd(heis, np.zeros(3), [1.0, 0.0, 0.3], 0.4)
    assert np.linalg.norm(D @ [1.0, 0.0, 0.3]) <= 1e-5 * sv1 * np.linalg.norm([1.0, 0.0, 0.3])
    with pytest.raises(ValueError):
        rank_reduction_check(heis, np.zeros(3), [1.0, 0.0, 0.3], 0.0)


def test_vertical_kernel(heis):
    y, eta = np.array([0.2, -0.1, 0.0]), np.array([0.5, 1.0, 0.3])
    B = vertical_kernel_basis(heis, y, eta)
    np.testing.assert_allclose(B.T @ B, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(B.T @ heis.cometric(y) @ eta, 0.0, atol=1e-12)
    with pytest.raises(InvariantViolation):
        vertical_kernel_basis(heis, np.zeros(3), [0, 0, 1.0])
