import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from subwave.models import (CotangentPoint, ModelError, bracket_generating_step, cometric, hamiltonian,
                            hamiltonian_derivs, load_model_file, model_from_dict, register_builtin,
                            resolve_model)

finite = st.floats(-3, 3, allow_nan=False)
vec3 = st.lists(finite, min_size=3, max_size=3).map(np.array)


def test_cometric_examples(euclid2, grushin, heis):
    np.testing.assert_allclose(cometric(euclid2, [0.7, -2.0]), np.eye(2))
    np.testing.assert_allclose(cometric(grushin, [2.0, 5.0]), np.diag([1.0, 4.0]))
    np.testing.assert_allclose(cometric(heis, np.zeros(3)), np.diag([1.0, 1.0, 0.0]))


def test_hamiltonian_examples(euclid2, grushin, heis):
    assert hamiltonian(euclid2, ([0, 0], [3, 4])) == 25.0
    assert hamiltonian(grushin, ([2, 0], [0, 1])) == 4.0
    assert hamiltonian(heis, ([0, 0, 0], [0, 0, 1])) == 0.0


def test_hamiltonian_derivatives(euclid2, grushin):
    xi = np.array([0.3, -1.2])
    dx, dxi, _ = hamiltonian_derivs(euclid2, ([1.0, 2.0], xi))
    np.testing.assert_allclose(dx, 0.0)
    np.testing.assert_allclose(dxi, 2 * xi)
    dx, dxi, _ = hamiltonian_derivs(grushin, ([1.0, 0.0], [0.0, 1.0]))
    np.testing.assert_allclose(dx, [2.0, 0.0])
    np.testing.assert_allclose(dxi, [0.0, 2.0])


def test_central_mode_matches_analytic(heis):
    rng = np.random.default_rng(0)
    central = heis.with_mode("central")
    for _ in range(100):
        x, xi = rng.normal(size=3), rng.normal(size=3)
        a = hamiltonian_derivs(heis, (x, xi))
        b = hamiltonian_derivs(central, (x, xi))
        for u, v in zip(a, b):
            np.testing.assert_allclose(u, v, atol=1e-6)


@given(vec3, vec3)
@settings(max_examples=50, deadline=None)
def test_hamiltonian_is_nonnegative_quadratic(x, xi):
    heis = register_builtin("heisenberg")
    h = hamiltonian(heis, (x, xi))
    assert h >= 0
    assert np.isclose(hamiltonian(heis, (x, 2 * xi)), 4 * h, rtol=1e-12, atol=1e-12)
    C = cometric(heis, x)
    assert np.isclose(h, xi @ C @ xi, rtol=1e-12, atol=1e-12)
    assert np.linalg.eigvalsh(C).min() >= -1e-12 * (1 + np.abs(C).max())


def test_bracket_generating_step(heis):
    assert bracket_generating_step(register_builtin("euclidean(3)"), np.ones(3)) == 1
    assert bracket_generating_step(heis, np.zeros(3)) == 2
    assert bracket_generating_step(register_builtin("grushin"), [0.0, 1.3]) == 2
    assert bracket_generating_step(register_builtin("grushin"), [0.5, 1.3]) == 1
    assert bracket_generating_step(register_builtin("engel"), np.zeros(4)) == 3
    assert bracket_generating_step(heis.with_mode("central"), np.zeros(3)) == 2


def test_unknown_model():
    with pytest.raises(ModelError):
        register_builtin("nope")
    with pytest.raises(ModelError):
        resolve_model("missing-file.toml")


def test_cotangent_point_validates_dimensions():
    with pytest.raises(ValueError):
        CotangentPoint([0.0, 1.0], [1.0])


def test_model_file_roundtrip(tmp_path):
    # the Grushin frame written out by hand
    text = """
[model]
name = "my-grushin"
n = 2
[[model.fields]]
terms = [[1.0, [0, 0], 0]]
[[model.fields]]
terms = [[1.0, [1, 0], 1]]
"""
    path = tmp_path / "m.toml"
    path.write_text(text)
    user = load_model_file(path)
    ref = register_builtin("grushin")
    x, xi = np.array([0.7, -0.2]), np.array([0.4, 1.1])
    assert np.isclose(user.H(x, xi), ref.H(x, xi))
    np.testing.assert_allclose(user.jac(x), ref.jac(x))
    assert resolve_model(str(path)).name == "my-grushin"
    with pytest.raises(ModelError):
        model_from_dict({"n": 2, "fields": []})
