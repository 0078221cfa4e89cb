import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dbo_lab import kernels
from dbo_lab.errors import ParameterError, ShapeError, TopologyError, ValidationError
from dbo_lab.mixing import (build_ring_mixing, complete_mixing, gossip, load_mixing, mixing_matrix,
                            rho_power_iteration, save_mixing, single_agent, validate_mixing)


def circulant_rho(n, w):
    lam = [w + (1 - w) * np.cos(2 * np.pi * k / n) for k in range(1, n)]
    return max(abs(v) for v in lam)


def test_ring_entries():
    W = build_ring_mixing(8, 0.4).weights
    assert np.all(np.diag(W) == 0.4)
    for i in range(8):
        assert W[i, (i + 1) % 8] == 0.3 and W[i, (i - 1) % 8] == 0.3
    mask = np.zeros((8, 8), dtype=bool)
    for i in range(8):
        mask[i, [i, (i + 1) % 8, (i - 1) % 8]] = True
    assert np.all(W[~mask] == 0.0)


def test_ring_rho_closed_form():
    W = build_ring_mixing(8, 0.4)
    assert W.rho == pytest.approx(0.4 + 0.6 * np.cos(np.pi / 4), abs=1e-12)
    assert W.rho == pytest.approx(0.824264, abs=1e-6)


def test_ring_three_uniform():
    W = build_ring_mixing(3, 1 / 3)
    np.testing.assert_allclose(W.weights, np.full((3, 3), 1 / 3), atol=1e-15)
    assert W.rho == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_ring_too_small(n):
    with pytest.raises(TopologyError):
        build_ring_mixing(n, 0.4)


@pytest.mark.parametrize("w", [0.0, 1.0, -0.2, 1.5])
def test_ring_bad_weight(w):
    with pytest.raises(ParameterError):
        build_ring_mixing(5, w)


@pytest.mark.parametrize("n,w", [(3, 0.2), (5, 0.4), (8, 0.4), (16, 0.7), (31, 0.5)])
def test_power_iteration_matches_closed_form(n, w):
    W = build_ring_mixing(n, w)
    assert rho_power_iteration(W.weights) == pytest.approx(circulant_rho(n, w), abs=1e-10)
    assert W.rho == pytest.approx(circulant_rho(n, w), abs=1e-12)


def test_identity_rejected():
    with pytest.raises(ValidationError) as exc:
        validate_mixing(np.eye(4))
    assert exc.value.prop == "spectral-gap"


def test_uniform_rho_zero():
    assert validate_mixing(np.full((5, 5), 0.2)) == pytest.approx(0.0, abs=1e-12)
    assert complete_mixing(5).rho == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("mat,prop", [
    (np.array([[0.5, 0.5], [0.4, 0.6]]), "symmetry"),
    (np.array([[1.2, -0.2], [-0.2, 1.2]]), "nonnegativity"),
    (np.array([[0.5, 0.4], [0.4, 0.5]]), "row-sum"),
    (np.array([[0.5, np.nan], [np.nan, 0.5]]), "finite"),
])
def test_validation_names_property(mat, prop):
    with pytest.raises(ValidationError) as exc:
        validate_mixing(mat)
    assert exc.value.prop == prop


def test_non_square():
    with pytest.raises(ShapeError):
        validate_mixing(np.ones((2, 3)) / 3)


def test_row_sum_tolerance_is_tight():
    W = build_ring_mixing(4, 0.5).weights.copy()
    W[0, 0] += 1e-11
    W[1, 1] -= 1e-11
    with pytest.raises(ValidationError):
        validate_mixing(W)


def test_single_agent():
    W = single_agent()
    assert W.n == 1 and W.rho == 0.0
    np.testing.assert_array_equal(gossip(W, np.array([[1.5, -2.0]])), [[1.5, -2.0]])


def test_neighbors():
    W = build_ring_mixing(6, 0.4)
    assert W.neighbors(0) == [1, 5]
    assert W.neighbors(3) == [2, 4]


def test_immutable():
    W = build_ring_mixing(5, 0.4)
    with pytest.raises(ValueError):
        W.weights[0, 0] = 1.0


def test_consensus_fixed(rng):
    W = build_ring_mixing(8, 0.4)
    Z = np.tile(rng.standard_normal(7), (8, 1))
    np.testing.assert_allclose(gossip(W, Z), Z, rtol=0, atol=1e-15)


def test_uniform_single_row():
    W = complete_mixing(4)
    Z = np.zeros((4, 3))
    Z[0] = [4.0, -8.0, 2.0]
    np.testing.assert_allclose(gossip(W, Z), np.tile([1.0, -2.0, 0.5], (4, 1)), atol=1e-15)


def test_gossip_shape_error():
    with pytest.raises(ShapeError):
        gossip(build_ring_mixing(5, 0.4), np.zeros((4, 2)))


def test_gossip_vector_input(rng):
    W = build_ring_mixing(5, 0.4)
    z = rng.standard_normal(5)
    np.testing.assert_allclose(gossip(W, z), W.weights @ z, atol=1e-14)


def _random_doubly_stochastic(rng, n):
    # convex combination of symmetrised permutation matrices plus identity
    W = 0.3 * np.eye(n)
    for c in rng.dirichlet(np.ones(3)) * 0.7:
        P = np.eye(n)[rng.permutation(n)]
        W += c * 0.5 * (P + P.T)
    return W


@pytest.mark.parametrize("backend", kernels.available())
def test_contraction_and_mean(rng, backend):
    W = build_ring_mixing(8, 0.4)
    for _ in range(100):
        Z = rng.standard_normal((8, rng.integers(1, 12))) * rng.uniform(0.1, 100)
        zbar = Z.mean(axis=0)
        out = gossip(W, Z, backend=backend)
        assert np.sum(out**2) <= np.sum(Z**2) * (1 + 1e-14)
        assert np.linalg.norm(out - zbar) <= W.rho * np.linalg.norm(Z - zbar) * (1 + 1e-12)
        np.testing.assert_allclose(out.mean(axis=0), zbar, rtol=0, atol=1e-12 * max(1, np.abs(Z).max()))


def test_deterministic_matches_dense(rng):
    W = mixing_matrix(_random_doubly_stochastic(rng, 7))
    Z = rng.standard_normal((7, 4))
    np.testing.assert_allclose(gossip(W, Z), gossip(W, Z, deterministic=False), atol=1e-14)


@settings(max_examples=60, deadline=None)
@given(n=st.integers(3, 24), w=st.floats(0.01, 0.99), seed=st.integers(0, 2**31))
def test_contraction_random_rings(n, w, seed):
    W = build_ring_mixing(n, w)
    Z = np.random.default_rng(seed).standard_normal((n, 3))
    zbar = Z.mean(axis=0)
    lhs = np.linalg.norm(gossip(W, Z) - zbar)
    assert lhs <= W.rho * np.linalg.norm(Z - zbar) * (1 + 1e-10) + 1e-14


def test_file_roundtrip(tmp_path, rng):
    W = mixing_matrix(_random_doubly_stochastic(rng, 6))
    path = tmp_path / "w.txt"
    save_mixing(path, W)
    W2 = load_mixing(path)
    np.testing.assert_array_equal(W.weights, W2.weights)
    assert W2.rho == W.rho


def test_file_bad_shape(tmp_path):
    path = tmp_path / "w.txt"
    path.write_text("0.5 0.5\n0.5\n")
    with pytest.raises(ShapeError):
        load_mixing(path)
