import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mnlbandits.core import ContractError, batch_link_gradient, batch_probabilities, kron
from mnlbandits.design import (DesignError, DistributionalDesign, GOptimalPolicy, MixturePolicy, UniformPolicy,
                               build_scaled_sets, design_matrix, g_optimal, mnl_design_policy, sample_arm,
                               variances)


def unit_rows(rng, n, d):
    x = rng.normal(size=(n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def test_standard_basis_is_uniform():
    for d in (1, 2, 5):
        w = g_optimal(np.eye(d))
        np.testing.assert_allclose(w.weights, 1.0 / d, atol=1e-12)
        assert w.certificate == pytest.approx(d, abs=1e-9)


def test_single_arm():
    w = g_optimal(np.array([[0.3, 0.4]]))
    np.testing.assert_array_equal(w.weights, [1.0])
    assert w.certificate == pytest.approx(1.0)
    assert w.support == [(0, 1.0)]


def test_random_sets_reach_certificate():
    rng = np.random.default_rng(0)
    for _ in range(25):
        arms = unit_rows(rng, 10, 3)
        w = g_optimal(arms, 0.01, 1000)
        assert w.certificate <= 3.03
        assert np.all(w.weights >= 0) and abs(w.weights.sum() - 1) <= 1e-10
        assert np.max(variances(arms, w.weights)) == pytest.approx(w.certificate, rel=1e-8)


def test_rank_deficient_set_uses_span_dimension():
    rng = np.random.default_rng(1)
    basis = unit_rows(rng, 2, 4)
    arms = rng.normal(size=(8, 2)) @ basis
    arms /= np.linalg.norm(arms, axis=1, keepdims=True)
    w = g_optimal(arms, 0.01)
    assert w.rank == 2 and w.certificate <= 2 * 1.01


def test_iteration_cap_raises_with_best_iterate():
    rng = np.random.default_rng(2)
    with pytest.raises(DesignError) as err:
        g_optimal(unit_rows(rng, 40, 6), 1e-9, 2)
    best = err.value.best
    assert abs(best.weights.sum() - 1) <= 1e-10 and best.certificate > 6


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 5), st.integers(1, 15), st.integers(0, 10 ** 6))
def test_certificate_property(d, n, seed):
    arms = unit_rows(np.random.default_rng(seed), n, d)
    w = g_optimal(arms, 0.01, 2000)
    assert w.certificate <= (1 + 0.01) * w.rank + 1e-9
    assert np.all(w.weights >= 0) and abs(w.weights.sum() - 1) <= 1e-10


def test_scaled_sets_decomposition():
    rng = np.random.default_rng(3)
    for _ in range(30):
        K, d = int(rng.integers(1, 4)), int(rng.integers(1, 5))
        x = unit_rows(rng, 1, d) * rng.uniform(0.1, 1)
        theta = rng.normal(size=K * d)
        b = float(rng.uniform(1, 50))
        sets = build_scaled_sets(x, theta, b, K)
        lhs = sum(np.outer(sets[i, 0], sets[i, 0]) for i in range(K))
        z, _ = batch_probabilities(x, theta)
        rhs = kron(batch_link_gradient(z)[0] / b, np.outer(x[0], x[0]))
        assert np.max(np.abs(lhs - rhs)) <= 1e-12
        assert np.all(np.linalg.norm(sets, axis=2) <= 1 + 1e-12)


def test_scaled_sets_hand_example():
    x = np.array([[1.0, 0.0]])
    sets = build_scaled_sets(x, np.zeros(4), 1.0, 2)
    # set i carries column i of A^{1/2} on the first coordinate block
    root = np.stack([sets[0, 0, [0, 2]], sets[1, 0, [0, 2]]], axis=1)
    np.testing.assert_allclose(np.sort(np.linalg.eigvalsh(root)), [np.sqrt(1 / 9), np.sqrt(1 / 3)], atol=1e-12)
    np.testing.assert_allclose(root @ root, [[2 / 9, -1 / 9], [-1 / 9, 2 / 9]], atol=1e-12)
    assert np.max(np.abs(build_scaled_sets(x, np.zeros(4), 1e300, 2))) <= 1e-100


def test_eigenvalue_sum_bound():
    rng = np.random.default_rng(4)
    for _ in range(30):
        K, d = 3, 3
        x = unit_rows(rng, 1, d)
        sets = build_scaled_sets(x, rng.normal(size=K * d), float(rng.uniform(1, 5)), K)
        g = rng.normal(size=(K * d, K * d))
        m = g @ g.T
        xt = sets[:, 0, :].T
        lhs = np.linalg.eigvalsh(xt.T @ m @ xt).max()
        rhs = sum(v @ m @ v for v in sets[:, 0, :])
        assert lhs <= rhs + 1e-9


def test_single_repeated_context_is_near_g_optimal():
    rng = np.random.default_rng(5)
    arms = unit_rows(rng, 7, 3)
    dd = DistributionalDesign([arms] * 4, 0.01, rng)
    w = dd.weights(arms)
    # both branches are eps-optimal designs of the same set, possibly from different Frank-Wolfe starts
    assert np.max(variances(arms, w)) <= 3 * 1.01
    assert np.all(w >= 0.5 * g_optimal(arms, 0.01).weights - 1e-12)


def test_orthogonal_singletons_information():
    K = 4
    sets = [np.eye(K)[i:i + 1] for i in range(K)]
    dd = DistributionalDesign(sets, 0.01, np.random.default_rng(6))
    info = dd.expected_information(sets)
    assert np.linalg.eigvalsh(info - np.eye(K) / (2 * K)).min() >= -1e-12


def test_distributional_weights_dominate_half_g_optimal():
    rng = np.random.default_rng(7)
    samples = [unit_rows(rng, 6, 3) for _ in range(6)]
    dd = DistributionalDesign(samples, 0.01, rng)
    g = GOptimalPolicy(0.01)
    for s in samples + [unit_rows(rng, 5, 3)]:
        w = dd.weights(s)
        assert np.all(w >= 0) and abs(w.sum() - 1) <= 1e-10
        assert np.all(w >= 0.5 * g.weights(s) - 1e-12)


def test_mixture_for_single_outcome():
    rng = np.random.default_rng(8)
    sets = [unit_rows(rng, 5, 2) for _ in range(3)]
    mix = mnl_design_policy(1, sets, np.array([0.5, -0.5]), lambda a: np.ones(len(a)), rng=rng)
    np.testing.assert_allclose(mix.mixing_weights, [0.5, 0.5])
    w = mix.weights(sets[0])
    assert abs(w.sum() - 1) <= 1e-10


def test_mixture_components_and_sampling_membership():
    rng = np.random.default_rng(9)
    sets = [unit_rows(rng, 6, 3) for _ in range(4)]
    mix = mnl_design_policy(2, sets, rng.normal(size=9), lambda a: np.full(len(a), 2.0), rng=rng)
    assert len(mix.components) == 4
    np.testing.assert_allclose(mix.mixing_weights, 0.25)
    for _ in range(50):
        idx = sample_arm(mix, sets[1], rng)
        assert 0 <= idx < 6
    with pytest.raises(ContractError):
        MixturePolicy([(UniformPolicy(), 0.7), (UniformPolicy(), 0.2)])


def test_degenerate_scaled_set_falls_back_to_uniform():
    g = GOptimalPolicy(transform=lambda a: np.zeros_like(a))
    np.testing.assert_allclose(g.weights(np.eye(3)), 1 / 3)


def test_sampling_point_mass_and_frequencies():
    rng = np.random.default_rng(10)

    class PointMass:
        def weights(self, arms):
            w = np.zeros(len(arms))
            w[2] = 1.0
            return w

    arms = np.eye(4)
    assert {sample_arm(PointMass(), arms, rng) for _ in range(200)} == {2}
    draws = np.array([sample_arm(UniformPolicy(), arms, rng) for _ in range(40_000)])
    assert np.max(np.abs(np.bincount(draws, minlength=4) / draws.size - 0.25)) <= 0.02


def test_sampling_reproducible():
    arms = np.eye(5)
    a = [sample_arm(UniformPolicy(), arms, r) for r in [np.random.default_rng(3)] for _ in range(100)]
    b = [sample_arm(UniformPolicy(), arms, r) for r in [np.random.default_rng(3)] for _ in range(100)]
    assert a == b


def test_design_matrix_weighted_sum():
    arms = np.array([[1.0, 0.0], [0.0, 1.0], [0.6, 0.8]])
    w = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(design_matrix(arms, w), sum(wi * np.outer(a, a) for wi, a in zip(w, arms)))
