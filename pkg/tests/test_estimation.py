import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from sklearn.base import clone

from coopkernel.estimation import (
    CountWeightedKernelRidge,
    ObservationSummary,
    estimate_gap,
    estimate_reward,
    fit,
    merge_summaries,
)
from coopkernel.kernel import KernelSpec, LinearKernel, make_arms
from coopkernel.validation import PreconditionError

from conftest import explicit_problem


def primal_theta(Phi, counts, means, xi):
    """theta = (N xi I + sum_i N_i phi_i phi_i^T)^{-1} sum_i N_i ybar_i phi_i."""
    N = counts.sum()
    A = N * xi * np.eye(Phi.shape[1]) + (Phi * counts[:, None]).T @ Phi
    return np.linalg.solve(A, Phi.T @ (counts * means))


@given(st.integers(0, 2 ** 31 - 1))
def test_dual_estimator_matches_primal_oracle(seed):
    rng = np.random.default_rng(seed)
    spec, arms = explicit_problem(rng)
    Phi = spec.features(arms)
    counts = rng.integers(0, 6, len(arms))
    counts[0] += 1
    means = rng.standard_normal(len(arms))
    xi = float(rng.uniform(1e-3, 1.0))
    est = fit(spec, arms, ObservationSummary(counts, means), counts.sum(), xi)
    theta = primal_theta(Phi, counts, means, xi)
    want = Phi @ theta
    got = est.rewards()
    scale = max(1.0, np.abs(want).max())
    assert np.abs(got - want).max() <= 1e-8 * scale
    i, j = 0, len(arms) - 1
    assert estimate_gap(est, arms[i], arms[j]) == pytest.approx(want[i] - want[j], abs=1e-8 * scale)
    assert estimate_reward(est, arms[i]) == pytest.approx(want[i], abs=1e-8 * scale)


def test_gap_of_arm_with_itself_is_zero(rng):
    spec, arms = explicit_problem(rng)
    s = ObservationSummary(np.ones(len(arms), int), rng.standard_normal(len(arms)))
    est = fit(spec, arms, s, s.total, 0.1)
    assert estimate_gap(est, arms[2], arms[2]) == 0.0


def test_ridge_shrinks_single_orthonormal_arm():
    arms = make_arms([np.eye(2)], [[0]])
    spec = KernelSpec(LinearKernel())
    s = ObservationSummary([4, 0], [1.0, 0.0])
    est = fit(spec, arms, s, 4, 0.5)
    # theta_1 = 4 * 1 / (4 * 0.5 + 4)
    assert est.rewards() == pytest.approx([4 / 6, 0.0])


def test_empty_summary_gives_zero_estimate(rng):
    spec, arms = explicit_problem(rng)
    est = fit(spec, arms, ObservationSummary.empty(len(arms)), 0, 0.1)
    assert np.all(est.rewards() == 0)


def test_total_mismatch_is_rejected(rng):
    spec, arms = explicit_problem(rng)
    with pytest.raises(PreconditionError):
        fit(spec, arms, ObservationSummary(np.ones(len(arms), int), np.zeros(len(arms))), 1, 0.1)


def _random_summary(rng, m):
    counts = rng.integers(0, 5, m)
    return ObservationSummary(counts, rng.standard_normal(m))


@given(st.integers(0, 2 ** 31 - 1))
def test_merge_is_associative_and_commutative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_summary(rng, 6) for _ in range(3))
    left = a.merge(b).merge(c)
    right = a.merge(b.merge(c))
    assert np.array_equal(left.counts, right.counts)
    assert np.allclose(left.means, right.means, atol=1e-12)
    ab, ba = a.merge(b), b.merge(a)
    assert np.array_equal(ab.counts, ba.counts) and np.allclose(ab.means, ba.means, atol=1e-12)


def test_merge_pools_raw_samples():
    raw = [[1.0, 2.0], [], [5.0]]
    other = [[3.0], [4.0, 6.0], []]
    s1 = ObservationSummary([len(r) for r in raw], [np.mean(r) if r else 0 for r in raw])
    s2 = ObservationSummary([len(r) for r in other], [np.mean(r) if r else 0 for r in other])
    m = merge_summaries([s1, s2])
    assert list(m.counts) == [3, 2, 1]
    assert np.allclose(m.means, [2.0, 5.0, 5.0])


def test_summary_validation():
    with pytest.raises(PreconditionError):
        ObservationSummary([1, -1], [0.0, 0.0])
    with pytest.raises(PreconditionError):
        ObservationSummary([1, 1], [0.0])
    with pytest.raises(PreconditionError):
        ObservationSummary.empty(2).merge(ObservationSummary.empty(3))


def test_refit_is_reproducible(rng):
    spec, arms = explicit_problem(rng)
    s = _random_summary(rng, len(arms))
    if s.total == 0:
        s = ObservationSummary(np.ones(len(arms), int), s.means)
    a = fit(spec, arms, s, s.total, 0.05).rewards()
    b = fit(spec, arms, s, s.total, 0.05).rewards()
    assert np.array_equal(a, b)


def test_sklearn_regressor_round_trip(rng):
    spec, arms = explicit_problem(rng)
    Phi = spec.features(arms)
    counts = rng.integers(1, 5, len(arms))
    y = rng.standard_normal(len(arms))
    model = CountWeightedKernelRidge(spec=spec, xi=0.1).fit(arms, y, sample_weight=counts)
    want = Phi @ primal_theta(Phi, counts, y, 0.1)
    assert np.allclose(model.predict(arms), want, atol=1e-8)
    assert model.n_samples_seen_ == counts.sum()
    params = clone(model).get_params()
    assert params["xi"] == 0.1 and type(params["spec"]) is type(spec)


def test_sklearn_regressor_rejects_fractional_weights(rng):
    spec, arms = explicit_problem(rng)
    with pytest.raises(PreconditionError):
        CountWeightedKernelRidge(spec=spec).fit(arms, np.zeros(len(arms)),
                                                sample_weight=np.full(len(arms), 0.5))


@pytest.mark.parametrize("regime", ["ones", "identity"])
def test_zero_noise_gap_bias_is_bounded(regime):
    from coopkernel.algorithms import FCConfig, fc_phase_samples
    from coopkernel.design import find_xi_fc, round_allocation, solve_min_max
    from coopkernel.protocol import InstanceConfig, generate_instance

    problem = generate_instance(InstanceConfig(task_regime=regime, noise_std=0.0))
    B, eps = problem.theta_norm, 0.1
    sets = [problem.agent_indices(v) for v in range(problem.V)]
    for t in range(1, 5):
        xi = find_xi_fc(problem.spec, problem.arms, t, B, eps)
        design = solve_min_max(problem.spec, problem.arms, sets, xi)
        N = fc_phase_samples(t, design.value, eps, problem.n, problem.V, FCConfig().delta)
        counts = round_allocation(problem.spec, problem.arms, sets, design.allocation, N,
                                  xi, eps).counts
        est = fit(problem.spec, problem.arms, ObservationSummary(counts, problem.means), N, xi)
        f_hat = est.rewards()
        for members in sets:
            for i in members:
                for j in members:
                    err = abs((f_hat[i] - f_hat[j]) - (problem.means[i] - problem.means[j]))
                    assert err <= 2.0 ** (-(t + 1))


def test_vanishing_regularization_recovers_rewards(rng):
    spec, arms = explicit_problem(rng, V=2, n=5, d=3)
    Phi = spec.features(arms)
    theta = rng.standard_normal(Phi.shape[1])
    means = Phi @ theta
    counts = np.full(len(arms), 3)
    est = fit(spec, arms, ObservationSummary(counts, means), counts.sum(), 1e-8)
    assert np.abs(est.rewards() - means).max() < 1e-4
