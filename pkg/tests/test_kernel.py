import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from coopkernel.kernel import (
    IdentityKernel,
    KernelSpec,
    LinearKernel,
    OnesKernel,
    RBFKernel,
    TableKernel,
    block_task_table,
    build_weighted_gram,
    eval_kernel,
    make_arms,
    make_base_kernel,
    precision_matrix,
    psd_factor,
    regularized_pair_norm_sq,
    spd_cholesky,
    weighted_kernel_vector,
)
from coopkernel.validation import ConfigurationError, PreconditionError

from conftest import dense_precision, explicit_problem


def identity_figure_arms():
    # two agents, three items; agent 0 has items {0, 1}, agent 1 has items {1, 2}
    e = np.eye(3)
    return make_arms([e[[0, 1]], e[[1, 2]]], [[0], [1]])


def test_shared_item_has_unit_kernel_and_disjoint_items_zero():
    arms = identity_figure_arms()
    spec = KernelSpec(LinearKernel())
    assert eval_kernel(spec, arms[1], arms[2]) == 1.0
    assert eval_kernel(spec, arms[0], arms[3]) == 0.0


def test_ones_task_kernel_reduces_to_arm_kernel(rng):
    X = rng.standard_normal((4, 3))
    arms = make_arms([X, X], [[0], [1]])
    assert np.allclose(KernelSpec(LinearKernel()).gram(arms), np.tile(X @ X.T, (2, 2)))


def test_product_value_by_hand():
    arms = make_arms([[[1.0, 2.0]], [[3.0, -1.0]]], [[0], [1]])
    spec = KernelSpec(LinearKernel(), TableKernel([[2.0, 2.0], [2.0, 2.0]]))
    assert eval_kernel(spec, arms[0], arms[1]) == pytest.approx(2.0)


def test_eval_kernel_rejects_dimension_mismatch():
    a = make_arms([[[1.0, 2.0]]], [[0]])[0]
    b = make_arms([[[1.0, 2.0, 3.0]]], [[0]])[0]
    with pytest.raises(ConfigurationError):
        eval_kernel(KernelSpec(LinearKernel()), a, b)


def test_global_index_flattening():
    arms = make_arms([np.zeros((3, 2))] * 4, [[v] for v in range(4)])
    assert all(a.global_index == a.agent * 3 + a.local_index for a in arms)


def test_weighted_gram_zero_weights_and_diagonal_counts():
    e = np.eye(4)
    arms = make_arms([e], [[0]])
    spec = KernelSpec(LinearKernel())
    assert np.all(build_weighted_gram(spec, arms, np.zeros(4)).matrix == 0)
    counts = np.array([3.0, 0.0, 5.0, 1.0])
    assert np.allclose(build_weighted_gram(spec, arms, counts).matrix, np.diag(counts))


def test_weighted_gram_matches_explicit_features(rng):
    spec, arms = explicit_problem(rng, V=1, n=3, d=4)
    w = np.array([1.0, 2.0, 3.0])
    Phi = np.sqrt(w)[:, None] * spec.features(arms)
    assert np.allclose(build_weighted_gram(spec, arms, w).matrix, Phi @ Phi.T, atol=1e-10)


def test_weighted_gram_rejects_negative_weight(rng):
    spec, arms = explicit_problem(rng, V=1, n=3)
    with pytest.raises(PreconditionError):
        build_weighted_gram(spec, arms, [1.0, -1.0, 0.5])


def test_zero_weight_rows_are_exactly_zero(rng):
    spec, arms = explicit_problem(rng, V=2, n=3)
    w = rng.uniform(size=6)
    w[[1, 4]] = 0
    M = build_weighted_gram(spec, arms, w).matrix
    assert np.all(M[[1, 4]] == 0) and np.all(M[:, [1, 4]] == 0)


def test_kernel_vector_uniform_and_explicit(rng):
    spec, arms = explicit_problem(rng, V=2, n=4)
    m = len(arms)
    q = arms[3]
    uni = weighted_kernel_vector(spec, arms, np.full(m, 1 / m), q)
    assert np.allclose(uni, spec.gram([q], arms)[0] / np.sqrt(m))
    lam = rng.dirichlet(np.ones(m))
    Phi = spec.features(arms)
    want = np.sqrt(lam)[:, None] * Phi @ Phi[3]
    assert np.allclose(weighted_kernel_vector(spec, arms, lam, q), want, atol=1e-10)


def test_kernel_vector_orthogonal_query():
    e = np.eye(3)
    arms = make_arms([e[:2]], [[0]])
    query = make_arms([e[2:]], [[0]])[0]
    assert np.all(weighted_kernel_vector(KernelSpec(LinearKernel()), arms, [0.5, 0.5], query) == 0)


def test_pair_norm_same_arm_is_zero(rng):
    spec, arms = explicit_problem(rng)
    lam = np.full(len(arms), 1 / len(arms))
    assert regularized_pair_norm_sq(spec, arms, lam, 0.3, arms[0], arms[0]) == 0.0


def test_pair_norm_three_basis_arms_dense_oracle():
    arms = make_arms([np.eye(3)], [[0]])
    spec = KernelSpec(LinearKernel())
    lam = np.full(3, 1 / 3)
    got = regularized_pair_norm_sq(spec, arms, lam, 0.1, arms[0], arms[2])
    # diagonal design: (1/(0.1 + 1/3)) for each coordinate
    assert got == pytest.approx(2.0 / (0.1 + 1 / 3), rel=1e-8)


def test_pair_norm_monotone_in_xi_and_vanishes(rng):
    spec, arms = explicit_problem(rng, V=2, n=3)
    lam = rng.dirichlet(np.ones(6))
    vals = [regularized_pair_norm_sq(spec, arms, lam, xi, arms[0], arms[2])
            for xi in np.geomspace(1e-3, 1e6, 20)]
    assert all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-4


@given(st.integers(0, 2 ** 31 - 1))
def test_pair_norm_matches_explicit_quadratic_form(seed):
    rng = np.random.default_rng(seed)
    spec, arms = explicit_problem(rng)
    Phi = spec.features(arms)
    lam = rng.dirichlet(np.ones(len(arms)))
    xi = float(rng.uniform(0.05, 2.0))
    i, j = rng.choice(len(arms), 2, replace=False)
    diff = Phi[i] - Phi[j]
    want = diff @ dense_precision(Phi, lam, xi) @ diff
    got = regularized_pair_norm_sq(spec, arms, lam, xi, arms[i], arms[j])
    assert got == pytest.approx(want, rel=1e-8, abs=1e-12)


@given(st.integers(0, 2 ** 31 - 1))
def test_precision_matrix_equals_feature_space_form(seed):
    rng = np.random.default_rng(seed)
    spec, arms = explicit_problem(rng)
    Phi = spec.features(arms)
    lam = rng.dirichlet(np.ones(len(arms)))
    xi = float(rng.uniform(0.05, 2.0))
    want = Phi @ dense_precision(Phi, lam, xi) @ Phi.T
    got = precision_matrix(spec.gram(arms), lam, xi)
    assert np.allclose(got, want, rtol=1e-8, atol=1e-10 * np.abs(want).max())


@given(st.integers(0, 2 ** 31 - 1))
def test_weighted_gram_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    spec, arms = explicit_problem(rng)
    M = build_weighted_gram(spec, arms, rng.uniform(0, 5, len(arms))).matrix
    assert np.max(np.abs(M - M.T)) <= 1e-12 * max(1.0, np.abs(M).max())
    assert np.linalg.eigvalsh(M).min() >= -1e-9 * max(np.trace(M), 1.0)


@given(st.integers(0, 2 ** 31 - 1))
def test_composite_rank_bounded_by_product(seed):
    rng = np.random.default_rng(seed)
    spec, arms = explicit_problem(rng)
    X = np.vstack([a.arm_feature for a in arms])
    V = arms[-1].agent + 1
    Kz = spec.task_kernel.table

    def rank(M):
        s = np.linalg.svd(M, compute_uv=False)
        return int(np.sum(s > 1e-8 * max(s[0], 1e-300)))

    assert rank(spec.gram(arms)) <= rank(Kz[:V, :V]) * rank(X @ X.T)


def test_base_kernels():
    A = np.array([[0.0, 0.0], [1.0, 0.0]])
    assert np.allclose(RBFKernel(1.0)(A, A), [[1, np.exp(-0.5)], [np.exp(-0.5), 1]])
    assert np.allclose(OnesKernel()(A, A), 1)
    keys = np.array([[0.0], [1.0], [0.0]])
    assert np.allclose(IdentityKernel()(keys, keys), [[1, 0, 1], [0, 1, 0], [1, 0, 1]])
    assert isinstance(make_base_kernel("rbf", bandwidth=2.0), RBFKernel)
    with pytest.raises(ConfigurationError):
        make_base_kernel("poly")
    with pytest.raises(ConfigurationError):
        TableKernel([[1, 0, 0], [0, 1, 0]])
    with pytest.raises(ConfigurationError):
        TableKernel(np.eye(2))(np.array([[2.0]]), np.array([[0.0]]))


def test_block_table():
    T = block_task_table(4, 2, 0.25)
    assert np.array_equal(T, [[1, 1, .25, .25], [1, 1, .25, .25], [.25, .25, 1, 1], [.25, .25, 1, 1]])
    with pytest.raises(ConfigurationError):
        block_task_table(3, 4)


def test_psd_factor_reproduces_gram(rng):
    A = rng.standard_normal((5, 2))
    F = psd_factor(A @ A.T)
    assert F.shape == (5, 2)
    assert np.allclose(F @ F.T, A @ A.T)


def test_cholesky_jitter_rescues_singular_matrix():
    M = np.ones((3, 3))
    c, lower = spd_cholesky(M)
    assert np.all(np.isfinite(c))
