"""Oracle-equivalence checks run by ``coopkernel verify``.

Every check compares a kernel-trick computation with a direct one (explicit
feature vectors, dense inverses, grid search, Monte Carlo) and reports the
worst error against its tolerance.
"""

import itertools
from dataclasses import dataclass

import numpy as np

from .design import (
    SolverOptions,
    minmax_from_gram,
    objective_gradient,
    project_to_simplex,
    round_allocation,
    within_set_pairs,
)
from .diagnostics import max_information_gain, rank_decomposition
from .estimation import ObservationSummary, fit
from .kernel import (
    KernelSpec,
    LinearKernel,
    TableKernel,
    make_arms,
    product_feature_map,
    psd_factor,
    regularized_pair_norm_sq,
)
from .protocol import InstanceConfig, agent_streams, generate_instance, paper_grid_arms


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self):
        return bool(np.isfinite(self.error) and self.error <= self.tolerance)

    def line(self):
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} {self.name:<34} err={self.error:.3e} tol={self.tolerance:.1e}"


def random_explicit_instance(rng, max_arms=30, max_dim=10):
    """Random product-kernel problem with an explicit feature map."""
    V = int(rng.integers(1, 4))
    n = int(rng.integers(2, max_arms // V + 1))
    d = int(rng.integers(1, max_dim + 1))
    r = int(rng.integers(1, V + 1))
    A = rng.standard_normal((V, r))
    Kz = A @ A.T
    arms = make_arms([rng.standard_normal((n, d)) for _ in range(V)], [[v] for v in range(V)])
    spec = KernelSpec(LinearKernel(), TableKernel(Kz), product_feature_map(psd_factor(Kz)))
    return spec, arms, V, n


def _rel(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    scale = max(float(np.max(np.abs(b))), 1e-300)
    return float(np.max(np.abs(a - b)) / scale)


def _A_inv(Phi, lam, xi):
    D = Phi.shape[1]
    return np.linalg.inv(xi * np.eye(D) + Phi.T @ (lam[:, None] * Phi))


def check_pair_norms(rng, trials):
    worst = 0.0
    for _ in range(trials):
        spec, arms, V, n = random_explicit_instance(rng)
        Phi = spec.features(arms)
        lam = rng.dirichlet(np.ones(len(arms)))
        xi = float(rng.uniform(0.05, 1.0))
        Ainv = _A_inv(Phi, lam, xi)
        i, j = rng.choice(len(arms), 2, replace=False)
        diff = Phi[i] - Phi[j]
        got = regularized_pair_norm_sq(spec, arms, lam, xi, arms[i], arms[j])
        worst = max(worst, _rel(got, diff @ Ainv @ diff))
    return worst


def check_gradients(rng, trials):
    worst = 0.0
    for _ in range(trials):
        spec, arms, V, n = random_explicit_instance(rng)
        Phi = spec.features(arms)
        lam = rng.dirichlet(np.ones(len(arms)))
        xi = float(rng.uniform(0.05, 1.0))
        i, j = rng.choice(len(arms), 2, replace=False)
        Ainv = _A_inv(Phi, lam, xi)
        want = -((Phi[i] - Phi[j]) @ Ainv @ Phi.T) ** 2
        got = objective_gradient(spec, arms, (arms[i], arms[j]), lam, xi)
        worst = max(worst, _rel(got, want))
    return worst


def check_estimator(rng, trials):
    worst = 0.0
    for _ in range(trials):
        spec, arms, V, n = random_explicit_instance(rng)
        Phi = spec.features(arms)
        counts = rng.integers(0, 20, len(arms))
        counts[0] = max(counts[0], 1)
        means = rng.standard_normal(len(arms))
        summary = ObservationSummary(counts, means)
        N = summary.total
        xi = float(rng.uniform(0.05, 1.0))
        D = Phi.shape[1]
        M = N * xi * np.eye(D) + Phi.T @ (counts[:, None] * Phi)
        theta = np.linalg.solve(M, Phi.T @ (counts * summary.means))
        got = fit(spec, arms, summary, N, xi).rewards()
        worst = max(worst, _rel(got, Phi @ theta))
    return worst


def check_finite_differences(rng, trials):
    worst = 0.0
    for _ in range(trials):
        spec, arms, V, n = random_explicit_instance(rng, max_arms=10, max_dim=5)
        G = spec.gram(arms)
        m = len(arms)
        xi = 0.5
        lam = rng.dirichlet(np.ones(m))
        groups = [list(range(v * n, (v + 1) * n)) for v in range(V)]
        rows, cols = within_set_pairs(groups)
        from .kernel import pair_norms_sq, precision_matrix

        def h(l):
            return pair_norms_sq(precision_matrix(G, l, xi), rows, cols)

        vals = h(lam)
        p = int(np.argmax(vals))
        if np.sort(vals)[-2:][0] > vals[p] * (1 - 1e-3) and vals.size > 1:
            continue  # too close to an argmax switch
        g = objective_gradient(spec, arms, (arms[rows[p]], arms[cols[p]]), lam, xi, gram=G)
        direction = rng.standard_normal(m)
        direction -= direction.mean()
        step = 1e-6
        fd = (h(lam + step * direction)[p] - h(lam - step * direction)[p]) / (2 * step)
        worst = max(worst, abs(fd - g @ direction) / max(abs(g @ direction), 1e-12))
    return worst


def _project_oracle(v):
    """Projection by bisection on the threshold of ``max(v - tau, 0)``."""
    lo, hi = v.min() - 1.0, v.max()
    for _ in range(200):
        mid = (lo + hi) / 2
        if np.maximum(v - mid, 0).sum() > 1:
            lo = mid
        else:
            hi = mid
    return np.maximum(v - (lo + hi) / 2, 0)


def check_projection(rng, trials):
    worst = 0.0
    for _ in range(trials):
        v = rng.standard_normal(5) * 2
        worst = max(worst, float(np.max(np.abs(project_to_simplex(v) - _project_oracle(v)))))
    return worst


def grid_minmax(gram, rows, cols, xi, resolution=40):
    """Best value over the simplex grid with spacing ``1/resolution``."""
    from .kernel import pair_norms_sq, precision_matrix
    m = gram.shape[0]
    best = np.inf
    for comp in itertools.combinations(range(resolution + m - 1), m - 1):
        parts = np.diff(np.concatenate([[-1], comp, [resolution + m - 1]])) - 1
        lam = parts / resolution
        best = min(best, float(np.max(pair_norms_sq(precision_matrix(gram, lam, xi), rows, cols))))
    return best


def check_design(rng, trials):
    worst = 0.0
    for _ in range(trials):
        d = 2
        X = rng.standard_normal((4, d))
        arms = make_arms([X], [[0]])
        G = KernelSpec(LinearKernel()).gram(arms)
        rows, cols = within_set_pairs([list(range(4))])
        xi = 0.1
        got = minmax_from_gram(G, rows, cols, xi, opts=SolverOptions(max_iter=3000)).value
        want = grid_minmax(G, rows, cols, xi)
        worst = max(worst, (got - want) / want)
    return max(worst, 0.0)


def check_rounding(rng, trials):
    worst = 0.0
    for _ in range(trials):
        spec, arms, V, n = random_explicit_instance(rng, max_arms=12, max_dim=4)
        groups = [list(range(v * n, (v + 1) * n)) for v in range(V)]
        lam = rng.dirichlet(np.ones(len(arms)))
        N = int(rng.integers(len(arms), 500))
        res = round_allocation(spec, arms, groups, lam, N, 0.2, 0.1)
        worst = max(worst, abs(int(res.counts.sum()) - N), res.verified_ratio - 1.1)
    return max(worst, 0.0)


def check_noise(rng, trials):
    inst = generate_instance(InstanceConfig(V=1, n=4, delta_min=0.1))
    stream = agent_streams(int(rng.integers(0, 2 ** 31)), 1)[0]
    N = 100_000
    draws = inst.means[0] + stream.standard_normal(N)
    z = abs(draws.mean() - inst.means[0]) / (1.0 / np.sqrt(N))
    return z / 3.0  # passes below 1, i.e. within three standard errors


def check_logdet(rng, trials):
    worst = 0.0
    for d in range(1, 6):
        xi = float(rng.uniform(0.05, 2.0))
        res = max_information_gain(np.eye(d), xi)
        worst = max(worst, _rel(res.value, d * np.log(1 + 1 / (d * xi))))
    return worst


def check_rank(rng, trials):
    worst = 0.0
    for _ in range(trials):
        inst = generate_instance(InstanceConfig(task_regime="block", V=4, n=5,
                                                arm_set="random-sphere",
                                                seed=int(rng.integers(0, 1000))))
        rz, rx, rk = rank_decomposition(inst)
        worst = max(worst, float(rk > rz * rx))
    return worst


def gram_symmetry_psd(task_table, V=5, d=4, n=6):
    """Worst of asymmetry and negative eigenvalue (both relative to the trace)."""
    T = np.asarray(task_table, dtype=float)
    arms = make_arms(paper_grid_arms(V, d, n), [[v] for v in range(V)])
    G = KernelSpec(LinearKernel(), TableKernel(T)).gram(arms)
    scale = max(abs(np.trace(G)), 1e-300)
    asym = float(np.max(np.abs(G - G.T))) / scale
    neg = max(-float(np.linalg.eigvalsh((G + G.T) / 2).min()), 0.0) / scale
    return max(asym, neg)


CHECKS = [
    ("pair-norm-explicit-oracle", check_pair_norms, 1e-8),
    ("gradient-explicit-oracle", check_gradients, 1e-8),
    ("estimator-explicit-oracle", check_estimator, 1e-8),
    ("gradient-finite-difference", check_finite_differences, 1e-4),
    ("simplex-projection-oracle", check_projection, 1e-9),
    ("design-grid-oracle", check_design, 1e-2),
    ("rounding-guarantee", check_rounding, 0.0),
    ("noise-monte-carlo", check_noise, 1.0),
    ("logdet-closed-form", check_logdet, 1e-6),
    ("rank-product-bound", check_rank, 0.0),
]


def task_tables(instance_section):
    """Task Gram for every configured regime, without validating it."""
    from .kernel import block_task_table
    V = instance_section["V"]
    out = {}
    for regime in instance_section["task_regimes"]:
        if regime == "ones":
            out[regime] = np.ones((V, V))
        elif regime == "identity":
            out[regime] = np.eye(V)
        elif regime == "block":
            out[regime] = block_task_table(V, instance_section["n_blocks"],
                                           instance_section["block_coupling"])
        else:
            out[regime] = np.asarray(instance_section.get("task_table"), dtype=float)
    return out


def run_checks(instance_section=None, tol_scale=1.0, trials=20, seed=0):
    rng = np.random.default_rng(seed)
    results = []
    if instance_section is not None:
        V, d, n = instance_section["V"], instance_section["d"], instance_section["n"]
        for regime, table in task_tables(instance_section).items():
            try:
                err = gram_symmetry_psd(table, V, d, n)
            except Exception:
                err = float("inf")
            results.append(CheckResult(f"gram-symmetric-psd[{regime}]", err, 1e-9 * tol_scale))
    for name, fn, tol in CHECKS:
        try:
            err = fn(rng, trials)
        except Exception:
            err = float("inf")
        results.append(CheckResult(name, err, tol * tol_scale if tol else tol))
    return results
