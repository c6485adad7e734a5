"""Instance-hardness and capacity diagnostics.

``hardness_rho_star`` and ``max_information_gain`` use different optimal
allocations (min-max versus log-determinant); both are returned so callers
never mix them up.
"""

import math
from dataclasses import dataclass

import numpy as np

from .design import SolverOptions, minmax_from_gram, project_to_simplex
from .kernel import WeightedGram, precision_matrix, spd_cholesky, weight_gram
from .validation import ConsistencyError, check_positive

RANK_RTOL = 1e-8
CHAIN_TOL = 0.05


def _gap_pairs(instance):
    rows, cols, scales = [], [], []
    for v in range(instance.V):
        best = instance.best_arms[v]
        for i in instance.agent_indices(v):
            if i == best:
                continue
            rows.append(min(best, i))
            cols.append(max(best, i))
            scales.append(1.0 / instance.gaps[i] ** 2)
    return np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(scales)


def hardness_design(instance, xi_star, opts=None):
    """Min-max design on gap-normalized (best, other) pairs; a DesignResult."""
    xi_star = check_positive(xi_star, "xi_star")
    rows, cols, scales = _gap_pairs(instance)
    if rows.size == 0:
        return None
    return minmax_from_gram(instance.gram, rows, cols, xi_star, scales=scales, opts=opts)


def hardness_rho_star(instance, xi_star, opts=None):
    res = hardness_design(instance, xi_star, opts)
    return 0.0 if res is None else float(res.value)


def logdet_objective(gram, lam, xi):
    """``log det(I + K_lam / xi)`` from a Cholesky factor."""
    M = weight_gram(gram, lam) / xi
    M[np.diag_indices_from(M)] += 1.0
    c, _ = spd_cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(c))))


@dataclass
class InformationGain:
    value: float
    allocation: np.ndarray
    history: list


def max_information_gain(gram, xi_star, max_iter=500, tol=1e-10):
    """Projected gradient ascent of the concave log-determinant objective.

    The partial derivative in ``lam_x`` is ``phi_x^T (xi I + sum lam phi phi^T)^{-1} phi_x``,
    the diagonal of the precision matrix.  Steps are halved until the
    objective does not decrease, so the history is monotone.
    """
    gram = getattr(gram, "gram", gram)
    xi = check_positive(xi_star, "xi_star")
    m = gram.shape[0]
    lam = np.full(m, 1.0 / m)
    val = logdet_objective(gram, lam, xi)
    history = [val]
    step = 1.0
    for _ in range(max_iter):
        g = np.diag(precision_matrix(gram, lam, xi))
        moved = False
        while step > 1e-12:
            cand = project_to_simplex(lam + step * g / max(np.abs(g).max(), 1e-300))
            cv = logdet_objective(gram, cand, xi)
            if cv >= val:
                moved = True
                break
            step /= 2.0
        if not moved:
            break
        gain = cv - val
        lam, val = cand, cv
        history.append(val)
        step = min(step * 2.0, 1.0)
        if gain <= tol * max(1.0, abs(val)):
            break
    return InformationGain(val, lam, history)


def _spectrum(matrix):
    M = matrix.matrix if isinstance(matrix, WeightedGram) else np.asarray(matrix, dtype=float)
    vals = np.linalg.eigvalsh((M + M.T) / 2.0)[::-1]
    return np.maximum(vals, 0.0)


def effective_dimension(gram, xi_star, nV):
    """Smallest j with ``j * xi * log(nV) >= sum of eigenvalues beyond the j-th``."""
    alpha = _spectrum(gram)
    tails = np.concatenate([np.cumsum(alpha[::-1])[::-1], [0.0]])
    scale = xi_star * math.log(nV) if nV > 1 else 0.0
    for j in range(len(alpha) + 1):
        if j * scale >= tails[j]:
            return j
    return len(alpha)


def numerical_rank(matrix, rtol=RANK_RTOL):
    s = np.linalg.svd(np.atleast_2d(matrix), compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def _task_gram(instance):
    if instance.task_gram is not None:
        return instance.task_gram
    keys = np.vstack([instance.arms[v * instance.n].task_feature for v in range(instance.V)])
    return instance.spec.task_kernel(keys, keys)


def rank_decomposition(instance):
    """(rank K_Z, rank K_X, rank K); raises if the product bound fails."""
    X = np.vstack([a.arm_feature for a in instance.arms])
    rz = numerical_rank(_task_gram(instance))
    rx = numerical_rank(instance.spec.arm_kernel(X, X))
    rk = numerical_rank(instance.gram)
    if rk > rz * rx:
        raise ConsistencyError(f"rank(K)={rk} exceeds rank(K_Z)*rank(K_X)={rz}*{rx}")
    return rz, rx, rk


def empirical_speedup(multi, single):
    """Per-task single-agent samples over per-agent multi-agent samples, or None."""
    denom = multi.mean_samples_per_agent
    if denom <= 0:
        return None
    return single.mean_samples_per_agent / denom


def speedup_interval(multi_samples, single_samples, n_boot=2000, level=0.95, seed=0):
    """Ratio of medians with a percentile bootstrap interval.

    Inputs are per-run average samples per agent (multi) and per task (single).
    """
    a = np.asarray(multi_samples, dtype=float)
    b = np.asarray(single_samples, dtype=float)
    if a.size == 0 or b.size == 0 or np.median(a) <= 0:
        return None
    rng = np.random.default_rng(seed)
    ia = rng.integers(0, a.size, (n_boot, a.size))
    ib = rng.integers(0, b.size, (n_boot, b.size))
    ratios = np.median(b[ib], axis=1) / np.median(a[ia], axis=1)
    lo, hi = np.quantile(ratios, [(1 - level) / 2, (1 + level) / 2])
    return float(np.median(b) / np.median(a)), float(lo), float(hi)


def capacity_chain(instance, xi_star, opts=None, tol=CHAIN_TOL):
    """Evaluate the capacity bounds on ``instance`` at ``xi_star``.

    Returns a dict with every side of the three inequalities and a pass flag
    for each (slack ``tol`` relative).
    """
    opts = opts or SolverOptions()
    rho = hardness_rho_star(instance, xi_star, opts)
    ig = max_information_gain(instance.gram, xi_star)
    nV = instance.V * instance.n
    K_lam = weight_gram(instance.gram, ig.allocation)
    d_eff = effective_dimension(K_lam, xi_star, nV)
    tr = float(np.trace(K_lam))
    rz, rx, rk = rank_decomposition(instance)
    r_lam = numerical_rank(K_lam)
    dm = instance.delta_min
    out = {
        "xi_star": xi_star,
        "rho_star": rho,
        "upsilon": ig.value,
        "d_eff": d_eff,
        "trace_K_lambda": tr,
        "rank_Kz": rz,
        "rank_Kx": rx,
        "rank_K": rk,
        "rank_K_lambda": r_lam,
        "lhs_a": dm * dm * rho,
        "rhs_a": 8.0 * ig.value,
        "rhs_b": (8.0 * d_eff * math.log(2 * nV * (1 + tr / (xi_star * d_eff)))
                  if d_eff else 0.0),
        "rhs_c": (rz * rx * math.log((nV + tr / xi_star) / r_lam) if r_lam else 0.0),
    }
    out["ok_a"] = out["lhs_a"] <= out["rhs_a"] * (1 + tol)
    out["ok_b"] = out["rhs_a"] <= out["rhs_b"] * (1 + tol) + 1e-12
    out["ok_c"] = ig.value <= out["rhs_c"] * (1 + tol) + 1e-12
    out["ok_rank"] = rk <= rz * rx
    return out
