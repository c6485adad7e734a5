"""Kernelized optimal-design machinery.

The central problem is the min-max allocation

    min_{lam in simplex}  max_{(i, j)}  s_ij * ||phi_i - phi_j||^2_{A(xi, lam)^{-1}},
    A(xi, lam) = xi I + sum_x lam_x phi_x phi_x^T,

solved by projected subgradient descent where every quantity is obtained
from the composite Gram matrix only.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .kernel import TaskedArm, pair_norms_sq, precision_matrix, spd_cholesky, spd_solve
from .validation import (
    SIMPLEX_ATOL,
    ConsistencyError,
    PreconditionError,
    RoundingError,
    check_allocation,
    check_positive,
)

XI_FLOOR = 1e-12
SUPPORT_TOL = 1e-12


class XiFloorWarning(UserWarning):
    """The regularization condition could not be met above the xi floor."""


@dataclass
class SolverOptions:
    """Projected-subgradient settings.

    ``step_scale / sqrt(k)`` is the length of the k-th step after the
    subgradient is normalized to unit Euclidean norm.
    """

    max_iter: int = 2000
    tol: float = 1e-6
    patience: int = 300
    step_scale: float = 0.1
    restarts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.max_iter < 1 or self.patience < 1:
            raise PreconditionError("max_iter and patience must be positive")
        check_positive(self.step_scale, "step_scale")


@dataclass
class DesignResult:
    allocation: np.ndarray
    value: float
    argmax_pair: Tuple
    iterations: int
    final_step_size: float


@dataclass
class SampleCounts:
    counts: np.ndarray
    total: int
    repairs: int = 0
    verified_ratio: float = field(default=float("nan"))


def _idx(a):
    return a.global_index if isinstance(a, TaskedArm) else int(a)


def within_set_pairs(alive_sets):
    """All unordered pairs (i < j) inside each set, in lexicographic order."""
    pairs = set()
    for members in alive_sets:
        ids = sorted(_idx(a) for a in members)
        for p in range(len(ids)):
            for q in range(p + 1, len(ids)):
                pairs.add((ids[p], ids[q]))
    pairs = sorted(pairs)
    rows = np.array([p[0] for p in pairs], dtype=int)
    cols = np.array([p[1] for p in pairs], dtype=int)
    return rows, cols


def project_to_simplex(v):
    """Euclidean projection onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1 or not np.all(np.isfinite(v)):
        raise PreconditionError("projection input must be a finite vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.count_nonzero(u - css / ind > 0)
    theta = css[rho - 1] / rho
    return np.maximum(v - theta, 0.0)


def _objective(Q, rows, cols, scales):
    vals = pair_norms_sq(Q, rows, cols)
    if scales is not None:
        vals = vals * scales
    p = int(np.argmax(vals))
    return float(vals[p]), p


def _gradient(Q, i, j, scale=1.0):
    return -scale * (Q[i] - Q[j]) ** 2


def design_objective(spec, arms, alive_pairs, lam, xi, gram=None):
    """Max regularized pair norm over ``alive_pairs`` and the attaining pair.

    Ties go to the lexicographically smallest (i, j) global-index pair.
    """
    if not alive_pairs:
        raise PreconditionError("alive_pairs must be nonempty")
    lam = check_allocation(lam, size=len(arms))
    xi = check_positive(xi, "xi")
    G = spec.gram(arms) if gram is None else gram
    order = sorted(range(len(alive_pairs)),
                   key=lambda k: (_idx(alive_pairs[k][0]), _idx(alive_pairs[k][1])))
    ordered = [alive_pairs[k] for k in order]
    rows = np.array([_idx(p[0]) for p in ordered])
    cols = np.array([_idx(p[1]) for p in ordered])
    value, p = _objective(precision_matrix(G, lam, xi), rows, cols, None)
    return value, ordered[p]


def objective_gradient(spec, arms, argmax_pair, lam, xi, gram=None):
    """Gradient of the max pair norm with respect to the allocation.

    Component x is ``-((phi_i - phi_j)^T A^{-1} phi_x)^2``, evaluated with
    kernel quantities only.
    """
    lam = check_allocation(lam, size=len(arms))
    xi = check_positive(xi, "xi")
    G = spec.gram(arms) if gram is None else gram
    i, j = _idx(argmax_pair[0]), _idx(argmax_pair[1])
    r = np.sqrt(lam)
    inner = r[:, None] * G * r[None, :] + xi * np.eye(len(lam))
    # (k_lam(i) - k_lam(j))^T (xi I + K_lam)^{-1} k_lam(x) for every x at once
    kdiff = r * (G[i] - G[j])
    coef = spd_solve(spd_cholesky(inner), kdiff)
    cross = (r[:, None] * G).T @ coef
    proj = (G[i] - G[j] - cross) / xi
    return -proj ** 2


def minmax_from_gram(gram, rows, cols, xi, scales=None, support=None, init=None,
                     opts: Optional[SolverOptions] = None):
    """Projected subgradient descent on the min-max design objective.

    Works purely on a precomputed Gram.  ``support`` is a boolean mask of arms
    allowed to carry mass (all by default).  Returns a :class:`DesignResult`
    whose ``argmax_pair`` holds global indices.
    """
    opts = opts or SolverOptions()
    m = gram.shape[0]
    if rows.size == 0:
        raise PreconditionError("no pairs to design for")
    mask = np.ones(m, dtype=bool) if support is None else np.asarray(support, dtype=bool)
    if not mask.any():
        raise PreconditionError("empty design support")
    sub = np.flatnonzero(mask)

    def start_points():
        if init is not None:
            lam0 = np.where(mask, np.asarray(init, dtype=float), 0.0)
            if lam0.sum() > 0:
                yield lam0 / lam0.sum()
            else:
                yield mask / mask.sum()
        else:
            yield mask / mask.sum()
        rng = np.random.default_rng(opts.seed)
        for _ in range(opts.restarts):
            lam0 = np.zeros(m)
            lam0[sub] = rng.dirichlet(np.ones(sub.size))
            yield lam0

    best = None
    total_iters = 0
    step = 0.0
    for lam in start_points():
        best_val, best_lam, best_pair = np.inf, lam.copy(), 0
        since = 0
        for k in range(1, opts.max_iter + 1):
            total_iters += 1
            Q = precision_matrix(gram, lam, xi)
            val, p = _objective(Q, rows, cols, scales)
            if val < best_val * (1.0 - opts.tol) or not np.isfinite(best_val):
                since = 0
            else:
                since += 1
            if val < best_val:
                best_val, best_lam, best_pair = val, lam.copy(), p
            if since >= opts.patience:
                break
            g = _gradient(Q, rows[p], cols[p], 1.0 if scales is None else scales[p])[sub]
            g = g - g.mean()
            gnorm = np.linalg.norm(g)
            if gnorm == 0.0:
                break
            step = opts.step_scale / np.sqrt(k)
            nxt = np.zeros(m)
            nxt[sub] = project_to_simplex(lam[sub] - step * g / gnorm)
            if nxt.min() < -SIMPLEX_ATOL or abs(nxt.sum() - 1.0) > SIMPLEX_ATOL:
                raise ConsistencyError("projected iterate left the simplex")
            lam = nxt
        if best is None or best_val < best[0]:
            best = (best_val, best_lam, best_pair)
    value, lam, p = best
    return DesignResult(lam, value, (int(rows[p]), int(cols[p])), total_iters, step)


def _as_arm_pair(arms, pair):
    return (arms[pair[0]], arms[pair[1]])


def solve_min_max(spec, arms, alive_sets, xi, opts=None, support=None, init=None, gram=None):
    """Optimal allocation over all arms for the within-set pairs of ``alive_sets``."""
    xi = check_positive(xi, "xi")
    if not any(len(s) >= 2 for s in alive_sets):
        raise PreconditionError("every alive set is a singleton; nothing to design")
    G = spec.gram(arms) if gram is None else gram
    rows, cols = within_set_pairs(alive_sets)
    res = minmax_from_gram(G, rows, cols, xi, support=support, init=init, opts=opts)
    res.argmax_pair = _as_arm_pair(arms, res.argmax_pair)
    return res


def xi_condition_lhs(gram, agent_sets, xi):
    """``sqrt(xi) * max pair norm`` under the uniform design over all arms."""
    m = gram.shape[0]
    rows, cols = within_set_pairs(agent_sets)
    if rows.size == 0:
        return 0.0
    Q = precision_matrix(gram, np.full(m, 1.0 / m), xi)
    raw = float(np.max(pair_norms_sq(Q, rows, cols)))
    return float(np.sqrt(max(xi * raw, 0.0)))


def find_xi_fc(spec, arms, t, B, eps, gram=None, agent_sets=None):
    """Largest xi in {1, 1/2, 1/4, ...} meeting the per-phase bias condition.

    The condition bounds ``sqrt(xi) * max ||phi_i - phi_j||`` (uniform design,
    within-agent pairs) by ``1 / ((1 + eps) B 2^(t+1))``.  When no grid point
    above ``XI_FLOOR`` qualifies, the floor is returned with a warning.
    """
    if t < 1:
        raise PreconditionError("phase index t must be >= 1")
    B = check_positive(B, "B")
    G = spec.gram(arms) if gram is None else gram
    if agent_sets is None:
        agent_sets = _group_by_agent(arms)
    rhs = 1.0 / ((1.0 + eps) * B * 2.0 ** (t + 1))
    xi = 1.0
    while xi >= XI_FLOOR:
        if xi_condition_lhs(G, agent_sets, xi) <= rhs:
            return xi
        xi /= 2.0
    warnings.warn(f"xi condition unmet down to {XI_FLOOR:g} at phase {t}", XiFloorWarning,
                  stacklevel=2)
    return XI_FLOOR


def _group_by_agent(arms):
    groups = {}
    for a in arms:
        groups.setdefault(a.agent, []).append(a.global_index)
    return [groups[k] for k in sorted(groups)]


def apportion(lam, N):
    """Integer counts: one per support arm, the rest by largest remainder."""
    lam = np.asarray(lam, dtype=float)
    support = lam > SUPPORT_TOL
    s = int(support.sum())
    if N < s:
        raise PreconditionError(f"N={N} is smaller than the support size {s}")
    counts = support.astype(np.int64)
    rest = N - s
    if rest:
        share = rest * lam / lam.sum()
        base = np.floor(share).astype(np.int64)
        left = rest - int(base.sum())
        frac = share - base
        # stable sort: equal remainders go to the lower index first
        order = np.argsort(-frac, kind="stable")
        base[order[:left]] += 1
        counts += base
    return counts


def _rounded_ratio(gram, rows, cols, lam, counts, xi):
    N = counts.sum()
    ref, _ = _objective(precision_matrix(gram, lam, xi), rows, cols, None)
    Q = precision_matrix(gram, counts / N, xi)
    got, p = _objective(Q, rows, cols, None)
    ratio = got / ref if ref > 0 else (1.0 if got <= 0 else np.inf)
    return ratio, Q, p


def round_allocation(spec, arms, alive_sets, lam, N, xi, eps, gram=None):
    """Round ``N * lam`` to integer counts and verify the (1 + eps) guarantee.

    The guarantee compares the max alive-pair norm under
    ``N xi I + sum kappa_x phi_x phi_x^T`` with the one under
    ``N xi I + sum N lam_x phi_x phi_x^T``; violations are repaired by moving
    single samples toward the steepest-descent arm.
    """
    lam = check_allocation(lam, size=len(arms))
    xi = check_positive(xi, "xi")
    N = int(N)
    G = spec.gram(arms) if gram is None else gram
    counts = apportion(lam, N)
    rows, cols = within_set_pairs(alive_sets)
    if rows.size == 0:
        return SampleCounts(counts, N, 0, 1.0)
    ratio, Q, p = _rounded_ratio(G, rows, cols, lam, counts, xi)
    repairs = 0
    while ratio > 1.0 + eps and repairs < len(arms):
        g = _gradient(Q, rows[p], cols[p])
        donors = np.flatnonzero(counts > 1)
        if donors.size == 0:
            break
        giver = donors[np.argmax(g[donors])]
        taker = int(np.argmin(g))
        if giver == taker:
            break
        counts[giver] -= 1
        counts[taker] += 1
        repairs += 1
        ratio, Q, p = _rounded_ratio(G, rows, cols, lam, counts, xi)
    if ratio > 1.0 + eps:
        raise RoundingError(
            f"rounded design is {ratio:.4f}x the continuous one (allowed {1 + eps:.4f})")
    return SampleCounts(counts, N, repairs, ratio)


def subset_pairs(subset):
    ids = sorted({_idx(a) for a in subset})
    rows, cols = np.triu_indices(len(ids), 1)
    ids = np.array(ids, dtype=int)
    return ids[rows], ids[cols]


def principle_dimension(spec, arms, subset, xi_star, opts=None, gram=None):
    """Min over allocations on all arms of the max pair norm inside ``subset``."""
    xi_star = check_positive(xi_star, "xi_star")
    rows, cols = subset_pairs(subset)
    if rows.size == 0:
        return 0.0
    G = spec.gram(arms) if gram is None else gram
    return minmax_from_gram(G, rows, cols, xi_star, opts=opts).value
