"""Collaborative elimination algorithms and their baselines.

``coop_kernel_fc`` identifies every agent's best arm with a target
confidence; ``coop_kernel_fb`` does so within a per-agent sample budget.
Both run phase by phase: solve a global design over the alive pairs, let
each agent pull its own share of the rounded design, exchange per-arm
(count, mean) summaries in one round, then eliminate using the kernelized
ridge estimate built from that round's data.
"""

import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import partial
from typing import Optional, Union

import numpy as np
from sklearn.base import BaseEstimator

from .design import (
    SolverOptions,
    XiFloorWarning,
    find_xi_fc,
    minmax_from_gram,
    round_allocation,
    subset_pairs,
    within_set_pairs,
    xi_condition_lhs,
    _objective,
)
from .estimation import fit
from .kernel import precision_matrix
from .protocol import (
    Agent,
    MessageBus,
    PhaseRecord,
    RunReport,
    agent_streams,
)
from .validation import (
    ConfigurationError,
    PreconditionError,
    ProtocolError,
    check_positive,
    check_probability,
)


@dataclass
class FCConfig:
    delta: float = 0.005
    B: Optional[float] = None
    eps: float = 0.1
    solver: SolverOptions = field(default_factory=SolverOptions)
    max_samples: int = 10 ** 8
    max_phases: int = 60
    store_raw: bool = False

    def resolve(self, instance):
        """Validate against ``instance``; fills ``B`` from the true parameter."""
        check_probability(self.delta, "delta")
        check_positive(self.eps, "eps")
        B = self.B
        norm = instance.theta_norm
        if B is None:
            if norm is None:
                raise ConfigurationError("B is required when the instance has no explicit parameter")
            B = norm
        B = check_positive(B, "B")
        if norm is not None and B < norm * (1 - 1e-12):
            raise ConfigurationError(f"B={B:g} is below the true parameter norm {norm:g}")
        return replace(self, B=B)


@dataclass
class FBConfig:
    T: int = 10000
    xi_star: Union[float, str] = "auto"
    eps: float = 0.1
    B: Optional[float] = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    max_samples: int = 10 ** 8
    store_raw: bool = False

    def resolve(self, instance):
        if int(self.T) < 1:
            raise PreconditionError("budget T must be at least 1")
        check_positive(self.eps, "eps")
        B = self.B if self.B is not None else instance.theta_norm
        xi = self.xi_star
        if xi == "auto":
            if B is None:
                raise ConfigurationError("xi_star='auto' needs B or an explicit parameter")
            xi = fb_xi_star(instance, self.eps, B)
        xi = check_positive(xi, "xi_star")
        return replace(self, T=int(self.T), xi_star=xi, B=B)


def _solver_key(opts):
    return tuple(sorted(asdict(opts).items()))


def _cached(instance, key, compute):
    cache = instance.cache
    if key not in cache:
        cache[key] = compute()
    return cache[key]


def _agent_groups(instance):
    return [instance.agent_indices(v) for v in range(instance.V)]


def fb_xi_star(instance, eps, B):
    """Largest xi in {1, 1/2, ...} meeting the fixed-budget bias condition.

    The condition, ``sqrt(xi) * max pair norm (uniform design) <=
    delta_min / (2 (1 + eps) B)``, needs the true minimum gap, so this is a
    simulation-side helper.
    """
    rhs = instance.delta_min / (2.0 * (1.0 + eps) * B)
    xi = 1.0
    while xi >= 1e-12:
        if xi_condition_lhs(instance.gram, _agent_groups(instance), xi) <= rhs:
            return xi
        xi /= 2.0
    return 1e-12


def omega(instance, subset, xi, opts):
    """Memoized principle dimension of ``subset`` (global indices)."""
    ids = tuple(sorted(int(i) for i in subset))
    if len(ids) < 2:
        return 0.0

    def compute():
        rows, cols = subset_pairs(ids)
        return minmax_from_gram(instance.gram, rows, cols, xi, opts=opts).value

    return _cached(instance, ("omega", ids, xi, _solver_key(opts)), compute)


def _design(instance, alive, xi, opts, mode):
    """(allocation, value) for the current alive sets under ``mode``."""
    key = ("design", mode, tuple(tuple(a) for a in alive), xi, _solver_key(opts))

    def compute():
        G = instance.gram
        rows, cols = within_set_pairs(alive)
        if mode == "global":
            res = minmax_from_gram(G, rows, cols, xi, opts=opts)
            return res.allocation, res.value
        # individual: each agent designs for its own pairs on its own arms
        m = G.shape[0]
        lam = np.zeros(m)
        active = [v for v, a in enumerate(alive) if len(a) >= 2]
        for v in active:
            r, c = within_set_pairs([alive[v]])
            support = np.zeros(m, dtype=bool)
            support[instance.agent_indices(v)] = True
            lam += minmax_from_gram(G, r, c, xi, support=support, opts=opts).allocation
        lam /= len(active)
        value, _ = _objective(precision_matrix(G, lam, xi), rows, cols, None)
        return lam, value

    return _cached(instance, key, compute)


def _rounded(instance, alive, lam, N, xi, eps, mode):
    key = ("round", mode, tuple(tuple(a) for a in alive), N, xi, eps)
    return _cached(instance, key, lambda: round_allocation(
        instance.spec, instance.arms, alive, lam, N, xi, eps, gram=instance.gram))


def _exchange(bus, agents, counts):
    bus.run_round([partial(a.pull, counts) for a in agents])
    summaries = [a.merged_summary() for a in agents]
    for s in summaries[1:]:
        if s != summaries[0]:
            raise ProtocolError("agents disagree on the merged observation summary")
    return summaries[0]


def _report(name, instance, seed, agents, bus, answers, trace, t, complete, notes, extra=None):
    return RunReport(
        algorithm=name,
        instance=instance.name,
        seed=int(seed),
        V=instance.V,
        n=instance.n,
        delta_min=instance.delta_min,
        answers=[int(a) for a in answers],
        correct=[int(a) == b for a, b in zip(answers, instance.best_arms)],
        samples_per_agent=[a.samples_drawn for a in agents],
        communication_rounds=bus.rounds,
        payload_numbers_per_round=list(bus.payload_numbers_per_round),
        phase_trace=trace,
        complete=complete,
        final_phase_index=t,
        warnings=notes,
        extra=extra or {},
    )


def fc_phase_samples(t, rho, eps, n, V, delta):
    delta_t = delta / (2.0 * t * t)
    return int(math.ceil(8.0 * 4.0 ** t * (1.0 + eps) ** 2 * rho
                         * math.log(2.0 * n * n * V / delta_t)))


def _run_fc(instance, config, seed, mode, name):
    cfg = config.resolve(instance)
    V, n = instance.V, instance.n
    G = instance.gram
    agents = [Agent(v, instance, rng, cfg.store_raw)
              for v, rng in enumerate(agent_streams(seed, V))]
    bus = MessageBus(agents, n)
    alive = _agent_groups(instance)
    groups = _agent_groups(instance)
    trace, notes = [], []
    used = 0
    t = 1
    complete = True
    while any(len(a) > 1 for a in alive):
        if t > cfg.max_phases:
            complete = False
            notes.append(f"phase limit {cfg.max_phases} reached")
            break
        phase_notes = []
        xi = _cached(instance, ("xi_fc", t, cfg.B, cfg.eps), lambda: _find_xi(instance, t, cfg))
        rhs = 1.0 / ((1.0 + cfg.eps) * cfg.B * 2.0 ** (t + 1))
        if xi_condition_lhs(G, groups, xi) > rhs:
            phase_notes.append("xi-floor")
        lam, rho = _design(instance, alive, xi, cfg.solver, mode)
        N = fc_phase_samples(t, rho, cfg.eps, n, V, cfg.delta)
        if used + N > cfg.max_samples:
            complete = False
            notes.append(f"sample cap {cfg.max_samples} would be exceeded at phase {t}")
            break
        kappa = _rounded(instance, alive, lam, N, xi, cfg.eps, mode)
        summary = _exchange(bus, agents, kappa.counts)
        used += N
        est = fit(instance.spec, instance.arms, summary, N, xi, gram=G)
        r = np.sqrt(summary.counts.astype(float))
        alpha = r * est.solved_weights
        nxt = []
        for members in alive:
            if len(members) < 2:
                nxt.append(members)
                continue
            idx = np.array(members)
            # gap[a, b] = estimated reward of members[a] minus members[b]
            gap = (G[idx][:, None, :] - G[idx][None, :, :]) @ alpha
            beaten = (gap >= 2.0 ** (-t)).any(axis=0)
            nxt.append([m for m, out in zip(members, beaten) if not out])
        trace.append(PhaseRecord(t, xi, rho, N, [len(a) for a in alive],
                                 kappa.repairs, phase_notes, [list(a) for a in nxt]))
        alive = nxt
        t += 1
        if any(len(a) == 0 for a in alive):
            raise ProtocolError("an alive set became empty")
    # unfinished agents (budget or phase cap) report -1
    answers = [a[0] if len(a) == 1 else -1 for a in alive]
    return _report(name, instance, seed, agents, bus, answers, trace, t, complete, notes,
                   {"B": cfg.B})


def _find_xi(instance, t, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", XiFloorWarning)
        return find_xi_fc(instance.spec, instance.arms, t, cfg.B, cfg.eps,
                          gram=instance.gram, agent_sets=_agent_groups(instance))


def coop_kernel_fc(instance, config=None, seed=0):
    """Fixed-confidence collaborative elimination; returns a :class:`RunReport`."""
    return _run_fc(instance, config or FCConfig(), seed, "global", "CoopKernelFC")


def _run_fb(instance, config, seed, mode, name):
    cfg = config.resolve(instance)
    V, n = instance.V, instance.n
    G = instance.gram
    xi = cfg.xi_star
    opts = cfg.solver
    notes = []
    everything = list(range(V * n))
    omega_all = omega(instance, everything, xi, opts)
    if omega_all <= 1.0:
        raise PreconditionError(
            f"principle dimension {omega_all:.4g} <= 1 gives no phases; lower xi_star")
    R = int(math.ceil(math.log2(omega_all)))
    N = (cfg.T * V) // R
    if cfg.B is not None and instance.delta_min < np.inf:
        lhs = xi_condition_lhs(G, _agent_groups(instance), xi)
        if lhs > instance.delta_min / (2.0 * (1.0 + cfg.eps) * cfg.B):
            notes.append("xi_star violates the fixed-budget bias condition")
    agents = [Agent(v, instance, rng, cfg.store_raw)
              for v, rng in enumerate(agent_streams(seed, V))]
    bus = MessageBus(agents, n)
    alive = _agent_groups(instance)
    trace = []
    used = 0
    t = 1
    complete = True
    while t <= R and any(len(a) > 1 for a in alive):
        if used + N > cfg.max_samples:
            complete = False
            notes.append(f"sample cap {cfg.max_samples} would be exceeded at phase {t}")
            break
        lam, rho = _design(instance, alive, xi, opts, mode)
        kappa = _rounded(instance, alive, lam, N, xi, cfg.eps, mode)
        summary = _exchange(bus, agents, kappa.counts)
        used += N
        est = fit(instance.spec, instance.arms, summary, N, xi, gram=G)
        f_hat = est.rewards()
        phase_notes = []
        nxt = []
        for members in alive:
            if len(members) < 2:
                nxt.append(members)
                continue
            ranked = sorted(members, key=lambda i: (-f_hat[i], i))
            limit = omega(instance, members, xi, opts) / 2.0
            keep = 0
            for k in range(1, len(ranked) + 1):
                if omega(instance, ranked[:k], xi, opts) <= limit:
                    keep = k
                else:
                    break
            if keep == 0:
                keep = 1
                phase_notes.append("prefix-floor")
            nxt.append(ranked[:keep])
        trace.append(PhaseRecord(t, xi, rho, N, [len(a) for a in alive],
                                 kappa.repairs, phase_notes, [list(a) for a in nxt]))
        alive = nxt
        t += 1
    answers = [a[0] for a in alive]
    return _report(name, instance, seed, agents, bus, answers, trace, t, complete, notes,
                   {"R": R, "N": N, "omega": omega_all, "xi_star": xi})


def coop_kernel_fb(instance, config=None, seed=0):
    """Fixed-budget collaborative elimination; returns a :class:`RunReport`."""
    return _run_fb(instance, config or FBConfig(), seed, "global", "CoopKernelFB")


def ablation_individual_allocation(instance, config, mode="fc", seed=0):
    """Main algorithm with per-agent designs averaged into one allocation."""
    if mode == "fc":
        return _run_fc(instance, config, seed, "individual", "CoopKernelFC-IndAlloc")
    if mode == "fb":
        return _run_fb(instance, config, seed, "individual", "CoopKernelFB-IndAlloc")
    raise ConfigurationError(f"mode must be 'fc' or 'fb', got {mode!r}")


def task_seed(seed, v):
    """Seed for task ``v`` of an independent baseline (task 0 keeps ``seed``)."""
    if v == 0:
        return int(seed)
    return int(np.random.SeedSequence([int(seed), v]).generate_state(1)[0])


def _combine_independent(name, instance, seed, reports):
    answers = [v * instance.n + r.answers[0] if r.answers[0] >= 0 else -1
               for v, r in enumerate(reports)]
    trace = [rec for r in reports for rec in r.phase_trace]
    return RunReport(
        algorithm=name,
        instance=instance.name,
        seed=int(seed),
        V=instance.V,
        n=instance.n,
        delta_min=instance.delta_min,
        answers=answers,
        correct=[a == b for a, b in zip(answers, instance.best_arms)],
        samples_per_agent=[r.total_samples for r in reports],
        communication_rounds=0,
        payload_numbers_per_round=[],
        phase_trace=trace,
        complete=all(r.complete for r in reports),
        final_phase_index=max(r.final_phase_index for r in reports),
        warnings=[w for r in reports for w in r.warnings],
        extra={"per_task_rounds": [r.communication_rounds for r in reports]},
    )


def _task_instances(instance):
    key = ("task_instances",)
    return _cached(instance, key, lambda: [instance.task_instance(v) for v in range(instance.V)])


def baseline_independent_fc(instance, config=None, seed=0):
    """V single-agent copies of the fixed-confidence algorithm, one per task."""
    config = config or FCConfig()
    if instance.V == 1:
        rep = coop_kernel_fc(instance, config, seed)
        rep.algorithm = "IndependentFC"
        return rep
    reports = [coop_kernel_fc(task, config, task_seed(seed, v))
               for v, task in enumerate(_task_instances(instance))]
    return _combine_independent("IndependentFC", instance, seed, reports)


def baseline_independent_fb(instance, config=None, seed=0):
    """V single-agent copies of the fixed-budget algorithm, budget T each."""
    config = config or FBConfig()
    cfg = config.resolve(instance)
    reports = [coop_kernel_fb(task, cfg, task_seed(seed, v))
               for v, task in enumerate(_task_instances(instance))]
    rep = _combine_independent("IndependentFB", instance, seed, reports)
    return rep


def baseline_uniform_fb(instance, T, seed=0):
    """Each agent pulls its arms round-robin ``T`` times and keeps the best mean."""
    T = int(T)
    if T < 1:
        raise PreconditionError("budget T must be at least 1")
    V, n = instance.V, instance.n
    agents = [Agent(v, instance, rng) for v, rng in enumerate(agent_streams(seed, V))]
    bus = MessageBus(agents, n)
    base = np.full(n, T // n, dtype=np.int64)
    base[: T % n] += 1
    counts = np.tile(base, V)
    answers = []
    for agent in agents:
        msg = agent.pull(counts)
        means = np.array([m if c else -np.inf for _, c, m in msg.payload])
        answers.append(agent.indices[int(np.argmax(means))])
    return _report("UniformFB", instance, seed, agents, bus, answers, [], 1, True, [])


# -- estimator-style front ends ---------------------------------------------


class _BanditEstimator(BaseEstimator):
    def _solver(self):
        return SolverOptions(max_iter=self.max_iter, tol=self.tol, patience=self.patience,
                             step_scale=self.step_scale)

    def _store(self, report):
        self.report_ = report
        self.best_arms_ = np.array(report.answers)
        self.n_rounds_ = report.communication_rounds
        self.n_samples_ = report.total_samples
        return self

    def predict(self, agents=None):
        """Identified arm (global index) for each requested agent."""
        if not hasattr(self, "best_arms_"):
            raise AttributeError("call fit before predict")
        if agents is None:
            return self.best_arms_.copy()
        return self.best_arms_[np.asarray(agents, dtype=int)]

    def score(self, instance, y=None):
        """Fraction of agents whose identified arm is their true best arm."""
        return float(np.mean(self.predict() == np.asarray(instance.best_arms)))


class CoopKernelFC(_BanditEstimator):
    """Estimator wrapper around :func:`coop_kernel_fc`.

    ``allocation='individual'`` runs the per-agent-design ablation instead.
    """

    def __init__(self, delta=0.005, B=None, eps=0.1, allocation="global", max_iter=2000,
                 tol=1e-6, patience=300, step_scale=0.1, max_samples=10 ** 8):
        self.delta = delta
        self.B = B
        self.eps = eps
        self.allocation = allocation
        self.max_iter = max_iter
        self.tol = tol
        self.patience = patience
        self.step_scale = step_scale
        self.max_samples = max_samples

    def fit(self, instance, y=None, seed=0):
        cfg = FCConfig(self.delta, self.B, self.eps, self._solver(), int(self.max_samples))
        if self.allocation == "global":
            return self._store(coop_kernel_fc(instance, cfg, seed))
        if self.allocation == "individual":
            return self._store(ablation_individual_allocation(instance, cfg, "fc", seed))
        raise ConfigurationError(f"unknown allocation {self.allocation!r}")


class CoopKernelFB(_BanditEstimator):
    """Estimator wrapper around :func:`coop_kernel_fb`."""

    def __init__(self, T=10000, xi_star="auto", eps=0.1, B=None, allocation="global",
                 max_iter=2000, tol=1e-6, patience=300, step_scale=0.1, max_samples=10 ** 8):
        self.T = T
        self.xi_star = xi_star
        self.eps = eps
        self.B = B
        self.allocation = allocation
        self.max_iter = max_iter
        self.tol = tol
        self.patience = patience
        self.step_scale = step_scale
        self.max_samples = max_samples

    def fit(self, instance, y=None, seed=0):
        cfg = FBConfig(self.T, self.xi_star, self.eps, self.B, self._solver(),
                       int(self.max_samples))
        if self.allocation == "global":
            return self._store(coop_kernel_fb(instance, cfg, seed))
        if self.allocation == "individual":
            return self._store(ablation_individual_allocation(instance, cfg, "fb", seed))
        raise ConfigurationError(f"unknown allocation {self.allocation!r}")
