"""Simulated environment and round-synchronous message bus.

Agents only ever exchange :class:`RoundMessage` summaries: for each of their
``n`` arms a sample count and an empirical mean.  Raw rewards stay inside the
agent that drew them.
"""

import csv
import io
import json
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .estimation import ObservationSummary, merge_summaries
from .kernel import (
    IdentityKernel,
    KernelSpec,
    LinearKernel,
    OnesKernel,
    RBFKernel,
    TableKernel,
    TaskedArm,
    block_task_table,
    make_arms,
    product_feature_map,
    psd_factor,
)
from .validation import ConfigurationError, ProtocolError

# Samples are drawn in chunks so a single large request never allocates
# more than this many floats at once.
_CHUNK = 1 << 20


@dataclass(eq=False)
class ProblemInstance:
    V: int
    n: int
    arms: List[TaskedArm]
    spec: KernelSpec
    means: np.ndarray
    noise_std: float = 1.0
    theta: Optional[np.ndarray] = None
    task_gram: Optional[np.ndarray] = None
    name: str = "custom"
    meta: Dict = field(default_factory=dict)
    rkhs_norm: Optional[float] = None

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if len(self.arms) != self.V * self.n or self.means.shape != (self.V * self.n,):
            raise ConfigurationError("need exactly V*n arms and one mean per arm")
        for k, a in enumerate(self.arms):
            if a.global_index != k or a.global_index != a.agent * self.n + a.local_index:
                raise ConfigurationError(f"arm {k} has inconsistent indices")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be nonnegative")
        block = self.means.reshape(self.V, self.n)
        order = np.sort(block, axis=1)
        if self.n > 1 and np.any(order[:, -1] - order[:, -2] <= 0):
            raise ConfigurationError("best arm is not unique for some agent")
        self.best_local = np.argmax(block, axis=1)
        self.best_arms = [v * self.n + int(i) for v, i in enumerate(self.best_local)]
        self.gaps = (block.max(axis=1, keepdims=True) - block).ravel()
        positive = self.gaps[self.gaps > 0]
        self.delta_min = float(positive.min()) if positive.size else float("inf")
        self.gram = self.spec.gram(self.arms)
        # per-instance memo for deterministic, path-independent computations
        self.cache = {}

    @property
    def theta_norm(self):
        """RKHS norm of the true reward, when the simulator knows it."""
        if self.theta is not None:
            return float(np.linalg.norm(self.theta))
        return self.rkhs_norm

    def agent_arms(self, v):
        return self.arms[v * self.n:(v + 1) * self.n]

    def agent_indices(self, v):
        return list(range(v * self.n, (v + 1) * self.n))

    def task_instance(self, v):
        """Single-agent instance holding only agent ``v``'s arms and task."""
        own = [TaskedArm(i, 0, i, a.arm_feature, a.task_feature)
               for i, a in enumerate(self.agent_arms(v))]
        return ProblemInstance(
            1, self.n, own, self.spec, self.means[v * self.n:(v + 1) * self.n],
            self.noise_std, self.theta, None, f"{self.name}/task{v}", dict(self.meta),
            self.rkhs_norm)

    def f(self, arm):
        return float(self.means[arm.global_index if isinstance(arm, TaskedArm) else arm])


def sample(instance, arm, rng_stream):
    """One noisy reward for ``arm``."""
    mu = instance.f(arm)
    if instance.noise_std == 0:
        return mu
    return mu + instance.noise_std * rng_stream.standard_normal()


def agent_streams(seed, V):
    """Independent counter-based generators, one per agent, from one master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(V)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@dataclass(frozen=True)
class RoundMessage:
    sender: int
    payload: tuple  # ((global_index, count, mean), ...)

    @property
    def payload_size_numbers(self):
        return 2 * len(self.payload)


class Agent:
    """Owns a slice of arms, a private random stream and raw observations."""

    def __init__(self, agent_id, instance, rng, store_raw=False):
        self.id = agent_id
        self.instance = instance
        self.rng = rng
        self.indices = instance.agent_indices(agent_id)
        self.store_raw = store_raw
        self.raw: Dict[int, list] = {}
        self.samples_drawn = 0
        self.received: List[RoundMessage] = []

    def pull(self, counts):
        """Pull each own arm ``counts[i]`` times; return the round message."""
        payload = []
        inst = self.instance
        for gi in self.indices:
            c = int(counts[gi])
            total = 0.0
            left = c
            while left > 0:
                k = min(left, _CHUNK)
                if inst.noise_std == 0:
                    draws = np.full(k, inst.means[gi])
                else:
                    draws = inst.means[gi] + inst.noise_std * self.rng.standard_normal(k)
                total += float(draws.sum())
                if self.store_raw:
                    self.raw.setdefault(gi, []).extend(draws.tolist())
                left -= k
            self.samples_drawn += c
            payload.append((gi, c, total / c if c else 0.0))
        return RoundMessage(self.id, tuple(payload))

    def deliver(self, messages):
        self.received = list(messages)

    def merged_summary(self):
        """Summary over all arms built only from the messages of this round."""
        size = self.instance.V * self.instance.n
        parts = []
        for msg in self.received:
            counts = np.zeros(size, dtype=np.int64)
            sums = np.zeros(size)
            for gi, c, mean in msg.payload:
                counts[gi] = c
                sums[gi] = c * mean
            parts.append(ObservationSummary.from_sums(counts, sums))
        return merge_summaries(parts) if parts else ObservationSummary.empty(size)


class MessageBus:
    """Barrier-synchronized broadcast with payload accounting."""

    def __init__(self, agents: Sequence[Agent], n):
        self.agents = list(agents)
        self.n = n
        self.rounds = 0
        self.payload_numbers_per_round: List[int] = []
        self.trace: List[str] = []

    def run_round(self, steps: Sequence[Callable[[], RoundMessage]]):
        if len(steps) != len(self.agents):
            raise ProtocolError("one step per agent is required")
        self.trace.append("sample")
        messages = [step() for step in steps]
        for agent, msg in zip(self.agents, messages):
            if msg.sender != agent.id:
                raise ProtocolError(f"agent {agent.id} sent a message as {msg.sender}")
            if len(msg.payload) != self.n:
                raise ProtocolError(
                    f"agent {agent.id} payload has {len(msg.payload)} entries, expected {self.n}")
        # barrier: nothing is delivered until every agent has finished sampling
        self.trace.append("communicate")
        for agent in self.agents:
            agent.deliver(messages)
        self.rounds += 1
        self.payload_numbers_per_round.append(sum(m.payload_size_numbers for m in messages))
        return messages


# -- run reports ------------------------------------------------------------

CSV_FIELDS = [
    "algorithm", "instance", "seed", "V", "n", "delta_min", "complete",
    "all_correct", "n_correct", "total_samples", "mean_samples_per_agent",
    "max_samples_per_agent", "communication_rounds", "phases_executed",
    "final_phase_index", "payload_numbers_total", "answers", "warnings",
]

PHASE_FIELDS = ["phase", "xi", "rho", "n_samples", "alive_sizes", "repairs", "warnings"]


@dataclass
class PhaseRecord:
    phase: int
    xi: float
    rho: float
    n_samples: int
    alive_sizes: List[int]
    repairs: int = 0
    warnings: List[str] = field(default_factory=list)
    # global arm indices still alive after this phase, per agent
    survivors: List[List[int]] = field(default_factory=list)


@dataclass
class RunReport:
    algorithm: str
    instance: str
    seed: int
    V: int
    n: int
    delta_min: float
    answers: List[int]
    correct: List[bool]
    samples_per_agent: List[int]
    communication_rounds: int
    payload_numbers_per_round: List[int]
    phase_trace: List[PhaseRecord]
    complete: bool = True
    final_phase_index: int = 1
    warnings: List[str] = field(default_factory=list)
    extra: Dict = field(default_factory=dict)

    @property
    def total_samples(self):
        return int(sum(self.samples_per_agent))

    @property
    def all_correct(self):
        return bool(self.complete and all(self.correct))

    @property
    def phases_executed(self):
        return len(self.phase_trace)

    @property
    def mean_samples_per_agent(self):
        return self.total_samples / len(self.samples_per_agent)

    def to_dict(self):
        d = asdict(self)
        d["total_samples"] = self.total_samples
        d["all_correct"] = self.all_correct
        d["phases_executed"] = self.phases_executed
        return d

    def to_json(self):
        return json.dumps(_jsonable(self.to_dict()), indent=2, sort_keys=True)

    def csv_row(self):
        return {
            "algorithm": self.algorithm,
            "instance": self.instance,
            "seed": self.seed,
            "V": self.V,
            "n": self.n,
            "delta_min": repr(float(self.delta_min)),
            "complete": int(self.complete),
            "all_correct": int(self.all_correct),
            "n_correct": int(sum(self.correct)),
            "total_samples": self.total_samples,
            "mean_samples_per_agent": repr(float(self.mean_samples_per_agent)),
            "max_samples_per_agent": int(max(self.samples_per_agent)),
            "communication_rounds": self.communication_rounds,
            "phases_executed": self.phases_executed,
            "final_phase_index": self.final_phase_index,
            "payload_numbers_total": int(sum(self.payload_numbers_per_round)),
            "answers": " ".join(str(a) for a in self.answers),
            "warnings": "; ".join(self.warnings),
        }

    def phase_trace_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=PHASE_FIELDS, lineterminator="\n")
        w.writeheader()
        for rec in self.phase_trace:
            row = asdict(rec)
            del row["survivors"]
            row["xi"] = repr(float(rec.xi))
            row["rho"] = repr(float(rec.rho))
            row["alive_sizes"] = " ".join(str(s) for s in rec.alive_sizes)
            row["warnings"] = "; ".join(rec.warnings)
            w.writerow(row)
        return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


# -- instance generation ----------------------------------------------------


@dataclass
class InstanceConfig:
    V: int = 5
    d: int = 4
    n: int = 6
    delta_min: float = 0.1
    theta_start: float = 0.1
    arm_set: str = "paper-grid"
    task_regime: str = "ones"
    n_blocks: int = 2
    block_coupling: float = 0.0
    task_table: Optional[List[List[float]]] = None
    arm_kernel: str = "linear"
    bandwidth: float = 1.0
    noise_std: float = 1.0
    seed: int = 0

    def validate(self):
        if self.V < 1 or self.n < 1 or self.d < 2:
            raise ConfigurationError("need V >= 1, n >= 1 and d >= 2")
        if self.delta_min <= 0:
            raise ConfigurationError("delta_min must be positive")
        if self.arm_set not in ("paper-grid", "random-sphere"):
            raise ConfigurationError(f"unknown arm_set {self.arm_set!r}")
        if self.task_regime not in ("ones", "block", "identity", "table"):
            raise ConfigurationError(f"unknown task_regime {self.task_regime!r}")
        if self.task_regime == "table":
            check_task_table(self.task_table, self.V)
        if self.arm_kernel not in ("linear", "rbf"):
            raise ConfigurationError(f"unknown arm_kernel {self.arm_kernel!r}")
        if self.bandwidth <= 0:
            raise ConfigurationError("bandwidth must be positive")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be nonnegative")
        return self


def check_task_table(table, V):
    """A task Gram must be a symmetric PSD V x V matrix."""
    if table is None:
        raise ConfigurationError("task_regime 'table' needs task_table")
    T = np.asarray(table, dtype=float)
    if T.shape != (V, V):
        raise ConfigurationError(f"task_table must be {V}x{V}, got shape {T.shape}")
    if not np.allclose(T, T.T, atol=1e-12):
        raise ConfigurationError("task_table is not symmetric")
    if np.linalg.eigvalsh(T).min() < -1e-9 * max(np.trace(T), 1.0):
        raise ConfigurationError("task_table is not positive semidefinite")
    return T


def paper_grid_arms(V, d, n):
    """Deterministic arm sets built from standard basis vectors.

    Every agent gets the top basis vectors (always including the two best
    coordinates) and fills the remaining slots with averages of basis vectors
    among the first ``d - 1`` coordinates, rotated by agent index so that
    agents share some but not all arms.
    """
    eye = np.eye(d)
    basis = [eye[k] for k in range(d - 1, -1, -1)]
    combos = []
    low = list(range(d - 1))
    for size in (2, 3):
        for c in _combinations(low, size):
            combos.append(eye[list(c)].mean(axis=0))
    blocks = []
    for v in range(V):
        rows = basis[:min(n, d)]
        extra = n - len(rows)
        if extra > 0:
            if not combos:
                raise ConfigurationError("paper-grid needs d >= 3 when n > d")
            rows = rows + [combos[(v + k) % len(combos)] for k in range(extra)]
        blocks.append(np.array(rows[::-1]))
    return blocks


def _combinations(items, k):
    from itertools import combinations
    return list(combinations(items, k))


def _task_setup(cfg):
    V = cfg.V
    if cfg.task_regime == "ones":
        return OnesKernel(), np.ones((V, V))
    if cfg.task_regime == "identity":
        return IdentityKernel(), np.eye(V)
    if cfg.task_regime == "table":
        table = np.asarray(cfg.task_table, dtype=float)
    else:
        table = block_task_table(V, cfg.n_blocks, cfg.block_coupling)
    return TableKernel(table), table


def generate_instance(config):
    """Instance family with an arithmetic reward parameter over arm features.

    With the linear arm kernel the reward is ``phi(x~)^T theta`` for the
    explicit product feature map.  With the RBF kernel the same target means
    are interpolated by the minimum-norm element of the RKHS, whose norm is
    recorded as the bound ``B``.
    """
    cfg = config if isinstance(config, InstanceConfig) else InstanceConfig(**config)
    cfg.validate()
    theta_x = cfg.theta_start + cfg.delta_min * np.arange(cfg.d)
    task_kernel, task_gram = _task_setup(cfg)
    F = psd_factor(task_gram)
    w, *_ = np.linalg.lstsq(F, np.ones(cfg.V), rcond=None)
    if not np.allclose(F @ w, 1.0, atol=1e-9):
        raise ConfigurationError("task kernel cannot express a reward shared by all agents")
    rng = np.random.default_rng(cfg.seed)
    if cfg.arm_set == "paper-grid":
        blocks = paper_grid_arms(cfg.V, cfg.d, cfg.n)
    else:
        blocks = [_unit_rows(rng, cfg.n, cfg.d) for _ in range(cfg.V)]
    for attempt in range(100):
        arms = make_arms(blocks, [[v] for v in range(cfg.V)])
        means = np.array([a.arm_feature @ theta_x for a in arms])
        top = np.sort(means.reshape(cfg.V, cfg.n), axis=1)
        if cfg.n == 1 or np.all(top[:, -1] - top[:, -2] > 1e-12):
            break
        blocks = [b + 1e-6 * rng.standard_normal(b.shape) for b in blocks]
    else:
        raise ConfigurationError("could not generate an instance with unique best arms")
    name = (f"{cfg.arm_set}:{cfg.task_regime}:V{cfg.V}:d{cfg.d}:n{cfg.n}:"
            f"dm{cfg.delta_min:g}")
    meta = {"config": asdict(cfg), "theta_arm": theta_x}
    if cfg.arm_kernel == "linear":
        theta = np.kron(w, theta_x)
        spec = KernelSpec(LinearKernel(), task_kernel, product_feature_map(F))
        return ProblemInstance(cfg.V, cfg.n, arms, spec, means, cfg.noise_std, theta,
                               task_gram, name, meta)
    spec = KernelSpec(RBFKernel(cfg.bandwidth), task_kernel)
    G = spec.gram(arms)
    coef = np.linalg.lstsq(G, means, rcond=None)[0]
    fitted = G @ coef
    if not np.allclose(fitted, means, atol=1e-8):
        raise ConfigurationError("target means are not representable under this kernel")
    norm = float(np.sqrt(max(coef @ G @ coef, 0.0)))
    return ProblemInstance(cfg.V, cfg.n, arms, spec, means, cfg.noise_std, None, task_gram,
                           name + ":rbf", meta, norm)


def _unit_rows(rng, n, d):
    X = rng.standard_normal((n, d))
    return X / np.linalg.norm(X, axis=1, keepdims=True)
