"""Composite task-arm kernels and the kernel-trick quantities built on them.

Every tasked arm pairs an arm feature vector ``x`` with a task key ``z``; the
composite kernel is the product ``K_Z(z, z') * K_X(x, x')``.  Weighted Gram
matrices carry per-arm weights (sample counts or design probabilities) as
``sqrt(w_i w_j) K(x_i, x_j)``, and all regularized inverses are applied
through Cholesky solves.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import linalg

from .validation import (
    ConfigurationError,
    NumericalError,
    check_positive,
    check_weights,
)


@dataclass(frozen=True, eq=False)
class TaskedArm:
    """An (arm feature, task key) pair with its position in the flat index."""

    global_index: int
    agent: int
    local_index: int
    arm_feature: np.ndarray
    task_feature: np.ndarray

    def __repr__(self):
        return (f"TaskedArm(global_index={self.global_index}, agent={self.agent}, "
                f"local_index={self.local_index})")


def make_arms(arm_features, task_keys):
    """Build the flat list of tasked arms.

    ``arm_features`` is a sequence of V arrays of shape (n, d_X); agent ``v``
    owns the rows of ``arm_features[v]`` and the task key ``task_keys[v]``.
    """
    if len(arm_features) != len(task_keys):
        raise ConfigurationError("need one task key per agent")
    blocks = [np.atleast_2d(np.asarray(f, dtype=float)) for f in arm_features]
    n = blocks[0].shape[0]
    dim = blocks[0].shape[1]
    arms = []
    for v, (block, key) in enumerate(zip(blocks, task_keys)):
        if block.shape != (n, dim):
            raise ConfigurationError(
                f"agent {v} has arm block of shape {block.shape}, expected {(n, dim)}")
        z = np.atleast_1d(np.asarray(key, dtype=float))
        for i in range(n):
            arms.append(TaskedArm(v * n + i, v, i, block[i].copy(), z))
    return arms


def stack_arms(arms: Sequence[TaskedArm]):
    X = np.vstack([a.arm_feature for a in arms])
    Z = np.vstack([a.task_feature for a in arms])
    return X, Z


# -- base kernels -----------------------------------------------------------
# Each kernel maps row-stacked inputs A (m, d) and B (k, d) to an (m, k) matrix.


class LinearKernel:
    name = "linear"

    def __call__(self, A, B):
        return np.asarray(A, dtype=float) @ np.asarray(B, dtype=float).T

    def __repr__(self):
        return "LinearKernel()"


class RBFKernel:
    name = "rbf"

    def __init__(self, bandwidth=1.0):
        self.bandwidth = check_positive(bandwidth, "bandwidth")

    def __call__(self, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :]
              - 2.0 * A @ B.T)
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.bandwidth ** 2))

    def __repr__(self):
        return f"RBFKernel(bandwidth={self.bandwidth})"


class OnesKernel:
    """Constant kernel: every task is the same task."""

    name = "ones"

    def __call__(self, A, B):
        return np.ones((np.shape(A)[0], np.shape(B)[0]))

    def __repr__(self):
        return "OnesKernel()"


class IdentityKernel:
    """1 for equal keys, 0 otherwise: every task distinct."""

    name = "identity"

    def __call__(self, A, B):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        return np.all(A[:, None, :] == B[None, :, :], axis=2).astype(float)

    def __repr__(self):
        return "IdentityKernel()"


class TableKernel:
    """Kernel given as an explicit Gram table over integer keys (first column)."""

    name = "table"

    def __init__(self, table):
        self.table = np.atleast_2d(np.asarray(table, dtype=float))
        if self.table.shape[0] != self.table.shape[1]:
            raise ConfigurationError(f"kernel table must be square, got {self.table.shape}")

    def _keys(self, A):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        keys = A[:, 0].astype(int)
        if np.any(keys != A[:, 0]) or keys.min() < 0 or keys.max() >= len(self.table):
            raise ConfigurationError("table kernel keys must be integers indexing the table")
        return keys

    def __call__(self, A, B):
        return self.table[np.ix_(self._keys(A), self._keys(B))]

    def __repr__(self):
        return f"TableKernel(shape={self.table.shape})"


def block_task_table(V, n_blocks, coupling=0.0):
    """Task Gram with ``n_blocks`` contiguous blocks of agents.

    Same-block entries are 1, cross-block entries ``coupling`` (in [0, 1)).
    """
    if not 1 <= n_blocks <= V:
        raise ConfigurationError(f"n_blocks must be in [1, {V}], got {n_blocks}")
    if not 0.0 <= coupling < 1.0:
        raise ConfigurationError(f"block coupling must be in [0, 1), got {coupling}")
    labels = np.arange(V) * n_blocks // V
    same = labels[:, None] == labels[None, :]
    return np.where(same, 1.0, coupling)


def make_base_kernel(name, **params):
    if name == "linear":
        return LinearKernel()
    if name == "rbf":
        return RBFKernel(params.get("bandwidth", 1.0))
    if name == "ones":
        return OnesKernel()
    if name == "identity":
        return IdentityKernel()
    if name == "table":
        if "table" not in params:
            raise ConfigurationError("table kernel requires a 'table' entry")
        return TableKernel(params["table"])
    raise ConfigurationError(f"unknown kernel {name!r}")


@dataclass(eq=False)
class KernelSpec:
    """Product composite kernel ``task_kernel(z, z') * arm_kernel(x, x')``.

    ``explicit_feature_map`` is optional; when present it must satisfy
    ``phi(a) @ phi(b) == K(a, b)`` and is used by oracles and by the
    simulator to define the true reward.
    """

    arm_kernel: Callable
    task_kernel: Callable = field(default_factory=OnesKernel)
    explicit_feature_map: Optional[Callable[[TaskedArm], np.ndarray]] = None

    def gram(self, arms, others=None):
        """Composite Gram matrix between two arm lists (pure, vectorized)."""
        X, Z = stack_arms(arms)
        if others is None:
            X2, Z2 = X, Z
        else:
            X2, Z2 = stack_arms(others)
        if X.shape[1] != X2.shape[1] or Z.shape[1] != Z2.shape[1]:
            raise ConfigurationError("arm or task feature dimensions differ")
        return self.task_kernel(Z, Z2) * self.arm_kernel(X, X2)

    def features(self, arms):
        if self.explicit_feature_map is None:
            raise ConfigurationError("kernel spec has no explicit feature map")
        return np.vstack([np.asarray(self.explicit_feature_map(a), dtype=float) for a in arms])


def product_feature_map(task_factor, arm_map=None):
    """Explicit map ``kron(task_factor[z], arm_map(x))`` for a product kernel.

    ``task_factor`` maps the integer task key (first entry of ``z``) to a row
    of a factor F with ``F F^T`` equal to the task Gram.
    """
    F = np.atleast_2d(np.asarray(task_factor, dtype=float))

    def phi(arm):
        x = arm.arm_feature if arm_map is None else arm_map(arm.arm_feature)
        return np.kron(F[int(arm.task_feature[0])], x)

    return phi


def psd_factor(gram, rtol=1e-10):
    """Thin factor F with ``F @ F.T == gram`` from the eigen-decomposition."""
    vals, vecs = np.linalg.eigh((gram + gram.T) / 2.0)
    keep = vals > rtol * max(vals.max(), 1.0)
    return vecs[:, keep] * np.sqrt(vals[keep])


# -- kernel operations ------------------------------------------------------


def _check_dims(spec, a, b):
    if a.arm_feature.shape != b.arm_feature.shape:
        raise ConfigurationError(
            f"arm feature dimensions differ: {a.arm_feature.shape} vs {b.arm_feature.shape}")
    if a.task_feature.shape != b.task_feature.shape:
        raise ConfigurationError("task feature dimensions differ")


def eval_kernel(spec: KernelSpec, a: TaskedArm, b: TaskedArm) -> float:
    _check_dims(spec, a, b)
    return float(spec.gram([a], [b])[0, 0])


@dataclass(frozen=True, eq=False)
class WeightedGram:
    weights: np.ndarray
    matrix: np.ndarray


def weight_gram(gram, weights):
    """``sqrt(w_i w_j) * gram[i, j]`` for a precomputed Gram."""
    r = np.sqrt(weights)
    return r[:, None] * gram * r[None, :]


def build_weighted_gram(spec, arms, weights, gram=None):
    w = check_weights(weights, size=len(arms))
    G = spec.gram(arms) if gram is None else gram
    return WeightedGram(w, weight_gram(G, w))


def weighted_kernel_vector(spec, arms, weights, query):
    w = check_weights(weights, size=len(arms))
    return np.sqrt(w) * spec.gram([query], arms)[0]


def spd_cholesky(matrix):
    """Cholesky factor of an SPD matrix, retrying once with a small jitter."""
    try:
        return linalg.cho_factor(matrix, lower=True, check_finite=False)
    except linalg.LinAlgError:
        n = matrix.shape[0]
        jitter = 1e-12 * max(np.trace(matrix), 1e-300) / n
        try:
            return linalg.cho_factor(matrix + jitter * np.eye(n), lower=True, check_finite=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("SPD factorization failed after jitter") from exc


def spd_solve(factor, rhs):
    return linalg.cho_solve(factor, rhs, check_finite=False)


def precision_matrix(gram, weights, xi):
    """Matrix of ``phi_a^T (xi I + sum_x w_x phi_x phi_x^T)^{-1} phi_b`` over all arms.

    Computed through the push-through identity
    ``xi^{-1} (K - K D (xi I + D K D)^{-1} D K)`` with ``D = diag(sqrt(w))``.
    """
    r = np.sqrt(weights)
    DK = r[:, None] * gram
    inner = DK * r[None, :]
    inner[np.diag_indices_from(inner)] += xi
    Y = spd_solve(spd_cholesky(inner), DK)
    Q = (gram - DK.T @ Y) / xi
    return (Q + Q.T) / 2.0


def pair_norms_sq(Q, rows, cols):
    """Regularized squared pair norms from a precision matrix."""
    return Q[rows, rows] + Q[cols, cols] - 2.0 * Q[rows, cols]


def regularized_pair_norm_sq(spec, arms, weights, xi, i, j, gram=None):
    """``||phi(i) - phi(j)||^2`` under ``(xi I + sum_x w_x phi_x phi_x^T)^{-1}``."""
    xi = check_positive(xi, "xi")
    w = check_weights(weights, size=len(arms))
    if i.global_index == j.global_index:
        return 0.0
    G = spec.gram(arms) if gram is None else gram
    a, b = i.global_index, j.global_index
    r = np.sqrt(w)
    diff = r * (G[a] - G[b])
    inner = weight_gram(G, w)
    inner[np.diag_indices_from(inner)] += xi
    sol = spd_solve(spd_cholesky(inner), diff)
    raw = G[a, a] + G[b, b] - 2.0 * G[a, b]
    return max((raw - diff @ sol) / xi, 0.0)
