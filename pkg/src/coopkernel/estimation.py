"""Kernelized regularized least squares from per-arm observation summaries.

The estimator depends on the data only through the per-arm counts ``N_i``
and empirical means ``ybar_i``: with ``Phi`` the rows ``sqrt(N_i) phi_i``,

    theta_hat = Phi^T (N xi I + K)^{-1} (sqrt(N) * ybar),   K = Phi Phi^T,

and every reward or gap estimate is an inner product of a weighted kernel
vector with the solved weights.
"""

from dataclasses import dataclass
from typing import List

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .kernel import KernelSpec, TaskedArm, spd_cholesky, spd_solve, weight_gram
from .validation import PreconditionError, check_positive


@dataclass(frozen=True, eq=False)
class ObservationSummary:
    counts: np.ndarray
    means: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        means = np.asarray(self.means, dtype=float)
        if counts.shape != means.shape or counts.ndim != 1:
            raise PreconditionError("counts and means must be 1-d arrays of equal length")
        if np.any(counts < 0):
            raise PreconditionError("counts must be nonnegative")
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "means", np.where(counts > 0, means, 0.0))

    @classmethod
    def empty(cls, size):
        return cls(np.zeros(size, dtype=np.int64), np.zeros(size))

    @classmethod
    def from_sums(cls, counts, sums):
        counts = np.asarray(counts, dtype=np.int64)
        safe = np.maximum(counts, 1)
        return cls(counts, np.where(counts > 0, np.asarray(sums, dtype=float) / safe, 0.0))

    @property
    def total(self):
        return int(self.counts.sum())

    def merge(self, other):
        """Count-weighted combination; associative and commutative."""
        if self.counts.shape != other.counts.shape:
            raise PreconditionError("cannot merge summaries over different arm sets")
        counts = self.counts + other.counts
        sums = self.counts * self.means + other.counts * other.means
        return ObservationSummary.from_sums(counts, sums)

    def __eq__(self, other):
        return (isinstance(other, ObservationSummary)
                and np.array_equal(self.counts, other.counts)
                and np.array_equal(self.means, other.means))

    __hash__ = None


def merge_summaries(summaries):
    it = iter(summaries)
    out = next(it)
    for s in it:
        out = out.merge(s)
    return out


@dataclass(frozen=True, eq=False)
class FittedEstimator:
    arms: List[TaskedArm]
    spec: KernelSpec
    summary: ObservationSummary
    regularizer: float
    solved_weights: np.ndarray
    gram: np.ndarray

    def kernel_vector(self, x):
        """``k_t(x)``: sqrt-count weighted kernel column for arm ``x``."""
        r = np.sqrt(self.summary.counts.astype(float))
        if isinstance(x, TaskedArm) and x.global_index < len(self.arms) \
                and self.arms[x.global_index] is x:
            return r * self.gram[x.global_index]
        return r * self.spec.gram([x], self.arms)[0]

    def rewards(self):
        """Estimated reward of every arm at once."""
        r = np.sqrt(self.summary.counts.astype(float))
        return self.gram @ (r * self.solved_weights)


def fit(spec, arms, summary, N_total, xi, gram=None):
    xi = check_positive(xi, "xi")
    if int(N_total) != summary.total:
        raise PreconditionError(f"N_total={N_total} differs from summed counts {summary.total}")
    G = spec.gram(arms) if gram is None else gram
    counts = summary.counts.astype(float)
    reg = float(N_total) * xi
    if summary.total == 0:
        return FittedEstimator(list(arms), spec, summary, reg, np.zeros(len(arms)), G)
    K_t = weight_gram(G, counts)
    K_t[np.diag_indices_from(K_t)] += reg
    ybar = np.sqrt(counts) * summary.means
    alpha = spd_solve(spd_cholesky(K_t), ybar)
    return FittedEstimator(list(arms), spec, summary, reg, alpha, G)


def estimate_reward(est, x):
    return float(est.kernel_vector(x) @ est.solved_weights)


def estimate_gap(est, i, j):
    """Estimated ``f(i) - f(j)``."""
    if i is j:
        return 0.0
    return float((est.kernel_vector(i) - est.kernel_vector(j)) @ est.solved_weights)


class CountWeightedKernelRidge(RegressorMixin, BaseEstimator):
    """Kernel ridge regression on aggregated per-arm summaries.

    Parameters
    ----------
    spec : KernelSpec
        Composite kernel used to compare tasked arms.
    xi : float
        Per-sample regularization; the ridge penalty is ``xi * sum(sample_weight)``.

    ``fit(X, y, sample_weight)`` takes a list of tasked arms, their empirical
    means and their sample counts.  ``predict`` accepts any tasked arms.
    """

    def __init__(self, spec=None, xi=1.0):
        self.spec = spec
        self.xi = xi

    def fit(self, X, y, sample_weight=None):
        arms = list(X)
        y = np.asarray(y, dtype=float)
        if len(arms) != y.shape[0]:
            raise PreconditionError("X and y have different lengths")
        counts = (np.ones(len(arms), dtype=np.int64) if sample_weight is None
                  else np.asarray(sample_weight))
        if np.any(counts != np.round(counts)):
            raise PreconditionError("sample_weight must hold integer sample counts")
        summary = ObservationSummary(counts.astype(np.int64), y)
        self.estimator_ = fit(self.spec, arms, summary, summary.total, self.xi)
        self.dual_coef_ = self.estimator_.solved_weights
        self.n_samples_seen_ = summary.total
        return self

    def predict(self, X):
        check_is_fitted(self, "estimator_")
        arms = list(X)
        est = self.estimator_
        r = np.sqrt(est.summary.counts.astype(float))
        K = self.spec.gram(arms, est.arms)
        return K @ (r * est.solved_weights)
