"""Limiting covariance parameters of the validation-loss vector.

For configurations i, j the scheme enters the limiting covariance through

    tau_ij = 1 / (n M^2 alpha^2) * sum_s sum_m sum_m' Pr(s in I_{m,i} and I_{m',j})

which, for every scheme in ``splits``, equals sigma2 on the diagonal and
tau2 * sigma2 off it. Writing c_j(s) for the number of folds of configuration
j that contain s, the triple sum is E[sum_s c_i(s) c_j(s)], which is what the
Monte-Carlo and enumeration paths evaluate.

Independent bootstraps per configuration behave like reshuffled n-fold
holdout with alpha = 1/n, giving sigma close to sqrt(2) and tau close to
sqrt(1/2). Bootstrap resampling itself is not provided.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import pandas as pd

from config import ConfigError
from splits import SchemeSpec, Variant, draw_membership

logger = logging.getLogger(__name__)

CLAMP_STDERRS = 3.0
BATCH_SIZE = 4096
# Largest support enumerated by exact_tau.
MAX_ENUMERATION = 2_000_000


class EstimationError(ValueError):
    pass


class Pair(str, Enum):
    SAME = "same"
    DISTINCT = "distinct"


class Method(str, Enum):
    CLOSED_FORM = "closed-form"
    EXACT = "exact-enumeration"
    MONTE_CARLO = "monte-carlo"


@dataclass(frozen=True)
class CovarianceParams:
    sigma2: float
    tau2: float
    clamped: bool = False

    def __post_init__(self):
        if not self.sigma2 > 0:
            raise EstimationError("sigma2 must be positive, got {}".format(self.sigma2))
        if not 0.0 < self.tau2 <= 1.0:
            raise EstimationError("tau2 must lie in (0, 1], got {}".format(self.tau2))

    @property
    def offdiag(self):
        return self.tau2 * self.sigma2


@dataclass(frozen=True)
class TauEstimate:
    diag: Optional[float]
    offdiag: Optional[float]
    standard_error: float
    method: Method

    def __post_init__(self):
        if self.standard_error < 0:
            raise EstimationError("standard_error must be nonnegative")
        if self.method != Method.MONTE_CARLO and self.standard_error != 0:
            raise EstimationError("{} estimates carry no standard error".format(self.method.value))


def closed_form(spec):
    spec.validate()
    alpha = spec.alpha
    base = spec.variant.base
    if base == "holdout":
        sigma2 = 1.0 / alpha
        tau2 = alpha if spec.reshuffled else 1.0
    elif base == "mfold-cv":
        sigma2, tau2 = 1.0, 1.0
    else:
        sigma2 = 1.0 + (1.0 - alpha) / (spec.M * alpha)
        tau2 = 1.0 / sigma2 if spec.reshuffled else 1.0
    return CovarianceParams(sigma2, tau2)


def _normalizer(spec):
    return spec.n * spec.total_folds ** 2 * spec.alpha ** 2


def _pair_statistic(spec, pair, draws, rng):
    """Per-draw values of sum_s c_i(s) c_j(s), normalized."""
    pair = Pair(pair)
    independent = pair == Pair.DISTINCT and spec.reshuffled
    configs = 2 if independent else 1
    values = np.empty(draws)
    done = 0
    while done < draws:
        batch = min(BATCH_SIZE, draws - done)
        membership = draw_membership(spec, configs, rng, size=(batch,))
        counts = membership.sum(axis=2, dtype=np.int64)
        other = counts[:, 1] if independent else counts[:, 0]
        values[done:done + batch] = (counts[:, 0] * other).sum(axis=1)
        done += batch
    return values / _normalizer(spec)


def estimate_tau(spec, pair, draws, rng):
    """Monte-Carlo estimate of tau_ii (``same``) or tau_ij, i != j (``distinct``).

    Fixed variants redraw their shared sets in every replication, so the
    probability is over the scheme's own randomness.
    """
    if draws < 1:
        raise ConfigError("draws must be at least 1, got {}".format(draws))
    spec.validate()
    values = _pair_statistic(spec, pair, draws, rng)
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(draws)) if draws > 1 else 0.0
    if Pair(pair) == Pair.SAME:
        return TauEstimate(mean, None, stderr, Method.MONTE_CARLO)
    return TauEstimate(None, mean, stderr, Method.MONTE_CARLO)


def estimate_params(spec, draws, rng):
    same = estimate_tau(spec, Pair.SAME, draws, rng)
    distinct = estimate_tau(spec, Pair.DISTINCT, draws, rng)
    return TauEstimate(same.diag, distinct.offdiag,
                       max(same.standard_error, distinct.standard_error), Method.MONTE_CARLO)


def _block_support(spec):
    """Membership counts of one independent block over its whole support.

    A block is one validation set for holdout variants and one partition for
    CV variants. Every outcome of the generator is equally likely.
    """
    n = spec.n
    if spec.variant.is_cv:
        if math.factorial(n) > MAX_ENUMERATION:
            raise ConfigError("exact enumeration of partitions needs a smaller n, got n={}".format(n))
        cuts = np.cumsum([0] + spec.fold_sizes[:spec.M])
        rows = []
        for perm in itertools.permutations(range(n)):
            row = np.zeros(n)
            for start, stop in zip(cuts[:-1], cuts[1:]):
                row[list(perm[start:stop])] += 1.0
            rows.append(row)
        return np.array(rows)
    k = spec.n_valid
    if math.comb(n, k) > MAX_ENUMERATION:
        raise ConfigError("exact enumeration of subsets needs a smaller n, got n={} k={}".format(n, k))
    rows = []
    for subset in itertools.combinations(range(n), k):
        row = np.zeros(n)
        row[list(subset)] = 1.0
        rows.append(row)
    return np.array(rows)


def exact_tau(spec, pair):
    """tau_ii or tau_ij from the full support of one block, no sampling."""
    spec.validate()
    pair = Pair(pair)
    support = _block_support(spec)
    first = support.mean(axis=0)
    second = (support ** 2).mean(axis=0)
    blocks = spec.repeats if spec.variant.is_cv else spec.M
    if pair == Pair.DISTINCT and spec.reshuffled:
        total = ((blocks * first) ** 2).sum()
    else:
        total = (blocks * second + blocks * (blocks - 1) * first ** 2).sum()
    value = float(total / _normalizer(spec))
    if pair == Pair.SAME:
        return TauEstimate(value, None, 0.0, Method.EXACT)
    return TauEstimate(None, value, 0.0, Method.EXACT)


def sigma_tau_from_estimates(diag, offdiag, standard_error=0.0):
    """sigma2 = diag, tau2 = offdiag / diag clamped into (0, 1].

    ``clamped`` is set only when the raw ratio overshoots 1 by more than
    three standard errors; smaller overshoots are Monte-Carlo noise.
    """
    if not diag > 0:
        raise EstimationError("diagonal estimate must be positive, got {}".format(diag))
    ratio = offdiag / diag
    flagged = False
    if ratio > 1.0:
        ratio_se = standard_error / diag
        if ratio - 1.0 > CLAMP_STDERRS * ratio_se:
            flagged = True
            logger.warning("tau2 ratio {:.6f} exceeds 1 by more than {} standard errors, clamped".format(ratio, CLAMP_STDERRS))
        ratio = 1.0
    elif ratio <= 0.0:
        flagged = True
        logger.warning("tau2 ratio {} is not positive, clamped".format(ratio))
        ratio = np.finfo(float).tiny
    return CovarianceParams(float(diag), float(ratio), flagged)


def tau_record(spec, draws, rng):
    """The result object printed by the ``tau`` subcommand."""
    exact = closed_form(spec)
    estimate = estimate_params(spec, draws, rng)
    mc = sigma_tau_from_estimates(estimate.diag, estimate.offdiag, estimate.standard_error)
    record = {
        "scheme": spec.variant.value,
        "n": spec.n,
        "alpha": spec.alpha,
        "M": spec.M,
        "sigma2": exact.sigma2,
        "tau2": exact.tau2,
        "sigma2_mc": mc.sigma2,
        "tau2_mc": mc.tau2,
        "stderr": estimate.standard_error,
        "draws": draws,
    }
    if spec.repeats != 1:
        record["repeats"] = spec.repeats
    if mc.clamped:
        record["flags"] = ["tau2-clamped"]
    return record


def fold_ablation(alpha, n, folds):
    """Closed-form parameters of fixed and reshuffled M-fold holdout over M."""
    rows = []
    for M in folds:
        fixed = closed_form(SchemeSpec.create(Variant.MFOLD_HOLDOUT, n, alpha, M))
        shuffled = closed_form(SchemeSpec.create(Variant.RESHUFFLED_MFOLD_HOLDOUT, n, alpha, M))
        rows.append({"M": M, "sigma2": fixed.sigma2, "tau2_fixed": fixed.tau2, "tau2_reshuffled": shuffled.tau2})
    return pd.DataFrame(rows, columns=["M", "sigma2", "tau2_fixed", "tau2_reshuffled"])
