"""Monte-Carlo checks with learners whose true risk is known exactly.

Two task families are provided:

* ``shrinkage``: Y ~ N(theta, s^2), X ignored, g_l(T) = l * mean(Y over T).
  For a model trained on n points mu(l) = s^2 + theta^2 (1 - l)^2 + l^2 s^2 / n.
* ``threshold``: X ~ U(0, 1), Y = 1{X > 1/2} with each label flipped with
  probability q. g_l is a decision stump split at l whose two leaves predict
  the majority training label of their side (1/2 on a tie or an empty leaf).
  mu(l) is a finite binomial sum. With q near 1/2 the surface is flat and
  the validation noise is rough across l, the regime where reshuffling pays
  off.

Both use squared error. True risks come from the closed forms; the
Monte-Carlo oracle ``true_risk_monte_carlo`` exists to cross-check them.
"""
import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.stats

from config import ConfigError
from logging_pool import SERIAL
from splits import SchemeSpec, generate
from streams import DATA, ORDER, SPLITS, blocks, substream
from tau import closed_form

logger = logging.getLogger(__name__)

ORACLE_SAMPLES = 10 ** 6
ORACLE_TRAININGS = 100
COVCHECK_BLOCK = 500
SEARCH_BLOCK = 50
PSD_TOLERANCE = 1e-9

TRAJECTORY_COLUMNS = ["replication", "iteration", "scheme", "incumbent_lambda",
                      "incumbent_validation_loss", "incumbent_true_risk"]
SUMMARY_COLUMNS = ["scheme", "iteration", "mean_true_risk", "stderr", "mean_validation_loss", "mean_optimism"]
COVARIANCE_COLUMNS = ["scheme", "i", "j", "cov", "corr"]


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    def __len__(self):
        return len(self.y)


class TractableTask:
    """A data distribution, a one-parameter learner and its exact true risk."""

    family = None

    @property
    def lambdas(self):
        return np.asarray(self.grid, dtype=float)

    def sample(self, n, rng):
        raise NotImplementedError

    def point_losses(self, lams, data, train):
        """Squared errors, shape (configs, folds, n), of models fit on ``train``."""
        raise NotImplementedError

    def true_risk(self, lam, n):
        raise NotImplementedError

    def true_risk_monte_carlo(self, lam, n, rng, samples=ORACLE_SAMPLES, trainings=ORACLE_TRAININGS):
        raise NotImplementedError

    def losses(self, lams, data, membership):
        """Validation loss per configuration: fold-averaged mean squared error.

        ``membership`` has shape (configs, folds, n) and marks validation
        indices; the training set of a fold is its complement.
        """
        membership = np.asarray(membership, dtype=bool)
        train = ~membership
        if np.any(train.sum(axis=-1) == 0):
            raise ConfigError("a fold has an empty training complement")
        point = self.point_losses(np.asarray(lams, dtype=float), data, train)
        per_fold = (point * membership).sum(axis=-1) / membership.sum(axis=-1)
        return per_fold.mean(axis=-1)


@dataclass(frozen=True)
class ShrinkageMeanTask(TractableTask):
    theta: float = 0.0
    noise: float = 1.0
    grid: tuple = (0.0, 0.25, 0.5)

    family = "shrinkage"

    def sample(self, n, rng):
        y = self.theta + self.noise * rng.standard_normal(n)
        return Dataset(np.zeros(n), y)

    def point_losses(self, lams, data, train):
        y = data.y
        means = (train * y).sum(axis=-1) / train.sum(axis=-1)
        predictions = lams[:, None] * means
        return (y - predictions[..., None]) ** 2

    def true_risk(self, lam, n):
        s2 = self.noise ** 2
        return s2 + self.theta ** 2 * (1.0 - lam) ** 2 + lam ** 2 * s2 / n

    def true_risk_monte_carlo(self, lam, n, rng, samples=ORACLE_SAMPLES, trainings=ORACLE_TRAININGS):
        per_training = max(1, samples // trainings)
        total = 0.0
        for _ in range(trainings):
            model = lam * self.sample(n, rng).y.mean()
            fresh = self.sample(per_training, rng).y
            total += float(((fresh - model) ** 2).mean())
        return total / trainings


@dataclass(frozen=True)
class ThresholdTask(TractableTask):
    flip: float = 0.4
    grid: tuple = tuple(np.linspace(0.0, 1.0, 200))

    family = "threshold"

    def __post_init__(self):
        if not 0.0 <= self.flip <= 0.5:
            raise ConfigError("flip probability must lie in [0, 0.5], got {}".format(self.flip))

    def sample(self, n, rng):
        x = rng.random(n)
        clean = (x > 0.5).astype(float)
        flipped = rng.random(n) < self.flip
        return Dataset(x, np.where(flipped, 1.0 - clean, clean))

    def point_losses(self, lams, data, train):
        left = np.broadcast_to((data.x[None, :] <= lams[:, None])[:, None, :], train.shape)
        ones = data.y > 0.5
        predictions = np.where(left, majority_label(train & left, ones), majority_label(train & ~left, ones))
        return (data.y - predictions) ** 2

    def leaf_means(self, lam):
        """P(Y = 1) on the left leaf [0, lam] and on the right leaf (lam, 1]."""
        q = self.flip
        left = (q * min(lam, 0.5) + (1.0 - q) * max(0.0, lam - 0.5)) / lam if lam > 0 else 0.5
        right = (q * max(0.0, 0.5 - lam) + (1.0 - q) * (1.0 - max(lam, 0.5))) / (1.0 - lam) if lam < 1 else 0.5
        return left, right

    def true_risk(self, lam, n):
        left, right = self.leaf_means(lam)
        return _leaf_risk(lam, left, n) + _leaf_risk(1.0 - lam, right, n)

    def true_risk_monte_carlo(self, lam, n, rng, samples=ORACLE_SAMPLES, trainings=ORACLE_TRAININGS):
        per_training = max(1, samples // trainings)
        total = 0.0
        for _ in range(trainings):
            data = self.sample(n, rng)
            left, ones = data.x <= lam, data.y > 0.5
            low, high = majority_label(left, ones).item(), majority_label(~left, ones).item()
            fresh = self.sample(per_training, rng)
            total += float(((fresh.y - np.where(fresh.x <= lam, low, high)) ** 2).mean())
        return total / trainings


def majority_label(mask, ones):
    """Majority label of the points selected by ``mask``, 1/2 on a tie or no points.

    ``mask`` has shape (..., n); the result keeps a trailing axis of length 1.
    """
    positive = (mask & ones).sum(axis=-1)
    negative = (mask & ~ones).sum(axis=-1)
    return (0.5 + 0.5 * np.sign(positive - negative))[..., None]


def _leaf_risk(mass, mean, n):
    """Expected squared error on one leaf of a stump fit on n points.

    Training points land in the leaf with label 1 or 0 with probabilities
    a = mass * mean and b = mass * (1 - mean); the leaf predicts 1 when the
    label-1 count wins, 0 when it loses and 1/2 on a tie.
    """
    if mass <= 0.0:
        return 0.0
    a, b = mass * mean, mass * (1.0 - mean)
    counts = np.arange(n + 1)
    p_count = scipy.stats.binom.pmf(counts, n, a)
    rest = min(1.0, b / (1.0 - a))
    wins = float(p_count @ scipy.stats.binom.cdf(counts - 1, n - counts, rest))
    ties = float(p_count @ scipy.stats.binom.pmf(counts, n - counts, rest))
    losses = max(0.0, 1.0 - wins - ties)
    return mass * (wins * (1.0 - mean) + losses * mean + ties * 0.25)


@functools.lru_cache(maxsize=32)
def risk_table(task, n):
    """True risk of every grid configuration for a model trained on n points."""
    table = np.array([task.true_risk(lam, n) for lam in task.grid])
    table.flags.writeable = False
    return table


def create_task(cfg, grid=None):
    """Build the task named by ``cfg["family"]`` over the given grid."""
    family = cfg.get("family")
    kwargs = {}
    if grid is not None:
        kwargs["grid"] = tuple(float(g) for g in grid)
    if family == "shrinkage":
        return ShrinkageMeanTask(theta=float(cfg.get("theta", 0.0)), noise=float(cfg.get("noise", 1.0)), **kwargs)
    elif family == "threshold":
        return ThresholdTask(flip=float(cfg.get("flip", 0.4)), **kwargs)
    raise ConfigError("Invalid task family: {}. Expected shrinkage or threshold.".format(family))


def grid_from_config(cfg):
    if isinstance(cfg, dict):
        return tuple(float(g) for g in np.linspace(float(cfg["low"]), float(cfg["high"]), int(cfg["size"])))
    return tuple(float(g) for g in cfg)


def validation_loss(task, assignment, dataset, j, lam=None):
    """M-fold validation loss of configuration j (lambda defaults to grid[j])."""
    if len(dataset) != assignment.scheme.n:
        raise ConfigError("dataset has {} points, assignment expects n={}".format(len(dataset), assignment.scheme.n))
    lam = task.grid[j] if lam is None else lam
    return float(task.losses([lam], dataset, assignment.fold_mask(j)[None])[0])


# ---------------------------------------------------------------------------
# covariance structure


@dataclass(frozen=True)
class SchemeCovariance:
    scheme: SchemeSpec
    cov: np.ndarray = field(repr=False)
    corr: np.ndarray = field(repr=False)

    @property
    def mean_offdiag_corr(self):
        J = len(self.corr)
        return float(self.corr[~np.eye(J, dtype=bool)].mean())

    def is_psd(self, tolerance=PSD_TOLERANCE):
        eig = np.linalg.eigvalsh(self.cov)
        return bool(np.allclose(self.cov, self.cov.T) and eig.min() >= -tolerance * max(1.0, abs(eig.max())))


@dataclass(frozen=True)
class CovCheckResult:
    reference: SchemeCovariance
    candidate: SchemeCovariance
    variance_ratio: float
    correlation_ratio: float
    predicted_variance_ratio: float
    predicted_correlation_ratio: float
    replications: int

    def to_json(self):
        return {
            "reference": self.reference.scheme.to_json(),
            "candidate": self.candidate.scheme.to_json(),
            "variance_ratio": self.variance_ratio,
            "correlation_ratio": self.correlation_ratio,
            "predicted_variance_ratio": self.predicted_variance_ratio,
            "predicted_correlation_ratio": self.predicted_correlation_ratio,
            "replications": self.replications,
        }

    def to_frame(self):
        rows = []
        for part in (self.reference, self.candidate):
            J = len(part.cov)
            for i in range(J):
                for j in range(J):
                    rows.append({"scheme": part.scheme.variant.value, "i": i + 1, "j": j + 1,
                                 "cov": float(part.cov[i, j]), "corr": float(part.corr[i, j])})
        return pd.DataFrame(rows, columns=COVARIANCE_COLUMNS)


def _covcheck_block(job):
    task, schemes, seed, index, count = job
    J = len(task.grid)
    lams = task.lambdas
    data_rng = substream(seed, DATA, index)
    split_rngs = [substream(seed, SPLITS, index, k) for k in range(len(schemes))]
    out = np.empty((count, len(schemes), J))
    for r in range(count):
        data = task.sample(schemes[0].n, data_rng)
        for k, scheme in enumerate(schemes):
            assignment = generate(scheme, J, split_rngs[k])
            out[r, k] = task.losses(lams, data, assignment.membership)
    return out


def covariance_check(task, reference, candidate, replications, seed, mapper=SERIAL):
    """Empirical covariance of sqrt(n) times the validation-loss vector under two schemes.

    Both schemes see the same datasets. Ratios are candidate over reference;
    the sqrt(n) scaling cancels in them.
    """
    if reference.n != candidate.n:
        raise ConfigError("both schemes must use the same n")
    if replications < 2:
        raise ConfigError("replications must be at least 2")
    if len(task.grid) < 2:
        raise ConfigError("the covariance check needs at least two configurations")
    if replications < 1000:
        logger.warning("only {} replications, ratios will be noisy".format(replications))
    jobs = [(task, (reference, candidate), seed, index, count)
            for index, count in blocks(replications, COVCHECK_BLOCK)]
    losses = np.concatenate(mapper(_covcheck_block, jobs))

    parts = []
    for k, scheme in enumerate((reference, candidate)):
        scaled = math.sqrt(scheme.n) * losses[:, k, :]
        cov = np.cov(scaled, rowvar=False)
        cov = (cov + cov.T) / 2.0
        corr = np.corrcoef(scaled, rowvar=False)
        parts.append(SchemeCovariance(scheme, cov, corr))

    ref, cand = parts
    variance_ratio = float(np.mean(np.diag(cand.cov) / np.diag(ref.cov)))
    correlation_ratio = cand.mean_offdiag_corr / ref.mean_offdiag_corr
    ref_params, cand_params = closed_form(reference), closed_form(candidate)
    return CovCheckResult(ref, cand, variance_ratio, correlation_ratio,
                          cand_params.sigma2 / ref_params.sigma2,
                          cand_params.tau2 / ref_params.tau2, replications)


# ---------------------------------------------------------------------------
# random search


@dataclass(frozen=True)
class HpoTrajectory:
    replication: int
    scheme: str
    seed: int
    incumbent_index: np.ndarray = field(repr=False)
    incumbent_lambda: np.ndarray = field(repr=False)
    incumbent_validation_loss: np.ndarray = field(repr=False)
    incumbent_true_risk: np.ndarray = field(repr=False)

    @property
    def iterations(self):
        return len(self.incumbent_index)

    def is_monotone(self):
        return bool(np.all(np.diff(self.incumbent_validation_loss) <= 0))

    def to_frame(self):
        T = self.iterations
        return pd.DataFrame({
            "replication": np.full(T, self.replication + 1),
            "iteration": np.arange(1, T + 1),
            "scheme": [self.scheme] * T,
            "incumbent_lambda": self.incumbent_lambda,
            "incumbent_validation_loss": self.incumbent_validation_loss,
            "incumbent_true_risk": self.incumbent_true_risk,
        }, columns=TRAJECTORY_COLUMNS)


@dataclass(frozen=True)
class SearchResult:
    scheme: SchemeSpec
    trajectories: tuple
    summary: pd.DataFrame = field(repr=False)

    @property
    def final(self):
        return self.summary.iloc[-1]

    def trajectory_frame(self):
        return pd.concat([t.to_frame() for t in self.trajectories], ignore_index=True)


def visit_order(grid_size, iterations, rng):
    """Without replacement while the grid is large enough, with replacement otherwise."""
    if grid_size >= iterations:
        return rng.permutation(grid_size)[:iterations]
    return rng.integers(grid_size, size=iterations)


def track_incumbent(losses):
    """Index of the best loss so far; later ties never replace the incumbent."""
    incumbent = np.empty(len(losses), dtype=int)
    best = 0
    for t, loss in enumerate(losses):
        if loss < losses[best]:
            best = t
        incumbent[t] = best
    return incumbent


def search_replication(task, scheme, iterations, seed, replication):
    """One random-search run. Streams depend on (seed, replication) only, so
    fixed and reshuffled runs share datasets and visit orders."""
    data = task.sample(scheme.n, substream(seed, DATA, replication))
    order = visit_order(len(task.grid), iterations, substream(seed, ORDER, replication))
    assignment = generate(scheme, iterations, substream(seed, SPLITS, replication))
    lams = task.lambdas[order]
    losses = task.losses(lams, data, assignment.membership)
    incumbent = track_incumbent(losses)
    chosen = lams[incumbent]
    risks = risk_table(task, scheme.n)[order[incumbent]]
    return HpoTrajectory(replication, scheme.variant.value, seed, order[incumbent], chosen,
                         losses[incumbent], risks)


def _search_block(job):
    task, scheme, iterations, seed, start, count = job
    return [search_replication(task, scheme, iterations, seed, start + r) for r in range(count)]


def summarize(scheme_name, trajectories):
    risks = np.stack([t.incumbent_true_risk for t in trajectories])
    valid = np.stack([t.incumbent_validation_loss for t in trajectories])
    R, T = risks.shape
    stderr = risks.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros(T)
    return pd.DataFrame({
        "scheme": [scheme_name] * T,
        "iteration": np.arange(1, T + 1),
        "mean_true_risk": risks.mean(axis=0),
        "stderr": stderr,
        "mean_validation_loss": valid.mean(axis=0),
        "mean_optimism": (risks - valid).mean(axis=0),
    }, columns=SUMMARY_COLUMNS)


def run_random_search(task, scheme, iterations, replications, seed, mapper=SERIAL):
    if iterations < 1:
        raise ConfigError("iterations must be at least 1, got {}".format(iterations))
    if replications < 1:
        raise ConfigError("replications must be at least 1, got {}".format(replications))
    if len(task.grid) < iterations:
        logger.info("grid of {} configurations is smaller than {} iterations, sampling with replacement"
                    .format(len(task.grid), iterations))
    jobs = []
    start = 0
    for _, count in blocks(replications, SEARCH_BLOCK):
        jobs.append((task, scheme, iterations, seed, start, count))
        start += count
    trajectories = tuple(t for part in mapper(_search_block, jobs) for t in part)
    summary = summarize(scheme.variant.value, trajectories)
    final = summary.iloc[-1]
    logger.info("{}: final mean true risk {:.6f} +- {:.6f} over {} replications".format(
        scheme, final["mean_true_risk"], final["stderr"], replications))
    return SearchResult(scheme, trajectories, summary)


@dataclass(frozen=True)
class FinalComparison:
    first: str
    second: str
    difference: float
    standard_error: float

    @property
    def separation(self):
        if self.standard_error > 0:
            return self.difference / self.standard_error
        return math.copysign(math.inf, self.difference) if self.difference else 0.0


def compare_final(first, second):
    """Mean final true risk of ``first`` minus ``second`` with the combined standard error."""
    a, b = first.final, second.final
    return FinalComparison(first.scheme.variant.value, second.scheme.variant.value,
                           float(a["mean_true_risk"] - b["mean_true_risk"]),
                           float(math.hypot(a["stderr"], b["stderr"])))
