"""Gaussian-process model of the observed loss surface.

The true loss is the quadratic mu(l) = m (l - minimizer)^2 / 2 on a finite
grid. The observed loss adds a zero-mean Gaussian process whose covariance is
K(l, l) on the diagonal and tau^2 K(l, l') elsewhere, K squared-exponential.
A study repeatedly samples the observed surface, takes its argmin on the grid
and records the true loss there.
"""
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import pandas as pd
import scipy.linalg

from config import ConfigError
from logging_pool import SERIAL
from streams import blocks, substream

logger = logging.getLogger(__name__)

DEFAULT_J = 51
BLOCK_SIZE = 1000
JITTER_START = 1e-10
JITTER_STOP = 1e-6
JITTER_STEP = 10.0

SWEEP_COLUMNS = ["m", "kappa", "tau", "sigmaK2", "J", "replications", "mean_true_risk", "stderr",
                 "jitter", "seed", "degenerate"]


class NumericalError(Exception):
    def __init__(self, message, condition=float("nan"), cell=None):
        super().__init__(message)
        self.condition = condition
        self.cell = cell


def uniform_grid(J=DEFAULT_J):
    if J < 2:
        raise ConfigError("a grid needs at least 2 points, got J={}".format(J))
    return tuple(float(x) for x in np.linspace(0.0, 1.0, J))


@dataclass(frozen=True)
class SurfaceSpec:
    m: float
    grid: tuple = field(default_factory=uniform_grid)
    minimizer: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(x) for x in self.grid))
        if self.m < 0:
            raise ConfigError("curvature m must be nonnegative, got {}".format(self.m))
        if len(self.grid) < 2:
            raise ConfigError("the grid needs J >= 2 points")
        points = np.asarray(self.grid)
        if np.any(np.diff(points) <= 0):
            raise ConfigError("grid values must be strictly increasing")
        if points[0] < 0.0 or points[-1] > 1.0:
            raise ConfigError("grid values must lie in [0, 1]")

    @property
    def J(self):
        return len(self.grid)

    @property
    def points(self):
        return np.asarray(self.grid)

    def mu(self, lam):
        lam = np.asarray(lam, dtype=float)
        return self.m * (lam - self.minimizer) ** 2 / 2.0

    @property
    def values(self):
        return self.mu(self.points)


@dataclass(frozen=True)
class SquaredExponentialKernel:
    """K(l, l') = sigma_k2 * exp(-kappa * |l - l'|^2 / 2)."""

    sigma_k2: float = 1.0
    kappa: float = 1.0

    def gram(self, a, b=None):
        a = np.asarray(a, dtype=float)
        b = a if b is None else np.asarray(b, dtype=float)
        if a.ndim == 1:
            a = a[:, None]
        if b.ndim == 1:
            b = b[:, None]
        sq = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
        return self.sigma_k2 * np.exp(-self.kappa * sq / 2.0)

    def __call__(self, a, b=None):
        return self.gram(a, b)


@dataclass(frozen=True)
class NoiseModel:
    tau: float
    kappa: float
    sigma_k2: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1], got {}".format(self.tau))
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative, got {}".format(self.kappa))
        if self.sigma_k2 < 0:
            raise ConfigError("sigma_k2 must be nonnegative, got {}".format(self.sigma_k2))

    @property
    def kernel(self):
        return SquaredExponentialKernel(self.sigma_k2, self.kappa)


@dataclass(frozen=True)
class SimulationConfig:
    surface: SurfaceSpec
    noise: NoiseModel
    replications: int = 10000
    seed: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise ConfigError("replications must be at least 1, got {}".format(self.replications))

    def to_json(self):
        return {
            "surface": {"m": self.surface.m, "grid": list(self.surface.grid), "minimizer": self.surface.minimizer},
            "noise": {"tau": self.noise.tau, "kappa": self.noise.kappa, "sigma_k2": self.noise.sigma_k2},
            "replications": self.replications,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, record):
        try:
            surface = SurfaceSpec(float(record["surface"]["m"]),
                                  tuple(record["surface"].get("grid") or uniform_grid()),
                                  float(record["surface"].get("minimizer", 0.5)))
            noise = NoiseModel(float(record["noise"]["tau"]), float(record["noise"]["kappa"]),
                               float(record["noise"].get("sigma_k2", 1.0)))
            return cls(surface, noise, int(record["replications"]), int(record["seed"]))
        except (KeyError, TypeError) as e:
            raise ConfigError("simulation config lacks {}".format(e))


@dataclass(frozen=True)
class CovarianceBuild:
    matrix: np.ndarray
    jitter: float
    factor: np.ndarray


def build_covariance(surface, noise):
    """Covariance of the noise on the grid and a lower Cholesky factor.

    ``matrix`` holds the exact entries; ``factor`` factorizes matrix plus the
    smallest diagonal jitter in 1e-10..1e-6 times the largest diagonal entry
    that lets the factorization succeed.
    """
    gram = noise.kernel.gram(surface.points)
    matrix = noise.tau ** 2 * gram
    np.fill_diagonal(matrix, np.diag(gram))
    top = float(np.max(np.diag(matrix)))
    if top == 0.0:
        return CovarianceBuild(matrix, 0.0, np.zeros_like(matrix))

    scale = JITTER_START
    while scale <= JITTER_STOP * (1 + 1e-9):
        jitter = scale * top
        try:
            factor = scipy.linalg.cholesky(matrix + jitter * np.eye(len(matrix)), lower=True)
            return CovarianceBuild(matrix, jitter, factor)
        except np.linalg.LinAlgError:
            logger.debug("Cholesky failed with jitter {:.1e}, escalating".format(jitter))
            scale *= JITTER_STEP
    condition = float(np.linalg.cond(matrix))
    raise NumericalError("covariance not positive definite after jitter {:.1e} (condition {:.3e})"
                         .format(JITTER_STOP * top, condition), condition=condition)


def sample_observed_loss(config, rng, size=None, build=None):
    """mu on the grid plus one (or ``size``) correlated noise draws."""
    build = build or build_covariance(config.surface, config.noise)
    J = config.surface.J
    shape = (J,) if size is None else (size, J)
    z = rng.standard_normal(shape)
    return config.surface.values + z @ build.factor.T


@dataclass
class RunningMoments:
    """Streaming count, mean and sum of squared deviations."""

    count: int = 0
    mean: float = 0.0
    m2: float = 0.0

    @classmethod
    def of(cls, values):
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            return cls()
        mean = float(values.mean())
        return cls(int(values.size), mean, float(((values - mean) ** 2).sum()))

    def combine(self, other):
        if other.count == 0:
            return RunningMoments(self.count, self.mean, self.m2)
        if self.count == 0:
            return RunningMoments(other.count, other.mean, other.m2)
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * other.count / count
        m2 = self.m2 + other.m2 + delta ** 2 * self.count * other.count / count
        return RunningMoments(count, mean, m2)

    @property
    def standard_error(self):
        if self.count < 2:
            return 0.0
        return math.sqrt(self.m2 / (self.count - 1)) / math.sqrt(self.count)


@dataclass(frozen=True)
class SimulationSummary:
    mean_true_risk: float
    standard_error: float
    replications: int
    jitter: float = 0.0

    @property
    def degenerate(self):
        return self.replications < 2


def simulate_risks(config, cell=0, build=None):
    """True risk of the observed-loss argmin for every replication, in order."""
    build = build or build_covariance(config.surface, config.noise)
    out = [_block_risks(config, cell, index, count, build) for index, count in blocks(config.replications, BLOCK_SIZE)]
    return np.concatenate(out)


def _block_risks(config, cell, index, count, build=None):
    build = build or build_covariance(config.surface, config.noise)
    rng = substream(config.seed, cell, index)
    observed = sample_observed_loss(config, rng, size=count, build=build)
    # argmin takes the lowest index on ties
    chosen = np.argmin(observed, axis=1)
    return config.surface.values[chosen]


def _block_moments(task):
    config, cell, index, count = task
    return RunningMoments.of(_block_risks(config, cell, index, count))


def _checked_build(config, cell):
    try:
        return build_covariance(config.surface, config.noise)
    except NumericalError as e:
        ident = (config.surface.m, config.noise.kappa, config.noise.tau)
        raise NumericalError("cell {} (m={}, kappa={}, tau={}): {}".format(cell, *ident, e),
                             condition=e.condition, cell=ident) from e


def _tasks(config, cell):
    return [(config, cell, index, count) for index, count in blocks(config.replications, BLOCK_SIZE)]


def _summarize(parts, replications, jitter):
    total = RunningMoments()
    for part in parts:
        total = total.combine(part)
    return SimulationSummary(total.mean, total.standard_error, replications, jitter)


def run_study(config, mapper=SERIAL, cell=0):
    build = _checked_build(config, cell)
    parts = mapper(_block_moments, _tasks(config, cell))
    return _summarize(parts, config.replications, build.jitter)


@dataclass(frozen=True)
class SweepRow:
    m: float
    kappa: float
    tau: float
    sigmaK2: float
    J: int
    replications: int
    mean_true_risk: float
    stderr: float
    jitter: float
    seed: int
    degenerate: bool


def sweep(m_values, kappa_values, tau_values, base, mapper=SERIAL):
    """One summary per (m, kappa, tau) cell, cells in lexicographic order."""
    if not len(m_values) or not len(kappa_values) or not len(tau_values):
        raise ConfigError("sweep grids must be nonempty")
    cells = []
    for m in m_values:
        for kappa in kappa_values:
            for tau in tau_values:
                config = replace(base,
                                 surface=replace(base.surface, m=float(m)),
                                 noise=replace(base.noise, kappa=float(kappa), tau=float(tau)))
                cells.append(config)

    builds = [_checked_build(config, cell) for cell, config in enumerate(cells)]
    tasks = [task for cell, config in enumerate(cells) for task in _tasks(config, cell)]
    moments = mapper(_block_moments, tasks)

    rows = []
    offset = 0
    for cell, config in enumerate(cells):
        count = len(blocks(config.replications, BLOCK_SIZE))
        summary = _summarize(moments[offset:offset + count], config.replications, builds[cell].jitter)
        offset += count
        logger.info("cell {}/{} m={} kappa={} tau={}: mean true risk {:.6f} +- {:.6f}".format(
            cell + 1, len(cells), config.surface.m, config.noise.kappa, config.noise.tau,
            summary.mean_true_risk, summary.standard_error))
        rows.append(SweepRow(config.surface.m, config.noise.kappa, config.noise.tau, config.noise.sigma_k2,
                             config.surface.J, summary.replications, summary.mean_true_risk,
                             summary.standard_error, summary.jitter, config.seed, summary.degenerate))
    return rows


def sweep_frame(rows):
    return pd.DataFrame([asdict(row) for row in rows], columns=SWEEP_COLUMNS)


def write_sweep_csv(rows, path):
    sweep_frame(rows).to_csv(path, index=False)
