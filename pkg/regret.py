"""Regret bound for argmin selection under a Gaussian-process loss surface.

    E[mu(l_hat) - mu(l*)] <= sigma * sqrt(d) * (8 + B(tau) - A(tau))

    B(tau) = 48 [sqrt(1 - tau^2) sqrt(log J) + tau sqrt(1 + log(3 kappa)_+)]
    A(tau) = sqrt(1 - tau^2) (sigma_lower / sigma) sqrt(log(sigma / (2 m eta^2))_+)

B is reported raw; after rescaling it never exceeds sqrt(log J), which is
left as documentation. A vanishes as soon as sigma / (2 m eta^2) <= 1.

Here sigma is the noise standard-deviation bound, not the variance
inflation sigma2 of ``tau.CovarianceParams``.
"""
import logging
import math
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from config import ConfigError

logger = logging.getLogger(__name__)

B_CONSTANT = 48.0
BASE_CONSTANT = 8.0
BISECTION_STEPS = 48
UNIT_BALL_SLACK = 1e-12

DEGENERATE_CURVATURE = "degenerate-curvature"


class DomainError(ValueError):
    pass


def log_plus(x):
    """max(0, log x), with log(0)_+ = 0."""
    if x <= 1.0:
        return 0.0
    return math.log(x)


@dataclass(frozen=True)
class RegretInputs:
    sigma: float
    sigma_lower: float
    tau: float
    kappa: float
    m: float
    eta: float
    d: int
    J: int

    def __post_init__(self):
        if not self.sigma > 0:
            raise ConfigError("sigma must be positive, got {}".format(self.sigma))
        if not 0 < self.sigma_lower <= self.sigma:
            raise ConfigError("sigma_lower must lie in (0, sigma], got {}".format(self.sigma_lower))
        if not 0.0 <= self.tau <= 1.0:
            raise ConfigError("tau must lie in [0, 1], got {}".format(self.tau))
        if self.kappa < 0:
            raise ConfigError("kappa must be nonnegative, got {}".format(self.kappa))
        if self.m < 0:
            raise ConfigError("m must be nonnegative, got {}".format(self.m))
        if not self.eta > 0:
            raise ConfigError("eta must be positive, got {}".format(self.eta))
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError("d must be a positive integer, got {}".format(self.d))
        if int(self.J) != self.J or self.J < 2:
            raise ConfigError("J must be an integer >= 2, got {}".format(self.J))


@dataclass(frozen=True)
class RegretBreakdown:
    A: float
    B: float
    bound: float
    flags: tuple = ()

    def to_json(self):
        return {"A": self.A, "B": self.B, "bound": self.bound, "flags": list(self.flags)}


def penalty_term(tau, J, kappa):
    return B_CONSTANT * (math.sqrt(1.0 - tau * tau) * math.sqrt(math.log(J))
                         + tau * math.sqrt(1.0 + log_plus(3.0 * kappa)))


def reward_term(tau, sigma, sigma_lower, m, eta):
    return math.sqrt(1.0 - tau * tau) * (sigma_lower / sigma) * math.sqrt(log_plus(sigma / (2.0 * m * eta * eta)))


def bound(inputs):
    flags = []
    B = penalty_term(inputs.tau, inputs.J, inputs.kappa)
    if inputs.m == 0:
        # the bound assumes m > 0; report no reward instead of extrapolating
        flags.append(DEGENERATE_CURVATURE)
        logger.warning("curvature m = 0, reward term A set to 0")
        A = 0.0
    else:
        A = reward_term(inputs.tau, inputs.sigma, inputs.sigma_lower, inputs.m, inputs.eta)
    total = inputs.sigma * math.sqrt(inputs.d) * (BASE_CONSTANT + B - A)
    return RegretBreakdown(A, B, total, tuple(flags))


def tau_sweep(inputs, taus):
    rows = []
    for tau in taus:
        result = bound(replace(inputs, tau=float(tau)))
        rows.append({"tau": float(tau), "A": result.A, "B": result.B, "bound": result.bound})
    return pd.DataFrame(rows, columns=["tau", "A", "B", "bound"])


def _as_points(grid):
    points = np.asarray(grid, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.ndim != 2:
        raise DomainError("points must be a list of d-vectors")
    return points


def _check_unit_ball(points):
    norms = np.linalg.norm(points, axis=1)
    if np.any(norms > 1.0 + UNIT_BALL_SLACK):
        raise DomainError("all points must lie inside the unit ball, max norm {:.6f}".format(norms.max()))


def refine_grid(grid, factor):
    """Insert ``factor - 1`` evenly spaced points between neighbours of a 1-D grid."""
    points = np.sort(np.asarray(grid, dtype=float).ravel())
    if factor < 1:
        raise ConfigError("refinement factor must be >= 1")
    if factor == 1 or len(points) < 2:
        return points
    pieces = [np.linspace(a, b, factor, endpoint=False) for a, b in zip(points[:-1], points[1:])]
    return np.concatenate(pieces + [points[-1:]])


def estimate_kappa(kernel, grid):
    """Grid maximum of |K(l,l) - K(l,l')| / (K(l,l) |l - l'|^2).

    The supremum in the definition runs over the whole unit ball, so this is a
    lower bound; refine the grid to tighten it.
    """
    points = _as_points(grid)
    if len(points) < 2:
        raise DomainError("kappa needs at least two grid points")
    _check_unit_ball(points)
    gram = np.asarray(kernel(points, points), dtype=float)
    diag = np.diag(gram)
    if np.any(diag <= 0):
        raise DomainError("kernel must be positive on the grid diagonal")
    sq = ((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=-1)
    off = sq > 0
    ratios = np.abs(diag[:, None] - gram)[off] / (diag[:, None] * sq)[off]
    if ratios.size == 0:
        raise DomainError("kappa needs two distinct grid points")
    return float(ratios.max())


@dataclass(frozen=True)
class CurvatureEstimate:
    m: float
    minimizer_index: int
    degenerate: bool = False


def estimate_m(values, grid):
    """sup over the grid of |mu(l) - mu(l*)| / |l - l*|^2, l != l*."""
    values = np.asarray(values, dtype=float)
    points = _as_points(grid)
    if len(points) != len(values):
        raise DomainError("one loss value per grid point is required")
    if len(points) < 2:
        raise DomainError("curvature needs at least two grid points")
    best = values.min()
    winners = np.flatnonzero(values == best)
    if len(winners) == len(values):
        logger.warning("constant loss surface, curvature reported as 0")
        return CurvatureEstimate(0.0, int(winners[0]), True)
    if len(winners) > 1:
        raise DomainError("the grid minimizer is not unique")
    star = int(winners[0])
    sq = ((points - points[star]) ** 2).sum(axis=1)
    mask = np.arange(len(points)) != star
    ratios = np.abs(values[mask] - best) / sq[mask]
    return CurvatureEstimate(float(ratios.max()), star)


def _uniform_ball(rng, count, d):
    directions = rng.standard_normal((count, d))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = rng.random(count) ** (1.0 / d)
    return directions * radii[:, None]


class _Nearest:
    """Distance from query points to the nearest candidate."""

    def __init__(self, points):
        self.points = points
        if points.shape[1] == 1:
            self.sorted = np.sort(points[:, 0])
            self.tree = None
        else:
            self.tree = cKDTree(points)

    def __call__(self, queries):
        if self.tree is not None:
            distances, _ = self.tree.query(queries)
            return distances
        q = queries[:, 0]
        right = np.clip(np.searchsorted(self.sorted, q), 0, len(self.sorted) - 1)
        left = np.clip(right - 1, 0, len(self.sorted) - 1)
        return np.minimum(np.abs(self.sorted[right] - q), np.abs(self.sorted[left] - q))


def estimate_eta(points, probes, rng):
    """Probe estimate of the grid density eta.

    Probe directions u are uniform in the unit ball; for a radius r the probe
    ball is centred at (1 - r) u, so it stays inside the unit ball and the
    centre is uniform among admissible centres. The smallest r for which every
    probe ball contains a point is found by bisection; the condition is
    monotone in r. The result never exceeds the true eta and approaches it as
    probes grow.
    """
    points = _as_points(points)
    if len(points) == 0:
        raise DomainError("eta needs at least one point")
    if probes < 1:
        raise ConfigError("probes must be at least 1, got {}".format(probes))
    _check_unit_ball(points)
    nearest = _Nearest(points)
    directions = _uniform_ball(rng, probes, points.shape[1])

    def covered(r):
        return np.all(nearest((1.0 - r) * directions) <= r)

    low, high = 0.0, 1.0
    for _ in range(BISECTION_STEPS):
        mid = (low + high) / 2.0
        if covered(mid):
            high = mid
        else:
            low = mid
    return high


def exact_eta_1d(points):
    """Exact eta for points in [-1, 1]: half the longest point-free interval."""
    values = np.sort(np.asarray(points, dtype=float).ravel())
    if values.size == 0:
        raise DomainError("eta needs at least one point")
    if values[0] < -1.0 - UNIT_BALL_SLACK or values[-1] > 1.0 + UNIT_BALL_SLACK:
        raise DomainError("points must lie in [-1, 1]")
    gaps = np.concatenate([[values[0] + 1.0], np.diff(values), [1.0 - values[-1]]])
    return float(gaps.max() / 2.0)


@dataclass(frozen=True)
class EtaScaling:
    sizes: tuple
    mean_eta: tuple
    slope: float
    intercept: float

    def to_json(self):
        return {"J": list(self.sizes), "eta": list(self.mean_eta), "slope": self.slope,
                "intercept": self.intercept}


def random_points(rng, J, d):
    """J points drawn uniformly from the d-dimensional unit ball."""
    return _uniform_ball(rng, J, d)


def eta_scaling(sizes, repetitions, probes_per_point, rng, d=1):
    """Log-log slope of the estimated eta against J for random uniform grids."""
    if len(sizes) < 2:
        raise ConfigError("the scaling check needs at least two grid sizes")
    means = []
    for J in sizes:
        estimates = []
        for _ in range(repetitions):
            points = random_points(rng, int(J), d)
            estimates.append(estimate_eta(points, int(probes_per_point * J), rng))
        means.append(float(np.mean(estimates)))
        logger.info("J={}: mean eta {:.6f} over {} repetitions".format(J, means[-1], repetitions))
    slope, intercept = np.polyfit(np.log(np.asarray(sizes, dtype=float)), np.log(means), 1)
    return EtaScaling(tuple(int(J) for J in sizes), tuple(means), float(slope), float(intercept))
