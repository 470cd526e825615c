"""Validation index sets for holdout, M-fold CV and M-fold holdout.

Each scheme comes in a fixed flavour (one draw shared by every
configuration) and a reshuffled flavour (independent draws per
configuration). Internally an assignment is a read-only boolean tensor
``membership[j, m, s]``; indices are 1-based in every external format.
"""
import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np
import pandas as pd

from config import ConfigError

logger = logging.getLogger(__name__)


class Variant(str, Enum):
    HOLDOUT = "holdout"
    RESHUFFLED_HOLDOUT = "reshuffled-holdout"
    MFOLD_CV = "mfold-cv"
    RESHUFFLED_MFOLD_CV = "reshuffled-mfold-cv"
    MFOLD_HOLDOUT = "mfold-holdout"
    RESHUFFLED_MFOLD_HOLDOUT = "reshuffled-mfold-holdout"

    @property
    def reshuffled(self):
        return self.value.startswith("reshuffled-")

    @property
    def base(self):
        return self.value[len("reshuffled-"):] if self.reshuffled else self.value

    @property
    def is_cv(self):
        return self.base == "mfold-cv"

    @property
    def is_single_holdout(self):
        return self.base == "holdout"

    @classmethod
    def from_base(cls, base, reshuffled):
        name = "reshuffled-{}".format(base) if reshuffled else base
        return cls.parse(name)

    @classmethod
    def parse(cls, name):
        try:
            return cls(name)
        except ValueError:
            raise ConfigError("Unknown scheme `{}`. Valid variants: {}.".format(name, ", ".join(VARIANT_NAMES)))

    def __str__(self):
        return self.value


VARIANT_NAMES = tuple(v.value for v in Variant)
BASE_NAMES = ("holdout", "mfold-cv", "mfold-holdout")


def _exact_alpha(alpha):
    return Fraction(alpha).limit_denominator(1_000_000)


@dataclass(frozen=True)
class SchemeSpec:
    variant: Variant
    n: int
    alpha: float
    M: int = 1
    repeats: int = 1

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant) if not isinstance(self.variant, Variant) else self.variant)
        self.validate()

    @classmethod
    def create(cls, variant, n, alpha=None, M=None, repeats=1):
        """Build a spec, forcing M = 1 for holdout and alpha = 1/M for CV."""
        variant = Variant.parse(variant) if not isinstance(variant, Variant) else variant
        if variant.is_single_holdout:
            if M not in (None, 1):
                logger.debug("{} uses a single validation set, ignoring M={}".format(variant, M))
            M = 1
        elif M is None:
            raise ConfigError("Scheme `{}` needs a fold count M.".format(variant))
        if variant.is_cv:
            if M < 2:
                raise ConfigError("Scheme `{}` needs M >= 2, got M={}.".format(variant, M))
            alpha = 1.0 / M
        elif alpha is None:
            raise ConfigError("Scheme `{}` needs a validation fraction alpha.".format(variant))
        return cls(variant, int(n), float(alpha), int(M), int(repeats))

    def validate(self):
        if isinstance(self.n, bool) or int(self.n) != self.n or self.n < 2:
            raise ConfigError("n must be an integer >= 2, got {}.".format(self.n))
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1), got {}.".format(self.alpha))
        if self.M < 1:
            raise ConfigError("M must be a positive integer, got {}.".format(self.M))
        if self.repeats < 1:
            raise ConfigError("repeats must be a positive integer, got {}.".format(self.repeats))
        if self.variant.is_single_holdout and self.M != 1:
            raise ConfigError("holdout variants have M = 1, got M={}.".format(self.M))
        if self.variant.is_cv:
            if _exact_alpha(self.alpha) * self.M != 1:
                raise ConfigError("CV variants need alpha*M = 1, got alpha={} and M={}.".format(self.alpha, self.M))
            if self.M > self.n:
                raise ConfigError("CV needs M <= n, got M={} and n={}.".format(self.M, self.n))
        elif self.repeats != 1:
            raise ConfigError("repeats only applies to CV variants.")
        k = self.n_valid
        if k < 1:
            raise ConfigError("ceil(alpha*n) must be >= 1, got {} for alpha={}, n={}.".format(k, self.alpha, self.n))
        if k >= self.n:
            raise ConfigError("ceil(alpha*n) must be < n, got {} for alpha={}, n={}.".format(k, self.alpha, self.n))

    @property
    def n_valid(self):
        return math.ceil(_exact_alpha(self.alpha) * self.n)

    @property
    def reshuffled(self):
        return self.variant.reshuffled

    @property
    def total_folds(self):
        """Folds per configuration; R*M for repeated CV."""
        return self.M * self.repeats

    @property
    def fold_sizes(self):
        if self.variant.is_cv:
            base, extra = divmod(self.n, self.M)
            sizes = [base + 1 if m < extra else base for m in range(self.M)]
            return sizes * self.repeats
        return [self.n_valid] * self.M

    def counterpart(self):
        """The same scheme with reshuffling toggled."""
        return SchemeSpec(Variant.from_base(self.variant.base, not self.reshuffled),
                          self.n, self.alpha, self.M, self.repeats)

    def to_json(self):
        record = {"variant": self.variant.value, "n": self.n, "alpha": self.alpha, "M": self.M}
        if self.repeats != 1:
            record["repeats"] = self.repeats
        return record

    @classmethod
    def from_json(cls, record):
        if isinstance(record, str):
            record = json.loads(record)
        missing = [key for key in ("variant", "n", "alpha", "M") if key not in record]
        if missing:
            raise ConfigError("Scheme record lacks {}.".format(", ".join(missing)))
        return cls(Variant.parse(record["variant"]), int(record["n"]), float(record["alpha"]),
                   int(record["M"]), int(record.get("repeats", 1)))

    def __str__(self):
        text = "{} n={} alpha={} M={}".format(self.variant, self.n, self.alpha, self.M)
        return text if self.repeats == 1 else "{} repeats={}".format(text, self.repeats)


def _random_subsets(rng, shape, n, k):
    """Boolean masks of uniformly drawn size-k subsets, one per leading index."""
    keys = rng.random(tuple(shape) + (n,))
    chosen = np.argsort(keys, axis=-1, kind="stable")[..., :k]
    mask = np.zeros(keys.shape, dtype=bool)
    np.put_along_axis(mask, chosen, True, axis=-1)
    return mask


def _random_partitions(rng, shape, n, M):
    """Uniform partitions of n indices into M folds, shape (*shape, M, n).

    A uniform permutation is cut into consecutive folds; the first n mod M
    folds take one extra index.
    """
    keys = rng.random(tuple(shape) + (n,))
    perm = np.argsort(keys, axis=-1, kind="stable")
    base, extra = divmod(n, M)
    sizes = [base + 1 if m < extra else base for m in range(M)]
    fold_of_position = np.repeat(np.arange(M), sizes)
    fold_of_index = np.empty_like(perm)
    np.put_along_axis(fold_of_index, perm, np.broadcast_to(fold_of_position, perm.shape), axis=-1)
    return fold_of_index[..., None, :] == np.arange(M)[:, None]


def draw_membership(spec, configs, rng, size=()):
    """Independent draws of the scheme for ``configs`` configurations.

    Returns booleans of shape ``(*size, configs, total_folds, n)``. For fixed
    variants callers draw one configuration and broadcast it.
    """
    size = tuple(size)
    if spec.variant.is_cv:
        parts = _random_partitions(rng, size + (configs, spec.repeats), spec.n, spec.M)
        return parts.reshape(size + (configs, spec.total_folds, spec.n))
    return _random_subsets(rng, size + (configs, spec.M), spec.n, spec.n_valid)


@dataclass(frozen=True)
class IndexAssignment:
    scheme: SchemeSpec
    membership: np.ndarray = field(repr=False)

    def __post_init__(self):
        membership = np.asarray(self.membership, dtype=bool)
        if membership.ndim != 3 or membership.shape[1:] != (self.scheme.total_folds, self.scheme.n):
            raise ConfigError("Membership shape {} does not match {}.".format(membership.shape, self.scheme))
        if membership.flags.writeable:
            membership = membership.copy()
            membership.flags.writeable = False
        object.__setattr__(self, "membership", membership)

    @property
    def J(self):
        return self.membership.shape[0]

    @property
    def M(self):
        return self.membership.shape[1]

    def index_sets(self):
        """Per configuration, per fold: frozenset of 1-based indices."""
        return tuple(tuple(frozenset(int(s) + 1 for s in np.flatnonzero(fold)) for fold in config)
                     for config in self.membership)

    def fold_mask(self, j):
        return self.membership[j]

    def to_frame(self):
        j, m, s = np.nonzero(self.membership)
        return pd.DataFrame({"j": j + 1, "m": m + 1, "s": s + 1})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)

    def tobytes(self):
        return np.ascontiguousarray(self.membership).tobytes()


def generate(spec, J, rng):
    """Draw validation index sets for J configurations under ``spec``."""
    if J < 1:
        raise ConfigError("J must be at least 1, got {}.".format(J))
    spec.validate()
    if spec.reshuffled:
        membership = draw_membership(spec, J, rng)
    else:
        shared = draw_membership(spec, 1, rng)
        membership = np.broadcast_to(shared, (J,) + shared.shape[1:])
    return IndexAssignment(spec, membership)


def membership_matrix(assignment):
    """Binary tensor indexed (j, m, s): 1 iff index s is in fold m of configuration j."""
    return assignment.membership.astype(np.uint8)


def load_scheme(path):
    with open(path) as stream:
        return SchemeSpec.from_json(json.load(stream))


def dump_scheme(spec, path):
    with open(path, "w") as stream:
        json.dump(spec.to_json(), stream, indent=2, sort_keys=True)
