import numpy as np
import pandas as pd
import pytest

from config import ConfigError
from splits import (IndexAssignment, SchemeSpec, Variant, VARIANT_NAMES, dump_scheme, generate, load_scheme,
                    membership_matrix)
from streams import make_stream


def test_fixed_holdout_shares_one_set():
    spec = SchemeSpec.create("holdout", 10, alpha=0.5)
    sets = generate(spec, 3, make_stream(1)).index_sets()
    assert len(sets) == 3
    assert sets[0] == sets[1] == sets[2]
    assert len(sets[0]) == 1
    assert len(sets[0][0]) == 5


def test_fixed_cv_partitions_identically():
    spec = SchemeSpec.create("mfold-cv", 10, M=5)
    assignment = generate(spec, 2, make_stream(2))
    sets = assignment.index_sets()
    assert sets[0] == sets[1]
    folds = sets[0]
    assert len(folds) == 5
    assert all(len(fold) == 2 for fold in folds)
    assert frozenset().union(*folds) == frozenset(range(1, 11))
    assert sum(len(fold) for fold in folds) == 10


def test_cv_partition_invariants_exhaustive():
    rng = make_stream(3)
    for n in range(2, 201):
        for M in range(2, 11):
            if M > n:
                continue
            spec = SchemeSpec.create("reshuffled-mfold-cv", n, M=M)
            membership = generate(spec, 2, rng).membership
            # every index sits in exactly one fold of each configuration
            assert (membership.sum(axis=1) == 1).all()
            sizes = membership.sum(axis=2)
            assert sizes.max() - sizes.min() <= 1
            assert (sizes.sum(axis=1) == n).all()


def test_reshuffled_holdout_comembership_probability():
    spec = SchemeSpec.create("reshuffled-holdout", 10, alpha=0.5)
    membership = generate(spec, 10000, make_stream(4)).membership[:, 0, :]
    pairs = membership[0::2] & membership[1::2]
    per_pair = pairs.mean(axis=1)
    mean = per_pair.mean()
    stderr = per_pair.std(ddof=1) / np.sqrt(len(per_pair))
    assert abs(mean - 0.25) <= 4 * stderr


def inclusion_band(alpha, draws):
    return 4 * np.sqrt(alpha * (1 - alpha) / draws)


def test_reshuffled_holdout_subsets_are_uniform():
    spec = SchemeSpec.create("reshuffled-holdout", 6, alpha=0.5)
    membership = generate(spec, 20000, make_stream(40)).membership[:, 0, :]
    codes = membership.astype(int) @ (1 << np.arange(6))
    subsets, counts = np.unique(codes, return_counts=True)
    # all C(6, 3) = 20 subsets, each with probability 1/20
    assert len(subsets) == 20
    assert np.abs(counts / 20000 - 0.05).max() <= inclusion_band(0.05, 20000)


@pytest.mark.parametrize("variant, M", [("reshuffled-holdout", 1), ("reshuffled-mfold-holdout", 3)])
def test_every_index_validates_with_probability_alpha(variant, M):
    spec = SchemeSpec.create(variant, 20, alpha=0.2, M=M)
    frequencies = generate(spec, 5000, make_stream(41)).membership.mean(axis=0)
    assert frequencies.shape == (M, 20)
    assert np.abs(frequencies - 0.2).max() <= inclusion_band(0.2, 5000)


@pytest.mark.parametrize("variant, M", [("holdout", 1), ("mfold-holdout", 2)])
def test_fixed_and_reshuffled_share_marginals(variant, M):
    fixed = SchemeSpec.create(variant, 20, alpha=0.2, M=M)
    runs = 2000
    # one configuration per fixed run, so each run contributes one independent set
    fixed_sets = np.stack([generate(fixed, 3, make_stream(1000 + r)).membership[0] for r in range(runs)])
    shuffled_sets = generate(fixed.counterpart(), runs, make_stream(42)).membership
    fixed_freq = fixed_sets.mean(axis=0)
    shuffled_freq = shuffled_sets.mean(axis=0)
    assert np.abs(fixed_freq - 0.2).max() <= inclusion_band(0.2, runs)
    assert np.abs(fixed_freq - shuffled_freq).max() <= 4 * np.sqrt(2 * 0.2 * 0.8 / runs)


def test_holdout_sizes_follow_ceiling():
    spec = SchemeSpec.create("reshuffled-mfold-holdout", 7, alpha=0.3, M=4)
    assert spec.n_valid == 3
    membership = generate(spec, 5, make_stream(5)).membership
    assert (membership.sum(axis=2) == 3).all()


def test_alpha_products_use_exact_arithmetic():
    # 0.1 * 30 is 3.0000000000000004 in binary floating point
    assert SchemeSpec.create("holdout", 30, alpha=0.1).n_valid == 3
    assert SchemeSpec.create("mfold-cv", 30, M=10).alpha == pytest.approx(0.1)


def test_cv_fold_sizes_put_remainder_first():
    assert SchemeSpec.create("mfold-cv", 7, M=3).fold_sizes == [3, 2, 2]


@pytest.mark.parametrize("variant,n,alpha,M", [
    ("holdout", 10, 0.0, None),
    ("holdout", 10, 1.0, None),
    ("holdout", 2, 0.9, None),
    ("mfold-holdout", 10, 0.2, None),
    ("mfold-cv", 3, None, 4),
    ("mfold-cv", 10, None, 1),
])
def test_invalid_specs_raise(variant, n, alpha, M):
    with pytest.raises(ConfigError):
        SchemeSpec.create(variant, n, alpha=alpha, M=M)


def test_cv_with_inconsistent_alpha_rejected():
    with pytest.raises(ConfigError, match="alpha\\*M"):
        SchemeSpec(Variant.MFOLD_CV, 10, 0.3, 5)


def test_unknown_variant_lists_valid_names():
    with pytest.raises(ConfigError) as excinfo:
        Variant.parse("bootstrap")
    for name in VARIANT_NAMES:
        assert name in str(excinfo.value)


def test_holdout_forces_single_fold():
    spec = SchemeSpec.create("reshuffled-holdout", 20, alpha=0.25, M=5)
    assert spec.M == 1


def test_membership_matrix_rows():
    spec = SchemeSpec.create("holdout", 4, alpha=0.5)
    assignment = IndexAssignment(spec, np.array([[[True, True, False, False]]]))
    assert membership_matrix(assignment)[0, 0].tolist() == [1, 1, 0, 0]


def test_membership_matrix_cv_rows_sum_to_fold_size():
    spec = SchemeSpec.create("mfold-cv", 4, M=2)
    membership = np.array([[[True, True, False, False], [False, False, True, True]]])
    matrix = membership_matrix(IndexAssignment(spec, membership))
    assert matrix.sum(axis=2).tolist() == [[2, 2]]


def test_membership_totals_per_configuration():
    spec = SchemeSpec.create("reshuffled-mfold-cv", 11, M=3)
    matrix = membership_matrix(generate(spec, 4, make_stream(6)))
    assert (matrix.sum(axis=(1, 2)) == 11).all()
    spec = SchemeSpec.create("mfold-holdout", 11, alpha=0.2, M=3)
    matrix = membership_matrix(generate(spec, 4, make_stream(6)))
    assert (matrix.sum(axis=(1, 2)) == 3 * 3).all()


def test_assignment_is_read_only():
    assignment = generate(SchemeSpec.create("reshuffled-holdout", 10, alpha=0.3), 2, make_stream(7))
    with pytest.raises(ValueError):
        assignment.membership[0, 0, 0] = True


def test_same_seed_same_bytes():
    spec = SchemeSpec.create("reshuffled-mfold-holdout", 50, alpha=0.2, M=5)
    first = generate(spec, 20, make_stream(8)).tobytes()
    second = generate(spec, 20, make_stream(8)).tobytes()
    assert first == second
    assert first != generate(spec, 20, make_stream(9)).tobytes()


def test_reshuffled_first_row_matches_fixed_draw():
    fixed = SchemeSpec.create("holdout", 30, alpha=0.2)
    shuffled = fixed.counterpart()
    assert shuffled.variant == Variant.RESHUFFLED_HOLDOUT
    a = generate(fixed, 5, make_stream(10)).membership
    b = generate(shuffled, 5, make_stream(10)).membership
    assert (a[0] == b[0]).all()


def test_repeated_cv_has_independent_partitions():
    spec = SchemeSpec.create("mfold-cv", 12, M=3, repeats=4)
    assert spec.total_folds == 12
    membership = generate(spec, 3, make_stream(11)).membership
    assert membership.shape == (3, 12, 12)
    per_repeat = membership.reshape(3, 4, 3, 12)
    assert (per_repeat.sum(axis=2) == 1).all()
    assert (membership[0] == membership[2]).all()


def test_repeats_only_for_cv():
    with pytest.raises(ConfigError):
        SchemeSpec.create("holdout", 10, alpha=0.2, repeats=2)


def test_frame_is_one_based():
    spec = SchemeSpec.create("holdout", 4, alpha=0.5)
    assignment = IndexAssignment(spec, np.array([[[False, True, False, True]]]))
    frame = assignment.to_frame()
    assert list(frame.columns) == ["j", "m", "s"]
    assert frame["s"].tolist() == [2, 4]
    assert frame["j"].tolist() == [1, 1]


def test_csv_round_trip_restores_membership(tmp_path):
    spec = SchemeSpec.create("reshuffled-mfold-holdout", 8, alpha=0.25, M=2)
    assignment = generate(spec, 3, make_stream(43))
    path = tmp_path / "sets.csv"
    assignment.to_csv(path)
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["j", "m", "s"]
    assert frame["s"].min() >= 1 and frame["s"].max() <= 8
    assert len(frame) == 3 * 2 * 2
    membership = np.zeros((3, 2, 8), dtype=bool)
    membership[tuple(frame[column].to_numpy() - 1 for column in ("j", "m", "s"))] = True
    assert (membership == assignment.membership).all()
    assert IndexAssignment(spec, membership).index_sets() == assignment.index_sets()


def test_scheme_file_round_trip(tmp_path):
    spec = SchemeSpec.create("reshuffled-mfold-cv", 20, M=4, repeats=2)
    path = tmp_path / "scheme.json"
    dump_scheme(spec, path)
    assert load_scheme(path) == spec


def test_scheme_record_missing_keys():
    with pytest.raises(ConfigError, match="alpha"):
        SchemeSpec.from_json({"variant": "holdout", "n": 10, "M": 1})
