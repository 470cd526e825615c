import math

import numpy as np
import pytest
import scipy.stats

from config import ConfigError
from empirics import (COVARIANCE_COLUMNS, TRAJECTORY_COLUMNS, Dataset, ShrinkageMeanTask, ThresholdTask,
                      compare_final, covariance_check, create_task, majority_label, run_random_search,
                      search_replication, track_incumbent, validation_loss, visit_order)
from logging_pool import Mapper
from splits import IndexAssignment, SchemeSpec, generate
from streams import make_stream


def hand_assignment():
    spec = SchemeSpec.create("mfold-cv", 4, M=2)
    membership = np.array([[[True, True, False, False], [False, False, True, True]]])
    return IndexAssignment(spec, membership)


def test_validation_loss_by_hand():
    data = Dataset(np.zeros(4), np.array([1.0, 2.0, 3.0, 4.0]))
    task = ShrinkageMeanTask(grid=(1.0,))
    assert validation_loss(task, hand_assignment(), data, 0) == pytest.approx(4.25)


def test_zero_shrinkage_ignores_training_split():
    data = ShrinkageMeanTask(theta=0.3).sample(20, make_stream(1))
    task = ShrinkageMeanTask(grid=(0.0,))
    spec = SchemeSpec.create("reshuffled-holdout", 20, alpha=0.25)
    assignment = generate(spec, 5, make_stream(2))
    for j in range(5):
        mask = assignment.fold_mask(j)[0]
        expected = (data.y[mask] ** 2).mean()
        assert validation_loss(task, assignment, data, j, lam=0.0) == pytest.approx(expected)


def test_duplicate_configurations_match_under_fixed_split():
    task = ShrinkageMeanTask(grid=(0.5, 0.5))
    data = task.sample(30, make_stream(3))
    assignment = generate(SchemeSpec.create("mfold-holdout", 30, alpha=0.2, M=3), 2, make_stream(4))
    assert validation_loss(task, assignment, data, 0) == validation_loss(task, assignment, data, 1)


def test_empty_training_complement():
    spec = SchemeSpec.create("holdout", 4, alpha=0.5)
    assignment = IndexAssignment(spec, np.ones((1, 1, 4), dtype=bool))
    data = Dataset(np.zeros(4), np.ones(4))
    with pytest.raises(ConfigError):
        validation_loss(ShrinkageMeanTask(grid=(1.0,)), assignment, data, 0)


def test_dataset_size_must_match():
    data = Dataset(np.zeros(5), np.ones(5))
    with pytest.raises(ConfigError):
        validation_loss(ShrinkageMeanTask(grid=(1.0,)), hand_assignment(), data, 0)


def test_shrinkage_closed_form_matches_oracle():
    task = ShrinkageMeanTask(theta=1.0, noise=2.0)
    for lam in (0.0, 0.5, 1.0):
        oracle = task.true_risk_monte_carlo(lam, 100, make_stream(5))
        assert oracle == pytest.approx(task.true_risk(lam, 100), rel=0.02)


def test_threshold_closed_form_matches_oracle():
    task = ThresholdTask(flip=0.3)
    for lam in (0.1, 0.5, 0.8):
        oracle = task.true_risk_monte_carlo(lam, 100, make_stream(6), samples=10 ** 6, trainings=4000)
        assert oracle == pytest.approx(task.true_risk(lam, 100), abs=0.005)


def test_stump_risk_by_hand():
    # one training point: the other leaf is empty and predicts 1/2
    task = ThresholdTask(flip=0.3)
    assert task.true_risk(0.5, 1) == pytest.approx(0.3 * 0.7 + 0.125)
    # with many points both majorities are right
    assert task.true_risk(0.5, 10000) == pytest.approx(0.3, abs=1e-9)
    assert task.true_risk(0.75, 10000) == pytest.approx(0.4, abs=1e-9)
    assert task.true_risk(0.0, 10000) == pytest.approx(0.5, abs=0.01)


def test_majority_label_ties_predict_half():
    ones = np.array([True, False, True, False])
    masks = np.array([[True, True, False, False], [True, False, True, False], [False, False, False, False]])
    assert majority_label(masks, ones)[:, 0].tolist() == [0.5, 1.0, 0.5]
    assert majority_label(np.array([False, True, False, True]), ones).tolist() == [0.0]


def test_stump_leaves_are_fit_on_the_training_split():
    data = Dataset(np.array([0.1, 0.2, 0.3, 0.7, 0.8, 0.9]), np.array([1.0, 0.0, 0.0, 1.0, 1.0, 1.0]))
    task = ThresholdTask(grid=(0.5,))
    first = np.ones((1, 1, 6), dtype=bool)
    first[..., 0] = False
    second = np.ones((1, 1, 6), dtype=bool)
    second[..., 1] = False
    a = task.point_losses(task.lambdas, data, first)[0, 0]
    b = task.point_losses(task.lambdas, data, second)[0, 0]
    assert a.tolist() == [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
    assert b.tolist() == [0.25, 0.25, 0.25, 0.0, 0.0, 0.0]


def test_cv_fold_training_sets_change_the_loss():
    # a learner that ignored its training folds would give the full-sample loss for every partition
    task = ThresholdTask(flip=0.45, grid=tuple(np.linspace(0.8, 1.0, 40)))
    data = task.sample(40, make_stream(17))
    spec = SchemeSpec.create("reshuffled-mfold-cv", 40, M=5)
    losses = [task.losses(task.lambdas, data, generate(spec, 40, make_stream(seed)).membership)
              for seed in (18, 19)]
    assert not np.array_equal(losses[0], losses[1])


def test_true_risk_does_not_depend_on_scheme():
    task = ThresholdTask()
    results = [search_replication(task, SchemeSpec.create(name, 100, alpha=0.2, M=5), 50, 7, 0)
               for name in ("holdout", "reshuffled-mfold-cv")]
    for trajectory in results:
        expected = [task.true_risk(lam, 100) for lam in trajectory.incumbent_lambda]
        assert trajectory.incumbent_true_risk.tolist() == expected


def test_create_task():
    assert isinstance(create_task({"family": "shrinkage", "theta": 1.0}), ShrinkageMeanTask)
    task = create_task({"family": "threshold", "flip": 0.45}, grid=[0.1, 0.2])
    assert task.flip == 0.45
    assert task.grid == (0.1, 0.2)
    with pytest.raises(ConfigError):
        create_task({"family": "boosting"})
    with pytest.raises(ConfigError):
        create_task({"family": "threshold", "flip": 0.7})


def covcheck(reference, candidate, replications=8000, seed=11):
    task = ShrinkageMeanTask(theta=0.0, noise=1.0, grid=(0.0, 0.25, 0.5))
    ref = SchemeSpec.create(reference, 200, alpha=0.2, M=5)
    cand = SchemeSpec.create(candidate, 200, alpha=0.2, M=5)
    return covariance_check(task, ref, cand, replications, seed)


def test_reshuffled_holdout_correlation_ratio():
    result = covcheck("holdout", "reshuffled-holdout")
    assert result.predicted_correlation_ratio == pytest.approx(0.2)
    assert abs(result.correlation_ratio - 0.2) <= 0.05
    assert result.variance_ratio == pytest.approx(1.0, rel=0.1)


def test_holdout_to_cv_variance_ratio():
    result = covcheck("mfold-cv", "holdout")
    assert result.predicted_variance_ratio == pytest.approx(5.0)
    assert result.variance_ratio == pytest.approx(5.0, rel=0.1)


def test_cv_reshuffling_changes_nothing():
    result = covcheck("mfold-cv", "reshuffled-mfold-cv", replications=4000)
    assert result.variance_ratio == pytest.approx(1.0, rel=0.1)
    assert result.correlation_ratio == pytest.approx(1.0, rel=0.1)


def test_covariance_matrices_are_symmetric_psd():
    result = covcheck("holdout", "reshuffled-holdout", replications=1000)
    for part in (result.reference, result.candidate):
        assert (part.cov == part.cov.T).all()
        assert part.is_psd()
    frame = result.to_frame()
    assert list(frame.columns) == COVARIANCE_COLUMNS
    assert len(frame) == 2 * 9


def test_covariance_check_is_thread_independent():
    a = covcheck("holdout", "reshuffled-holdout", replications=1200, seed=3)
    b = covariance_check(ShrinkageMeanTask(grid=(0.0, 0.25, 0.5)),
                         SchemeSpec.create("holdout", 200, alpha=0.2),
                         SchemeSpec.create("reshuffled-holdout", 200, alpha=0.2), 1200, 3, mapper=Mapper(2))
    assert (a.candidate.cov == b.candidate.cov).all()
    assert a.to_json() == b.to_json()


def test_covariance_check_rejects_mismatched_n():
    task = ShrinkageMeanTask()
    with pytest.raises(ConfigError):
        covariance_check(task, SchemeSpec.create("holdout", 100, alpha=0.2),
                         SchemeSpec.create("holdout", 200, alpha=0.2), 100, 0)


def test_visit_order():
    order = visit_order(10, 10, make_stream(8))
    assert sorted(order.tolist()) == list(range(10))
    order = visit_order(3, 50, make_stream(8))
    assert len(order) == 50
    assert set(order.tolist()) <= {0, 1, 2}


def test_incumbent_keeps_first_of_ties():
    assert track_incumbent(np.array([3.0, 2.0, 2.0, 5.0, 1.0, 1.0])).tolist() == [0, 1, 1, 1, 4, 4]


def test_incumbent_validation_loss_never_increases():
    task = ThresholdTask()
    for name in ("holdout", "reshuffled-holdout", "reshuffled-mfold-cv", "reshuffled-mfold-holdout"):
        spec = SchemeSpec.create(name, 100, alpha=0.2, M=5)
        result = run_random_search(task, spec, 60, 20, seed=9)
        assert all(t.is_monotone() for t in result.trajectories)


def test_noiseless_task_finds_best_visited():
    task = ShrinkageMeanTask(theta=1.0, noise=0.0, grid=(0.0, 0.5, 1.0, 1.5))
    spec = SchemeSpec.create("reshuffled-holdout", 20, alpha=0.2)
    result = run_random_search(task, spec, 4, 5, seed=10)
    for trajectory in result.trajectories:
        assert trajectory.incumbent_true_risk[-1] == 0.0
        assert trajectory.incumbent_lambda[-1] == 1.0


def test_paired_runs_share_first_iteration():
    task = ThresholdTask()
    fixed = SchemeSpec.create("holdout", 100, alpha=0.2)
    a = run_random_search(task, fixed, 10, 30, seed=12)
    b = run_random_search(task, fixed.counterpart(), 10, 30, seed=12)
    for ta, tb in zip(a.trajectories, b.trajectories):
        assert ta.incumbent_validation_loss[0] == tb.incumbent_validation_loss[0]
        assert ta.incumbent_lambda[0] == tb.incumbent_lambda[0]


def test_single_iteration_marginals_match():
    task = ShrinkageMeanTask(theta=0.5, grid=tuple(np.linspace(0.0, 1.0, 50)))
    fixed = SchemeSpec.create("holdout", 50, alpha=0.2)
    a = run_random_search(task, fixed, 1, 10000, seed=13)
    b = run_random_search(task, fixed.counterpart(), 1, 10000, seed=14)
    first_a = [t.incumbent_validation_loss[0] for t in a.trajectories]
    first_b = [t.incumbent_validation_loss[0] for t in b.trajectories]
    assert scipy.stats.ks_2samp(first_a, first_b).pvalue > 0.01


def test_trajectory_and_summary_tables():
    task = ThresholdTask()
    result = run_random_search(task, SchemeSpec.create("holdout", 50, alpha=0.2), 5, 3, seed=15)
    frame = result.trajectory_frame()
    assert list(frame.columns) == TRAJECTORY_COLUMNS
    assert len(frame) == 15
    assert frame["iteration"].tolist()[:5] == [1, 2, 3, 4, 5]
    assert frame["replication"].unique().tolist() == [1, 2, 3]
    summary = result.summary
    assert summary["iteration"].tolist() == [1, 2, 3, 4, 5]
    assert summary["mean_optimism"].to_numpy() == pytest.approx(
        summary["mean_true_risk"].to_numpy() - summary["mean_validation_loss"].to_numpy())


def test_search_is_thread_independent():
    task = ThresholdTask()
    spec = SchemeSpec.create("reshuffled-holdout", 60, alpha=0.2)
    a = run_random_search(task, spec, 20, 120, seed=16)
    b = run_random_search(task, spec, 20, 120, seed=16, mapper=Mapper(3))
    assert a.trajectory_frame().equals(b.trajectory_frame())


def test_search_rejects_bad_arguments():
    task = ThresholdTask()
    spec = SchemeSpec.create("holdout", 50, alpha=0.2)
    with pytest.raises(ConfigError):
        run_random_search(task, spec, 0, 5, seed=1)
    with pytest.raises(ConfigError):
        run_random_search(task, spec, 5, 0, seed=1)


def final_comparison(base):
    task = ThresholdTask(flip=0.4)
    fixed = SchemeSpec.create(base, 200, alpha=0.2, M=5)
    fixed_run = run_random_search(task, fixed, 200, 500, seed=2024)
    shuffled_run = run_random_search(task, fixed.counterpart(), 200, 500, seed=2024)
    return compare_final(shuffled_run, fixed_run)


def test_reshuffled_holdout_beats_fixed_holdout():
    comparison = final_comparison("holdout")
    assert comparison.first == "reshuffled-holdout"
    assert comparison.difference < 0
    assert -comparison.difference >= 2 * comparison.standard_error


def test_cv_reshuffling_has_no_effect():
    comparison = final_comparison("mfold-cv")
    assert abs(comparison.difference) < 2 * comparison.standard_error
    assert math.isfinite(comparison.separation)
