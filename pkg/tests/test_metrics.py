import numpy as np
import pytest

from mvrobust.fusion import Task
from mvrobust.metrics import average_accuracy, confusion_matrix, mean_squared_error, prediction_error, prs, quality, r2_score


def test_confusion_matrix_rows_are_truth():
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1], 3)
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]]


def test_average_accuracy_examples():
    # recalls 3/4 and 1/2
    assert average_accuracy([[3, 1], [1, 1]]) == pytest.approx(0.625, abs=1e-9)
    assert average_accuracy(np.eye(4) * 7) == 1.0
    # a class with no true samples is excluded rather than counted as zero recall
    assert average_accuracy([[2, 0, 0], [0, 0, 0], [1, 0, 1]]) == pytest.approx(0.75, abs=1e-9)


def test_average_accuracy_is_balanced_not_overall():
    # overall accuracy would be 0.91; balanced accuracy is (1.0 + 0.1) / 2
    cm = [[90, 0], [9, 1]]
    assert average_accuracy(cm) == pytest.approx(0.55, abs=1e-9)


def test_average_accuracy_empty():
    with pytest.raises(ValueError):
        average_accuracy(np.zeros((2, 2)))


def test_r2_examples():
    assert r2_score([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == 1.0
    assert r2_score([2.0, 2.0, 2.0], [1.0, 2.0, 3.0]) == 0.0
    # SSE = 0.25 + 0.25 + 1 = 1.5, SST = 2
    assert r2_score([1.5, 2.5, 2.0], [1.0, 2.0, 3.0]) == pytest.approx(0.25, abs=1e-9)
    assert r2_score([3.0, 2.0, 1.0], [1.0, 2.0, 3.0]) == pytest.approx(-3.0, abs=1e-9)
    with pytest.raises(ValueError):
        r2_score([1.0, 2.0], [5.0, 5.0])


def test_mse_and_prediction_error():
    assert mean_squared_error([0.0, 0.0], [1.0, 3.0]) == pytest.approx(5.0, abs=1e-9)
    reg = Task("regression")
    assert prediction_error(reg, np.array([0.0, 0.0]), np.array([1.0, 3.0])) == pytest.approx(5.0, abs=1e-9)
    clf = Task("binary", 2)
    probs = np.array([[0.9, 0.1], [0.2, 0.8], [0.6, 0.4], [0.3, 0.7]])
    targets = np.array([0, 1, 1, 1])
    # recalls 1/1 and 2/3
    assert quality(clf, probs, targets) == pytest.approx(5 / 6, abs=1e-9)
    assert prediction_error(clf, probs, targets) == pytest.approx(1 / 6, abs=1e-9)


def test_prs_examples():
    assert prs(0.1, 0.1) == 1.0
    assert prs(0.1, 0.05) == 1.0
    assert prs(0.1, 0.2) == pytest.approx(0.5, abs=1e-9)
    assert prs(0.3, 0.4) == pytest.approx(0.75, abs=1e-9)
    assert prs(0.0, 0.0) == 1.0
    assert prs(0.0, 0.5) == 0.0
    assert prs(0.2, float("inf")) == 0.0


def test_prs_rejects_bad_errors():
    for args in [(-0.1, 0.2), (0.1, -0.2), (float("nan"), 0.1), (0.1, float("nan")), (float("inf"), 1.0)]:
        with pytest.raises(ValueError):
            prs(*args)


def test_prs_monotone_over_grid():
    grid = np.linspace(0.0, 2.0, 100)
    full = 0.5
    scores = [prs(full, e) for e in grid]
    assert all(0.0 <= s <= 1.0 for s in scores)
    assert all(a >= b for a, b in zip(scores, scores[1:]))
    for e_full in grid[1:]:
        scores = [prs(e_full, e) for e in grid]
        assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_reference_examples():
    assert average_accuracy(np.diag([3, 5, 2])) == 1.0
    assert average_accuracy([[4, 0], [2, 2]]) == pytest.approx(0.75, abs=1e-9)
    assert r2_score([1.0, 0.0], [1.0, -1.0]) == pytest.approx(0.5, abs=1e-9)
    clf = Task("multiclass", 3)
    targets = np.array([0, 1, 2, 2])
    assert prediction_error(clf, np.eye(3)[targets], targets) == 0.0
    # recalls 1 and 1/2: AA 0.75, E 0.25
    probs = np.eye(2)[[0, 0, 1, 0]]
    assert prediction_error(Task("binary"), probs, np.array([0, 0, 1, 1])) == pytest.approx(0.25, abs=1e-9)
    assert prediction_error(Task("regression"), np.array([1.0, 2.0]), np.array([0.0, 0.0])) == pytest.approx(2.5, abs=1e-9)
    assert prs(0.3, 0.3) == 1.0
    assert prs(0.1, 0.4) == pytest.approx(0.25, abs=1e-9)
    assert prs(0.2, 0.1) == 1.0


def test_average_accuracy_invariant_to_duplicating_a_class():
    y_true = np.array([0, 0, 0, 1, 1])
    y_pred = np.array([0, 1, 0, 1, 0])
    base = average_accuracy(confusion_matrix(y_true, y_pred, 2))
    dup_true = np.concatenate([y_true, y_true[y_true == 1]])
    dup_pred = np.concatenate([y_pred, y_pred[y_true == 1]])
    assert average_accuracy(confusion_matrix(dup_true, dup_pred, 2)) == pytest.approx(base, abs=1e-12)
    # plain accuracy moves: 3/5 before, 4/7 after
    assert np.mean(dup_true == dup_pred) != np.mean(y_true == y_pred)


def test_average_accuracy_equals_accuracy_for_equal_supports():
    cm = np.array([[7, 3, 0], [1, 8, 1], [2, 2, 6]])
    assert average_accuracy(cm) == pytest.approx(np.trace(cm) / cm.sum(), abs=1e-12)


def test_r2_unbounded_below():
    assert r2_score([100.0, -100.0], [0.0, 1.0]) < -100


def test_prs_non_decreasing_in_full_error():
    grid = np.linspace(0.0, 2.0, 100)
    for e_miss in grid:
        scores = [prs(e, e_miss) for e in grid]
        assert all(a <= b for a, b in zip(scores, scores[1:]))
