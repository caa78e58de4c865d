import math
from fractions import Fraction

import numpy as np
import pytest
from sklearn.decomposition import PCA
from sklearn.metrics import confusion_matrix as sk_confusion_matrix

from datamodel import ClassLabel, LabeledDataset
from errors import ClassTooSmall, DegenerateData, EmptyData, EmptyMatrix, LengthMismatch, NotPositiveDefinite
from mlcore import (
    ConfusionMatrix,
    accuracy,
    accuracy_fraction,
    check_seed,
    child_seeds,
    cholesky_factor,
    confusion_matrix,
    mahalanobis,
    pca_fit,
    pca_separation,
    pca_transform,
    scaler_apply,
    scaler_fit,
    spawn_rngs,
    train_test_split,
    truncated_percent,
)

RANDOM_FOREST_ROWS = [[626, 7, 0], [49, 210, 0], [0, 0, 350]]
LOGISTIC_ROWS = [[631, 2, 0], [177, 82, 0], [0, 0, 350]]
KNN_ROWS = [[626, 7, 0], [52, 207, 0], [1, 1, 348]]
LINEAR_SVM_ROWS = [[622, 11, 0], [58, 201, 0], [0, 0, 350]]


def dataset(counts, d=3, seed=0):
    rng = np.random.default_rng(seed)
    y = np.concatenate([np.full(n, c) for c, n in enumerate(counts)])
    return LabeledDataset(rng.normal(size=(len(y), d)), y, [f"f{i}" for i in range(d)])


# --- seeds ----------------------------------------------------------------------

@pytest.mark.parametrize("seed", [-1, 2 ** 64, 1.5, "7", True])
def test_check_seed_rejects(seed):
    with pytest.raises(ValueError):
        check_seed(seed)


def test_spawned_streams_are_reproducible_and_distinct():
    a = [r.random() for r in spawn_rngs(5, 3)]
    b = [r.random() for r in spawn_rngs(5, 3)]
    assert a == b
    assert len(set(a)) == 3
    assert child_seeds(5, 2) == child_seeds(5, 2)
    assert child_seeds(5, 2) != child_seeds(6, 2)


# --- scaler ---------------------------------------------------------------------

def test_constant_column_passes_through_centered():
    scaler = scaler_fit([[2.0, 0.0], [2.0, 2.0], [2.0, 1.0]])
    assert scaler.stddev[0] == 0
    np.testing.assert_array_equal(scaler_apply(scaler, [[2.0, 0.0], [2.0, 2.0]])[:, 0], [0.0, 0.0])


def test_scaler_hand_arithmetic():
    scaler = scaler_fit([[0.0], [2.0]])
    assert scaler.mean[0] == 1.0
    assert scaler.stddev[0] == 1.0
    np.testing.assert_array_equal(scaler_apply(scaler, [[0.0], [2.0]]).ravel(), [-1.0, 1.0])


def test_scaler_on_empty_matrix():
    with pytest.raises(EmptyMatrix):
        scaler_fit(np.zeros((0, 3)))


# --- split ----------------------------------------------------------------------

def test_single_class_split_sizes():
    train, test = train_test_split(dataset([10]), 0.6, seed=1)
    assert (len(train), len(test)) == (6, 4)


def test_split_is_deterministic():
    a, _ = train_test_split(dataset([10, 10]), 0.6, seed=9)
    b, _ = train_test_split(dataset([10, 10]), 0.6, seed=9)
    np.testing.assert_array_equal(a.X, b.X)


def test_split_is_stratified_and_disjoint():
    ds = dataset([100, 100, 100])
    ds.times = np.arange(300, dtype=float)
    train, test = train_test_split(ds, 0.6, seed=3)
    assert train.class_counts() == {ClassLabel.NORMAL: 60, ClassLabel.SYN_FLOOD: 60, ClassLabel.ICMP_FLOOD: 60}
    assert set(train.times).isdisjoint(test.times)
    assert len(train) + len(test) == 300


def test_split_keeps_one_row_on_each_side():
    train, test = train_test_split(dataset([2, 30]), 0.6, seed=0)
    assert train.class_counts()[ClassLabel.NORMAL] == 1
    assert test.class_counts()[ClassLabel.NORMAL] == 1


def test_split_with_singleton_class():
    with pytest.raises(ClassTooSmall):
        train_test_split(dataset([1, 10]), 0.6, seed=0)


def test_split_of_empty_dataset():
    with pytest.raises(EmptyData):
        train_test_split(LabeledDataset(), 0.6, seed=0)


@pytest.mark.parametrize("fraction", [0.0, 1.0, 1.5])
def test_split_fraction_bounds(fraction):
    with pytest.raises(ValueError):
        train_test_split(dataset([10]), fraction, seed=0)


# --- PCA ------------------------------------------------------------------------

def test_collinear_points():
    X = np.array([[t, t] for t in np.linspace(-2, 3, 11)])
    model = pca_fit(X, 2)
    np.testing.assert_allclose(model.components[0], [1 / math.sqrt(2), 1 / math.sqrt(2)], atol=1e-12)
    assert model.explained_variance[1] == pytest.approx(0.0, abs=1e-12)


def test_identical_rows_are_degenerate():
    with pytest.raises(DegenerateData):
        pca_fit(np.ones((5, 3)), 1)


def test_explained_variance_sums_to_total_variance():
    X = np.random.default_rng(0).normal(size=(50, 21))
    model = pca_fit(X, 21)
    assert model.explained_variance.sum() == pytest.approx(np.var(X, axis=0, ddof=1).sum(), abs=1e-6)


def test_pca_agrees_with_sklearn_up_to_sign():
    X = np.random.default_rng(1).normal(size=(40, 5)) * [5, 3, 2, 1, 0.5]
    model = pca_fit(X, 2)
    oracle = PCA(n_components=2).fit(X)
    np.testing.assert_allclose(model.explained_variance, oracle.explained_variance_, rtol=1e-9)
    for ours, theirs in zip(pca_transform(model, X).T, oracle.transform(X).T):
        sign = np.sign(ours @ theirs)
        np.testing.assert_allclose(ours, sign * theirs, atol=1e-9)


def test_component_sign_rule():
    X = np.random.default_rng(2).normal(size=(30, 4))
    model = pca_fit(X, 3)
    for row in model.components:
        assert row[np.argmax(np.abs(row))] > 0


def test_pca_k_out_of_range():
    with pytest.raises(ValueError):
        pca_fit(np.random.default_rng(0).normal(size=(10, 3)), 4)


def test_separation_of_distant_clusters():
    scores = np.array([[0, 0], [0, 1], [10, 0], [10, 1]], dtype=float)
    assert pca_separation(scores, [0, 0, 1, 1]) == pytest.approx(10 / 0.5)


def test_separation_needs_both_sides():
    with pytest.raises(ValueError):
        pca_separation(np.zeros((3, 2)), [0, 0, 0])


# --- Mahalanobis ----------------------------------------------------------------

def test_distance_at_the_mean_is_zero():
    assert mahalanobis([1.0, 2.0], [1.0, 2.0], np.eye(2)) == 0.0


def test_identity_covariance_is_euclidean():
    assert mahalanobis([3.0, 4.0], [0.0, 0.0], np.eye(2)) == pytest.approx(5.0)


def test_diagonal_covariance():
    assert mahalanobis([2.0, 3.0], [0.0, 0.0], np.diag([4.0, 1.0])) == pytest.approx(math.sqrt(10))


def test_indefinite_covariance():
    with pytest.raises(NotPositiveDefinite):
        cholesky_factor([[1.0, 2.0], [2.0, 1.0]])


def test_asymmetric_covariance():
    with pytest.raises(NotPositiveDefinite):
        cholesky_factor([[1.0, 0.5], [0.0, 1.0]])


# --- confusion matrix -----------------------------------------------------------

def expand(rows):
    y_true, y_pred = [], []
    for i, row in enumerate(rows):
        for j, count in enumerate(row):
            y_true += [i] * count
            y_pred += [j] * count
    return y_true, y_pred


@pytest.mark.parametrize("rows, correct, percent", [
    (RANDOM_FOREST_ROWS, 1186, "95.4911"),
    (LOGISTIC_ROWS, 1063, "85.587"),
    (KNN_ROWS, 1181, "95.088"),
    (LINEAR_SVM_ROWS, 1173, "94.444"),
])
def test_known_matrices(rows, correct, percent):
    cm = confusion_matrix(*expand(rows))
    np.testing.assert_array_equal(cm.counts, rows)
    assert cm.total == 1242
    assert accuracy_fraction(cm) == Fraction(correct, 1242)
    decimals = len(percent.split(".")[1])
    assert truncated_percent(accuracy_fraction(cm), decimals) == percent


def test_matches_sklearn():
    rng = np.random.default_rng(4)
    y_true = rng.integers(0, 3, size=200)
    y_pred = rng.integers(0, 3, size=200)
    np.testing.assert_array_equal(confusion_matrix(y_true, y_pred).counts,
                                  sk_confusion_matrix(y_true, y_pred, labels=[0, 1, 2]))


def test_perfect_predictions():
    y = [0, 1, 2, 2, 1]
    cm = confusion_matrix(y, y)
    np.testing.assert_array_equal(cm.counts, np.diag([1, 2, 2]))
    assert accuracy(cm) == 1.0


def test_constant_normal_on_balanced_test():
    cm = confusion_matrix([0, 1, 2] * 10, [0] * 30)
    assert accuracy(cm) == pytest.approx(1 / 3)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        confusion_matrix([0, 1], [0])


def test_unknown_label():
    with pytest.raises(ValueError):
        confusion_matrix([0, 5], [0, 1])


def test_empty_matrix_accuracy():
    with pytest.raises(EmptyData):
        accuracy(ConfusionMatrix.from_rows(np.zeros((3, 3))))


def test_recall_and_precision():
    cm = ConfusionMatrix.from_rows(RANDOM_FOREST_ROWS)
    assert cm.recall()[ClassLabel.SYN_FLOOD] == pytest.approx(210 / 259)
    assert cm.precision()[ClassLabel.NORMAL] == pytest.approx(626 / 675)


def test_truncation_never_rounds_up():
    assert truncated_percent(Fraction(2, 3), 2) == "66.66"
    assert truncated_percent(1.0, 0) == "100"
