import numpy as np
import pytest
from sklearn.neighbors import KNeighborsClassifier

from attack import (
    BaselineModel,
    BaselineVariant,
    DecisionTree,
    RandomForestModel,
    baseline_predict,
    baseline_train,
    evaluate_classifier,
    evaluation_report,
    forest_bootstrap_indices,
    gini,
    render_evaluation_markdown,
    rf_feature_importance,
    rf_predict,
    rf_predict_proba,
    rf_train,
    select_features,
    train_all_classifiers,
    tree_train,
)
from config import AttackConfig
from datamodel import ClassLabel, LabeledDataset
from errors import EmptyData, SingleClassData
from mlcore import ConfusionMatrix, Scaler, make_rng

NAMES = ("x0", "x1", "x2")


def one_d(values, labels):
    return LabeledDataset(np.array(values, dtype=float)[:, None], labels, ["x"])


def informative_first(n=120, seed=0):
    """Only column 0 separates the classes; column 2 is constant."""
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1, 2], n // 3)
    X = np.column_stack([y * 10 + rng.normal(size=len(y)), rng.normal(size=len(y)), np.full(len(y), 3.0)])
    return LabeledDataset(X, y, NAMES)


# --- trees ----------------------------------------------------------------------

def test_gini():
    assert gini([5, 0, 0]) == 0.0
    assert gini([1, 1]) == pytest.approx(0.5)
    assert gini([0, 0]) == 0.0


def test_separable_data_splits_once():
    X = np.array([[0.0], [1.0], [10.0], [11.0]])
    tree = tree_train(X, np.array([0, 0, 1, 1]), 2, 1, make_rng(0))
    assert tree.n_nodes == 3
    assert 1.0 < tree.threshold[0] < 10.0
    np.testing.assert_array_equal(tree.predict_index(X), [0, 0, 1, 1])


def test_pure_data_is_one_leaf():
    tree = tree_train(np.arange(6, dtype=float)[:, None], np.zeros(6, dtype=int), 2, 1, make_rng(0))
    assert tree.n_nodes == 1
    assert tree.is_leaf()[0]


def test_depth_cap():
    X = np.arange(8, dtype=float)[:, None]
    tree = tree_train(X, np.array([0, 1] * 4), 2, 1, make_rng(0), max_depth=1)
    assert tree.n_nodes <= 3


def test_tree_rejects_no_rows():
    with pytest.raises(EmptyData):
        tree_train(np.zeros((0, 2)), np.zeros(0, dtype=int), 2, 1, make_rng(0))


# --- forest ---------------------------------------------------------------------

def test_single_tree_without_bootstrap_fits_training_data():
    train = one_d([0, 1, 10, 11], [0, 0, 1, 1])
    model = rf_train(train, n_trees=1, max_features=21, seed=0, bootstrap=False)
    np.testing.assert_array_equal(model.predict(train.X), train.y)
    assert not model.oob_available


def test_forest_is_deterministic():
    train = informative_first()
    probes = np.random.default_rng(3).normal(size=(50, 3)) * 10
    a = rf_train(train, n_trees=15, seed=4)
    b = rf_train(train, n_trees=15, seed=4)
    np.testing.assert_array_equal(a.predict(probes), b.predict(probes))
    assert a.json() == b.json()


def test_bootstrap_indices_are_reproducible():
    a = forest_bootstrap_indices(50, 3, seed=2)
    b = forest_bootstrap_indices(50, 3, seed=2)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert all(len(rows) == 50 and rows.max() < 50 for rows in a)


def test_bootstrap_draws_cover_nearly_every_row():
    drawn = np.unique(np.concatenate(forest_bootstrap_indices(500, 100, seed=0)))
    assert len(drawn) >= 0.95 * 500


def test_forest_reports_out_of_bag_accuracy():
    model = rf_train(informative_first(), n_trees=30, seed=1)
    assert model.oob_available
    assert model.oob_score > 0.9


def stub_forest(votes):
    """Forest of depth-0 trees, each voting one fixed class."""
    trees = []
    for v in votes:
        value = np.zeros((1, 3))
        value[0, v] = 1
        trees.append(DecisionTree(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                                  value, np.array([0.0]), np.array([1])))
    return RandomForestModel(trees, 1, tuple(ClassLabel), Scaler(np.zeros(1), np.ones(1)), feature_names=("x",))


def test_unanimous_vote():
    model = stub_forest([1, 1, 1, 1])
    assert rf_predict(model, [0.0]) == ClassLabel.SYN_FLOOD
    assert rf_predict_proba(model, [0.0])[ClassLabel.SYN_FLOOD] == 1.0


def test_tree_order_does_not_change_predictions(trained_forest, reference_dataset):
    order = make_rng(5).permutation(trained_forest.n_trees)
    shuffled = RandomForestModel([trained_forest.trees[i] for i in order], trained_forest.max_features,
                                 trained_forest.classes, trained_forest.scaler,
                                 feature_names=trained_forest.feature_names)
    X = reference_dataset.X
    np.testing.assert_array_equal(shuffled.predict(X), trained_forest.predict(X))
    np.testing.assert_allclose(shuffled.predict_proba(X), trained_forest.predict_proba(X))


def test_tied_vote_goes_to_lowest_code():
    model = stub_forest([0, 1, 1, 0])
    assert rf_predict(model, [0.0]) == ClassLabel.NORMAL
    assert rf_predict_proba(model, [0.0]) == {
        ClassLabel.NORMAL: 0.5, ClassLabel.SYN_FLOOD: 0.5, ClassLabel.ICMP_FLOOD: 0.0,
    }


def test_forest_rejects_single_class():
    with pytest.raises(SingleClassData):
        rf_train(one_d([0, 1, 2], [1, 1, 1]))


def test_forest_rejects_empty_data():
    with pytest.raises(EmptyData):
        rf_train(LabeledDataset())


def test_forest_json_round_trip():
    model = rf_train(informative_first(), n_trees=5, seed=0)
    back = RandomForestModel.from_json(model.json())
    X = informative_first(seed=1).X
    np.testing.assert_array_equal(back.predict(X), model.predict(X))


# --- importance -----------------------------------------------------------------

def test_only_informative_feature_ranks_first():
    train = informative_first()
    report = rf_feature_importance(rf_train(train, n_trees=30, max_features=3, seed=0), train)
    assert report.ranking[0] == 0
    assert report.importance[2] == 0.0
    assert report.importance.sum() == pytest.approx(1.0)
    assert report.top(1)[0][0] == "x0"
    assert select_features(report, 2)[0] == 0


def test_importance_rejects_mismatched_dataset():
    train = informative_first()
    model = rf_train(train, n_trees=3, seed=0)
    with pytest.raises(ValueError):
        rf_feature_importance(model, one_d([0, 1], [0, 1]))


# --- baselines ------------------------------------------------------------------

def test_one_nearest_neighbour_returns_own_label():
    train = informative_first()
    model = baseline_train(BaselineVariant.KNN, train, AttackConfig(knn_k=1))
    np.testing.assert_array_equal(model.predict(train.X), train.y)


def test_one_nearest_neighbour_fits_an_extracted_dataset(reference_dataset):
    _, first = np.unique(reference_dataset.X, axis=0, return_index=True)
    train = reference_dataset.subset(np.sort(first))
    model = baseline_train("knn", train, AttackConfig(knn_k=1))
    assert np.mean(model.predict(train.X) == train.y) == 1.0


def test_knn_matches_sklearn():
    train = informative_first()
    model = baseline_train("knn", train, AttackConfig(knn_k=5))
    probes = np.random.default_rng(1).normal(size=(60, 3)) * 8 + 10
    oracle = KNeighborsClassifier(n_neighbors=5).fit(model.scaler.apply(train.X), train.y)
    agree = np.mean(model.predict(probes) == oracle.predict(model.scaler.apply(probes)))
    assert agree >= 0.95


def test_logistic_regression_on_two_points():
    train = one_d([0.0, 1.0], [0, 1])
    model = baseline_train(BaselineVariant.LOGISTIC_REGRESSION, train)
    np.testing.assert_array_equal(model.predict(train.X), [0, 1])
    assert baseline_predict(model, [1.0]) == ClassLabel.SYN_FLOOD


def test_linear_svm_separates_distinct_classes():
    train = informative_first()
    model = baseline_train(BaselineVariant.LINEAR_SVM, train, seed=3)
    assert np.mean(model.predict(train.X) == train.y) >= 0.95


@pytest.mark.parametrize("variant", list(BaselineVariant))
def test_baseline_json_round_trip(variant):
    train = informative_first()
    model = baseline_train(variant, train, seed=1)
    back = BaselineModel.from_json(model.json())
    np.testing.assert_array_equal(back.predict(train.X), model.predict(train.X))


def test_baseline_rejects_single_class():
    with pytest.raises(SingleClassData):
        baseline_train("linear_svm", one_d([0, 1], [2, 2]))


def test_unknown_variant():
    with pytest.raises(ValueError):
        baseline_train("naive_bayes", informative_first())


# --- evaluation -----------------------------------------------------------------

def test_all_classifiers_on_the_reference_split(reference_split):
    train, test = reference_split
    models = train_all_classifiers(train, AttackConfig(), seed=7)
    assert list(models) == ["random_forest", "linear_svm", "logistic_regression", "knn"]
    results = {name: evaluate_classifier(model, test) for name, model in models.items()}
    for cm, acc in results.values():
        assert cm.total == len(test)
    assert results["random_forest"][1] >= 0.95
    report = evaluation_report({name: cm for name, (cm, _) in results.items()})
    assert [e["name"] for e in report["classifiers"]] == list(models)


def test_evaluation_on_empty_test_set(trained_forest):
    with pytest.raises(EmptyData):
        evaluate_classifier(trained_forest, LabeledDataset())


def test_report_and_markdown_for_a_known_matrix():
    cm = ConfusionMatrix.from_rows([[626, 7, 0], [49, 210, 0], [0, 0, 350]])
    report = evaluation_report({"random_forest": cm})
    entry = report["classifiers"][0]
    assert entry["correct"] == 1186
    assert entry["total"] == 1242
    assert entry["accuracy_percent"] == "95.4911"
    md = render_evaluation_markdown(report)
    assert "**Random Forest (Accuracy : 95.4911%)**" in md
    assert "| SYN attack | 49 | 210 | 0 |" in md
