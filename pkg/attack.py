#!/usr/bin/env python3
"""
Attack-type classifiers.

A CART random forest (Gini impurity, bootstrap rows, random feature subsets
per split) is the production classifier. Linear SVM, logistic regression
and KNN are kept as comparison baselines for the evaluation report.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from config import AttackConfig
from datamodel import CLASS_ORDER, ClassLabel, FEATURE_NAMES, LabeledDataset
from errors import EmptyData, NonConvergence, SingleClassData
from mlcore import (
    ConfusionMatrix,
    Scaler,
    accuracy,
    accuracy_fraction,
    confusion_matrix,
    make_rng,
    scaler_fit,
    spawn_rngs,
    truncated_percent,
)

logger = logging.getLogger(__name__)


def gini(counts) -> float:
    """1 - sum(p_i^2) of a class histogram."""
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _check_training_set(train: LabeledDataset) -> Tuple[ClassLabel, ...]:
    if len(train) == 0:
        raise EmptyData("training set is empty")
    classes = tuple(train.classes_present())
    if len(classes) < 2:
        raise SingleClassData(f"training set only holds {classes[0].name} rows")
    return classes


def _class_index(y, classes: Sequence[ClassLabel]) -> np.ndarray:
    position = {int(c): i for i, c in enumerate(classes)}
    return np.array([position[int(v)] for v in y], dtype=int)


# --- decision tree -----------------------------------------------------------

@dataclass
class DecisionTree:
    """
    Flat CART tree. feature == -1 marks a leaf; rows with x[f] <= threshold go
    left. value holds the class histogram of the training rows reaching each
    node (columns follow the forest's class order).
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    impurity: np.ndarray
    n_samples: np.ndarray
    max_depth: Optional[int] = None

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = X[rows, self.feature[cur]] <= self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            active = self.feature[node] >= 0
        return node

    def predict_index(self, X) -> np.ndarray:
        # argmax keeps the lowest class on ties
        return np.argmax(self.value[self.apply(X)], axis=1)

    def json(self):
        return {
            'feature': self.feature.tolist(),
            'threshold': self.threshold.tolist(),
            'left': self.left.tolist(),
            'right': self.right.tolist(),
            'value': self.value.tolist(),
            'impurity': self.impurity.tolist(),
            'n_samples': self.n_samples.tolist(),
            'max_depth': self.max_depth,
        }

    @classmethod
    def from_json(cls, doc) -> "DecisionTree":
        return cls(
            feature=np.asarray(doc['feature'], dtype=int),
            threshold=np.asarray(doc['threshold'], dtype=float),
            left=np.asarray(doc['left'], dtype=int),
            right=np.asarray(doc['right'], dtype=int),
            value=np.asarray(doc['value'], dtype=float),
            impurity=np.asarray(doc['impurity'], dtype=float),
            n_samples=np.asarray(doc['n_samples'], dtype=int),
            max_depth=doc.get('max_depth'),
        )


def _best_split(x: np.ndarray, y_idx: np.ndarray, n_classes: int, min_leaf: int):
    """Lowest weighted Gini split of one feature, or None."""
    order = np.argsort(x, kind="stable")
    xs = x[order]
    onehot = np.eye(n_classes)[y_idx[order]]
    left_counts = np.cumsum(onehot, axis=0)[:-1]
    total = left_counts[-1] + onehot[-1]
    right_counts = total - left_counts
    n = len(x)
    n_left = np.arange(1, n, dtype=float)
    n_right = n - n_left

    valid = xs[:-1] < xs[1:]
    valid &= (n_left >= min_leaf) & (n_right >= min_leaf)
    if not valid.any():
        return None
    gini_left = 1.0 - np.sum((left_counts / n_left[:, None]) ** 2, axis=1)
    gini_right = 1.0 - np.sum((right_counts / n_right[:, None]) ** 2, axis=1)
    weighted = np.where(valid, (n_left * gini_left + n_right * gini_right) / n, np.inf)
    pos = int(np.argmin(weighted))
    lo, hi = xs[pos], xs[pos + 1]
    threshold = lo + (hi - lo) / 2.0
    if not lo <= threshold < hi:
        threshold = lo
    return float(weighted[pos]), float(threshold)


def tree_train(X, y_idx, n_classes: int, max_features: int, rng: np.random.Generator,
               max_depth: Optional[int] = None, min_leaf: int = 1) -> DecisionTree:
    """
    Grow a CART tree with Gini impurity.

    Args:
        X: training rows
        y_idx: class index (0..n_classes-1) of each row
        n_classes: histogram width
        max_features: features examined per split; drawing continues past
            constant features until this many non-constant ones were tried
        rng: random stream for feature draws
        max_depth: depth cap (None for unlimited)
        min_leaf: minimum rows per child

    Raises:
        EmptyData
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y_idx = np.asarray(y_idx, dtype=int)
    if len(X) == 0:
        raise EmptyData("cannot grow a tree on zero rows")
    d = X.shape[1]
    max_features = min(max(int(max_features), 1), d)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[np.ndarray] = []
    impurity: List[float] = []
    n_samples: List[int] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        counts = np.bincount(y_idx[rows], minlength=n_classes).astype(float)
        node_gini = gini(counts)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts)
        impurity.append(node_gini)
        n_samples.append(len(rows))

        if node_gini == 0.0 or len(rows) < 2 * min_leaf:
            return node
        if max_depth is not None and depth >= max_depth:
            return node

        part = X[rows]
        best = None
        tried = 0
        for f in rng.permutation(d):
            if tried >= max_features:
                break
            col = part[:, f]
            if col.min() == col.max():
                continue
            tried += 1
            found = _best_split(col, y_idx[rows], n_classes, min_leaf)
            if found is not None and (best is None or found[0] < best[0]):
                best = (found[0], int(f), found[1])
        if best is None:
            return node

        _, f, thr = best
        goes_left = part[:, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = grow(rows[goes_left], depth + 1)
        right[node] = grow(rows[~goes_left], depth + 1)
        return node

    grow(np.arange(len(X)), 0)
    return DecisionTree(
        np.asarray(feature, dtype=int),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=int),
        np.asarray(right, dtype=int),
        np.vstack(value),
        np.asarray(impurity, dtype=float),
        np.asarray(n_samples, dtype=int),
        max_depth,
    )


# --- random forest -----------------------------------------------------------

@dataclass
class RandomForestModel:
    trees: List[DecisionTree]
    max_features: int
    classes: Tuple[ClassLabel, ...]
    scaler: Scaler
    bootstrap: bool = True
    oob_score: Optional[float] = None
    feature_names: Tuple[str, ...] = FEATURE_NAMES

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    @property
    def oob_available(self) -> bool:
        return self.oob_score is not None

    def tree_votes(self, X) -> np.ndarray:
        """Class index voted by each tree, shape (n_rows, n_trees)."""
        Z = self.scaler.apply(np.atleast_2d(np.asarray(X, dtype=float)))
        return np.column_stack([t.predict_index(Z) for t in self.trees])

    def predict_proba(self, X) -> np.ndarray:
        votes = self.tree_votes(X)
        counts = np.stack([(votes == k).sum(axis=1) for k in range(len(self.classes))], axis=1)
        return counts / self.n_trees

    def predict(self, X) -> np.ndarray:
        # classes are in ascending code order, so argmax breaks ties to the lowest code
        winners = np.argmax(self.predict_proba(X), axis=1)
        return np.array([int(self.classes[k]) for k in winners], dtype=int)

    def json(self):
        return {
            'max_features': self.max_features,
            'classes': [int(c) for c in self.classes],
            'bootstrap': self.bootstrap,
            'oob_score': self.oob_score,
            'feature_names': list(self.feature_names),
            'scaler': self.scaler.json(),
            'trees': [t.json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc) -> "RandomForestModel":
        return cls(
            trees=[DecisionTree.from_json(t) for t in doc['trees']],
            max_features=int(doc['max_features']),
            classes=tuple(ClassLabel(c) for c in doc['classes']),
            scaler=Scaler.from_json(doc['scaler']),
            bootstrap=bool(doc.get('bootstrap', True)),
            oob_score=doc.get('oob_score'),
            feature_names=tuple(doc.get('feature_names', FEATURE_NAMES)),
        )


def forest_bootstrap_indices(n: int, n_trees: int, seed) -> List[np.ndarray]:
    """The bootstrap rows each tree of rf_train(seed=seed) is grown on."""
    return [rng.integers(0, n, size=n) for rng in spawn_rngs(seed, n_trees)]


def rf_train(train: LabeledDataset, n_trees: int = 100, max_features: int = 4, seed=0,
             max_depth: Optional[int] = None, min_leaf: int = 1, bootstrap: bool = True) -> RandomForestModel:
    """
    Train a random forest classifier.

    Each tree gets its own random stream spawned from seed; with bootstrap the
    stream first draws n row indices with replacement.

    Raises:
        EmptyData, SingleClassData
    """
    classes = _check_training_set(train)
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    scaler = scaler_fit(train.X)
    Z = scaler.apply(train.X)
    y_idx = _class_index(train.y, classes)
    n = len(train)

    trees = []
    oob_votes = np.zeros((n, len(classes)))
    for rng in spawn_rngs(seed, n_trees):
        rows = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
        tree = tree_train(Z[rows], y_idx[rows], len(classes), max_features, rng, max_depth, min_leaf)
        trees.append(tree)
        if bootstrap:
            out = np.setdiff1d(np.arange(n), rows)
            if len(out):
                oob_votes[out, tree.predict_index(Z[out])] += 1

    oob_score = None
    if bootstrap:
        seen = oob_votes.sum(axis=1) > 0
        if seen.any():
            oob_score = float(np.mean(np.argmax(oob_votes[seen], axis=1) == y_idx[seen]))
    logger.info("random forest: %d trees on %d rows, oob=%s", n_trees, n, oob_score)
    return RandomForestModel(trees, max_features, classes, scaler, bootstrap, oob_score, train.feature_names)


def rf_predict(model: RandomForestModel, x) -> ClassLabel:
    return ClassLabel(int(model.predict(x)[0]))


def rf_predict_proba(model: RandomForestModel, x) -> Dict[ClassLabel, float]:
    proba = model.predict_proba(x)[0]
    return {c: float(p) for c, p in zip(model.classes, proba)}


@dataclass
class FeatureImportanceReport:
    importance: np.ndarray
    ranking: np.ndarray
    feature_names: Tuple[str, ...] = FEATURE_NAMES

    def top(self, k: int) -> List[Tuple[str, float]]:
        return [(self.feature_names[i], float(self.importance[i])) for i in self.ranking[:k]]

    def json(self):
        return {
            'features': [
                {'rank': r + 1, 'index': int(i), 'name': self.feature_names[i], 'importance': float(self.importance[i])}
                for r, i in enumerate(self.ranking)
            ],
        }


def rf_feature_importance(model: RandomForestModel, train: Optional[LabeledDataset] = None) -> FeatureImportanceReport:
    """
    Mean decrease in impurity.

    Every split credits n_t*g_t - n_l*g_l - n_r*g_r (divided by the tree's
    root size) to its feature; credits are summed over trees and normalized.
    """
    d = len(model.scaler.mean)
    if train is not None and train.X.shape[1] != d:
        raise ValueError(f"model has {d} features, dataset has {train.X.shape[1]}")
    total = np.zeros(d)
    for tree in model.trees:
        root = float(tree.n_samples[0])
        for node in np.flatnonzero(~tree.is_leaf()):
            l, r = tree.left[node], tree.right[node]
            decrease = (tree.n_samples[node] * tree.impurity[node]
                        - tree.n_samples[l] * tree.impurity[l]
                        - tree.n_samples[r] * tree.impurity[r])
            total[tree.feature[node]] += decrease / root
    s = total.sum()
    importance = total / s if s > 0 else np.full(d, 1.0 / d)
    ranking = np.argsort(-importance, kind="stable")
    return FeatureImportanceReport(importance, ranking, tuple(model.feature_names))


def select_features(report: FeatureImportanceReport, k: int) -> List[int]:
    """Column indices of the k most important features, in rank order."""
    return [int(i) for i in report.ranking[:k]]


# --- baselines ---------------------------------------------------------------

class BaselineVariant(enum.Enum):
    LINEAR_SVM = "linear_svm"
    LOGISTIC_REGRESSION = "logistic_regression"
    KNN = "knn"


@dataclass
class BaselineModel:
    """
    Linear variants keep one weight row per class (last entry is the bias);
    KNN keeps the standardized training set.
    """
    variant: BaselineVariant
    classes: Tuple[ClassLabel, ...]
    scaler: Scaler
    weights: Optional[np.ndarray] = None
    train_X: Optional[np.ndarray] = None
    train_y: Optional[np.ndarray] = None
    k: int = 5
    hyperparams: Dict[str, Any] = field(default_factory=dict)

    def scores(self, X) -> np.ndarray:
        Z = _with_bias(self.scaler.apply(np.atleast_2d(np.asarray(X, dtype=float))))
        return Z @ self.weights.T

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.variant is BaselineVariant.KNN:
            winners = _knn_vote(self.scaler.apply(X), self.train_X, self.train_y, self.k, len(self.classes))
        else:
            winners = np.argmax(self.scores(X), axis=1)
        return np.array([int(self.classes[w]) for w in winners], dtype=int)

    def json(self):
        doc = {
            'variant': self.variant.value,
            'classes': [int(c) for c in self.classes],
            'scaler': self.scaler.json(),
            'hyperparams': dict(self.hyperparams),
        }
        if self.variant is BaselineVariant.KNN:
            doc['k'] = self.k
            doc['train_X'] = self.train_X.tolist()
            doc['train_y'] = self.train_y.tolist()
        else:
            doc['weights'] = self.weights.tolist()
        return doc

    @classmethod
    def from_json(cls, doc) -> "BaselineModel":
        variant = BaselineVariant(doc['variant'])
        model = cls(
            variant=variant,
            classes=tuple(ClassLabel(c) for c in doc['classes']),
            scaler=Scaler.from_json(doc['scaler']),
            hyperparams=dict(doc.get('hyperparams', {})),
        )
        if variant is BaselineVariant.KNN:
            d = len(model.scaler.mean)
            model.k = int(doc['k'])
            model.train_X = np.asarray(doc['train_X'], dtype=float).reshape(-1, d)
            model.train_y = np.asarray(doc['train_y'], dtype=int)
        else:
            model.weights = np.asarray(doc['weights'], dtype=float)
        return model


def _with_bias(Z: np.ndarray) -> np.ndarray:
    return np.hstack([Z, np.ones((len(Z), 1))])


def _knn_vote(Q: np.ndarray, train_X: np.ndarray, train_y: np.ndarray, k: int, n_classes: int) -> np.ndarray:
    k = min(k, len(train_X))
    dist = cdist(Q, train_X, "euclidean")
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = np.stack([np.bincount(train_y[row], minlength=n_classes) for row in nearest])
    return np.argmax(votes, axis=1)


def _pegasos(Z: np.ndarray, target: np.ndarray, lam: float, epochs: int, rng: np.random.Generator) -> np.ndarray:
    """Hinge-loss weights by stochastic sub-gradient steps of size 1/(lam t)."""
    w = np.zeros(Z.shape[1])
    radius = 1.0 / np.sqrt(lam)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(len(Z)):
            t += 1
            eta = 1.0 / (lam * t)
            margin = target[i] * (Z[i] @ w)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += eta * target[i] * Z[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
    return w


def _logistic(Z: np.ndarray, target01: np.ndarray, l2: float, tol: float, max_iter: int) -> np.ndarray:
    """L2-penalized cross-entropy by full-batch gradient descent with step 1/L."""
    n, d = Z.shape
    lipschitz = 0.25 * np.linalg.norm(Z, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    w = np.zeros(d)
    for it in range(max_iter):
        grad = Z.T @ (expit(Z @ w) - target01) / n + l2 * w
        if np.linalg.norm(grad) < tol:
            logger.debug("logistic regression converged after %d steps", it)
            return w
        w -= step * grad
    raise NonConvergence(f"logistic regression gradient norm stayed above {tol} after {max_iter} steps")


def baseline_train(variant: Union[BaselineVariant, str], train: LabeledDataset,
                   hyperparams: Optional[AttackConfig] = None, seed=0) -> BaselineModel:
    """
    Train one comparison classifier.

    LINEAR_SVM and LOGISTIC_REGRESSION are one-vs-rest over the classes present;
    KNN stores the standardized rows.

    Raises:
        SingleClassData, NonConvergence (logistic regression)
    """
    variant = BaselineVariant(variant)
    hp = hyperparams or AttackConfig()
    classes = _check_training_set(train)
    scaler = scaler_fit(train.X)
    Z = scaler.apply(train.X)
    y_idx = _class_index(train.y, classes)

    if variant is BaselineVariant.KNN:
        return BaselineModel(variant, classes, scaler, train_X=Z, train_y=y_idx, k=hp.knn_k,
                             hyperparams={'k': hp.knn_k})

    Zb = _with_bias(Z)
    rng = make_rng(seed)
    weights = []
    for k in range(len(classes)):
        if variant is BaselineVariant.LINEAR_SVM:
            target = np.where(y_idx == k, 1.0, -1.0)
            weights.append(_pegasos(Zb, target, hp.svm_lambda, hp.svm_epochs, rng))
        else:
            target = (y_idx == k).astype(float)
            weights.append(_logistic(Zb, target, hp.logreg_l2, hp.logreg_tol, hp.logreg_max_iter))
    if variant is BaselineVariant.LINEAR_SVM:
        params = {'lambda': hp.svm_lambda, 'epochs': hp.svm_epochs}
    else:
        params = {'l2': hp.logreg_l2, 'tol': hp.logreg_tol}
    return BaselineModel(variant, classes, scaler, weights=np.vstack(weights), hyperparams=params)


def baseline_predict(model: BaselineModel, x) -> ClassLabel:
    return ClassLabel(int(model.predict(x)[0]))


# --- evaluation --------------------------------------------------------------

CLASSIFIER_TITLES = {
    'random_forest': 'Random Forest',
    BaselineVariant.LINEAR_SVM.value: 'Linear SVM',
    BaselineVariant.LOGISTIC_REGRESSION.value: 'Logistic Regression',
    BaselineVariant.KNN.value: 'KNN',
}
CLASS_TITLES = {
    ClassLabel.NORMAL: 'Normal',
    ClassLabel.SYN_FLOOD: 'SYN attack',
    ClassLabel.ICMP_FLOOD: 'ICMP attack',
}


def evaluate_classifier(model, test: LabeledDataset) -> Tuple[ConfusionMatrix, float]:
    """Confusion matrix over NORMAL, SYN_FLOOD, ICMP_FLOOD and trace/total accuracy."""
    if len(test) == 0:
        raise EmptyData("test set is empty")
    cm = confusion_matrix(test.y, model.predict(test.X), CLASS_ORDER)
    return cm, accuracy(cm)


def train_all_classifiers(train: LabeledDataset, config: Optional[AttackConfig] = None, seed=0) -> Dict[str, Any]:
    """Random forest plus the three baselines, keyed like CLASSIFIER_TITLES."""
    config = config or AttackConfig()
    models: Dict[str, Any] = {
        'random_forest': rf_train(train, config.n_trees, config.max_features, seed,
                                  config.max_depth, config.min_leaf, config.bootstrap),
    }
    for variant in BaselineVariant:
        models[variant.value] = baseline_train(variant, train, config, seed)
    return models


def evaluation_report(matrices: Dict[str, ConfusionMatrix]) -> Dict[str, Any]:
    """Per-classifier confusion matrix and accuracy, in evaluation order."""
    entries = []
    for name, cm in matrices.items():
        frac = accuracy_fraction(cm)
        entries.append({
            'name': name,
            'title': CLASSIFIER_TITLES.get(name, name),
            'classes': [c.name for c in cm.classes],
            'confusion_matrix': cm.counts.tolist(),
            'correct': int(np.trace(cm.counts)),
            'total': cm.total,
            'accuracy': float(frac),
            'accuracy_percent': truncated_percent(frac, 4),
        })
    return {'classifiers': entries}


def render_evaluation_markdown(report: Dict[str, Any]) -> str:
    """Confusion tables stacked under one header, one block per classifier."""
    header = "|  | " + " | ".join(CLASS_TITLES[c] for c in CLASS_ORDER) + " |"
    lines = [header, "|---|" + "---|" * len(CLASS_ORDER)]
    for entry in report['classifiers']:
        lines.append(f"| **{entry['title']} (Accuracy : {entry['accuracy_percent']}%)** |" + " |" * len(CLASS_ORDER))
        for c, row in zip(CLASS_ORDER, entry['confusion_matrix']):
            lines.append(f"| {CLASS_TITLES[c]} | " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(lines) + "\n"
