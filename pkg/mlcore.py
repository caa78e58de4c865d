#!/usr/bin/env python3
"""
Shared numerics: seeded random streams, standardization, stratified splits,
PCA, Mahalanobis distance and confusion matrices.

All randomness goes through numpy's PCG64 generator seeded with a 64-bit
unsigned integer; child streams come from SeedSequence.spawn.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from datamodel import CLASS_ORDER, ClassLabel, LabeledDataset
from errors import (
    ClassTooSmall,
    DegenerateData,
    EmptyData,
    EmptyMatrix,
    LengthMismatch,
    NotPositiveDefinite,
)

logger = logging.getLogger(__name__)

MAX_SEED = 2 ** 64 - 1
CONSTANT_COLUMN_RTOL = 1e-12


# --- random streams ----------------------------------------------------------

def check_seed(seed) -> int:
    if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)) or not 0 <= int(seed) <= MAX_SEED:
        raise ValueError(f"seed must be an integer in [0, 2**64), got {seed!r}")
    return int(seed)


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(check_seed(seed)))


def spawn_seeds(seed, n: int) -> List[np.random.SeedSequence]:
    return np.random.SeedSequence(check_seed(seed)).spawn(n)


def spawn_rngs(seed, n: int) -> List[np.random.Generator]:
    """n independent generators derived from one seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in spawn_seeds(seed, n)]


def child_seeds(seed, n: int) -> List[int]:
    """n independent 64-bit seeds derived from one seed."""
    return [int(s.generate_state(1, dtype=np.uint64)[0]) for s in spawn_seeds(seed, n)]


# --- standardization ---------------------------------------------------------

@dataclass(frozen=True)
class Scaler:
    """Column standardizer. Constant columns keep stddev 0 and pass through centered."""
    mean: np.ndarray
    stddev: np.ndarray

    def apply(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return (X - self.mean) / np.where(self.stddev > 0, self.stddev, 1.0)

    def json(self):
        return {'mean': self.mean.tolist(), 'stddev': self.stddev.tolist()}

    @classmethod
    def from_json(cls, doc) -> "Scaler":
        return cls(np.asarray(doc['mean'], dtype=float), np.asarray(doc['stddev'], dtype=float))


def scaler_fit(X) -> Scaler:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0 or X.shape[1] == 0:
        raise EmptyMatrix(f"cannot fit a scaler on a matrix of shape {X.shape}")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std <= CONSTANT_COLUMN_RTOL * np.maximum(1.0, np.abs(mean)), 0.0, std)
    return Scaler(mean, std)


def scaler_apply(scaler: Scaler, X) -> np.ndarray:
    return scaler.apply(X)


# --- splits ------------------------------------------------------------------

def split_indices(y, train_fraction: float, seed) -> Tuple[np.ndarray, np.ndarray]:
    """
    Stratified train/test row indices.

    Each class contributes floor(train_fraction * n_class) rows to the train
    half (kept within [1, n_class - 1]); both halves come back sorted.
    """
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    y = np.asarray(y, dtype=int)
    if len(y) == 0:
        raise EmptyData("cannot split an empty dataset")
    rng = make_rng(seed)
    train, test = [], []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        if len(idx) < 2:
            raise ClassTooSmall(f"class {c} has {len(idx)} sample(s); at least 2 are needed to stratify")
        n_train = min(max(math.floor(train_fraction * len(idx) + 1e-9), 1), len(idx) - 1)
        perm = rng.permutation(idx)
        train.append(perm[:n_train])
        test.append(perm[n_train:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def train_test_split(dataset: LabeledDataset, train_fraction: float, seed) -> Tuple[LabeledDataset, LabeledDataset]:
    train_idx, test_idx = split_indices(dataset.y, train_fraction, seed)
    return dataset.subset(train_idx), dataset.subset(test_idx)


# --- PCA ---------------------------------------------------------------------

@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray

    def transform(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) @ self.components.T


def pca_fit(X, k: int) -> PcaModel:
    """
    Top-k principal axes of the sample covariance (ddof=1).

    Each component is signed so that its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyMatrix(f"cannot fit PCA on a matrix of shape {X.shape}")
    n, d = X.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be in [1, {d}], got {k}")
    if n < 2 or np.all(X == X[0]):
        raise DegenerateData("PCA needs at least two distinct rows")

    mean = X.mean(axis=0)
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    values, vectors = linalg.eigh(cov)
    order = np.argsort(values)[::-1][:k]
    values = np.clip(values[order], 0.0, None)
    components = vectors[:, order].T
    signs = np.sign(components[np.arange(k), np.argmax(np.abs(components), axis=1)])
    components = components * np.where(signs == 0, 1.0, signs)[:, None]
    return PcaModel(mean, components, values)


def pca_transform(model: PcaModel, X) -> np.ndarray:
    return model.transform(X)


def fit_scaled_pca(X, k: int = 2) -> Tuple[Scaler, PcaModel]:
    """Standardize then fit PCA; features differ by orders of magnitude."""
    scaler = scaler_fit(X)
    return scaler, pca_fit(scaler.apply(X), k)


def pca_separation(scores, y) -> float:
    """
    Distance between the attack and normal centroids over the mean
    within-class spread.

    Spread of a class is the mean distance of its rows to the class centroid;
    the denominator averages it over the classes present.
    """
    scores = np.asarray(scores, dtype=float)
    y = np.asarray(y, dtype=int)
    normal = y == int(ClassLabel.NORMAL)
    if not normal.any() or normal.all():
        raise ValueError("separation needs both normal and attack rows")
    gap = np.linalg.norm(scores[~normal].mean(axis=0) - scores[normal].mean(axis=0))
    spreads = []
    for c in np.unique(y):
        member = scores[y == c]
        spreads.append(np.linalg.norm(member - member.mean(axis=0), axis=1).mean())
    spread = float(np.mean(spreads))
    return float("inf") if spread == 0 else float(gap / spread)


# --- Mahalanobis -------------------------------------------------------------

def cholesky_factor(cov) -> np.ndarray:
    """Lower Cholesky factor of a symmetric positive definite matrix."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    if cov.shape[0] != cov.shape[1]:
        raise NotPositiveDefinite(f"covariance must be square, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
        raise NotPositiveDefinite("covariance is not symmetric")
    try:
        return linalg.cholesky(cov, lower=True)
    except linalg.LinAlgError as e:
        raise NotPositiveDefinite(f"covariance is not positive definite: {e}") from e


def mahalanobis_many(X, mean, chol: np.ndarray) -> np.ndarray:
    """Distances of every row of X given a precomputed Cholesky factor."""
    diff = np.atleast_2d(np.asarray(X, dtype=float)) - np.asarray(mean, dtype=float)
    z = linalg.solve_triangular(chol, diff.T, lower=True)
    return np.sqrt(np.sum(z * z, axis=0))


def mahalanobis(x, mean, cov) -> float:
    """sqrt((x - mean)^T cov^-1 (x - mean)) through a triangular solve."""
    return float(mahalanobis_many(np.asarray(x, dtype=float)[None, :], mean, cholesky_factor(cov))[0])


# --- confusion matrix --------------------------------------------------------

@dataclass
class ConfusionMatrix:
    """Rows are the true class, columns the predicted class."""
    classes: Tuple[ClassLabel, ...]
    counts: np.ndarray

    @classmethod
    def from_rows(cls, rows, classes: Sequence[ClassLabel] = CLASS_ORDER) -> "ConfusionMatrix":
        counts = np.asarray(rows, dtype=np.int64)
        if counts.shape != (len(classes), len(classes)) or (counts < 0).any():
            raise ValueError(f"expected a {len(classes)}x{len(classes)} non-negative count table")
        return cls(tuple(classes), counts)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def recall(self) -> Dict[ClassLabel, float]:
        rows = self.counts.sum(axis=1)
        return {c: (float(self.counts[i, i] / rows[i]) if rows[i] else 0.0) for i, c in enumerate(self.classes)}

    def precision(self) -> Dict[ClassLabel, float]:
        cols = self.counts.sum(axis=0)
        return {c: (float(self.counts[i, i] / cols[i]) if cols[i] else 0.0) for i, c in enumerate(self.classes)}

    def json(self):
        return {
            'classes': [c.name for c in self.classes],
            'counts': self.counts.tolist(),
        }


def confusion_matrix(y_true, y_pred, classes: Sequence[ClassLabel] = CLASS_ORDER) -> ConfusionMatrix:
    y_true = np.asarray(y_true, dtype=int).reshape(-1)
    y_pred = np.asarray(y_pred, dtype=int).reshape(-1)
    if len(y_true) != len(y_pred):
        raise LengthMismatch(f"{len(y_true)} true labels vs {len(y_pred)} predictions")
    position = {int(c): i for i, c in enumerate(classes)}
    unknown = set(np.unique(np.concatenate([y_true, y_pred])).tolist()) - set(position)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} are not among {[int(c) for c in classes]}")
    counts = np.zeros((len(classes), len(classes)), dtype=np.int64)
    rows = np.array([position[v] for v in y_true], dtype=np.intp)
    cols = np.array([position[v] for v in y_pred], dtype=np.intp)
    np.add.at(counts, (rows, cols), 1)
    return ConfusionMatrix(tuple(classes), counts)


def accuracy_fraction(cm: ConfusionMatrix) -> Fraction:
    if cm.total == 0:
        raise EmptyData("accuracy of an empty confusion matrix")
    return Fraction(int(np.trace(cm.counts)), cm.total)


def accuracy(cm: ConfusionMatrix) -> float:
    """Trace over total."""
    return float(accuracy_fraction(cm))


def truncated_percent(value, decimals: int) -> str:
    """Percentage cut (not rounded) to the given number of decimals."""
    scaled = Fraction(value) * 100 * 10 ** decimals
    whole = math.floor(scaled)
    if not decimals:
        return str(whole)
    int_part, frac_part = divmod(whole, 10 ** decimals)
    return f"{int_part}.{frac_part:0{decimals}d}"
