#!/usr/bin/env python3
"""
One-class anomaly detectors trained on clean traffic and their majority vote.

Members:
    m1  isolation forest, s(x) = 2^(-E[h(x)] / c(psi))
    m2  nu one-class SVM with an RBF kernel, solved on the dual
    m3  elliptic envelope over a FAST-MCD robust covariance

Every member answers -1 for an anomaly and +1 for normal traffic. The
ensemble flags a vector when the sum of the three votes is negative.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.spatial.distance import cdist

from config import EnsembleConfig
from datamodel import ClassLabel, LabeledDataset
from errors import (
    ContaminatedTrainingSet,
    DegenerateGram,
    ModelError,
    NonConvergence,
    NotPositiveDefinite,
    SingularCovariance,
    TooFewSamples,
)
from mlcore import Scaler, child_seeds, cholesky_factor, mahalanobis_many, make_rng, scaler_fit, spawn_rngs

logger = logging.getLogger(__name__)

EULER_GAMMA = 0.5772156649
ALPHA_EPS = 1e-8
RIDGE_SCALE = 1e-6


def _as_matrix(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


def _check_contamination(contamination: float):
    if not 0 < contamination < 0.5:
        raise ValueError(f"contamination must be in (0, 0.5), got {contamination}")


def _upper_quantile(scores: np.ndarray, contamination: float) -> float:
    return float(np.quantile(scores, 1.0 - contamination))


# --- one-class SVM -----------------------------------------------------------

def rbf_kernel(A, B, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(_as_matrix(A), _as_matrix(B), "sqeuclidean"))


@dataclass
class OcsvmModel:
    """Support vectors are stored standardized; decision = sum(alpha K) - rho."""
    support_vectors: np.ndarray
    alphas: np.ndarray
    rho: float
    gamma: float
    nu: float
    scaler: Scaler
    n_iter: int = 0

    def decision_function(self, X) -> np.ndarray:
        Z = self.scaler.apply(_as_matrix(X))
        return rbf_kernel(Z, self.support_vectors, self.gamma) @ self.alphas - self.rho

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) >= 0, 1, -1)

    def json(self):
        return {
            'support_vectors': self.support_vectors.tolist(),
            'alphas': self.alphas.tolist(),
            'rho': self.rho,
            'gamma': self.gamma,
            'nu': self.nu,
            'n_iter': self.n_iter,
            'scaler': self.scaler.json(),
        }

    @classmethod
    def from_json(cls, doc) -> "OcsvmModel":
        d = len(doc['scaler']['mean'])
        return cls(
            support_vectors=np.asarray(doc['support_vectors'], dtype=float).reshape(-1, d),
            alphas=np.asarray(doc['alphas'], dtype=float),
            rho=float(doc['rho']),
            gamma=float(doc['gamma']),
            nu=float(doc['nu']),
            scaler=Scaler.from_json(doc['scaler']),
            n_iter=int(doc.get('n_iter', 0)),
        )


def solve_one_class_dual(K: np.ndarray, nu: float, tol: float = 1e-3, max_iter: Optional[int] = None):
    """
    Minimize 0.5 a^T K a subject to 0 <= a_i <= 1/(nu n) and sum(a) = 1.

    Pairwise updates with second-order working set selection. Stops once the
    maximal KKT violation drops below tol.

    Returns:
        (alphas, rho, gradient, iterations)
    """
    n = K.shape[0]
    C = 1.0 / (nu * n)
    alpha = np.zeros(n)
    full = min(int(nu * n), n)
    alpha[:full] = C
    if full < n:
        alpha[full] = min(max(1.0 - full * C, 0.0), C)
    G = K @ alpha
    diag = np.diag(K).copy()
    max_iter = max_iter if max_iter is not None else 100_000 * n

    it = 0
    while True:
        up = alpha < C
        low = alpha > 0
        minus_g = np.where(up, -G, -np.inf)
        i = int(np.argmax(minus_g))
        g_max = minus_g[i]
        g_low = np.where(low, G, -np.inf)
        if g_max + g_low.max() < tol:
            break
        if it >= max_iter:
            raise NonConvergence(f"one-class SVM dual did not reach tolerance {tol} in {max_iter} updates")

        b = g_max + G
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, 1e-12)
        gain = np.where(low & (b > 0), -(b * b) / a, np.inf)
        j = int(np.argmin(gain))
        if not np.isfinite(gain[j]):
            break

        delta = b[j] / a[j]
        room_i = C - alpha[i]
        room_j = alpha[j]
        if delta >= room_i:
            delta = room_i
        if delta >= room_j:
            delta = room_j
        alpha[i] = C if delta == room_i else alpha[i] + delta
        alpha[j] = 0.0 if delta == room_j else alpha[j] - delta
        G += delta * (K[:, i] - K[:, j])
        it += 1

    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(G[free].mean())
    else:
        at_upper = alpha >= C
        lb = G[at_upper].max() if at_upper.any() else -np.inf
        ub = G[~at_upper].min() if (~at_upper).any() else np.inf
        rho = float((ub + lb) / 2)
    return alpha, rho, G, it


def ocsvm_train(X_clean, nu: float = 0.05, gamma: Optional[float] = None, tol: float = 1e-3,
                scaler: Optional[Scaler] = None, max_iter: Optional[int] = None) -> OcsvmModel:
    """
    Train a nu one-class SVM on standardized features.

    Args:
        X_clean: clean training rows
        nu: upper bound on the training outlier fraction, in (0, 1]
        gamma: RBF width, defaults to 1/d
        tol: KKT violation tolerance
        scaler: standardizer to reuse (fit on X_clean when absent)

    Raises:
        DegenerateGram, TooFewSamples, NonConvergence
    """
    X = _as_matrix(X_clean)
    n, d = X.shape
    if not 0 < nu <= 1:
        raise ValueError(f"nu must be in (0, 1], got {nu}")
    gamma = 1.0 / d if gamma is None else float(gamma)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    scaler = scaler or scaler_fit(X)
    Z = scaler.apply(X)
    if n < 2 or np.all(Z == Z[0]):
        raise DegenerateGram("all training rows are identical; the Gram matrix is constant")
    if n < 10:
        raise TooFewSamples(f"one-class SVM needs at least 10 rows, got {n}")

    K = rbf_kernel(Z, Z, gamma)
    alpha, rho, _, it = solve_one_class_dual(K, nu, tol=tol, max_iter=max_iter)
    keep = alpha > ALPHA_EPS
    logger.debug("ocsvm: %d updates, %d support vectors, rho=%.6g", it, int(keep.sum()), rho)
    return OcsvmModel(Z[keep], alpha[keep], rho, gamma, nu, scaler, it)


def ocsvm_predict(model: OcsvmModel, x):
    """Vote (+1 when decision >= 0) and the raw decision value for one vector."""
    value = float(model.decision_function(x)[0])
    return (1 if value >= 0 else -1), value


# --- isolation forest --------------------------------------------------------

def c_factor(n) -> float:
    """Average unsuccessful-search path length in a BST of n items."""
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + EULER_GAMMA) - 2.0 * (n - 1) / n


def _c_array(sizes: np.ndarray) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=float)
    out = np.zeros_like(sizes)
    big = sizes > 1
    s = sizes[big]
    out[big] = 2.0 * (np.log(s - 1) + EULER_GAMMA) - 2.0 * (s - 1) / s
    return out


@dataclass
class IsolationTree:
    """Flat node arrays; feature == -1 marks a leaf. Rows with x[f] < threshold go left."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    size: np.ndarray

    def depth(self) -> int:
        depths = np.zeros(len(self.feature), dtype=int)
        for node in range(len(self.feature)):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def path_length(self, Z) -> np.ndarray:
        """Edges to the leaf plus c(leaf size), for every row."""
        Z = _as_matrix(Z)
        node = np.zeros(len(Z), dtype=int)
        edges = np.zeros(len(Z))
        active = self.feature[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            cur = node[rows]
            go_left = Z[rows, self.feature[cur]] < self.threshold[cur]
            node[rows] = np.where(go_left, self.left[cur], self.right[cur])
            edges[rows] += 1
            active = self.feature[node] >= 0
        return edges + _c_array(self.size[node])

    def json(self):
        return {
            'feature': self.feature.tolist(),
            'threshold': self.threshold.tolist(),
            'left': self.left.tolist(),
            'right': self.right.tolist(),
            'size': self.size.tolist(),
        }

    @classmethod
    def from_json(cls, doc) -> "IsolationTree":
        return cls(
            feature=np.asarray(doc['feature'], dtype=int),
            threshold=np.asarray(doc['threshold'], dtype=float),
            left=np.asarray(doc['left'], dtype=int),
            right=np.asarray(doc['right'], dtype=int),
            size=np.asarray(doc['size'], dtype=int),
        )


def build_isolation_tree(Z: np.ndarray, rng: np.random.Generator, height_limit: int) -> IsolationTree:
    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    size: List[int] = []

    def grow(rows: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(len(rows))
        if depth >= height_limit or len(rows) <= 1:
            return node
        part = Z[rows]
        lo = part.min(axis=0)
        hi = part.max(axis=0)
        candidates = np.flatnonzero(hi > lo)
        if len(candidates) == 0:
            return node
        f = int(candidates[rng.integers(len(candidates))])
        thr = rng.uniform(lo[f], hi[f])
        if thr <= lo[f]:
            thr = np.nextafter(lo[f], hi[f])
        goes_left = part[:, f] < thr
        feature[node] = f
        threshold[node] = float(thr)
        left[node] = grow(rows[goes_left], depth + 1)
        right[node] = grow(rows[~goes_left], depth + 1)
        return node

    grow(np.arange(len(Z)), 0)
    return IsolationTree(
        np.asarray(feature, dtype=int),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=int),
        np.asarray(right, dtype=int),
        np.asarray(size, dtype=int),
    )


@dataclass
class IsoForestModel:
    trees: List[IsolationTree]
    psi: int
    threshold: float
    contamination: float
    scaler: Scaler

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def mean_path_length(self, X) -> np.ndarray:
        Z = self.scaler.apply(_as_matrix(X))
        return np.mean([t.path_length(Z) for t in self.trees], axis=0)

    def score(self, X) -> np.ndarray:
        return score_from_path_length(self.mean_path_length(X), self.psi)

    def predict(self, X) -> np.ndarray:
        return np.where(self.score(X) > self.threshold, -1, 1)

    def json(self):
        return {
            'psi': self.psi,
            'threshold': self.threshold,
            'contamination': self.contamination,
            'scaler': self.scaler.json(),
            'trees': [t.json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, doc) -> "IsoForestModel":
        return cls(
            trees=[IsolationTree.from_json(t) for t in doc['trees']],
            psi=int(doc['psi']),
            threshold=float(doc['threshold']),
            contamination=float(doc['contamination']),
            scaler=Scaler.from_json(doc['scaler']),
        )


def score_from_path_length(expected_h, psi: int) -> np.ndarray:
    """2^(-E[h] / c(psi))."""
    return np.power(2.0, -np.asarray(expected_h, dtype=float) / c_factor(psi))


def iforest_train(X_clean, n_trees: int = 100, psi: int = 256, seed=0, contamination: float = 0.02,
                  scaler: Optional[Scaler] = None) -> IsoForestModel:
    """
    Grow n_trees isolation trees, each on psi rows drawn without replacement.

    The vote threshold is the (1 - contamination) quantile of training scores.
    """
    X = _as_matrix(X_clean)
    n = len(X)
    if psi < 2 or n < psi:
        raise TooFewSamples(f"isolation forest needs n >= psi >= 2, got n={n}, psi={psi}")
    if n_trees < 1:
        raise ValueError(f"n_trees must be >= 1, got {n_trees}")
    _check_contamination(contamination)
    scaler = scaler or scaler_fit(X)
    Z = scaler.apply(X)
    height_limit = math.ceil(math.log2(psi))
    trees = []
    for rng in spawn_rngs(seed, n_trees):
        sample = rng.choice(n, size=psi, replace=False)
        trees.append(build_isolation_tree(Z[sample], rng, height_limit))
    model = IsoForestModel(trees, psi, 0.0, contamination, scaler)
    model.threshold = _upper_quantile(model.score(X), contamination)
    logger.debug("iforest: %d trees, psi=%d, threshold=%.6f", n_trees, psi, model.threshold)
    return model


def iforest_score(model: IsoForestModel, x) -> float:
    return float(model.score(x)[0])


def iforest_predict(model: IsoForestModel, x) -> int:
    return int(model.predict(x)[0])


# --- FAST-MCD and the elliptic envelope --------------------------------------

@dataclass
class MCDResult:
    location: np.ndarray
    covariance: np.ndarray
    raw_location: np.ndarray
    raw_covariance: np.ndarray
    raw_distances: np.ndarray
    support: np.ndarray
    h: int
    ridge: float
    c_step_logdets: List[List[float]] = field(default_factory=list)


def _logdet(chol: np.ndarray) -> float:
    return float(2.0 * np.sum(np.log(np.diag(chol))))


def _mean_cov(X: np.ndarray):
    loc = X.mean(axis=0)
    diff = X - loc
    return loc, diff.T @ diff / len(X)


class _CStepper:
    """C-steps on a fixed ridge so the objective stays defined on singular subsets."""

    def __init__(self, X: np.ndarray, h: int, ridge: float):
        self.X = X
        self.h = h
        self.ridge_eye = ridge * np.eye(X.shape[1])

    def estimate(self, subset: np.ndarray):
        loc, cov = _mean_cov(self.X[subset])
        chol = cholesky_factor(cov + self.ridge_eye)
        return loc, cov, chol

    def step(self, loc, chol) -> np.ndarray:
        d2 = mahalanobis_many(self.X, loc, chol) ** 2
        return np.sort(np.argsort(d2, kind="stable")[: self.h])

    def refine(self, subset: np.ndarray, max_steps: int, trace: List[float]):
        loc, cov, chol = self.estimate(subset)
        trace.append(_logdet(chol))
        for _ in range(max_steps):
            new_subset = self.step(loc, chol)
            if np.array_equal(new_subset, subset):
                break
            subset = new_subset
            loc, cov, chol = self.estimate(subset)
            trace.append(_logdet(chol))
        return subset, loc, cov, chol


def _check_monotone(trace: Sequence[float]):
    for before, after in zip(trace, trace[1:]):
        if after > before + 1e-9 * max(1.0, abs(before)):
            raise ModelError(f"C-step increased the covariance log-determinant: {before} -> {after}")


def mcd_fit(X_clean, h_frac: float = 0.75, seed=0, n_starts: int = 200, n_best: int = 10,
            max_c_steps: int = 100) -> MCDResult:
    """
    FAST-MCD robust location and scatter.

    Random (d+1)-subsets each get two C-steps; the n_best lowest determinants
    are iterated to convergence and the best one is kept. The raw estimate is
    rescaled for consistency, reweighted at the 0.975 chi-square quantile
    (skipped when h == n) and finally regularized with a ridge of
    1e-6 * trace / d.

    Raises:
        TooFewSamples, SingularCovariance
    """
    X = _as_matrix(X_clean)
    n, d = X.shape
    if not 0 < h_frac <= 1:
        raise ValueError(f"h_frac must be in (0, 1], got {h_frac}")
    h = int(math.floor(h_frac * n))
    if n <= d + 1 or h < d + 1:
        raise TooFewSamples(f"MCD needs n > d + 1 and h >= d + 1 (n={n}, h={h}, d={d})")

    full_loc, full_cov = _mean_cov(X)
    scale = np.trace(full_cov) / d
    if not scale > 0:
        raise SingularCovariance("all training rows are identical")
    ridge = RIDGE_SCALE * scale
    stepper = _CStepper(X, h, ridge)
    traces: List[List[float]] = []

    if h == n:
        subset = np.arange(n)
        loc, cov, chol = stepper.estimate(subset)
        traces.append([_logdet(chol)])
    else:
        rng = make_rng(seed)
        candidates = []
        for _ in range(n_starts):
            start = rng.choice(n, size=d + 1, replace=False)
            loc0, _, chol0 = stepper.estimate(start)
            trace: List[float] = []
            subset, loc, cov, chol = stepper.refine(stepper.step(loc0, chol0), 2, trace)
            candidates.append((trace[-1], subset, trace))
        candidates.sort(key=lambda c: c[0])

        best = None
        for _, subset, trace in candidates[:n_best]:
            subset, loc, cov, chol = stepper.refine(subset, max_c_steps, trace)
            if best is None or trace[-1] < best[0]:
                best = (trace[-1], subset, loc, cov, chol)
        for _, _, trace in candidates:
            _check_monotone(trace)
            traces.append(trace)
        _, subset, loc, cov, chol = best

    raw_location = loc
    raw_covariance = cov
    d2 = mahalanobis_many(X, loc, chol) ** 2
    consistency = np.median(d2) / stats.chi2.ppf(0.5, d)
    if not consistency > 0:
        consistency = 1.0
    raw_cov_c = raw_covariance * consistency
    raw_chol = cholesky_factor(raw_cov_c + ridge * np.eye(d))
    raw_distances = mahalanobis_many(X, raw_location, raw_chol)

    support = raw_distances ** 2 <= stats.chi2.ppf(0.975, d)
    if h == n or support.sum() < d + 1:
        location, covariance = raw_location, raw_cov_c
        support = np.ones(n, dtype=bool) if h == n else support
    else:
        location, covariance = _mean_cov(X[support])

    covariance = (covariance + covariance.T) / 2
    final_ridge = RIDGE_SCALE * np.trace(covariance) / d
    if not final_ridge > 0:
        raise SingularCovariance("robust covariance has zero trace")
    covariance = covariance + final_ridge * np.eye(d)
    try:
        cholesky_factor(covariance)
    except NotPositiveDefinite as e:
        raise SingularCovariance(str(e)) from e

    logger.debug("mcd: h=%d/%d, best logdet %.6g, support %d", h, n, traces and min(t[-1] for t in traces), int(support.sum()))
    return MCDResult(location, covariance, raw_location, raw_covariance, raw_distances, support, h,
                     final_ridge, traces)


@dataclass
class EnvelopeModel:
    location: np.ndarray
    covariance: np.ndarray
    dist_threshold: float
    scaler: Scaler

    def __post_init__(self):
        self._chol = cholesky_factor(self.covariance)

    def mahalanobis(self, X) -> np.ndarray:
        return mahalanobis_many(self.scaler.apply(_as_matrix(X)), self.location, self._chol)

    def predict(self, X) -> np.ndarray:
        return np.where(self.mahalanobis(X) > self.dist_threshold, -1, 1)

    def json(self):
        return {
            'location': self.location.tolist(),
            'covariance': self.covariance.tolist(),
            'dist_threshold': self.dist_threshold,
            'scaler': self.scaler.json(),
        }

    @classmethod
    def from_json(cls, doc) -> "EnvelopeModel":
        return cls(
            location=np.asarray(doc['location'], dtype=float),
            covariance=np.atleast_2d(np.asarray(doc['covariance'], dtype=float)),
            dist_threshold=float(doc['dist_threshold']),
            scaler=Scaler.from_json(doc['scaler']),
        )


def envelope_train(X_clean, contamination: float = 0.02, h_frac: float = 0.75, seed=0,
                   scaler: Optional[Scaler] = None, n_starts: int = 200) -> EnvelopeModel:
    """Elliptic boundary at the (1 - contamination) quantile of robust distances."""
    _check_contamination(contamination)
    X = _as_matrix(X_clean)
    scaler = scaler or scaler_fit(X)
    Z = scaler.apply(X)
    mcd = mcd_fit(Z, h_frac=h_frac, seed=seed, n_starts=n_starts)
    model = EnvelopeModel(mcd.location, mcd.covariance, 0.0, scaler)
    distances = mahalanobis_many(Z, mcd.location, model._chol)
    threshold = _upper_quantile(distances, contamination)
    if not threshold > 0:
        positive = distances[distances > 0]
        threshold = float(positive.min()) if len(positive) else np.finfo(float).tiny
    model.dist_threshold = threshold
    return model


def envelope_predict(model: EnvelopeModel, x) -> int:
    return int(model.predict(x)[0])


# --- ensemble ----------------------------------------------------------------

@dataclass(frozen=True)
class Verdict:
    p1: int
    p2: int
    p3: int
    p_sum: int
    is_anomaly: bool

    @classmethod
    def from_votes(cls, p1: int, p2: int, p3: int) -> "Verdict":
        for p in (p1, p2, p3):
            if p not in (-1, 1):
                raise ValueError(f"member votes must be -1 or +1, got {p}")
        total = p1 + p2 + p3
        return cls(int(p1), int(p2), int(p3), int(total), total < 0)

    def json(self):
        return {'p1': self.p1, 'p2': self.p2, 'p3': self.p3, 'p_sum': self.p_sum, 'is_anomaly': self.is_anomaly}


@dataclass
class AnomalyEnsemble:
    m1: IsoForestModel
    m2: OcsvmModel
    m3: EnvelopeModel
    scaler: Scaler
    config: EnsembleConfig
    seed: int

    def votes(self, X) -> np.ndarray:
        X = _as_matrix(X)
        return np.column_stack([self.m1.predict(X), self.m2.predict(X), self.m3.predict(X)])

    def predict_many(self, X) -> List[Verdict]:
        return [Verdict.from_votes(*map(int, row)) for row in self.votes(X)]

    def predict(self, x) -> Verdict:
        return self.predict_many(x)[0]

    def json(self):
        return {
            'seed': self.seed,
            'config': self.config.json(),
            'scaler': self.scaler.json(),
            'isolation_forest': self.m1.json(),
            'one_class_svm': self.m2.json(),
            'elliptic_envelope': self.m3.json(),
        }

    @classmethod
    def from_json(cls, doc) -> "AnomalyEnsemble":
        return cls(
            m1=IsoForestModel.from_json(doc['isolation_forest']),
            m2=OcsvmModel.from_json(doc['one_class_svm']),
            m3=EnvelopeModel.from_json(doc['elliptic_envelope']),
            scaler=Scaler.from_json(doc['scaler']),
            config=EnsembleConfig.from_dict(doc['config']),
            seed=int(doc['seed']),
        )


MIN_ENSEMBLE_ROWS = 50


def ensemble_train(clean: LabeledDataset, config: Optional[EnsembleConfig] = None, seed=0) -> AnomalyEnsemble:
    """
    Train the three members on one standardized copy of clean traffic.

    Raises:
        ContaminatedTrainingSet: a row is labeled other than NORMAL
        TooFewSamples: fewer than 50 rows
    """
    config = config or EnsembleConfig()
    if np.any(clean.y != int(ClassLabel.NORMAL)):
        bad = int(np.sum(clean.y != int(ClassLabel.NORMAL)))
        raise ContaminatedTrainingSet(f"{bad} training row(s) are labeled as attacks")
    n = len(clean)
    if n < MIN_ENSEMBLE_ROWS:
        raise TooFewSamples(f"anomaly ensemble needs at least {MIN_ENSEMBLE_ROWS} clean rows, got {n}")

    X = clean.X
    scaler = scaler_fit(X)
    iforest_seed, mcd_seed = child_seeds(seed, 2)
    psi = min(config.psi, n)

    jobs = {
        'm1': lambda: iforest_train(X, config.n_trees, psi, iforest_seed, config.contamination, scaler),
        'm2': lambda: ocsvm_train(X, config.nu, config.gamma, config.ocsvm_tol, scaler),
        'm3': lambda: envelope_train(X, config.contamination, config.h_frac, mcd_seed, scaler, config.mcd_starts),
    }
    if config.parallel:
        with ThreadPoolExecutor(max_workers=len(jobs)) as pool:
            futures = {name: pool.submit(job) for name, job in jobs.items()}
            members = {name: f.result() for name, f in futures.items()}
    else:
        members = {name: job() for name, job in jobs.items()}

    logger.info("anomaly ensemble trained on %d clean rows", n)
    return AnomalyEnsemble(members['m1'], members['m2'], members['m3'], scaler, config, int(seed))


def ensemble_predict(ensemble: AnomalyEnsemble, x) -> Verdict:
    return ensemble.predict(x)


def ensemble_evaluate(ensemble: AnomalyEnsemble, dataset: LabeledDataset) -> Dict[str, Any]:
    """Fraction of rows flagged per class; the NORMAL entry is the false-positive rate."""
    if len(dataset) == 0:
        return {'rows': 0, 'flagged_fraction': {}}
    flagged = np.array([v.is_anomaly for v in ensemble.predict_many(dataset.X)])
    per_class = {}
    for label in dataset.classes_present():
        rows = dataset.y == int(label)
        per_class[label.name] = float(flagged[rows].mean())
    return {
        'rows': len(dataset),
        'flagged_fraction': per_class,
        'false_positive_rate': per_class.get(ClassLabel.NORMAL.name, 0.0),
    }
