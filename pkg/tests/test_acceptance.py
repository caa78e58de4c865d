"""End-to-end properties of the detection stack on hand-built and generated inputs."""

import math

import numpy as np
import pytest
from scipy.optimize import brentq

from anomaly import (
    IsoForestModel,
    IsolationTree,
    Verdict,
    c_factor,
    ocsvm_train,
    rbf_kernel,
    solve_one_class_dual,
)
from charts import pca_table
from datamodel import ClassLabel, Protocol, TcpFlag
from features import throughput_series
from mlcore import Scaler, mahalanobis, make_rng
from pcapio import read_pcap, write_pcap
from pipeline import DetectionEvent, make_rule, run_offline
from reference_workflow import throughput_surge
from traffic_gen import FloodKind, FloodProfile, gen_flood

ATTACKER = "10.0.0.66"


# --- isolation forest against a brute-force walk --------------------------------

# nested (feature, threshold, left, right) tuples; ints are leaf sizes
HAND_TREES = [
    (0, 0.5, 3, (1, 0.2, 1, 6)),
    (1, -0.1, 5, (0, 1.0, 2, 3)),
]


def _flatten(root) -> IsolationTree:
    feature, threshold, left, right, size = [], [], [], [], []

    def add(node):
        idx = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        size.append(0)
        if isinstance(node, int):
            size[idx] = node
            return idx
        f, t, lo, hi = node
        feature[idx], threshold[idx] = f, t
        left[idx] = add(lo)
        right[idx] = add(hi)
        return idx

    add(root)
    return IsolationTree(np.array(feature), np.array(threshold), np.array(left), np.array(right), np.array(size))


def _harmonic_c(n):
    if n <= 1:
        return 0.0
    return 2.0 * (math.log(n - 1) + 0.5772156649015329) - 2.0 * (n - 1) / n


def _walk(node, x, depth=0):
    if isinstance(node, int):
        return depth + _harmonic_c(node)
    f, t, lo, hi = node
    return _walk(lo if x[f] < t else hi, x, depth + 1)


def test_hand_built_forest_scores_match_a_brute_force_walk():
    points = make_rng(21).normal(size=(10, 2))
    model = IsoForestModel([_flatten(t) for t in HAND_TREES], psi=10, threshold=0.6, contamination=0.1,
                           scaler=Scaler(np.zeros(2), np.ones(2)))
    expected = [2.0 ** (-np.mean([_walk(t, x) for t in HAND_TREES]) / _harmonic_c(10)) for x in points]
    np.testing.assert_allclose(model.score(points), expected, rtol=0, atol=1e-12)
    assert c_factor(2) == pytest.approx(0.1544313298, abs=1e-10)


# --- Mahalanobis distance -------------------------------------------------------

def test_mahalanobis_is_affine_invariant():
    rng = make_rng(5)
    X = rng.normal(size=(200, 3)) @ np.array([[2.0, 0.3, 0.0], [0.0, 1.0, 0.4], [0.0, 0.0, 0.5]])
    mean, cov = X.mean(axis=0), np.cov(X, rowvar=False)
    A = np.array([[1.5, -0.2, 0.7], [0.1, 3.0, 0.0], [-0.4, 0.2, 0.9]])
    b = np.array([10.0, -3.0, 0.5])
    for x in rng.normal(size=(5, 3)) * 3:
        assert mahalanobis(A @ x + b, A @ mean + b, A @ cov @ A.T) == pytest.approx(mahalanobis(x, mean, cov), abs=1e-8)


# --- one-class SVM ---------------------------------------------------------------

def test_training_outlier_fraction_tracks_nu():
    X = make_rng(8).normal(size=(500, 2))
    for nu in (0.05, 0.1, 0.2):
        model = ocsvm_train(X, nu=nu, tol=1e-6)
        assert abs(np.mean(model.predict(X) == -1) - nu) <= 0.05


def _project_capped_simplex(v, cap):
    tau = brentq(lambda t: np.clip(v - t, 0.0, cap).sum() - 1.0, v.min() - 1.0, v.max())
    return np.clip(v - tau, 0.0, cap)


def test_dual_matches_projected_gradient_oracle():
    Z = make_rng(13).normal(size=(12, 2))
    K = rbf_kernel(Z, Z, 0.5)
    nu = 0.3
    cap = 1.0 / (nu * len(Z))

    alpha, rho, _, _ = solve_one_class_dual(K, nu, tol=1e-9)

    step = 1.0 / np.linalg.eigvalsh(K).max()
    beta = np.full(len(Z), 1.0 / len(Z))
    for _ in range(20_000):
        beta = _project_capped_simplex(beta - step * (K @ beta), cap)
    grad = K @ beta
    free = (beta > 1e-7) & (beta < cap - 1e-7)
    oracle_rho = grad[free].mean() if free.any() else 0.5 * (grad[beta >= cap - 1e-7].max() + grad[beta <= 1e-7].min())

    np.testing.assert_allclose(K @ alpha - rho, grad - oracle_rho, atol=1e-3)


# --- pipeline gate ----------------------------------------------------------------

def test_rules_follow_the_gate_on_fuzzed_events():
    rng = make_rng(99)
    kinds = [None, ClassLabel.NORMAL, ClassLabel.SYN_FLOOD, ClassLabel.ICMP_FLOOD]
    for _ in range(500):
        votes = rng.choice([-1, 1], size=3)
        verdict = Verdict.from_votes(*(int(v) for v in votes))
        attack_type = kinds[int(rng.integers(len(kinds)))]
        suspect = f"10.0.{int(rng.integers(256))}.{int(rng.integers(1, 255))}"
        event = DetectionEvent(0.0, 1.0, "10.0.0.10", verdict, attack_type, [suspect], 1e-4)
        rule = make_rule(event)
        should_block = verdict.is_anomaly and attack_type in (ClassLabel.SYN_FLOOD, ClassLabel.ICMP_FLOOD)
        assert (rule is not None) == should_block
        if rule is not None:
            assert rule.match.src_ip == suspect
            assert rule.reason == attack_type


def test_reference_syn_flood_rule_names_the_attacker(reference_scenario, trained_ensemble, trained_forest):
    report = run_offline(reference_scenario.pcap, None, trained_ensemble, trained_forest)
    syn_rules = [r for r in report.rules if r.reason == ClassLabel.SYN_FLOOD]
    assert len(syn_rules) == 1
    assert syn_rules[0].match.src_ip == ATTACKER
    assert syn_rules[0].match.protocol == int(Protocol.TCP)
    assert syn_rules[0].match.tcp_flag == TcpFlag.SYN
    assert report.summary['mean_response_time'] < 1.0


# --- figures -------------------------------------------------------------------------

def test_flood_throughput_surge(reference_scenario):
    spec = reference_scenario.spec
    series = throughput_series(reference_scenario.records, spec.device_ip, 1.0)
    assert throughput_surge(series, spec.floods, spec.epoch) >= 10.0


def test_pca_separates_attacks_from_normal(reference_dataset):
    _, separation = pca_table(reference_dataset)
    assert separation >= 3.0


# --- capture codec at scale ----------------------------------------------------------

def test_ten_thousand_packets_rewrite_byte_identically():
    records = gen_flood(FloodProfile(kind=FloodKind.ICMP, rate=10_000, start=0.0, duration=1.0), seed=17)
    assert len(records) == 10_000
    data = write_pcap(records)
    meta, decoded = read_pcap(data)
    assert meta.decoded_count == 10_000
    assert write_pcap(decoded) == data
