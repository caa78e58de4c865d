#!/usr/bin/env python3
"""
End-to-end run on the shipped scenarios.

Generates the reference attack capture and the clean training capture,
trains both detection stages, runs detection and prints one line per
measurement. Every artifact lands in the output directory.
"""

import argparse
import os
import sys
from typing import Any, Dict

import numpy as np

from anomaly import ensemble_evaluate, ensemble_train
from attack import evaluate_classifier, evaluation_report, render_evaluation_markdown, train_all_classifiers
from charts import pca_table, table_to_csv, throughput_table
from config import DetectorConfig, load_config
from datamodel import ClassLabel
from features import dataset_to_csv, extract_dataset
from mlcore import train_test_split
from model_store import save_anomaly_model, save_classifier, save_evaluation, save_report
from pipeline import run_offline, score_against_truth
from traffic_gen import compose_scenario, load_scenario, truth_to_csv

HERE = os.path.dirname(os.path.abspath(__file__))
REFERENCE_SCENARIO = os.path.join(HERE, "scenarios", "reference.yaml")
CLEAN_SCENARIO = os.path.join(HERE, "scenarios", "benign.yaml")


def throughput_surge(series, floods, epoch: float = 0.0) -> float:
    """Smallest flood-interval bin over the median of the other bins."""
    times = np.array([t for t, _ in series]) - epoch
    values = np.array([b for _, b in series])
    in_flood = np.zeros(len(times), dtype=bool)
    for flood in floods:
        in_flood |= (times >= flood.start) & (times < flood.start + flood.duration)
    if not in_flood.any() or in_flood.all():
        return float('nan')
    baseline = float(np.median(values[~in_flood]))
    return float('inf') if baseline == 0 else float(values[in_flood].min() / baseline)


def run_reference(out_dir: str, config: DetectorConfig, seed: int) -> Dict[str, Any]:
    """
    Run every stage and collect the headline measurements.

    Args:
        out_dir: existing directory for pcaps, datasets, models and reports
        config: detector settings
        seed: seed for splits and model training

    Returns:
        Measurement name -> value
    """
    def out(name):
        return os.path.join(out_dir, name)

    results: Dict[str, Any] = {}

    print("Generating scenarios...")
    reference = compose_scenario(load_scenario(REFERENCE_SCENARIO))
    clean = compose_scenario(load_scenario(CLEAN_SCENARIO))
    for name, scenario in (("reference", reference), ("clean", clean)):
        with open(out(f"{name}.pcap"), 'wb') as f:
            f.write(scenario.pcap)
        with open(out(f"{name}_truth.csv"), 'wb') as f:
            f.write(truth_to_csv(scenario.truth))
    print(f"✓ {len(reference.records)} reference packets, {len(clean.records)} clean packets")

    spec = reference.spec
    dataset = extract_dataset(reference.records, spec.device_ip, spec.samp, spec.attack_ips)
    clean_dataset = extract_dataset(clean.records, clean.spec.device_ip, clean.spec.samp)
    with open(out("reference.csv"), 'wb') as f:
        f.write(dataset_to_csv(dataset))

    print("Training anomaly ensemble on clean traffic...")
    ensemble = ensemble_train(clean_dataset, config.anomaly, seed)
    save_anomaly_model(ensemble, out("anomaly.json"))
    stats = ensemble_evaluate(ensemble, dataset)
    flagged = stats['flagged_fraction']
    attack_flagged = [flagged[c.name] for c in (ClassLabel.SYN_FLOOD, ClassLabel.ICMP_FLOOD) if c.name in flagged]
    results['flood_windows_flagged'] = min(attack_flagged) if attack_flagged else float('nan')
    results['benign_windows_flagged'] = stats['false_positive_rate']

    print("Training attack classifiers on a stratified split...")
    train, test = train_test_split(dataset, config.attack.train_fraction, seed)
    models = train_all_classifiers(train, config.attack, seed)
    matrices = {name: evaluate_classifier(model, test)[0] for name, model in models.items()}
    evaluation = evaluation_report(matrices)
    save_evaluation(evaluation, out("evaluation.json"))
    with open(out("evaluation.md"), 'w') as f:
        f.write(render_evaluation_markdown(evaluation))
    save_classifier(models['random_forest'], out("attack.json"))
    for entry in evaluation['classifiers']:
        results[f"accuracy_{entry['name']}"] = entry['accuracy']

    print("Running detection over the reference capture...")
    report = run_offline(reference.pcap, config.pipeline, ensemble, models['random_forest'])
    score = score_against_truth(report, reference.truth)
    payload = report.json()
    payload['truth_score'] = score
    save_report(payload, out("report.json"))
    results['window_accuracy'] = score['accuracy']
    results['mean_response_time'] = report.summary['mean_response_time']
    results['rules'] = [rule.json()['openflow'] for rule in report.rules]
    results['throughput_surge'] = throughput_surge(report.throughput, spec.floods, spec.epoch)
    with open(out("throughput.csv"), 'wb') as f:
        f.write(table_to_csv(throughput_table(report.throughput)))

    df, separation = pca_table(dataset)
    with open(out("pca.csv"), 'wb') as f:
        f.write(table_to_csv(df))
    results['pca_separation'] = separation
    return results


CHECKS = (
    ('accuracy_random_forest', lambda v: v >= 0.95, "Random forest held-out accuracy"),
    ('flood_windows_flagged', lambda v: v >= 0.90, "Flood windows flagged by the ensemble"),
    ('benign_windows_flagged', lambda v: v <= 0.10, "Benign windows flagged by the ensemble"),
    ('mean_response_time', lambda v: v < 1.0, "Mean per-window response time (s)"),
    ('throughput_surge', lambda v: v >= 10.0, "Flood throughput over benign median"),
    ('pca_separation', lambda v: v >= 3.0, "PCA centroid gap over within-class spread"),
    ('window_accuracy', lambda v: v >= 0.95, "Pipeline window accuracy vs ground truth"),
)


def main():
    parser = argparse.ArgumentParser(description="Run the reference detection workflow end to end")
    parser.add_argument('--out-dir', default='reference_run', help='Directory for all artifacts (default: reference_run)')
    parser.add_argument('--seed', type=int, required=True, help='Seed for splits and model training')
    parser.add_argument('--config', default=None, help='Detector YAML config')
    args = parser.parse_args()

    os.makedirs(args.out_dir, exist_ok=True)
    results = run_reference(args.out_dir, load_config(args.config), args.seed)

    print("\n" + "=" * 60)
    failed = 0
    for key, check, title in CHECKS:
        value = results[key]
        ok = check(value)
        failed += not ok
        print(f"{'✓' if ok else '✗'} {title}: {value:.4f}")
    for rule in results['rules']:
        print(f"  rule: {rule}")
    if failed:
        print(f"ERROR: {failed} measurement(s) out of range")
        sys.exit(1)


if __name__ == "__main__":
    main()
