#!/usr/bin/env python3
"""
Command-line front door for the edge traffic analytics toolkit.

    edge_analytics.py generate scenarios/reference.yaml --pcap ref.pcap --truth ref_truth.csv
    edge_analytics.py extract ref.pcap --attacker 10.0.0.66 --out ref.csv
    edge_analytics.py train-anomaly clean.csv --seed 1 --out models/anomaly.json
    edge_analytics.py train-attack ref.csv --seed 1 --out models/attack.json
    edge_analytics.py detect ref.pcap --truth ref_truth.csv --out report.json
    edge_analytics.py evaluate ref.csv --seed 1 --out evaluation.json --markdown evaluation.md
    edge_analytics.py pca-plotdata ref.csv --out pca.csv
    edge_analytics.py rules report.json --format openflow
    edge_analytics.py throughput ref.pcap --out throughput.csv --chart throughput.md
    edge_analytics.py importance models/attack.json --out importance.csv

Exit codes: 0 success, 1 I/O or format error, 2 usage or configuration
error, 3 training failure.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

from anomaly import ensemble_evaluate, ensemble_train
from attack import (
    BaselineVariant,
    RandomForestModel,
    baseline_train,
    evaluate_classifier,
    evaluation_report,
    render_evaluation_markdown,
    rf_feature_importance,
    rf_train,
    train_all_classifiers,
)
from charts import (
    importance_bar_chart,
    importance_table,
    pca_table,
    table_to_csv,
    throughput_line_chart,
    throughput_table,
)
from config import DetectorConfig, load_config
from datamodel import ClassLabel, Protocol
from errors import (
    ConfigError,
    FeatureError,
    ModelError,
    ModelFormatError,
    PcapError,
    PipelineError,
)
from features import dataset_from_csv, dataset_to_csv, extract_dataset, throughput_series
from mlcore import check_seed, train_test_split
from model_store import (
    load_anomaly_model,
    load_classifier,
    load_report,
    save_anomaly_model,
    save_classifier,
    save_evaluation,
    save_report,
)
from pcapio import load_pcap
from pipeline import run_offline, run_stream, score_against_truth
from traffic_gen import compose_scenario, load_scenario, truth_from_csv, truth_to_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_IO = 1
EXIT_USAGE = 2
EXIT_TRAINING = 3

PROTOCOLS = {'tcp': int(Protocol.TCP), 'icmp': int(Protocol.ICMP)}
CLASSIFIERS = ['random_forest'] + [v.value for v in BaselineVariant]


def _seed(text: str) -> int:
    try:
        return check_seed(int(text))
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def _write_bytes(path: str, data: bytes):
    with open(path, 'wb') as f:
        f.write(data)
    print(f"✓ wrote {path}")


def _write_text(path: str, text: str):
    with open(path, 'w') as f:
        f.write(text)
    print(f"✓ wrote {path}")


def _read_dataset(path: str):
    with open(path, 'rb') as f:
        return dataset_from_csv(f.read())


def _require_model(path: str, what: str, command: str):
    if not os.path.exists(path):
        raise FileNotFoundError(f"missing {what} model {path}; run '{command}' first")


# --- commands ----------------------------------------------------------------

def cmd_generate(args, config: DetectorConfig) -> int:
    spec = load_scenario(args.spec)
    if args.seed is not None:
        spec.seed = args.seed
    scenario = compose_scenario(spec)
    _write_bytes(args.pcap, scenario.pcap)
    _write_bytes(args.truth, truth_to_csv(scenario.truth))
    attack_windows = sum(1 for label in scenario.labels if label != ClassLabel.NORMAL)
    print(f"  {len(scenario.records)} packets, {len(scenario.truth)} windows ({attack_windows} attack)")
    return EXIT_OK


def cmd_extract(args, config: DetectorConfig) -> int:
    meta, records = load_pcap(args.pcap)
    if meta.packet_count != meta.decoded_count:
        print(f"Warning: skipped {meta.packet_count - meta.decoded_count} frames {dict(meta.skipped)}")
    device = args.device or config.pipeline.device_ip
    samp = args.samp if args.samp is not None else config.features.samp
    protocol = PROTOCOLS[args.attack_protocol] if args.attack_protocol else None
    dataset = extract_dataset(records, device, samp, args.attacker or None, protocol)
    _write_bytes(args.out, dataset_to_csv(dataset))
    counts = {c.name: n for c, n in dataset.class_counts().items()}
    print(f"  {len(dataset)} windows {counts}")
    return EXIT_OK


def cmd_train_anomaly(args, config: DetectorConfig) -> int:
    dataset = _read_dataset(args.dataset)
    if args.normal_only:
        dataset = dataset.rows_with_label(ClassLabel.NORMAL)
    ensemble = ensemble_train(dataset, config.anomaly, args.seed)
    save_anomaly_model(ensemble, args.out)
    print(f"✓ wrote {args.out}")
    stats = ensemble_evaluate(ensemble, dataset)
    print(f"  trained on {stats['rows']} rows, training false-positive rate {stats['false_positive_rate']:.3f}")
    return EXIT_OK


def _train_classifier(name: str, train, config: DetectorConfig, seed: int):
    if name == 'random_forest':
        a = config.attack
        return rf_train(train, a.n_trees, a.max_features, seed, a.max_depth, a.min_leaf, a.bootstrap)
    return baseline_train(name, train, config.attack, seed)


def cmd_train_attack(args, config: DetectorConfig) -> int:
    dataset = _read_dataset(args.dataset)
    if args.all_rows:
        train, test = dataset, None
    else:
        fraction = args.train_fraction if args.train_fraction is not None else config.attack.train_fraction
        train, test = train_test_split(dataset, fraction, args.seed)
    model = _train_classifier(args.classifier, train, config, args.seed)
    save_classifier(model, args.out)
    print(f"✓ wrote {args.out}")
    if isinstance(model, RandomForestModel) and model.oob_available:
        print(f"  out-of-bag accuracy {model.oob_score:.4f}")
    if test is not None:
        _, acc = evaluate_classifier(model, test)
        print(f"  held-out accuracy {acc:.4f} on {len(test)} windows")
    return EXIT_OK


def cmd_detect(args, config: DetectorConfig) -> int:
    pipeline_config = config.pipeline
    if args.device:
        pipeline_config.device_ip = args.device
    anomaly_path = args.anomaly_model or pipeline_config.anomaly_model
    attack_path = args.attack_model or pipeline_config.attack_model
    _require_model(anomaly_path, "anomaly", "train-anomaly")
    _require_model(attack_path, "attack", "train-attack")
    ensemble = load_anomaly_model(anomaly_path)
    classifier = load_classifier(attack_path)

    if args.stream:
        _, records = load_pcap(args.pcap)
        report = run_stream(records, pipeline_config, ensemble, classifier)
    else:
        report = run_offline(args.pcap, pipeline_config, ensemble, classifier)
    payload = report.json()
    summary = report.summary
    print(f"  {summary['windows']} windows, {summary['anomalous_windows']} anomalous, {summary['rules']} rules")
    print(f"  mean response time {summary['mean_response_time'] * 1000:.3f} ms")

    if args.truth:
        with open(args.truth, 'rb') as f:
            truth = truth_from_csv(f.read())
        score = score_against_truth(report, truth)
        payload['truth_score'] = score
        print(f"  window accuracy vs truth {score['accuracy_percent']}% over {score['scored_windows']} windows")
    save_report(payload, args.out)
    print(f"✓ wrote {args.out}")
    return EXIT_OK


def cmd_evaluate(args, config: DetectorConfig) -> int:
    dataset = _read_dataset(args.dataset)
    fraction = args.train_fraction if args.train_fraction is not None else config.attack.train_fraction
    train, test = train_test_split(dataset, fraction, args.seed)
    models = train_all_classifiers(train, config.attack, args.seed)
    matrices = {name: evaluate_classifier(model, test)[0] for name, model in models.items()}
    report = evaluation_report(matrices)
    report['train_rows'] = len(train)
    report['test_rows'] = len(test)
    report['seed'] = args.seed
    save_evaluation(report, args.out)
    print(f"✓ wrote {args.out}")
    for entry in report['classifiers']:
        print(f"  {entry['title']}: {entry['accuracy_percent']}%")
    if args.markdown:
        _write_text(args.markdown, render_evaluation_markdown(report))
    return EXIT_OK


def cmd_pca_plotdata(args, config: DetectorConfig) -> int:
    dataset = _read_dataset(args.dataset)
    df, separation = pca_table(dataset, args.components)
    _write_bytes(args.out, table_to_csv(df))
    print(f"  centroid separation {separation:.2f}x mean within-class spread")
    return EXIT_OK


def cmd_rules(args, config: DetectorConfig) -> int:
    report = load_report(args.report)
    key = 'openflow' if args.format == 'openflow' else 'packet_filter'
    try:
        lines = [rule[key] for rule in report['rules']]
    except (KeyError, TypeError) as e:
        raise ModelFormatError(f"{args.report} holds a malformed rule: {e!r}") from e
    text = "".join(line + "\n" for line in lines)
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_throughput(args, config: DetectorConfig) -> int:
    _, records = load_pcap(args.pcap)
    device = args.device or config.pipeline.device_ip
    bin_size = args.bin if args.bin is not None else config.features.throughput_bin
    series = throughput_series(records, device, bin_size)
    _write_bytes(args.out, table_to_csv(throughput_table(series)))
    if args.chart:
        _write_text(args.chart, throughput_line_chart(series) + "\n")
    return EXIT_OK


def cmd_importance(args, config: DetectorConfig) -> int:
    model = load_classifier(args.model)
    if not isinstance(model, RandomForestModel):
        raise ModelFormatError(f"{args.model} is not a random forest; importance needs one")
    report = rf_feature_importance(model)
    _write_bytes(args.out, table_to_csv(importance_table(report)))
    if args.chart:
        _write_text(args.chart, importance_bar_chart(report, args.top) + "\n")
    for name, value in report.top(args.top):
        print(f"  {name:<20} {value:.4f}")
    return EXIT_OK


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="edge_analytics",
        description="Traffic analytics for IoT edge security: anomaly detection, flood classification, mitigation rules",
    )
    parser.add_argument('--config', default=None, help='Detector YAML config (default: detector.yaml next to this file)')
    parser.add_argument('--verbose', '-v', action='store_true', help='Log library debug output')
    sub = parser.add_subparsers(dest='command', metavar='COMMAND')
    sub.required = True

    p = sub.add_parser('generate', help='Generate a synthetic capture and its ground truth')
    p.add_argument('spec', help='Scenario YAML file')
    p.add_argument('--pcap', required=True, help='Output pcap path')
    p.add_argument('--truth', required=True, help='Output ground-truth CSV path')
    p.add_argument('--seed', type=_seed, default=None, help='Override the scenario seed')
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser('extract', help='Extract a labeled feature dataset from a pcap')
    p.add_argument('pcap', help='Input pcap')
    p.add_argument('--out', required=True, help='Output dataset CSV')
    p.add_argument('--device', default=None, help='Device IP (default: pipeline.device_ip)')
    p.add_argument('--samp', type=float, default=None, help='Window length in seconds (default: features.samp)')
    p.add_argument('--attacker', action='append', default=[], help='Attacker IP; repeat for several')
    p.add_argument('--attack-protocol', choices=sorted(PROTOCOLS), default=None,
                   help='Only count attacker packets of this protocol when labeling')
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser('train-anomaly', help='Train the three-member anomaly ensemble on clean rows')
    p.add_argument('dataset', help='Dataset CSV of clean traffic')
    p.add_argument('--out', required=True, help='Output model JSON')
    p.add_argument('--seed', type=_seed, required=True, help='Random seed')
    p.add_argument('--normal-only', action='store_true', help='Drop rows not labeled NORMAL before training')
    p.set_defaults(func=cmd_train_anomaly)

    p = sub.add_parser('train-attack', help='Train an attack classifier')
    p.add_argument('dataset', help='Labeled dataset CSV')
    p.add_argument('--out', required=True, help='Output model JSON')
    p.add_argument('--seed', type=_seed, required=True, help='Random seed')
    p.add_argument('--classifier', choices=CLASSIFIERS, default='random_forest', help='Model family')
    p.add_argument('--train-fraction', type=float, default=None, help='Stratified train share (default: attack.train_fraction)')
    p.add_argument('--all-rows', action='store_true', help='Train on every row instead of a split')
    p.set_defaults(func=cmd_train_attack)

    p = sub.add_parser('detect', help='Run detection over a capture and write a report')
    p.add_argument('pcap', help='Input pcap')
    p.add_argument('--out', required=True, help='Output report JSON')
    p.add_argument('--anomaly-model', default=None, help='Anomaly model (default: pipeline.anomaly_model)')
    p.add_argument('--attack-model', default=None, help='Attack model (default: pipeline.attack_model)')
    p.add_argument('--device', default=None, help='Device IP (default: pipeline.device_ip)')
    p.add_argument('--truth', default=None, help='Ground-truth CSV to score window decisions against')
    p.add_argument('--stream', action='store_true', help='Process packets one at a time with the online windowizer')
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser('evaluate', help='Compare the four classifiers on a stratified split')
    p.add_argument('dataset', help='Labeled dataset CSV')
    p.add_argument('--out', required=True, help='Output evaluation JSON')
    p.add_argument('--seed', type=_seed, required=True, help='Random seed')
    p.add_argument('--train-fraction', type=float, default=None, help='Stratified train share (default: attack.train_fraction)')
    p.add_argument('--markdown', default=None, help='Also write the confusion tables as Markdown')
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser('pca-plotdata', help='Write principal-component scores per window')
    p.add_argument('dataset', help='Labeled dataset CSV')
    p.add_argument('--out', required=True, help='Output CSV')
    p.add_argument('--components', type=int, default=2, help='Number of components (default: 2)')
    p.set_defaults(func=cmd_pca_plotdata)

    p = sub.add_parser('rules', help='Print the mitigation rules of a detection report')
    p.add_argument('report', help='Detection report JSON')
    p.add_argument('--format', choices=['openflow', 'packetfilter'], default='openflow', help='Rule syntax')
    p.add_argument('--out', default=None, help='Output text file (default: stdout)')
    p.set_defaults(func=cmd_rules)

    p = sub.add_parser('throughput', help='Write device bytes per time bin')
    p.add_argument('pcap', help='Input pcap')
    p.add_argument('--out', required=True, help='Output CSV')
    p.add_argument('--device', default=None, help='Device IP (default: pipeline.device_ip)')
    p.add_argument('--bin', type=float, default=None, help='Bin width in seconds (default: features.throughput_bin)')
    p.add_argument('--chart', default=None, help='Also write a Mermaid line chart')
    p.set_defaults(func=cmd_throughput)

    p = sub.add_parser('importance', help='Write random-forest feature importances')
    p.add_argument('model', help='Random forest model JSON')
    p.add_argument('--out', required=True, help='Output CSV')
    p.add_argument('--top', type=int, default=10, help='Features to print and chart (default: 10)')
    p.add_argument('--chart', default=None, help='Also write a Mermaid bar chart')
    p.set_defaults(func=cmd_importance)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s: %(message)s",
    )
    try:
        config = load_config(args.config)
        return args.func(args, config)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except ModelError as e:
        print(f"Training failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_TRAINING
    except (OSError, PcapError, FeatureError, ModelFormatError, PipelineError) as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_IO
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
