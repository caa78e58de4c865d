#!/usr/bin/env python3
"""
Versioned JSON documents for trained models and reports.

Every document is {"format": <tag>, "version": 1, ...payload}. Floats are
written by the json module with repr precision, so a reloaded model makes
the same predictions as the one that was saved.
"""

import json
import logging
from typing import Any, Dict, Iterable, Union

from anomaly import AnomalyEnsemble
from attack import BaselineModel, RandomForestModel
from errors import ModelFormatError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
ANOMALY_FORMAT = "edge-analytics/anomaly-ensemble"
FOREST_FORMAT = "edge-analytics/random-forest"
BASELINE_FORMAT = "edge-analytics/baseline"
REPORT_FORMAT = "edge-analytics/detection-report"
EVALUATION_FORMAT = "edge-analytics/evaluation"

_REQUIRED = {
    ANOMALY_FORMAT: ("seed", "config", "scaler", "isolation_forest", "one_class_svm", "elliptic_envelope"),
    FOREST_FORMAT: ("max_features", "classes", "scaler", "trees"),
    BASELINE_FORMAT: ("variant", "classes", "scaler"),
    REPORT_FORMAT: ("device_ip", "summary", "events", "rules", "throughput"),
    EVALUATION_FORMAT: ("classifiers",),
}

Classifier = Union[RandomForestModel, BaselineModel]


def validate_document(doc, formats: Iterable[str]) -> str:
    """
    Check the envelope of a stored document.

    Returns:
        The document's format tag

    Raises:
        ModelFormatError: not an object, unexpected tag or version, missing keys
    """
    formats = tuple(formats)
    if not isinstance(doc, dict):
        raise ModelFormatError("document must be a JSON object")
    tag = doc.get("format")
    if tag not in formats:
        raise ModelFormatError(f"expected format {' or '.join(formats)}, got {tag!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported {tag} version: {doc.get('version')!r}")
    for key in _REQUIRED[tag]:
        if key not in doc:
            raise ModelFormatError(f"{tag} document is missing '{key}'")
    return tag


def write_document(tag: str, payload: Dict[str, Any], path) -> str:
    doc = {"format": tag, "version": FORMAT_VERSION, **payload}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")
    logger.debug("wrote %s to %s", tag, path)
    return str(path)


def read_document(path, formats: Iterable[str]) -> Dict[str, Any]:
    with open(path, "r") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ModelFormatError(f"{path} is not valid JSON: {e}") from e
    validate_document(doc, formats)
    return doc


def _decode(builder, doc, tag):
    try:
        return builder(doc)
    except (KeyError, TypeError, ValueError, IndexError) as e:
        if isinstance(e, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed {tag} document: {e!r}") from e


# --- models ------------------------------------------------------------------

def save_anomaly_model(ensemble: AnomalyEnsemble, path) -> str:
    return write_document(ANOMALY_FORMAT, ensemble.json(), path)


def load_anomaly_model(path) -> AnomalyEnsemble:
    doc = read_document(path, [ANOMALY_FORMAT])
    return _decode(AnomalyEnsemble.from_json, doc, ANOMALY_FORMAT)


def save_classifier(model: Classifier, path) -> str:
    tag = FOREST_FORMAT if isinstance(model, RandomForestModel) else BASELINE_FORMAT
    return write_document(tag, model.json(), path)


def load_classifier(path) -> Classifier:
    """Load a random forest or a baseline, whichever the file holds."""
    doc = read_document(path, [FOREST_FORMAT, BASELINE_FORMAT])
    if doc["format"] == FOREST_FORMAT:
        return _decode(RandomForestModel.from_json, doc, FOREST_FORMAT)
    return _decode(BaselineModel.from_json, doc, BASELINE_FORMAT)


# --- reports -----------------------------------------------------------------

def save_report(report, path) -> str:
    """Write a DetectionReport (or its json() dict)."""
    payload = report if isinstance(report, dict) else report.json()
    return write_document(REPORT_FORMAT, payload, path)


def load_report(path) -> Dict[str, Any]:
    return read_document(path, [REPORT_FORMAT])


def save_evaluation(report: Dict[str, Any], path) -> str:
    return write_document(EVALUATION_FORMAT, report, path)


def load_evaluation(path) -> Dict[str, Any]:
    return read_document(path, [EVALUATION_FORMAT])
