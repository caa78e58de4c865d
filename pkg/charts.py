#!/usr/bin/env python3
"""
Figure data for detection results.

Tables are pandas DataFrames written as CSV for any plotting tool; the
Mermaid blocks render natively in Markdown viewers without plugins.
"""

from typing import List, Sequence, Tuple

import numpy as np
import pandas as pd

from attack import FeatureImportanceReport
from datamodel import ClassLabel, LabeledDataset
from mlcore import fit_scaled_pca, pca_separation


def table_to_csv(df: pd.DataFrame) -> bytes:
    return df.to_csv(index=False, float_format="%.15g", lineterminator="\n").encode("utf-8")


def pca_table(dataset: LabeledDataset, k: int = 2) -> Tuple[pd.DataFrame, float]:
    """
    PCA scores of standardized feature rows.

    Args:
        dataset: labeled windows
        k: number of components

    Returns:
        (DataFrame with time, pc1..pck, label; attack/normal separation ratio,
        NaN when only one side is present)
    """
    scaler, pca = fit_scaled_pca(dataset.X, k)
    scores = pca.transform(scaler.apply(dataset.X))
    df = pd.DataFrame({'time': dataset.times})
    for i in range(k):
        df[f'pc{i + 1}'] = scores[:, i]
    df['label'] = [ClassLabel(int(c)).name for c in dataset.y]
    try:
        separation = pca_separation(scores, dataset.y)
    except ValueError:
        separation = float('nan')
    return df, separation


def throughput_table(series: Sequence[Tuple[float, float]]) -> pd.DataFrame:
    return pd.DataFrame(list(series), columns=['time', 'bytes'])


def importance_table(report: FeatureImportanceReport) -> pd.DataFrame:
    return pd.DataFrame({
        'rank': np.arange(1, len(report.ranking) + 1),
        'feature': [report.feature_names[i] for i in report.ranking],
        'importance': [float(report.importance[i]) for i in report.ranking],
    })


def importance_bar_chart(report: FeatureImportanceReport, max_features: int = 10) -> str:
    """
    Bar chart of the top features by importance.

    Returns:
        Mermaid xychart code block
    """
    top = report.top(max_features)
    if not top:
        return ""
    labels = ", ".join(f'"{name}"' for name, _ in top)
    values = ", ".join(f"{value:.4f}" for _, value in top)
    y_max = max(value for _, value in top)
    return f'''```mermaid
xychart-beta
    title Feature Importance
    x-axis [{labels}]
    y-axis "Mean decrease in impurity" 0 --> {y_max * 1.1:.4f}
    bar [{values}]
```'''


def throughput_line_chart(series: Sequence[Tuple[float, float]], max_points: int = 120) -> str:
    """
    Line chart of device bytes per bin, thinned to at most max_points bins.

    Returns:
        Mermaid xychart code block
    """
    if not series:
        return ""
    step = max(1, int(np.ceil(len(series) / max_points)))
    points: List[Tuple[float, float]] = list(series)[::step]
    origin = points[0][0]
    labels = ", ".join(f'"{t - origin:.0f}"' for t, _ in points)
    values = ", ".join(f"{b:.0f}" for _, b in points)
    y_max = max(b for _, b in points) or 1.0
    return f'''```mermaid
xychart-beta
    title Device Throughput
    x-axis [{labels}]
    y-axis "Bytes" 0 --> {y_max * 1.1:.0f}
    line [{values}]
```'''
