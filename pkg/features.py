#!/usr/bin/env python3
"""
Windowed feature extraction.

A capture is cut into tumbling windows of `samp` seconds anchored at the
first packet of the capture. Each window holding device traffic becomes one
21-dimension vector (order in FEATURE_NAMES). Windows can be labeled from a
known attacker address to build training datasets.
"""

from __future__ import annotations

import io
import logging
import math
from collections import Counter, defaultdict
from typing import Collection, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from datamodel import (
    ClassLabel,
    FEATURE_NAMES,
    FlowWindow,
    LabeledDataset,
    N_FEATURES,
    PacketRecord,
    Protocol,
    TcpFlag,
)
from errors import FeatureError, NoDeviceTraffic, SchemaMismatch, UnparseableNumber
from pcapio import filter_by_device, load_pcap

logger = logging.getLogger(__name__)

_FLAG_COLUMNS = (
    (TcpFlag.SYN, "syn_count"),
    (TcpFlag.ACK, "ack_count"),
    (TcpFlag.PSH, "psh_count"),
    (TcpFlag.URG, "urg_count"),
    (TcpFlag.FIN, "fin_count"),
    (TcpFlag.RST, "rst_count"),
)
# ICMP and other port-less packets share one destination bucket
_NO_PORT_BUCKET = -1

AttackIps = Union[None, str, Collection[str]]


def _check_positive(name: str, value: float):
    if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
        raise FeatureError(f"{name} must be a positive number, got {value!r}")


def _window_indices(ts: np.ndarray, origin: float, samp: float) -> np.ndarray:
    """Window index k with origin + k*samp <= t < origin + k*samp + samp."""
    k = np.floor((ts - origin) / samp)
    start = origin + k * samp
    k = k - (ts < start)
    start = origin + k * samp
    k = k + (ts >= start + samp)
    return k.astype(np.int64)


def window_index(t: float, origin: float, samp: float) -> int:
    return int(_window_indices(np.array([t], dtype=float), origin, samp)[0])


def window_bounds(k: int, origin: float, samp: float) -> Tuple[float, float]:
    start = origin + k * samp
    return start, start + samp


def _sorted(records: Sequence[PacketRecord]) -> List[PacketRecord]:
    records = list(records)
    if any(records[i].timestamp > records[i + 1].timestamp for i in range(len(records) - 1)):
        records.sort(key=lambda r: r.timestamp)
    return records


def windowize(records: Sequence[PacketRecord], device_ip: str, samp: float,
              origin: Optional[float] = None) -> List[FlowWindow]:
    """
    Split device traffic into tumbling sampling windows.

    Args:
        records: capture packets, sorted internally when needed
        device_ip: device whose traffic is kept
        samp: window length in seconds
        origin: tiling origin, defaults to the first packet of the capture

    Returns:
        Non-empty windows in time order

    Raises:
        NoDeviceTraffic: no packet involves device_ip
    """
    _check_positive("samp", samp)
    records = _sorted(records)
    device = filter_by_device(records, device_ip)
    if not device:
        raise NoDeviceTraffic(f"no packets to or from {device_ip}")
    if origin is None:
        origin = records[0].timestamp

    ts = np.fromiter((r.timestamp for r in device), dtype=float, count=len(device))
    ks = _window_indices(ts, origin, samp)
    cuts = np.flatnonzero(np.diff(ks)) + 1
    windows = []
    for lo, hi in zip(np.concatenate(([0], cuts)), np.concatenate((cuts, [len(device)]))):
        start, end = window_bounds(int(ks[lo]), origin, samp)
        windows.append(FlowWindow(device_ip, start, end, device[lo:hi]))
    logger.debug("windowize: %d device packets into %d windows", len(device), len(windows))
    return windows


class OnlineWindowizer:
    """
    Incremental windowizer for packet streams.

    Packets are pushed in timestamp order; a window is emitted as soon as a
    packet from a later window arrives. flush() closes the last open window.
    Emits the same windows as windowize() on the same stream.
    """

    def __init__(self, device_ip: str, samp: float, origin: Optional[float] = None):
        _check_positive("samp", samp)
        self.device_ip = device_ip
        self.samp = samp
        self.origin = origin
        self._k: Optional[int] = None
        self._packets: List[PacketRecord] = []
        self._last_ts: Optional[float] = None

    def push(self, record: PacketRecord) -> List[FlowWindow]:
        if self._last_ts is not None and record.timestamp < self._last_ts:
            raise FeatureError(f"stream went back in time: {record.timestamp} < {self._last_ts}")
        self._last_ts = record.timestamp
        if self.origin is None:
            self.origin = record.timestamp

        k = window_index(record.timestamp, self.origin, self.samp)
        closed = []
        if self._k is not None and k > self._k:
            closed = self.flush()
        if record.src_ip == self.device_ip or record.dst_ip == self.device_ip:
            self._k = k
            self._packets.append(record)
        return closed

    def flush(self) -> List[FlowWindow]:
        if self._k is None:
            return []
        start, end = window_bounds(self._k, self.origin, self.samp)
        window = FlowWindow(self.device_ip, start, end, self._packets)
        self._k = None
        self._packets = []
        return [window]


def _entropy(counts: Iterable[int]) -> float:
    c = np.asarray(list(counts), dtype=float)
    p = c / c.sum()
    return float(-np.sum(p * np.log(p)))


def extract_features(window: FlowWindow) -> np.ndarray:
    """
    Compute the 21-dimension feature vector of one window.

    Variances are population variances; a single-packet window has zero
    inter-arrival mean and variance.
    """
    packets = window.packets
    if not packets:
        raise FeatureError("cannot extract features from an empty window")
    n = len(packets)
    ts = np.array([p.timestamp for p in packets], dtype=float)
    lengths = np.array([p.length for p in packets], dtype=float)
    flags = np.array([int(p.tcp_flags) for p in packets], dtype=np.int64)
    protos = np.array([p.protocol for p in packets], dtype=np.int64)

    f: Dict[str, float] = {}
    for flag, name in _FLAG_COLUMNS:
        f[name] = float(np.count_nonzero(flags & int(flag)))
    f["tcp_frac"] = np.count_nonzero(protos == Protocol.TCP) / n
    f["udp_frac"] = np.count_nonzero(protos == Protocol.UDP) / n
    f["icmp_frac"] = np.count_nonzero(protos == Protocol.ICMP) / n
    f["pkt_count"] = float(n)
    f["byte_count"] = float(lengths.sum())
    f["len_mean"] = float(lengths.mean())
    f["len_var"] = float(lengths.var())
    f["len_min"] = float(lengths.min())
    f["len_max"] = float(lengths.max())

    ts_sorted = np.sort(ts)
    iat = np.diff(ts_sorted)
    f["iat_mean"] = float(iat.mean()) if n > 1 else 0.0
    f["iat_var"] = float(iat.var()) if n > 1 else 0.0

    # each packet contributes the span of its own 5-tuple inside the window
    first: Dict[tuple, float] = {}
    last: Dict[tuple, float] = {}
    per_flow: Counter = Counter()
    for p in packets:
        key = p.flow_key()
        first[key] = min(first.get(key, p.timestamp), p.timestamp)
        last[key] = max(last.get(key, p.timestamp), p.timestamp)
        per_flow[key] += 1
    f["duration_mean"] = sum(c * (last[k] - first[k]) for k, c in per_flow.items()) / n

    ports = Counter(
        p.dst_port if p.protocol in (Protocol.TCP, Protocol.UDP) else _NO_PORT_BUCKET
        for p in packets
    )
    f["dst_port_entropy"] = _entropy(ports.values()) if len(ports) > 1 else 0.0

    device = window.device_ip
    peers = {p.src_ip for p in packets} | {p.dst_ip for p in packets}
    peers.discard(device)
    f["unique_peer_count"] = float(len(peers))
    f["inbound_frac"] = sum(1 for p in packets if p.dst_ip == device) / n

    return np.array([f[name] for name in FEATURE_NAMES], dtype=float)


def feature_dict(vector) -> Dict[str, float]:
    return {name: float(v) for name, v in zip(FEATURE_NAMES, vector)}


def _as_ip_set(attack_ip: AttackIps) -> frozenset:
    if attack_ip is None:
        return frozenset()
    if isinstance(attack_ip, str):
        return frozenset([attack_ip])
    return frozenset(attack_ip)


def label_window(window: FlowWindow, attack_ip: AttackIps,
                 attack_protocol: Optional[int] = None) -> ClassLabel:
    """
    Label a window from the packets its attacker(s) sent.

    Attacker SYN packets vote SYN_FLOOD and attacker ICMP packets vote
    ICMP_FLOOD; the larger count wins and a tie goes to SYN_FLOOD.
    attack_protocol, when given, restricts which attacker packets vote.
    """
    attackers = _as_ip_set(attack_ip)
    if not attackers:
        return ClassLabel.NORMAL
    syn = icmp = 0
    for p in window.packets:
        if p.src_ip not in attackers:
            continue
        if p.protocol == Protocol.TCP and p.tcp_flags & TcpFlag.SYN:
            syn += 1
        elif p.protocol == Protocol.ICMP:
            icmp += 1
    if attack_protocol == Protocol.TCP:
        icmp = 0
    elif attack_protocol == Protocol.ICMP:
        syn = 0
    if syn == 0 and icmp == 0:
        return ClassLabel.NORMAL
    return ClassLabel.SYN_FLOOD if syn >= icmp else ClassLabel.ICMP_FLOOD


def extract_dataset(records: Sequence[PacketRecord], device_ip: str, samp: float,
                    attack_ip: AttackIps = None, attack_protocol: Optional[int] = None,
                    origin: Optional[float] = None) -> LabeledDataset:
    """Windowize one capture and return its labeled feature rows."""
    windows = windowize(records, device_ip, samp, origin=origin)
    X = np.vstack([extract_features(w) for w in windows])
    y = [int(label_window(w, attack_ip, attack_protocol)) for w in windows]
    times = [w.start_time for w in windows]
    return LabeledDataset(X, y, FEATURE_NAMES, times)


def build_dataset(scenarios: Sequence[tuple]) -> LabeledDataset:
    """
    Build one dataset from several captures.

    Args:
        scenarios: (pcap path, device_ip, attack_ip or None, samp) tuples, with an
            optional fifth attack_protocol entry, or generated scenarios carrying
            .records and .spec

    Returns:
        Rows in scenario order, then window order
    """
    parts = []
    for entry in scenarios:
        if hasattr(entry, "records") and hasattr(entry, "spec"):
            path, records, attack_protocol = "scenario", entry.records, None
            device_ip, attack_ip, samp = entry.spec.device_ip, entry.spec.attack_ips or None, entry.spec.samp
        else:
            path, device_ip, attack_ip, samp = entry[:4]
            attack_protocol = entry[4] if len(entry) > 4 else None
            _, records = load_pcap(path)
        part = extract_dataset(records, device_ip, samp, attack_ip, attack_protocol)
        logger.info("%s: %d windows %s", path, len(part), {c.name: n for c, n in part.class_counts().items()})
        parts.append(part)
    return LabeledDataset.concat(parts)


def throughput_series(records: Sequence[PacketRecord], device_ip: str, bin_size: float,
                      origin: Optional[float] = None) -> List[Tuple[float, float]]:
    """
    Bytes per bin of device traffic over the whole capture span.

    Bins are anchored like the sampling windows. Bins without device packets
    report 0, so a capture without device traffic gives an all-zero series.
    """
    _check_positive("bin", bin_size)
    if not records:
        return []
    ts_all = np.array([r.timestamp for r in records], dtype=float)
    if origin is None:
        origin = float(ts_all.min())
    n_bins = int(_window_indices(np.array([ts_all.max()]), origin, bin_size)[0]) + 1

    device = filter_by_device(records, device_ip)
    totals = np.zeros(n_bins)
    if device:
        ts = np.array([r.timestamp for r in device], dtype=float)
        lengths = np.array([r.length for r in device], dtype=float)
        totals = np.bincount(_window_indices(ts, origin, bin_size), weights=lengths, minlength=n_bins)
    return [(origin + k * bin_size, float(totals[k])) for k in range(n_bins)]


# --- CSV codec ---------------------------------------------------------------

def dataset_to_csv(dataset: LabeledDataset) -> bytes:
    df = pd.DataFrame(dataset.X, columns=list(dataset.feature_names))
    df["label"] = dataset.y.astype(int)
    return df.to_csv(index=False, float_format="%.15g", lineterminator="\n").encode("utf-8")


def dataset_from_csv(source) -> LabeledDataset:
    """
    Parse a dataset CSV (21 named feature columns then `label`).

    Raises:
        SchemaMismatch: wrong header or unknown label code
        UnparseableNumber: a cell that is not a finite number
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(bytes(source))
    elif isinstance(source, str):
        source = io.StringIO(source)
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise SchemaMismatch("dataset CSV is empty") from e
    except pd.errors.ParserError as e:
        raise SchemaMismatch(f"dataset CSV rows are malformed: {e}") from e

    expected = list(FEATURE_NAMES) + ["label"]
    if list(df.columns) != expected:
        raise SchemaMismatch(
            f"expected {len(expected)} columns {expected}, got {len(df.columns)} {list(df.columns)}"
        )

    X = np.empty((len(df), N_FEATURES))
    for j, name in enumerate(FEATURE_NAMES):
        col = pd.to_numeric(df[name], errors="coerce").to_numpy(dtype=float)
        bad = ~np.isfinite(col)
        if bad.any():
            row = int(np.flatnonzero(bad)[0])
            raise UnparseableNumber(f"row {row + 1}, column {name}: {df[name].iloc[row]!r}")
        X[:, j] = col

    labels = pd.to_numeric(df["label"], errors="coerce").to_numpy(dtype=float)
    bad = ~np.isfinite(labels)
    if bad.any():
        row = int(np.flatnonzero(bad)[0])
        raise UnparseableNumber(f"row {row + 1}, column label: {df['label'].iloc[row]!r}")
    valid = {int(c) for c in ClassLabel}
    for row, value in enumerate(labels):
        if value != int(value) or int(value) not in valid:
            raise SchemaMismatch(f"row {row + 1}: unknown class label {df['label'].iloc[row]!r}")
    return LabeledDataset(X, labels.astype(int), FEATURE_NAMES)
