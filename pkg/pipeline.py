#!/usr/bin/env python3
"""
Detection pipeline: window -> features -> anomaly vote -> attack class -> rule.

A window is classified only when the ensemble flags it, and a DROP rule is
emitted only when the classifier names a known attack. Rules are artifacts
rendered as OpenFlow match strings and packet-filter lines; nothing here talks
to a switch.
"""

from __future__ import annotations

import ipaddress
import logging
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from anomaly import AnomalyEnsemble, Verdict
from config import PipelineConfig
from datamodel import CLASS_ORDER, ClassLabel, FlowWindow, PacketRecord, Protocol, TcpFlag
from errors import NoSuspect, PipelineError
from features import OnlineWindowizer, extract_features, throughput_series, windowize
from mlcore import accuracy_fraction, confusion_matrix, truncated_percent
from pcapio import load_pcap, read_pcap

logger = logging.getLogger(__name__)

# perf_counter can tick coarser than a fast window on some platforms
MIN_RESPONSE_TIME = 1e-9


@dataclass
class DetectionEvent:
    start_time: float
    end_time: float
    device_ip: str
    verdict: Verdict
    attack_type: Optional[ClassLabel]
    suspect_ips: List[str]
    response_time: float
    packet_count: int = 0

    @property
    def decision(self) -> ClassLabel:
        """What the pipeline concluded for the window: NORMAL unless flagged and classified."""
        if self.verdict.is_anomaly and self.attack_type is not None:
            return self.attack_type
        return ClassLabel.NORMAL

    def json(self):
        return {
            'start_time': self.start_time,
            'end_time': self.end_time,
            'device_ip': self.device_ip,
            'packet_count': self.packet_count,
            'verdict': self.verdict.json(),
            'attack_type': self.attack_type.name if self.attack_type is not None else None,
            'suspect_ips': list(self.suspect_ips),
            'response_time': self.response_time,
        }


@dataclass(frozen=True)
class RuleMatch:
    src_ip: str
    protocol: Optional[int] = None
    tcp_flag: Optional[TcpFlag] = None


@dataclass(frozen=True)
class MitigationRule:
    match: RuleMatch
    priority: int
    reason: ClassLabel
    created_at: float
    action: str = "DROP"

    @property
    def key(self) -> Tuple[str, Optional[int], Optional[int]]:
        flag = int(self.match.tcp_flag) if self.match.tcp_flag is not None else None
        return (self.match.src_ip, self.match.protocol, flag)

    def json(self):
        return {
            'match': {
                'src_ip': self.match.src_ip,
                'protocol': self.match.protocol,
                'tcp_flag': self.match.tcp_flag.name if self.match.tcp_flag is not None else None,
            },
            'action': self.action,
            'priority': self.priority,
            'reason': self.reason.name,
            'created_at': self.created_at,
            'openflow': render_rule_openflow(self),
            'packet_filter': render_rule_packetfilter(self),
        }


def _ip_order(ip: str):
    try:
        return (0, int(ipaddress.IPv4Address(ip)))
    except ipaddress.AddressValueError:
        return (1, ip)


def rank_suspects(window: FlowWindow) -> List[str]:
    """Non-device sources by packet count, most packets first, ties by address."""
    counts = Counter(p.src_ip for p in window.packets if p.src_ip != window.device_ip)
    return sorted(counts, key=lambda ip: (-counts[ip], _ip_order(ip)))


def detect_window(window: FlowWindow, ensemble: AnomalyEnsemble, classifier) -> DetectionEvent:
    """
    Run one window through the ensemble and, when flagged, the classifier.

    Args:
        window: non-empty sampling window
        ensemble: trained AnomalyEnsemble
        classifier: any trained model with predict(X) returning class codes

    Returns:
        DetectionEvent; response_time covers feature extraction to decision
    """
    if not window.packets:
        raise PipelineError("cannot run detection on an empty window")
    started = time.perf_counter()
    x = extract_features(window)
    verdict = ensemble.predict(x)
    attack_type = None
    if verdict.is_anomaly:
        attack_type = ClassLabel(int(classifier.predict(x[None, :])[0]))
    suspects = rank_suspects(window)
    elapsed = time.perf_counter() - started

    return DetectionEvent(
        start_time=window.start_time,
        end_time=window.end_time,
        device_ip=window.device_ip,
        verdict=verdict,
        attack_type=attack_type,
        suspect_ips=suspects,
        response_time=max(elapsed, MIN_RESPONSE_TIME),
        packet_count=len(window.packets),
    )


def make_rule(event: DetectionEvent, priority: int = 100) -> Optional[MitigationRule]:
    """
    DROP rule for the top suspect of a flagged, classified window.

    Returns None unless the window is anomalous and classified as an attack.

    Raises:
        NoSuspect: the window has no source other than the device itself
    """
    if not event.verdict.is_anomaly or event.attack_type in (None, ClassLabel.NORMAL):
        return None
    if not event.suspect_ips:
        raise NoSuspect(f"window at {event.start_time} has no source besides {event.device_ip}")
    src = event.suspect_ips[0]
    if event.attack_type == ClassLabel.SYN_FLOOD:
        match = RuleMatch(src, int(Protocol.TCP), TcpFlag.SYN)
    else:
        match = RuleMatch(src, int(Protocol.ICMP))
    return MitigationRule(match, int(priority), event.attack_type, event.end_time)


def render_rule_openflow(rule: MitigationRule) -> str:
    parts = [f"priority={rule.priority}", "ip", f"nw_src={rule.match.src_ip}"]
    if rule.match.protocol is not None:
        parts.append(f"nw_proto={rule.match.protocol}")
    if rule.match.tcp_flag is not None:
        parts.append(f"tcp_flags=+{rule.match.tcp_flag.name.lower()}")
    parts.append("actions=drop")
    return ",".join(parts)


def render_rule_packetfilter(rule: MitigationRule) -> str:
    parts = ["-A FORWARD", f"-s {rule.match.src_ip}"]
    if rule.match.protocol == Protocol.TCP:
        parts.append("-p tcp")
        if rule.match.tcp_flag is not None:
            parts.append(f"--{rule.match.tcp_flag.name.lower()}")
    elif rule.match.protocol == Protocol.ICMP:
        parts.append("-p icmp")
    elif rule.match.protocol is not None:
        parts.append(f"-p {rule.match.protocol}")
    parts.append("-j DROP")
    return " ".join(parts)


# --- reports -----------------------------------------------------------------

@dataclass
class DetectionReport:
    device_ip: str
    samp: float
    events: List[DetectionEvent]
    rules: List[MitigationRule]
    throughput: List[Tuple[float, float]]
    summary: Dict[str, Any] = field(default_factory=dict)

    def json(self):
        return {
            'device_ip': self.device_ip,
            'samp': self.samp,
            'summary': self.summary,
            'events': [e.json() for e in self.events],
            'rules': [r.json() for r in self.rules],
            'throughput': [{'time': t, 'bytes': b} for t, b in self.throughput],
        }


def _summarize(events: Sequence[DetectionEvent], rules: Sequence[MitigationRule],
               unruled: int = 0) -> Dict[str, Any]:
    times = np.array([e.response_time for e in events], dtype=float)
    decisions = Counter(e.decision.name for e in events)
    return {
        'windows': len(events),
        'anomalous_windows': sum(1 for e in events if e.verdict.is_anomaly),
        'decisions': {c.name: decisions.get(c.name, 0) for c in CLASS_ORDER},
        'rules': len(rules),
        'unruled_events': unruled,
        'mean_response_time': float(times.mean()) if len(times) else 0.0,
        'max_response_time': float(times.max()) if len(times) else 0.0,
    }


def _collect_rules(events: Iterable[DetectionEvent], priority: int) -> Tuple[List[MitigationRule], int]:
    """Deduplicated rules, plus the number of attack windows left without one."""
    rules, seen, unruled = [], set(), 0
    for event in events:
        try:
            rule = make_rule(event, priority)
        except NoSuspect as e:
            logger.warning("no rule for %s window: %s", event.attack_type.name, e)
            unruled += 1
            continue
        if rule is None or rule.key in seen:
            continue
        seen.add(rule.key)
        rules.append(rule)
    return rules, unruled


PcapInput = Union[str, bytes, Sequence[PacketRecord]]


def _records_from(source: PcapInput) -> List[PacketRecord]:
    if isinstance(source, (bytes, bytearray)):
        return read_pcap(bytes(source))[1]
    if isinstance(source, str):
        return load_pcap(source)[1]
    return list(source)


def _build_report(records, windows, ensemble, classifier, config: PipelineConfig) -> DetectionReport:
    events = [detect_window(w, ensemble, classifier) for w in windows]
    rules, unruled = _collect_rules(events, config.rule_priority)
    throughput = throughput_series(records, config.device_ip, config.throughput_bin)
    report = DetectionReport(config.device_ip, config.samp, events, rules, throughput,
                             _summarize(events, rules, unruled))
    logger.info("detection: %d windows, %d anomalous, %d rules",
                report.summary['windows'], report.summary['anomalous_windows'], len(rules))
    return report


def run_offline(source: PcapInput, config: Optional[PipelineConfig], ensemble: AnomalyEnsemble,
                classifier) -> DetectionReport:
    """
    Detect over a whole capture.

    Args:
        source: pcap path, pcap bytes or decoded records
        config: device address, samp, throughput bin and rule priority
        ensemble: trained anomaly ensemble
        classifier: trained attack classifier

    Returns:
        DetectionReport with events in window order and rules deduplicated by
        (src_ip, protocol, flag)
    """
    config = config or PipelineConfig()
    records = _records_from(source)
    windows = windowize(records, config.device_ip, config.samp)
    return _build_report(records, windows, ensemble, classifier, config)


def run_stream(records: Iterable[PacketRecord], config: Optional[PipelineConfig], ensemble: AnomalyEnsemble,
               classifier) -> DetectionReport:
    """Detect over an in-memory packet stream, window by window as each one closes."""
    config = config or PipelineConfig()
    windowizer = OnlineWindowizer(config.device_ip, config.samp)
    seen: List[PacketRecord] = []
    windows: List[FlowWindow] = []
    events: List[DetectionEvent] = []
    for record in records:
        seen.append(record)
        for window in windowizer.push(record):
            windows.append(window)
            events.append(detect_window(window, ensemble, classifier))
    for window in windowizer.flush():
        windows.append(window)
        events.append(detect_window(window, ensemble, classifier))
    if not windows:
        raise PipelineError(f"stream carried no packets for {config.device_ip}")

    rules, unruled = _collect_rules(events, config.rule_priority)
    throughput = throughput_series(seen, config.device_ip, config.throughput_bin)
    return DetectionReport(config.device_ip, config.samp, events, rules, throughput,
                           _summarize(events, rules, unruled))


def score_against_truth(report: DetectionReport, truth: Sequence[Tuple[float, ClassLabel]]) -> Dict[str, Any]:
    """
    Window accuracy of the pipeline decisions against generator ground truth.

    Windows are matched on their start time (to the microsecond); windows on
    either side without a partner are counted, not scored.
    """
    expected = {round(float(t), 6): ClassLabel(int(label)) for t, label in truth}
    y_true, y_pred = [], []
    for event in report.events:
        label = expected.get(round(event.start_time, 6))
        if label is None:
            continue
        y_true.append(int(label))
        y_pred.append(int(event.decision))
    if not y_true:
        raise PipelineError("no detection window lines up with the ground truth")
    cm = confusion_matrix(y_true, y_pred, CLASS_ORDER)
    frac = accuracy_fraction(cm)
    return {
        'scored_windows': len(y_true),
        'unmatched_events': len(report.events) - len(y_true),
        'unmatched_truth': len(expected) - len(y_true),
        'confusion_matrix': cm.counts.tolist(),
        'accuracy': float(frac),
        'accuracy_percent': truncated_percent(frac, 4),
    }
