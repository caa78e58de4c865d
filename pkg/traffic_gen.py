#!/usr/bin/env python3
"""
Synthetic capture scenarios.

Benign traffic imitates an IP camera talking to its server: a keep-alive
every interval plus Poisson data packets with truncated-normal lengths.
Floods are fixed-rate with small uniform jitter.
compose_scenario merges everything into one pcap and labels each sampling
window with the same rule feature extraction uses.
"""

from __future__ import annotations

import enum
import io
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from config import load_yaml
from datamodel import ClassLabel, PacketRecord, Protocol, TcpFlag
from errors import ConfigError, SchemaMismatch, UnparseableNumber
from features import label_window, windowize
from mlcore import check_seed, child_seeds, make_rng
from pcapio import MIN_FRAME_LEN, quantize_timestamp, write_pcap

logger = logging.getLogger(__name__)

SYN_FRAME_LEN = 54
ICMP_ECHO_FRAME_LEN = 98
ICMP_ECHO_REQUEST = 8
MAX_FRAME_LEN = 1514
CYCLE_SECONDS = 1.0


class FloodKind(enum.Enum):
    SYN = "SYN"
    ICMP = "ICMP"

    @property
    def label(self) -> ClassLabel:
        return ClassLabel.SYN_FLOOD if self is FloodKind.SYN else ClassLabel.ICMP_FLOOD


def _fail(cond: bool, message: str, key: str):
    if not cond:
        raise ConfigError(message, key=key)


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value)


def _build(cls, values: Optional[Dict[str, Any]], section: str):
    values = {} if values is None else values
    if not isinstance(values, dict):
        raise ConfigError("expected a mapping", key=section)
    known = {f.name: f for f in fields(cls)}
    for key, value in values.items():
        _fail(key in known, "unknown setting", f"{section}.{key}")
        default = known[key].default
        if isinstance(default, bool):
            _fail(isinstance(value, bool), f"expected true or false, got {value!r}", f"{section}.{key}")
        elif isinstance(default, (int, float)):
            _fail(_is_number(value), f"expected a number, got {value!r}", f"{section}.{key}")
        elif isinstance(default, str) or isinstance(default, enum.Enum):
            _fail(isinstance(value, str), f"expected a string, got {value!r}", f"{section}.{key}")
    return cls(**values)


@dataclass
class BenignProfile:
    device_ip: str = "10.0.0.10"
    server_ip: str = "10.0.0.1"
    rate: float = 50.0
    len_mean: float = 120.0
    len_std: float = 60.0
    len_min: int = 60
    len_max: int = 1514
    keepalive_interval: float = 1.0
    keepalive_length: int = 60
    device_port: int = 554
    server_port: int = 49152
    upstream_fraction: float = 0.7
    psh_probability: float = 0.3
    duty_cycle: float = 1.0

    def validate(self, section: str = "benign"):
        _fail(self.rate > 0, "must be positive", f"{section}.rate")
        _fail(self.keepalive_interval > 0, "must be positive", f"{section}.keepalive_interval")
        _fail(self.len_std > 0, "must be positive", f"{section}.len_std")
        tcp_min = MIN_FRAME_LEN[Protocol.TCP]
        _fail(tcp_min <= self.len_min <= self.len_max <= MAX_FRAME_LEN,
              f"need {tcp_min} <= len_min <= len_max <= {MAX_FRAME_LEN}", f"{section}.len_min")
        _fail(tcp_min <= self.keepalive_length <= MAX_FRAME_LEN,
              f"must be within [{tcp_min}, {MAX_FRAME_LEN}]", f"{section}.keepalive_length")
        for key in ("upstream_fraction", "psh_probability"):
            _fail(0 <= getattr(self, key) <= 1, "must be within [0, 1]", f"{section}.{key}")
        _fail(0 < self.duty_cycle <= 1, "must be in (0, 1]", f"{section}.duty_cycle")
        for key in ("device_port", "server_port"):
            _fail(isinstance(getattr(self, key), int) and 0 <= getattr(self, key) <= 65535,
                  "must be an integer port", f"{section}.{key}")
        return self

    def json(self):
        return asdict(self)


@dataclass
class FloodProfile:
    kind: FloodKind = FloodKind.SYN
    attacker_ip: str = "10.0.0.66"
    target_ip: str = "10.0.0.10"
    rate: float = 2000.0
    start: float = 0.0
    duration: float = 1.0
    randomize_ports: bool = True
    target_port: int = 80
    jitter: float = 0.1

    def __post_init__(self):
        if not isinstance(self.kind, FloodKind):
            try:
                self.kind = FloodKind(str(self.kind).upper())
            except ValueError as e:
                raise ConfigError(f"unknown flood kind {self.kind!r}", key="floods.kind") from e

    def validate(self, section: str = "floods"):
        _fail(self.rate > 0, "must be positive", f"{section}.rate")
        _fail(self.duration > 0, "must be positive", f"{section}.duration")
        _fail(self.start >= 0, "must be non-negative", f"{section}.start")
        _fail(0 <= self.jitter < 0.5, "must be within [0, 0.5)", f"{section}.jitter")
        return self

    def json(self):
        doc = asdict(self)
        doc['kind'] = self.kind.value
        return doc


@dataclass
class ScenarioSpec:
    duration: float = 120.0
    seed: int = 0
    samp: float = 1.0
    epoch: float = 0.0
    benign: BenignProfile = field(default_factory=BenignProfile)
    floods: List[FloodProfile] = field(default_factory=list)

    @property
    def device_ip(self) -> str:
        return self.benign.device_ip

    @property
    def attack_ips(self) -> List[str]:
        return sorted({f.attacker_ip for f in self.floods})

    def validate(self):
        _fail(self.duration > 0, "must be positive", "scenario.duration")
        _fail(self.samp > 0, "must be positive", "scenario.samp")
        _fail(self.epoch >= 0, "must be non-negative", "scenario.epoch")
        try:
            check_seed(self.seed)
        except ValueError as e:
            raise ConfigError(str(e), key="scenario.seed") from e
        self.benign.validate()
        for i, flood in enumerate(self.floods):
            flood.validate(f"floods[{i}]")
            _fail(flood.start + flood.duration <= self.duration,
                  f"flood interval [{flood.start}, {flood.start + flood.duration}) leaves the scenario",
                  f"floods[{i}].duration")
        return self

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "ScenarioSpec":
        """
        Build a spec from a parsed scenario file.

        Expected sections: scenario (duration, seed, samp, epoch), benign and
        floods. seed and samp must be given explicitly.
        """
        if not isinstance(doc, dict):
            raise ConfigError("scenario file must contain a mapping")
        for key in doc:
            _fail(key in ("scenario", "benign", "floods"), "unknown section", key)
        head = doc.get("scenario")
        _fail(isinstance(head, dict), "missing or not a mapping", "scenario")
        for key in head:
            _fail(key in ("duration", "seed", "samp", "epoch"), "unknown setting", f"scenario.{key}")
        for key in ("seed", "samp"):
            _fail(key in head, "is required", f"scenario.{key}")
        _fail(isinstance(head["seed"], int) and not isinstance(head["seed"], bool),
              f"expected an integer, got {head['seed']!r}", "scenario.seed")
        for key in ("duration", "samp", "epoch"):
            if key in head:
                _fail(_is_number(head[key]), f"expected a number, got {head[key]!r}", f"scenario.{key}")

        floods_doc = doc.get("floods") or []
        _fail(isinstance(floods_doc, list), "expected a list", "floods")
        floods = []
        for i, entry in enumerate(floods_doc):
            if isinstance(entry, dict) and "kind" in entry:
                _fail(str(entry["kind"]).upper() in FloodKind.__members__,
                      f"unknown flood kind {entry['kind']!r}", f"floods[{i}].kind")
            floods.append(_build(FloodProfile, entry, f"floods[{i}]"))
        spec = cls(
            duration=head.get("duration", cls.duration),
            seed=head["seed"],
            samp=head["samp"],
            epoch=head.get("epoch", cls.epoch),
            benign=_build(BenignProfile, doc.get("benign"), "benign"),
            floods=floods,
        )
        return spec.validate()

    def json(self):
        return {
            'scenario': {'duration': self.duration, 'seed': self.seed, 'samp': self.samp, 'epoch': self.epoch},
            'benign': self.benign.json(),
            'floods': [f.json() for f in self.floods],
        }


def load_scenario(path) -> ScenarioSpec:
    return ScenarioSpec.from_dict(load_yaml(path))


# --- generators --------------------------------------------------------------

def _active_times(u: np.ndarray, duty_cycle: float) -> np.ndarray:
    """Map uniform offsets over the on-time onto the first duty_cycle of each cycle."""
    on = duty_cycle * CYCLE_SECONDS
    cycle = np.floor(u / on)
    return cycle * CYCLE_SECONDS + (u - cycle * on)


def gen_benign(profile: BenignProfile, duration: float, seed, start: float = 0.0) -> List[PacketRecord]:
    """
    Camera-like device/server TCP traffic over [start, start + duration).

    Keep-alives go upstream every keepalive_interval starting at `start`; the
    remaining rate is Poisson data traffic, upstream with probability
    upstream_fraction, PSH+ACK with probability psh_probability.
    """
    if not duration > 0:
        raise ValueError(f"duration must be positive, got {duration}")
    profile.validate()
    rng = make_rng(seed)
    device, server = profile.device_ip, profile.server_ip

    records = []
    n_keepalive = int(math.ceil(duration / profile.keepalive_interval - 1e-9))
    for k in range(n_keepalive):
        records.append(PacketRecord(
            timestamp=quantize_timestamp(start + k * profile.keepalive_interval),
            src_ip=device, dst_ip=server, protocol=int(Protocol.TCP),
            src_port=profile.device_port, dst_port=profile.server_port,
            tcp_flags=TcpFlag.ACK, length=profile.keepalive_length,
        ))

    data_rate = max(profile.rate - 1.0 / profile.keepalive_interval, 0.0)
    on_time = duration * profile.duty_cycle
    n_data = int(rng.poisson(data_rate * on_time))
    offsets = np.sort(rng.uniform(0.0, on_time, size=n_data))
    times = start + _active_times(offsets, profile.duty_cycle)
    upstream = rng.random(n_data) < profile.upstream_fraction
    psh = rng.random(n_data) < profile.psh_probability
    a = (profile.len_min - profile.len_mean) / profile.len_std
    b = (profile.len_max - profile.len_mean) / profile.len_std
    lengths = stats.truncnorm.rvs(a, b, loc=profile.len_mean, scale=profile.len_std,
                                  size=n_data, random_state=rng)
    lengths = np.clip(np.rint(lengths), profile.len_min, profile.len_max).astype(int)

    for t, up, push, length in zip(times, upstream, psh, lengths):
        if t >= start + duration:
            continue
        flags = TcpFlag.ACK | TcpFlag.PSH if push else TcpFlag.ACK
        src, dst = (device, server) if up else (server, device)
        sport, dport = (profile.device_port, profile.server_port) if up else (profile.server_port, profile.device_port)
        records.append(PacketRecord(
            timestamp=quantize_timestamp(float(t)), src_ip=src, dst_ip=dst, protocol=int(Protocol.TCP),
            src_port=sport, dst_port=dport, tcp_flags=flags, length=int(length),
        ))
    records.sort(key=lambda r: r.timestamp)
    return records


def gen_flood(profile: FloodProfile, seed) -> List[PacketRecord]:
    """
    Fixed-rate flood: packet k at start + (k + 0.5 + u_k) / rate with
    u_k uniform in [-jitter, jitter]; round(rate * duration) packets.
    """
    profile.validate()
    rng = make_rng(seed)
    n = int(round(profile.rate * profile.duration))
    jitter = rng.uniform(-profile.jitter, profile.jitter, size=n)
    times = profile.start + (np.arange(n) + 0.5 + jitter) / profile.rate
    end = profile.start + profile.duration

    if profile.kind is FloodKind.SYN:
        if profile.randomize_ports:
            ports = rng.integers(1024, 65536, size=n)
        else:
            ports = np.full(n, 1024)
    records = []
    for k, t in enumerate(times):
        ts = quantize_timestamp(float(t))
        if not profile.start <= ts < end:
            continue
        if profile.kind is FloodKind.SYN:
            records.append(PacketRecord(
                timestamp=ts, src_ip=profile.attacker_ip, dst_ip=profile.target_ip,
                protocol=int(Protocol.TCP), src_port=int(ports[k]), dst_port=profile.target_port,
                tcp_flags=TcpFlag.SYN, length=SYN_FRAME_LEN,
            ))
        else:
            records.append(PacketRecord(
                timestamp=ts, src_ip=profile.attacker_ip, dst_ip=profile.target_ip,
                protocol=int(Protocol.ICMP), length=ICMP_ECHO_FRAME_LEN, icmp_type=ICMP_ECHO_REQUEST,
            ))
    return records


@dataclass
class CaptureScenario:
    pcap: bytes
    truth: List[Tuple[float, ClassLabel]]
    records: List[PacketRecord]
    spec: ScenarioSpec

    @property
    def labels(self) -> List[ClassLabel]:
        return [label for _, label in self.truth]


def compose_scenario(spec: ScenarioSpec) -> CaptureScenario:
    """
    Merge benign traffic and floods into one capture.

    Ground truth labels every sampling window with label_window over the
    spec's attacker addresses, so it matches a dataset extracted from the
    written pcap exactly.
    """
    spec.validate()
    seeds = child_seeds(spec.seed, 1 + len(spec.floods))
    streams = [gen_benign(spec.benign, spec.duration, seeds[0], start=spec.epoch)]
    for flood, flood_seed in zip(spec.floods, seeds[1:]):
        shifted = FloodProfile(**{**asdict(flood), 'start': flood.start + spec.epoch})
        streams.append(gen_flood(shifted, flood_seed))
    records = sorted((r for stream in streams for r in stream), key=lambda r: r.timestamp)
    pcap = write_pcap(records)

    windows = windowize(records, spec.device_ip, spec.samp)
    truth = [(w.start_time, label_window(w, spec.attack_ips)) for w in windows]
    logger.info("scenario: %d packets, %d windows, %d attack windows",
                len(records), len(truth), sum(1 for _, label in truth if label != ClassLabel.NORMAL))
    return CaptureScenario(pcap, truth, records, spec)


# --- ground truth CSV --------------------------------------------------------

def truth_to_csv(truth: Sequence[Tuple[float, ClassLabel]]) -> bytes:
    df = pd.DataFrame({
        'window_start': [float(t) for t, _ in truth],
        'label': [int(label) for _, label in truth],
    })
    return df.to_csv(index=False, float_format="%.15g", lineterminator="\n").encode("utf-8")


def truth_from_csv(source) -> List[Tuple[float, ClassLabel]]:
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(bytes(source))
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError as e:
        raise SchemaMismatch("ground truth CSV is empty") from e
    if list(df.columns) != ['window_start', 'label']:
        raise SchemaMismatch(f"expected columns window_start,label, got {list(df.columns)}")
    starts = pd.to_numeric(df['window_start'], errors='coerce').to_numpy(dtype=float)
    labels = pd.to_numeric(df['label'], errors='coerce').to_numpy(dtype=float)
    if not (np.isfinite(starts).all() and np.isfinite(labels).all()):
        raise UnparseableNumber("ground truth CSV holds a non-numeric cell")
    valid = {int(c) for c in ClassLabel}
    out = []
    for t, label in zip(starts, labels):
        if label != int(label) or int(label) not in valid:
            raise SchemaMismatch(f"unknown class label {label}")
        out.append((float(t), ClassLabel(int(label))))
    return out
