"""
Shared value types: decoded packets, capture metadata, sampling windows and
labeled feature datasets.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np


FEATURE_NAMES: Tuple[str, ...] = (
    "syn_count",
    "ack_count",
    "psh_count",
    "urg_count",
    "fin_count",
    "rst_count",
    "tcp_frac",
    "udp_frac",
    "icmp_frac",
    "pkt_count",
    "byte_count",
    "len_mean",
    "len_var",
    "len_min",
    "len_max",
    "iat_mean",
    "iat_var",
    "duration_mean",
    "dst_port_entropy",
    "unique_peer_count",
    "inbound_frac",
)
N_FEATURES = len(FEATURE_NAMES)


class Protocol(enum.IntEnum):
    """IP protocol numbers with a decoding rule. Any other code is kept as a plain int."""
    ICMP = 1
    TCP = 6
    UDP = 17


def protocol_name(code: int) -> str:
    try:
        return Protocol(code).name
    except ValueError:
        return f"OTHER({code})"


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20


TCP_FLAG_MASK = 0x3F
NO_FLAGS = TcpFlag(0)


class ClassLabel(enum.IntEnum):
    NORMAL = 0
    SYN_FLOOD = 1
    ICMP_FLOOD = 2


CLASS_ORDER: Tuple[ClassLabel, ...] = (ClassLabel.NORMAL, ClassLabel.SYN_FLOOD, ClassLabel.ICMP_FLOOD)


@dataclass(frozen=True)
class PacketRecord:
    """One decoded packet.

    Ports are 0 for protocols without ports and tcp_flags is empty unless the
    protocol is TCP. length is the full frame length on the wire.
    """
    timestamp: float
    src_ip: str
    dst_ip: str
    protocol: int
    src_port: int = 0
    dst_port: int = 0
    tcp_flags: TcpFlag = NO_FLAGS
    length: int = 0
    icmp_type: Optional[int] = None

    def has_flag(self, flag: TcpFlag) -> bool:
        return bool(self.tcp_flags & flag)

    def flow_key(self) -> Tuple[str, str, int, int, int]:
        return (self.src_ip, self.dst_ip, self.protocol, self.src_port, self.dst_port)

    def json(self):
        return {
            'timestamp': self.timestamp,
            'src_ip': self.src_ip,
            'dst_ip': self.dst_ip,
            'protocol': protocol_name(self.protocol),
            'src_port': self.src_port,
            'dst_port': self.dst_port,
            'tcp_flags': [f.name for f in TcpFlag if self.tcp_flags & f],
            'length': self.length,
            'icmp_type': self.icmp_type,
        }


@dataclass
class CaptureMeta:
    endianness: str
    snaplen: int
    link_type: int
    packet_count: int = 0
    decoded_count: int = 0
    skipped: Dict[str, int] = field(default_factory=dict)

    def skip(self, reason: str):
        self.skipped[reason] = self.skipped.get(reason, 0) + 1

    def json(self):
        return {
            'endianness': self.endianness,
            'snaplen': self.snaplen,
            'link_type': self.link_type,
            'packet_count': self.packet_count,
            'decoded_count': self.decoded_count,
            'skipped': dict(self.skipped),
        }


@dataclass
class FlowWindow:
    """Packets of one device inside [start_time, end_time)."""
    device_ip: str
    start_time: float
    end_time: float
    packets: List[PacketRecord]

    @property
    def samp(self) -> float:
        return self.end_time - self.start_time

    def json(self):
        return {
            'device_ip': self.device_ip,
            'start_time': self.start_time,
            'end_time': self.end_time,
            'packet_count': len(self.packets),
        }


class LabeledDataset:
    """Feature matrix with one ClassLabel per row.

    times holds the start time of the window each row came from (NaN when
    unknown, e.g. after a CSV round trip).
    """

    def __init__(self, X=None, y=None, feature_names: Sequence[str] = FEATURE_NAMES, times=None):
        self.feature_names = tuple(feature_names)
        d = len(self.feature_names)
        self.X = np.zeros((0, d)) if X is None else np.asarray(X, dtype=float).reshape(-1, d)
        self.y = np.zeros(0, dtype=int) if y is None else np.asarray(y, dtype=int).reshape(-1)
        if times is None:
            times = np.full(len(self.y), np.nan)
        self.times = np.asarray(times, dtype=float).reshape(-1)
        if not (len(self.X) == len(self.y) == len(self.times)):
            raise ValueError(
                f"dataset rows disagree: X has {len(self.X)}, y has {len(self.y)}, times has {len(self.times)}"
            )

    def __len__(self):
        return len(self.y)

    def subset(self, index) -> "LabeledDataset":
        index = np.asarray(index, dtype=int)
        return LabeledDataset(self.X[index], self.y[index], self.feature_names, self.times[index])

    def rows_with_label(self, label: ClassLabel) -> "LabeledDataset":
        return self.subset(np.flatnonzero(self.y == int(label)))

    def class_counts(self) -> Dict[ClassLabel, int]:
        return {c: int(np.sum(self.y == int(c))) for c in CLASS_ORDER}

    def classes_present(self) -> List[ClassLabel]:
        return [ClassLabel(c) for c in np.unique(self.y)]

    @staticmethod
    def concat(parts: Iterable["LabeledDataset"]) -> "LabeledDataset":
        parts = list(parts)
        if not parts:
            return LabeledDataset()
        names = parts[0].feature_names
        return LabeledDataset(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            names,
            np.concatenate([p.times for p in parts]),
        )
