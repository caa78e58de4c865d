"""Shared fixtures: hand-built frames, generated scenarios and trained models."""

import os
import socket
import struct

import pytest

from attack import rf_train
from config import AttackConfig, EnsembleConfig
from anomaly import ensemble_train
from features import extract_dataset
from mlcore import train_test_split
from traffic_gen import compose_scenario, load_scenario

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
SCENARIOS = os.path.join(ROOT, "scenarios")
TRAIN_SEED = 7


def ethernet_ipv4(src: str, dst: str, protocol: int, l4: bytes, ethertype: int = 0x0800,
                  flags_frag: int = 0, ihl_words: int = 5, pad_to: int = 0,
                  total_length=None) -> bytes:
    """Ethernet + IPv4 header around an L4 payload, zero padded to pad_to bytes."""
    total = 20 + len(l4) if total_length is None else total_length
    ip = struct.pack("!BBHHHBBH4s4s", 0x40 | ihl_words, 0, total, 0, flags_frag, 64, protocol, 0,
                     socket.inet_aton(src), socket.inet_aton(dst))
    frame = b"\x02\x00\x00\x00\x00\x01" + b"\x02\x00\x00\x00\x00\x02" + struct.pack("!H", ethertype) + ip + l4
    return frame + bytes(max(0, pad_to - len(frame)))


def tcp_header(sport: int, dport: int, flags: int) -> bytes:
    return struct.pack("!HHIIBBHHH", sport, dport, 0, 0, 5 << 4, flags, 8192, 0, 0)


def icmp_header(icmp_type: int) -> bytes:
    return struct.pack("!BBHHH", icmp_type, 0, 0, 0, 0)


@pytest.fixture
def frames():
    """Builders for hand-made frames."""
    class Frames:
        ethernet_ipv4 = staticmethod(ethernet_ipv4)
        tcp_header = staticmethod(tcp_header)
        icmp_header = staticmethod(icmp_header)
    return Frames


@pytest.fixture(scope="session")
def reference_scenario():
    return compose_scenario(load_scenario(os.path.join(SCENARIOS, "reference.yaml")))


@pytest.fixture(scope="session")
def clean_scenario():
    return compose_scenario(load_scenario(os.path.join(SCENARIOS, "benign.yaml")))


@pytest.fixture(scope="session")
def reference_dataset(reference_scenario):
    spec = reference_scenario.spec
    return extract_dataset(reference_scenario.records, spec.device_ip, spec.samp, spec.attack_ips)


@pytest.fixture(scope="session")
def clean_dataset(clean_scenario):
    spec = clean_scenario.spec
    return extract_dataset(clean_scenario.records, spec.device_ip, spec.samp)


@pytest.fixture(scope="session")
def trained_ensemble(clean_dataset):
    return ensemble_train(clean_dataset, EnsembleConfig(), seed=TRAIN_SEED)


@pytest.fixture(scope="session")
def reference_split(reference_dataset):
    return train_test_split(reference_dataset, AttackConfig().train_fraction, TRAIN_SEED)


@pytest.fixture(scope="session")
def trained_forest(reference_split):
    train, _ = reference_split
    return rf_train(train, n_trees=100, max_features=4, seed=TRAIN_SEED)
