import io
import struct

import pytest

from datamodel import NO_FLAGS, PacketRecord, Protocol, TcpFlag
from errors import (
    BadIHL,
    BadMagic,
    FragmentedPacket,
    NonIPv4Frame,
    TruncatedFrame,
    TruncatedHeader,
    UnencodableRecord,
    UnsupportedFormat,
    UnsupportedLinkType,
)
from pcapio import (
    decode_frame,
    filter_by_device,
    load_pcap,
    quantize_timestamp,
    read_pcap,
    save_pcap,
    write_pcap,
)
from traffic_gen import FloodKind, FloodProfile, gen_flood

DEVICE = "10.0.0.10"


def syn(t, src="10.0.0.66", dst=DEVICE, length=60):
    return PacketRecord(t, src, dst, Protocol.TCP, 40000, 80, TcpFlag.SYN, length)


def to_big_endian(data: bytes) -> bytes:
    """Re-emit a little-endian capture with the byte-swapped magic."""
    out = io.BytesIO()
    magic, major, minor, zone, sigfigs, snaplen, link = struct.unpack_from("<IHHiIII", data, 0)
    out.write(struct.pack(">IHHiIII", magic, major, minor, zone, sigfigs, snaplen, link))
    pos = 24
    while pos < len(data):
        sec, usec, incl, orig = struct.unpack_from("<IIII", data, pos)
        out.write(struct.pack(">IIII", sec, usec, incl, orig))
        out.write(data[pos + 16:pos + 16 + incl])
        pos += 16 + incl
    return out.getvalue()


def mixed_records():
    return [
        syn(0.0),
        PacketRecord(0.25, DEVICE, "10.0.0.1", Protocol.TCP, 554, 49152, TcpFlag.ACK | TcpFlag.PSH, 300),
        PacketRecord(0.5, "10.0.0.66", DEVICE, Protocol.ICMP, length=98, icmp_type=8),
        PacketRecord(0.75, DEVICE, "10.0.0.1", Protocol.UDP, 5353, 53, NO_FLAGS, 80),
        PacketRecord(1.0, "10.0.0.2", DEVICE, 47, length=40),
    ]


# --- write/read ---------------------------------------------------------------

def test_round_trip_preserves_every_field():
    records = mixed_records()
    meta, decoded = read_pcap(write_pcap(records))
    assert decoded == records
    assert meta.endianness == "little"
    assert meta.link_type == 1
    assert meta.packet_count == len(records)
    assert meta.skipped == {}


def test_big_endian_capture_decodes_identically():
    records = mixed_records()
    data = write_pcap(records)
    meta, decoded = read_pcap(to_big_endian(data))
    assert meta.endianness == "big"
    assert decoded == records


def test_single_syn_file_size():
    data = write_pcap([syn(0.0, length=60)])
    assert len(data) == 24 + 16 + 60


def test_empty_capture_is_unencodable():
    with pytest.raises(UnencodableRecord):
        write_pcap([])


def test_decreasing_timestamps_are_unencodable():
    with pytest.raises(UnencodableRecord):
        write_pcap([syn(1.0), syn(0.5)])


@pytest.mark.parametrize("record", [
    PacketRecord(0.0, "10.0.0.66", DEVICE, Protocol.ICMP, length=98, icmp_type=None),
    PacketRecord(0.0, "10.0.0.66", DEVICE, Protocol.ICMP, length=98, icmp_type=8, tcp_flags=TcpFlag.SYN),
    PacketRecord(0.0, "10.0.0.66", DEVICE, Protocol.TCP, 1, 2, TcpFlag.SYN, 40),
    PacketRecord(-1.0, "10.0.0.66", DEVICE, Protocol.TCP, 1, 2, TcpFlag.SYN, 60),
    PacketRecord(0.0, "10.0.0.666", DEVICE, Protocol.TCP, 1, 2, TcpFlag.SYN, 60),
])
def test_records_the_codec_cannot_represent(record):
    with pytest.raises(UnencodableRecord):
        write_pcap([record])


def test_generated_timestamps_survive_the_file():
    records = [syn(t) for t in (0.0, 0.5, 1.0)]
    data = write_pcap(records)
    # first record header: ts_sec, ts_usec straight from the bytes
    assert struct.unpack_from("<II", data, 24) == (0, 0)
    assert struct.unpack_from("<II", data, 24 + 16 + 60) == (0, 500000)
    _, decoded = read_pcap(data)
    assert [r.timestamp for r in decoded] == [0.0, 0.5, 1.0]


def test_flood_capture_rewrites_byte_identically():
    flood = FloodProfile(kind=FloodKind.SYN, rate=1000, start=0.0, duration=1.0)
    records = gen_flood(flood, seed=3)
    assert len(records) == 1000
    data = write_pcap(records)
    _, decoded = read_pcap(data)
    assert write_pcap(decoded) == data


def test_quantize_timestamp_rounds_to_microseconds():
    assert quantize_timestamp(1.0000004) == 1.0
    assert quantize_timestamp(1.0000006) == pytest.approx(1.000001)


def test_save_and_load_file(tmp_path):
    path = tmp_path / "capture.pcap"
    size = save_pcap(path, mixed_records())
    assert path.stat().st_size == size
    _, decoded = load_pcap(path)
    assert decoded == mixed_records()


# --- read errors ---------------------------------------------------------------

def test_bad_magic():
    with pytest.raises(BadMagic):
        read_pcap(b"\x00" * 24)


def test_nanosecond_capture_is_unsupported():
    header = struct.pack("<IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, 1)
    with pytest.raises(UnsupportedFormat):
        read_pcap(header)


def test_pcapng_is_unsupported():
    with pytest.raises(UnsupportedFormat):
        read_pcap(b"\x0a\x0d\x0d\x0a" + b"\x00" * 20)


def test_non_ethernet_link_type():
    header = struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, 101)
    with pytest.raises(UnsupportedLinkType):
        read_pcap(header)


def test_truncated_global_header():
    with pytest.raises(TruncatedHeader):
        read_pcap(struct.pack("<I", 0xA1B2C3D4) + b"\x00" * 4)


def test_truncated_record_body():
    data = write_pcap([syn(0.0)])
    with pytest.raises(TruncatedHeader):
        read_pcap(data[:-10])


def test_undecodable_frames_are_counted_and_skipped(frames):
    good = write_pcap([syn(0.0)])
    arp = frames.ethernet_ipv4("10.0.0.1", DEVICE, 6, b"", ethertype=0x0806, pad_to=60)
    frag = frames.ethernet_ipv4("10.0.0.1", DEVICE, 6, frames.tcp_header(1, 2, 2), flags_frag=0x2000, pad_to=60)
    extra = b""
    for i, raw in enumerate((arp, frag)):
        extra += struct.pack("<IIII", 1 + i, 0, len(raw), len(raw)) + raw
    meta, records = read_pcap(good + extra)
    assert len(records) == 1
    assert meta.packet_count == 3
    assert meta.decoded_count == 1
    assert meta.skipped == {"arp": 1, "fragment": 1}


# --- decode_frame ----------------------------------------------------------------

def test_syn_flag_byte(frames):
    raw = frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1234, 80, 0x02))
    assert len(raw) == 54
    rec = decode_frame(raw, 1)
    assert rec.tcp_flags == TcpFlag.SYN
    assert (rec.src_port, rec.dst_port) == (1234, 80)
    assert rec.length == 54


def test_icmp_echo_request(frames):
    raw = frames.ethernet_ipv4("10.0.0.66", DEVICE, 1, frames.icmp_header(8), pad_to=98)
    rec = decode_frame(raw, 1)
    assert rec.protocol == Protocol.ICMP
    assert rec.icmp_type == 8
    assert rec.tcp_flags == NO_FLAGS
    assert (rec.src_port, rec.dst_port) == (0, 0)


def test_other_protocol_keeps_its_code(frames):
    rec = decode_frame(frames.ethernet_ipv4("10.0.0.2", DEVICE, 47, b"", pad_to=60), 1)
    assert rec.protocol == 47
    assert rec.icmp_type is None


def test_arp_is_not_ipv4(frames):
    with pytest.raises(NonIPv4Frame):
        decode_frame(frames.ethernet_ipv4("10.0.0.1", DEVICE, 6, b"", ethertype=0x0806), 1)


def test_short_frame_is_truncated():
    with pytest.raises(TruncatedFrame):
        decode_frame(b"\x00" * 10, 1)


def test_tcp_header_cut_short(frames):
    raw = frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1, 2, 2))[:44]
    with pytest.raises(TruncatedFrame):
        decode_frame(raw, 1)


def test_ihl_below_minimum(frames):
    with pytest.raises(BadIHL):
        decode_frame(frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1, 2, 2), ihl_words=4), 1)


def test_zero_total_length_uses_the_captured_frame(frames):
    raw = frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1234, 80, 0x02), total_length=0)
    rec = decode_frame(raw, 1)
    assert rec.tcp_flags == TcpFlag.SYN
    assert (rec.src_port, rec.dst_port) == (1234, 80)
    assert rec.length == 54


def test_total_length_shorter_than_header(frames):
    with pytest.raises(BadIHL):
        decode_frame(frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1, 2, 2), total_length=12), 1)


def test_fragment_offset_is_rejected(frames):
    raw = frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1, 2, 2), flags_frag=0x0010)
    with pytest.raises(FragmentedPacket):
        decode_frame(raw, 1)


def test_decode_requires_ethernet(frames):
    with pytest.raises(UnsupportedLinkType):
        decode_frame(frames.ethernet_ipv4("10.0.0.66", DEVICE, 6, frames.tcp_header(1, 2, 2)), 101)


# --- filter_by_device ------------------------------------------------------------

def test_filter_keeps_all_device_records():
    records = [syn(0.0), syn(0.1, src=DEVICE, dst="10.0.0.1")]
    assert filter_by_device(records, DEVICE) == records


def test_filter_without_device_traffic():
    assert filter_by_device([syn(0.0, dst="10.0.0.99")], DEVICE) == []


def test_filter_mixed_capture_keeps_order():
    records = []
    for i in range(10):
        if i in (1, 4, 5, 8):
            records.append(syn(i * 0.1, src="10.0.0.66", dst=DEVICE) if i % 2 else syn(i * 0.1, src=DEVICE, dst="10.0.0.1"))
        else:
            records.append(syn(i * 0.1, src="10.0.0.2", dst="10.0.0.3"))
    kept = filter_by_device(records, DEVICE)
    assert kept == [r for r in records if DEVICE in (r.src_ip, r.dst_ip)]
    assert [r.timestamp for r in kept] == [records[i].timestamp for i in (1, 4, 5, 8)]


def test_filter_by_protocol():
    icmp = PacketRecord(0.2, "10.0.0.66", DEVICE, Protocol.ICMP, length=98, icmp_type=8)
    assert filter_by_device([syn(0.0), icmp], DEVICE, Protocol.ICMP) == [icmp]
