#!/usr/bin/env python3
"""
Classic pcap reader/writer and Ethernet/IPv4 frame codec.

Only the original libpcap format is handled (magic 0xA1B2C3D4, microsecond
timestamps, either byte order). Frames that are not plain IPv4 (IPv6, VLAN
tagged, ARP, fragments, truncated) are counted in CaptureMeta.skipped and
dropped. Checksums are written as zero and never checked.
"""

from __future__ import annotations

import io
import logging
import math
import socket
import struct
from typing import BinaryIO, Iterator, List, Optional, Sequence, Tuple, Union

from datamodel import CaptureMeta, PacketRecord, Protocol, TcpFlag, TCP_FLAG_MASK, NO_FLAGS
from errors import (
    BadIHL,
    BadMagic,
    FragmentedPacket,
    NonIPv4Frame,
    PcapError,
    TruncatedFrame,
    TruncatedHeader,
    UnencodableRecord,
    UnsupportedFormat,
    UnsupportedLinkType,
)

logger = logging.getLogger(__name__)

PCAP_MAGIC = 0xA1B2C3D4
PCAP_VERSION_MAJOR = 2
PCAP_VERSION_MINOR = 4
PCAP_SNAPLEN = 65535
LINKTYPE_ETHERNET = 1

GLOBAL_HEADER_LEN = 24
RECORD_HEADER_LEN = 16
ETH_HEADER_LEN = 14
IPV4_HEADER_LEN = 20
TCP_HEADER_LEN = 20
UDP_HEADER_LEN = 8
ICMP_HEADER_LEN = 8

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_ARP = 0x0806
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_IPV6 = 0x86DD

# magic bytes as they appear on disk
_MAGIC_LE = b"\xd4\xc3\xb2\xa1"
_MAGIC_BE = b"\xa1\xb2\xc3\xd4"
_MAGIC_NSEC = (b"\x4d\x3c\xb2\xa1", b"\xa1\xb2\x3c\x4d")
_PCAPNG_BLOCK = b"\x0a\x0d\x0d\x0a"

_SKIP_BY_ETHERTYPE = {
    ETHERTYPE_IPV6: "ipv6",
    ETHERTYPE_VLAN: "vlan",
    ETHERTYPE_ARP: "arp",
}

_SKIP_BY_ERROR = {
    FragmentedPacket: "fragment",
    TruncatedFrame: "truncated",
    BadIHL: "bad_ihl",
}

# smallest frame that can carry each protocol's header
MIN_FRAME_LEN = {
    Protocol.TCP: ETH_HEADER_LEN + IPV4_HEADER_LEN + TCP_HEADER_LEN,
    Protocol.UDP: ETH_HEADER_LEN + IPV4_HEADER_LEN + UDP_HEADER_LEN,
    Protocol.ICMP: ETH_HEADER_LEN + IPV4_HEADER_LEN + ICMP_HEADER_LEN,
}
MIN_IPV4_FRAME_LEN = ETH_HEADER_LEN + IPV4_HEADER_LEN
MAX_FRAME_LEN = PCAP_SNAPLEN

PcapSource = Union[bytes, bytearray, memoryview, BinaryIO]


def quantize_timestamp(t: float) -> float:
    """Round a timestamp to the microsecond grid the pcap record header can store."""
    sec, usec = _split_timestamp(t)
    return sec + usec / 1_000_000


def _split_timestamp(t: float) -> Tuple[int, int]:
    return divmod(round(t * 1_000_000), 1_000_000)


def min_frame_length(protocol: int) -> int:
    return MIN_FRAME_LEN.get(protocol, MIN_IPV4_FRAME_LEN)


# --- decoding ----------------------------------------------------------------

def decode_frame(raw: bytes, link_type: int = LINKTYPE_ETHERNET, timestamp: float = 0.0,
                 orig_len: Optional[int] = None) -> PacketRecord:
    """
    Decode one Ethernet frame into a PacketRecord.

    Args:
        raw: captured frame bytes
        link_type: pcap link type, must be 1 (Ethernet)
        timestamp: capture time to stamp on the record
        orig_len: on-the-wire length from the record header (defaults to len(raw))

    Returns:
        PacketRecord

    Raises:
        UnsupportedLinkType, TruncatedFrame, NonIPv4Frame, BadIHL, FragmentedPacket
    """
    if link_type != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {link_type} is not Ethernet")
    raw = bytes(raw)
    if len(raw) < ETH_HEADER_LEN:
        raise TruncatedFrame(f"frame of {len(raw)} bytes has no Ethernet header")

    (ethertype,) = struct.unpack_from("!H", raw, 12)
    if ethertype != ETHERTYPE_IPV4:
        err = NonIPv4Frame(f"ethertype 0x{ethertype:04x} is not IPv4")
        err.ethertype = ethertype
        raise err

    ip = raw[ETH_HEADER_LEN:]
    if len(ip) < IPV4_HEADER_LEN:
        raise TruncatedFrame(f"IPv4 header needs {IPV4_HEADER_LEN} bytes, got {len(ip)}")
    version = ip[0] >> 4
    if version != 4:
        err = NonIPv4Frame(f"IP version {version} under IPv4 ethertype")
        err.ethertype = ETHERTYPE_IPV6 if version == 6 else ethertype
        raise err
    ihl = (ip[0] & 0x0F) * 4
    if ihl < IPV4_HEADER_LEN:
        raise BadIHL(f"IHL of {ihl} bytes is below the IPv4 minimum")
    if len(ip) < ihl:
        raise TruncatedFrame(f"IPv4 header claims {ihl} bytes, frame has {len(ip)}")

    total_length, flags_frag = struct.unpack_from("!H2xH", ip, 2)
    # segmentation offload leaves the field zeroed
    if total_length == 0:
        total_length = len(ip)
    if total_length < ihl:
        raise BadIHL(f"IPv4 total length {total_length} is shorter than its header ({ihl})")
    if flags_frag & 0x2000 or flags_frag & 0x1FFF:
        raise FragmentedPacket("IPv4 fragment")
    protocol = ip[9]
    src_ip = socket.inet_ntoa(ip[12:16])
    dst_ip = socket.inet_ntoa(ip[16:20])

    l4 = ip[ihl:total_length] if total_length <= len(ip) else ip[ihl:]
    src_port = dst_port = 0
    flags = NO_FLAGS
    icmp_type = None
    if protocol == Protocol.TCP:
        if len(l4) < TCP_HEADER_LEN:
            raise TruncatedFrame(f"TCP header needs {TCP_HEADER_LEN} bytes, got {len(l4)}")
        src_port, dst_port = struct.unpack_from("!HH", l4, 0)
        flags = TcpFlag(l4[13] & TCP_FLAG_MASK)
    elif protocol == Protocol.UDP:
        if len(l4) < UDP_HEADER_LEN:
            raise TruncatedFrame(f"UDP header needs {UDP_HEADER_LEN} bytes, got {len(l4)}")
        src_port, dst_port = struct.unpack_from("!HH", l4, 0)
    elif protocol == Protocol.ICMP:
        if len(l4) < ICMP_HEADER_LEN:
            raise TruncatedFrame(f"ICMP header needs {ICMP_HEADER_LEN} bytes, got {len(l4)}")
        icmp_type = l4[0]

    length = max(len(raw), orig_len or 0)
    return PacketRecord(
        timestamp=timestamp,
        src_ip=src_ip,
        dst_ip=dst_ip,
        protocol=int(protocol),
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=flags,
        length=length,
        icmp_type=icmp_type,
    )


def _skip_reason(exc: PcapError) -> str:
    ethertype = getattr(exc, "ethertype", None)
    if ethertype is not None:
        return _SKIP_BY_ETHERTYPE.get(ethertype, "non_ipv4")
    return _SKIP_BY_ERROR.get(type(exc), "malformed")


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining:
        chunk = stream.read(remaining)
        if not chunk:
            break
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


def _read_global_header(stream: BinaryIO) -> Tuple[str, CaptureMeta]:
    head = _read_exact(stream, GLOBAL_HEADER_LEN)
    magic = head[:4]
    if len(magic) == 4:
        if magic in _MAGIC_NSEC:
            raise UnsupportedFormat("nanosecond pcap is not supported")
        if magic == _PCAPNG_BLOCK:
            raise UnsupportedFormat("pcapng is not supported")
        if magic not in (_MAGIC_LE, _MAGIC_BE):
            raise BadMagic(f"bad pcap magic {magic.hex()}")
    if len(head) < GLOBAL_HEADER_LEN:
        raise TruncatedHeader(f"pcap global header needs {GLOBAL_HEADER_LEN} bytes, got {len(head)}")

    endian = "<" if magic == _MAGIC_LE else ">"
    _, _, _, _, _, snaplen, network = struct.unpack(endian + "IHHiIII", head)
    if network != LINKTYPE_ETHERNET:
        raise UnsupportedLinkType(f"link type {network} is not Ethernet")
    meta = CaptureMeta(endianness="little" if endian == "<" else "big", snaplen=snaplen, link_type=network)
    return endian, meta


def iter_pcap(stream: BinaryIO, meta_out: Optional[list] = None) -> Iterator[PacketRecord]:
    """
    Stream decoded records from an open pcap file.

    The CaptureMeta is appended to meta_out (when given) as soon as the global
    header is parsed and keeps updating while records are consumed.
    """
    endian, meta = _read_global_header(stream)
    if meta_out is not None:
        meta_out.append(meta)
    record_fmt = endian + "IIII"
    while True:
        header = _read_exact(stream, RECORD_HEADER_LEN)
        if not header:
            break
        if len(header) < RECORD_HEADER_LEN:
            raise TruncatedHeader(f"record {meta.packet_count} header is truncated")
        ts_sec, ts_usec, incl_len, orig_len = struct.unpack(record_fmt, header)
        raw = _read_exact(stream, incl_len)
        if len(raw) < incl_len:
            raise TruncatedHeader(f"record {meta.packet_count} claims {incl_len} bytes, file has {len(raw)}")
        meta.packet_count += 1
        timestamp = ts_sec + ts_usec / 1_000_000
        try:
            record = decode_frame(raw, meta.link_type, timestamp, orig_len)
        except PcapError as e:
            reason = _skip_reason(e)
            meta.skip(reason)
            logger.debug("skipping record %d (%s): %s", meta.packet_count - 1, reason, e)
            continue
        meta.decoded_count += 1
        yield record


def read_pcap(source: PcapSource) -> Tuple[CaptureMeta, List[PacketRecord]]:
    """
    Read a whole classic pcap capture.

    Args:
        source: the file bytes, or a binary stream positioned at the global header

    Returns:
        (CaptureMeta, records in file order)
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(bytes(source))
    meta_box: list = []
    records = list(iter_pcap(source, meta_box))
    meta = meta_box[0]
    if meta.skipped:
        logger.info("read %d records, skipped %s", meta.decoded_count, meta.skipped)
    return meta, records


def load_pcap(path) -> Tuple[CaptureMeta, List[PacketRecord]]:
    with open(path, "rb") as f:
        return read_pcap(f)


# --- encoding ----------------------------------------------------------------

def _mac_for(ip_bytes: bytes) -> bytes:
    # locally administered address derived from the IP
    return b"\x02\x00" + ip_bytes


def _check_encodable(rec: PacketRecord):
    if not (isinstance(rec.timestamp, (int, float)) and math.isfinite(rec.timestamp) and rec.timestamp >= 0):
        raise UnencodableRecord(f"timestamp {rec.timestamp!r} is not a finite non-negative number")
    if not 0 <= rec.protocol <= 255:
        raise UnencodableRecord(f"protocol code {rec.protocol} does not fit the IPv4 header")
    if rec.tcp_flags and rec.protocol != Protocol.TCP:
        raise UnencodableRecord(f"TCP flags on a {rec.protocol} packet")
    if int(rec.tcp_flags) & ~TCP_FLAG_MASK:
        raise UnencodableRecord(f"unknown TCP flag bits 0x{int(rec.tcp_flags):x}")
    if rec.protocol in (Protocol.TCP, Protocol.UDP):
        for port in (rec.src_port, rec.dst_port):
            if not 0 <= port <= 65535:
                raise UnencodableRecord(f"port {port} out of range")
    elif rec.src_port or rec.dst_port:
        raise UnencodableRecord(f"ports on protocol {rec.protocol}, which carries none")
    if rec.protocol == Protocol.ICMP:
        if rec.icmp_type is None or not 0 <= rec.icmp_type <= 255:
            raise UnencodableRecord(f"ICMP packet needs an icmp_type in 0..255, got {rec.icmp_type!r}")
    elif rec.icmp_type is not None:
        raise UnencodableRecord("icmp_type set on a non-ICMP packet")
    minimum = min_frame_length(rec.protocol)
    if not minimum <= rec.length <= MAX_FRAME_LEN:
        raise UnencodableRecord(f"length {rec.length} outside [{minimum}, {MAX_FRAME_LEN}] for protocol {rec.protocol}")


def encode_frame(rec: PacketRecord) -> bytes:
    """Build the Ethernet+IPv4+L4 frame for a record, zero padded to rec.length."""
    _check_encodable(rec)
    try:
        src = socket.inet_aton(rec.src_ip)
        dst = socket.inet_aton(rec.dst_ip)
    except (OSError, TypeError) as e:
        raise UnencodableRecord(f"bad IPv4 address in {rec.src_ip!r} -> {rec.dst_ip!r}: {e}") from e

    eth = _mac_for(dst) + _mac_for(src) + struct.pack("!H", ETHERTYPE_IPV4)
    ip = struct.pack(
        "!BBHHHBBH4s4s",
        0x45, 0, rec.length - ETH_HEADER_LEN, 0, 0, 64, rec.protocol, 0, src, dst,
    )
    if rec.protocol == Protocol.TCP:
        l4 = struct.pack("!HHIIBBHHH", rec.src_port, rec.dst_port, 0, 0, 5 << 4,
                         int(rec.tcp_flags), 8192, 0, 0)
    elif rec.protocol == Protocol.UDP:
        l4 = struct.pack("!HHHH", rec.src_port, rec.dst_port, rec.length - ETH_HEADER_LEN - IPV4_HEADER_LEN, 0)
    elif rec.protocol == Protocol.ICMP:
        l4 = struct.pack("!BBHHH", rec.icmp_type, 0, 0, 0, 0)
    else:
        l4 = b""
    frame = eth + ip + l4
    return frame + bytes(rec.length - len(frame))


def write_pcap(records: Sequence[PacketRecord]) -> bytes:
    """
    Encode records as a little-endian, microsecond, Ethernet pcap file.

    Raises:
        UnencodableRecord: empty input, decreasing timestamps, or a record the
            frame codec cannot represent
    """
    if not records:
        raise UnencodableRecord("cannot write an empty capture")
    out = io.BytesIO()
    out.write(struct.pack("<IHHiIII", PCAP_MAGIC, PCAP_VERSION_MAJOR, PCAP_VERSION_MINOR,
                          0, 0, PCAP_SNAPLEN, LINKTYPE_ETHERNET))
    previous = None
    for i, rec in enumerate(records):
        frame = encode_frame(rec)
        if previous is not None and rec.timestamp < previous:
            raise UnencodableRecord(f"record {i} timestamp {rec.timestamp} precedes {previous}")
        previous = rec.timestamp
        sec, usec = _split_timestamp(rec.timestamp)
        if sec > 0xFFFFFFFF:
            raise UnencodableRecord(f"timestamp {rec.timestamp} overflows the pcap seconds field")
        out.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        out.write(frame)
    return out.getvalue()


def save_pcap(path, records: Sequence[PacketRecord]) -> int:
    data = write_pcap(records)
    with open(path, "wb") as f:
        f.write(data)
    return len(data)


# --- filtering ---------------------------------------------------------------

def filter_by_device(records: Sequence[PacketRecord], device_ip: str,
                     protocol: Optional[int] = None) -> List[PacketRecord]:
    """Records sent by or to device_ip (optionally of one protocol), order preserved."""
    return [
        r for r in records
        if (r.src_ip == device_ip or r.dst_ip == device_ip)
        and (protocol is None or r.protocol == protocol)
    ]
