"""Packetization of fixed-width messages and loss-tolerant reassembly.

Packet::

    magic "DRVP" | message_id u64 | seq u16 | coord_start u32 | coord_count u32
    | payload_len u16 | payload

Packet ``seq = 0`` carries the message header (the DRV2 header bytes, whose
``payload_len`` is the full payload length).  Data packets ``seq >= 1`` carry
contiguous coordinate ranges whose first bit is byte-aligned in the message
payload, so their payloads are plain slices of it.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..quantizer import QuantizedVector, Scheme
from .bitpack import unpack_fixed
from .wire import HEADER_SIZE, EncodedMessage, WireError

PACKET_MAGIC = b"DRVP"
PACKET_HEADER = struct.Struct("<4sQHIIH")
MAX_PACKET_PAYLOAD = 0xFFFF


class MessageLost(Exception):
    """The header packet did not arrive, so the whole message is dropped."""


@dataclass(frozen=True)
class Packet:
    message_id: int
    seq: int
    coord_start: int
    coord_count: int
    payload: bytes

    @property
    def is_header(self) -> bool:
        return self.seq == 0

    def to_bytes(self) -> bytes:
        return PACKET_HEADER.pack(
            PACKET_MAGIC, self.message_id, self.seq, self.coord_start, self.coord_count,
            len(self.payload),
        ) + self.payload

    @property
    def size_bytes(self) -> int:
        return PACKET_HEADER.size + len(self.payload)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Packet":
        if len(data) < PACKET_HEADER.size:
            raise WireError("packet shorter than its header")
        magic, mid, seq, start, count, plen = PACKET_HEADER.unpack_from(data)
        if magic != PACKET_MAGIC:
            raise WireError(f"bad packet magic {magic!r}")
        if len(data) != PACKET_HEADER.size + plen:
            raise WireError(f"packet declares {plen} payload bytes, holds {len(data) - PACKET_HEADER.size}")
        return cls(mid, seq, start, count, bytes(data[PACKET_HEADER.size:]))


def _bit_offsets(msg: EncodedMessage, scheme: Optional[Scheme]) -> np.ndarray:
    """Cumulative payload bit offset before each coordinate, length ``D + 1``."""
    offsets = np.zeros(msg.D + 1, dtype=np.int64)
    if msg.carries_levels:
        if scheme is None or scheme.D != msg.D:
            raise ValueError("a scheme matching the message dimension is required")
        np.cumsum(scheme.bit_widths(), out=offsets[1:])
    return offsets


def packetize(
    msg: EncodedMessage,
    max_payload_bytes: int,
    scheme: Optional[Scheme] = None,
    header_copies: int = 1,
) -> list[Packet]:
    """Split a fixed-width message into a header packet and byte-aligned data packets.

    ``max_payload_bytes`` bounds the data-packet payloads; the header packet
    always holds the full message header.  With ``header_copies > 1`` the header
    packet is repeated so a single loss does not drop the message.
    """
    if msg.entropy_mode:
        raise ValueError("entropy-coded messages cannot be packetized for lossy transport")
    if not 1 <= max_payload_bytes <= MAX_PACKET_PAYLOAD:
        raise ValueError(f"max_payload_bytes must be in 1..{MAX_PACKET_PAYLOAD}")
    if header_copies < 1:
        raise ValueError("header_copies must be >= 1")
    if msg.carries_levels and scheme is None:
        scheme = msg.scheme()
    offsets = _bit_offsets(msg, scheme)
    if math.ceil(offsets[-1] / 8) != len(msg.payload):
        raise ValueError("payload length does not match the scheme's bit layout")
    mid = msg.message_id
    header = msg.header_bytes()
    packets = [Packet(mid, 0, 0, 0, header) for _ in range(header_copies)]

    aligned = np.flatnonzero(offsets % 8 == 0)
    if aligned[-1] != msg.D:
        aligned = np.append(aligned, msg.D)
    aligned_bits = offsets[aligned]
    start, seq = 0, 1
    while True:
        limit = offsets[start] + 8 * max_payload_bytes
        stop = int(aligned[np.searchsorted(aligned_bits, limit, side="right") - 1])
        if stop <= start:
            raise ValueError(
                f"max_payload_bytes={max_payload_bytes} cannot hold a byte-aligned run "
                f"of coordinates starting at {start}"
            )
        lo, hi = offsets[start] // 8, math.ceil(offsets[stop] / 8)
        packets.append(Packet(mid, seq, start, stop - start, msg.payload[lo:hi]))
        if seq == 0xFFFF and stop < msg.D:
            raise ValueError("message needs more than 65535 data packets")
        start, seq = stop, seq + 1
        if start >= msg.D:
            break
    return packets


@dataclass
class Delivery:
    """A message as rebuilt from the packets that arrived.

    ``lost`` marks coordinates whose packet was dropped; their payload bits
    are zero-filled and their reconstructed value is 0.  ``quantized`` is
    ``None`` for messages without a level layout (zero vector or zero budget).
    """

    message: EncodedMessage
    lost: np.ndarray
    quantized: Optional[QuantizedVector]

    @property
    def lost_count(self) -> int:
        return int(self.lost.sum())


def reassemble(
    packets: list[Packet],
    scheme: Optional[Scheme] = None,
    global_seed: Optional[int] = None,
) -> Delivery:
    headers = [p for p in packets if p.is_header]
    if not headers:
        raise MessageLost("header packet missing")
    if any(h.payload != headers[0].payload for h in headers[1:]):
        raise WireError("conflicting header packets")
    msg, plen = EncodedMessage.parse_header(headers[0].payload)
    if len(headers[0].payload) != HEADER_SIZE:
        raise WireError("header packet has trailing bytes")
    if msg.entropy_mode:
        raise WireError("entropy-coded messages are not carried in packets")
    if any(p.message_id != msg.message_id for p in packets):
        raise WireError("packets from different messages")
    if msg.carries_levels and scheme is None:
        scheme = msg.scheme(global_seed)
    offsets = _bit_offsets(msg, scheme)
    if math.ceil(offsets[-1] / 8) != plen:
        raise WireError("declared payload length does not match the scheme's bit layout")

    buf = bytearray(plen)
    lost = np.ones(msg.D, dtype=bool)
    for p in packets:
        if p.is_header:
            continue
        start, stop = p.coord_start, p.coord_start + p.coord_count
        if p.coord_count == 0 or stop > msg.D or offsets[start] % 8:
            raise WireError(f"packet {p.seq} has an invalid coordinate range [{start}, {stop})")
        lo, hi = offsets[start] // 8, math.ceil(offsets[stop] / 8)
        if len(p.payload) != hi - lo:
            raise WireError(f"packet {p.seq} payload is {len(p.payload)} bytes, expected {hi - lo}")
        buf[lo:hi] = p.payload
        lost[start:stop] = False

    message = msg.with_payload(bytes(buf))
    if not msg.carries_levels:
        return Delivery(message, lost, None)
    indices = unpack_fixed(message.payload, scheme, msg.D)
    return Delivery(message, lost, QuantizedVector(indices, msg.norm, scheme, lost=lost))
