"""Message and vector file formats (all little-endian).

Message::

    magic "DRV2" | version u8 | flags u8 | client_id u32 | round u32 | d u32 | D u32
    | scheme_id u16 | reserved u16 | scale f64 | norm f64 | payload_len u32 | payload

``scheme_id`` is the nominal bit budget in units of 1/1024 bit; together with
``D`` and the entropy flag it determines the level-set assignment.

Flags: bit 0 zero vector, bit 1 entropy-coded payload, bit 2 uniform (dense)
rotation, bit 3 degenerate scale (S forced to 0), bit 4 shared-randomness
coordinate selection, bits 5-7 Hadamard rounds minus one.

Vector file: magic "DVEC" | count u32 | count x f64.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from ..quantizer import Scheme, build_scheme
from ..rng import RotationSeed

MAGIC = b"DRV2"
VERSION = 1
HEADER = struct.Struct("<4sBBIIIIHHddI")
HEADER_SIZE = HEADER.size

VECTOR_MAGIC = b"DVEC"
VECTOR_HEADER = struct.Struct("<4sI")

BITS_UNIT = 1024

FLAG_ZERO = 1 << 0
FLAG_ENTROPY = 1 << 1
FLAG_UNIFORM = 1 << 2
FLAG_DEGENERATE = 1 << 3
FLAG_SHARED_SELECTION = 1 << 4
_ROUNDS_SHIFT = 5
MAX_ROUNDS = 8


class WireError(ValueError):
    pass


def bits_to_scheme_id(b: float) -> int:
    sid = round(b * BITS_UNIT)
    if not 0 <= sid <= 0xFFFF:
        raise ValueError(f"bit budget {b} not representable on the wire (0 <= b < 64)")
    return sid


def scheme_id_to_bits(sid: int) -> float:
    return sid / BITS_UNIT


def wire_bits(b: float) -> float:
    """Budget snapped to the 1/1024-bit wire grid."""
    return scheme_id_to_bits(bits_to_scheme_id(b))


def rounds_flags(rounds: int) -> int:
    if not 1 <= rounds <= MAX_ROUNDS:
        raise ValueError(f"Hadamard rounds must be in 1..{MAX_ROUNDS}")
    return (rounds - 1) << _ROUNDS_SHIFT


@dataclass(frozen=True)
class EncodedMessage:
    client_id: int
    round: int
    d: int
    D: int
    scheme_id: int
    flags: int
    scale: float
    norm: float
    payload: bytes = b""

    @property
    def zero_flag(self) -> bool:
        return bool(self.flags & FLAG_ZERO)

    @property
    def entropy_mode(self) -> bool:
        return bool(self.flags & FLAG_ENTROPY)

    @property
    def degenerate(self) -> bool:
        return bool(self.flags & FLAG_DEGENERATE)

    @property
    def rotation_kind(self) -> str:
        return "uniform" if self.flags & FLAG_UNIFORM else "hadamard"

    @property
    def selection(self) -> str:
        return "shared" if self.flags & FLAG_SHARED_SELECTION else "first"

    @property
    def rounds(self) -> int:
        return (self.flags >> _ROUNDS_SHIFT) + 1

    @property
    def bits(self) -> float:
        return scheme_id_to_bits(self.scheme_id)

    @property
    def message_id(self) -> int:
        return (self.client_id << 32) | self.round

    @property
    def carries_levels(self) -> bool:
        """False for zero-vector and zero-budget messages, which have no level layout."""
        return not self.zero_flag and self.scheme_id > 0

    def scheme(self, global_seed: int | None = None) -> Scheme:
        """Rebuild the level-set assignment the sender used."""
        selection_seed = None
        if self.selection == "shared":
            if global_seed is None:
                raise ValueError("shared coordinate selection needs the global seed")
            selection_seed = RotationSeed(global_seed, self.client_id, self.round)
        return build_scheme(
            self.bits, self.D, entropy_mode=self.entropy_mode,
            selection=self.selection, selection_seed=selection_seed,
        )

    def header_bytes(self) -> bytes:
        return HEADER.pack(
            MAGIC, VERSION, self.flags, self.client_id, self.round, self.d, self.D,
            self.scheme_id, 0, self.scale, self.norm, len(self.payload),
        )

    def to_bytes(self) -> bytes:
        return self.header_bytes() + self.payload

    @property
    def size_bytes(self) -> int:
        return HEADER_SIZE + len(self.payload)

    def with_payload(self, payload: bytes) -> "EncodedMessage":
        return replace(self, payload=payload)

    @classmethod
    def parse_header(cls, data: bytes) -> tuple["EncodedMessage", int]:
        """Header fields (empty payload) and the declared payload length."""
        if len(data) < HEADER_SIZE:
            raise WireError(f"message shorter than the {HEADER_SIZE}-byte header")
        magic, version, flags, cid, rnd, d, D, sid, _reserved, scale, norm, plen = HEADER.unpack_from(data)
        if magic != MAGIC:
            raise WireError(f"bad magic {magic!r}")
        if version != VERSION:
            raise WireError(f"unsupported version {version}")
        if d < 1 or D < d:
            raise WireError(f"inconsistent dimensions d={d}, D={D}")
        if not (math.isfinite(scale) and math.isfinite(norm)) or norm < 0:
            raise WireError("non-finite scale or negative norm")
        if flags & FLAG_ZERO and (plen or scale != 0.0):
            raise WireError("zero-vector message with payload or non-zero scale")
        return cls(cid, rnd, d, D, sid, flags, scale, norm), plen

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncodedMessage":
        msg, plen = cls.parse_header(data)
        if len(data) != HEADER_SIZE + plen:
            raise WireError(f"expected {HEADER_SIZE + plen} bytes, got {len(data)}")
        return msg.with_payload(bytes(data[HEADER_SIZE:]))


def write_vector(path, x) -> None:
    with open(path, "wb") as fh:
        fh.write(vector_bytes(x))


def vector_bytes(x) -> bytes:
    x = np.ascontiguousarray(x, dtype="<f8")
    return VECTOR_HEADER.pack(VECTOR_MAGIC, x.size) + x.tobytes()


def parse_vector(data: bytes) -> np.ndarray:
    if len(data) < VECTOR_HEADER.size:
        raise WireError("vector file shorter than its header")
    magic, count = VECTOR_HEADER.unpack_from(data)
    if magic != VECTOR_MAGIC:
        raise WireError(f"bad vector magic {magic!r}")
    if len(data) != VECTOR_HEADER.size + 8 * count:
        raise WireError(f"vector file declares {count} values but holds {len(data) - VECTOR_HEADER.size} bytes")
    return np.frombuffer(data, dtype="<f8", offset=VECTOR_HEADER.size).astype(np.float64)


def read_vector(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return parse_vector(fh.read())
