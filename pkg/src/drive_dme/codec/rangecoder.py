"""Static-model range coder (LZMA-style carry handling, 32-bit range).

The model is derived from a LevelSet's cell probabilities alone, so the
decoder rebuilds the identical table and nothing but the code stream is sent.
A CRC-32 of the decoded symbols trails the stream so corruption is reported
instead of silently decoding to garbage.
"""

from __future__ import annotations

import functools
import struct
import zlib

import numpy as np

from ..levels import LevelSet
from ..quantizer import QuantizedVector

FREQ_BITS = 16
TOTAL = 1 << FREQ_BITS
_TOP = 1 << 24
_MASK32 = 0xFFFFFFFF
_CRC = struct.Struct("<I")


class DecodeError(ValueError):
    pass


def quantize_frequencies(probabilities, total: int = TOTAL) -> list[int]:
    """Integer frequencies summing to ``total``, each >= 1.

    Every symbol gets 1, the rest ``total - n`` is shared by flooring
    ``p * (total - n)``, and the leftover goes one unit at a time to the largest
    fractional parts (lowest index first on ties).
    """
    p = np.asarray(probabilities, dtype=np.float64)
    n = p.size
    if n > total:
        raise ValueError(f"alphabet of {n} symbols does not fit a {total} frequency total")
    p = p / p.sum()
    share = p * (total - n)
    base = np.floor(share).astype(np.int64)
    freqs = 1 + base
    leftover = total - int(freqs.sum())
    if leftover:
        order = np.lexsort((np.arange(n), -(share - base)))
        freqs[order[:leftover]] += 1
    return [int(f) for f in freqs]


class StaticModel:
    def __init__(self, freqs: list[int]):
        if sum(freqs) != TOTAL or min(freqs) < 1:
            raise ValueError("frequencies must be positive and sum to TOTAL")
        self.freqs = list(freqs)
        self.cum = [0]
        for f in freqs:
            self.cum.append(self.cum[-1] + f)
        self.lookup = np.repeat(np.arange(len(freqs)), freqs).tolist()

    @property
    def size(self) -> int:
        return len(self.freqs)

    def cost_bits(self, symbols) -> float:
        f = np.asarray(self.freqs, dtype=np.float64)[np.asarray(symbols)]
        return float(np.sum(FREQ_BITS - np.log2(f)))


@functools.lru_cache(maxsize=64)
def model_for(level_set: LevelSet) -> StaticModel:
    return StaticModel(quantize_frequencies(level_set.probabilities))


def range_encode(symbols, model: StaticModel) -> bytes:
    """Encode symbol indices; the empty sequence encodes to ``b""``."""
    if len(symbols) == 0:
        return b""
    freqs, cum = model.freqs, model.cum
    low, rng = 0, _MASK32
    cache, cache_size = 0, 1
    out = bytearray()

    for s in symbols:
        r = rng >> FREQ_BITS
        low += cum[s] * r
        rng = freqs[s] * r
        while rng < _TOP:
            rng <<= 8
            # shift the top byte of low out, resolving any pending carry
            if low < 0xFF000000 or low > _MASK32:
                carry = low >> 32
                temp = cache
                while cache_size:
                    out.append((temp + carry) & 0xFF)
                    temp = 0xFF
                    cache_size -= 1
                cache = (low >> 24) & 0xFF
            cache_size += 1
            low = (low & 0x00FFFFFF) << 8
    for _ in range(5):
        if low < 0xFF000000 or low > _MASK32:
            carry = low >> 32
            temp = cache
            while cache_size:
                out.append((temp + carry) & 0xFF)
                temp = 0xFF
                cache_size -= 1
            cache = (low >> 24) & 0xFF
        cache_size += 1
        low = (low & 0x00FFFFFF) << 8
    return bytes(out)


def range_decode(data: bytes, model: StaticModel, count: int) -> list[int]:
    if count == 0:
        if data:
            raise DecodeError("non-empty stream for zero symbols")
        return []
    if len(data) < 5 or data[0] != 0:
        raise DecodeError("stream too short or bad leading byte")
    freqs, cum, lookup = model.freqs, model.cum, model.lookup
    code = int.from_bytes(data[1:5], "big")
    pos, n = 5, len(data)
    rng = _MASK32
    out = []
    append = out.append
    for _ in range(count):
        r = rng >> FREQ_BITS
        v = code // r
        if v >= TOTAL:
            raise DecodeError("code value outside the model range")
        s = lookup[v]
        append(s)
        code -= cum[s] * r
        rng = freqs[s] * r
        while rng < _TOP:
            if pos >= n:
                raise DecodeError("stream ended early")
            code = ((code << 8) | data[pos]) & _MASK32
            pos += 1
            rng <<= 8
    if pos != n:
        raise DecodeError(f"{n - pos} unread bytes after the last symbol")
    return out


def _checksum(indices: np.ndarray) -> bytes:
    return _CRC.pack(zlib.crc32(np.ascontiguousarray(indices, dtype="<u4").tobytes()))


def entropy_encode(qv: QuantizedVector) -> bytes:
    level_set = qv.scheme.single_level_set
    if level_set is None:
        raise ValueError("entropy coding needs one level set for all coordinates")
    idx = np.asarray(qv.indices)
    if idx.size and (idx.min() < 0 or idx.max() >= level_set.size):
        raise ValueError("symbol outside the level set")
    if not idx.size:
        return b""
    return range_encode(idx.tolist(), model_for(level_set)) + _checksum(idx)


def entropy_decode(payload: bytes, level_set: LevelSet, D: int) -> np.ndarray:
    if D == 0:
        if payload:
            raise DecodeError("non-empty payload for D = 0")
        return np.zeros(0, dtype=np.int64)
    if len(payload) < _CRC.size:
        raise DecodeError("payload shorter than its checksum")
    stream, crc = payload[: -_CRC.size], payload[-_CRC.size :]
    indices = np.array(range_decode(stream, model_for(level_set), D), dtype=np.int64)
    if _checksum(indices) != crc:
        raise DecodeError("checksum mismatch")
    return indices
