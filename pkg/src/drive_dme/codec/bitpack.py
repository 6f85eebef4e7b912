"""Fixed-width MSB-first bit packing of per-coordinate level indices."""

from __future__ import annotations

import numpy as np

from ..quantizer import QuantizedVector, Scheme


class PayloadError(ValueError):
    pass


def pack_indices(indices: np.ndarray, widths: np.ndarray) -> bytes:
    """Write ``indices[i]`` in ``widths[i]`` bits, MSB first, coordinates in order."""
    indices = np.asarray(indices, dtype=np.int64)
    widths = np.asarray(widths, dtype=np.int64)
    W = int(widths.max(initial=0))
    if W == 0:
        return b""
    if np.any(indices >> widths):
        raise ValueError("index does not fit in its bit width")
    shifts = np.arange(W - 1, -1, -1, dtype=np.int64)
    bits = (indices[:, None] >> shifts) & 1
    keep = np.arange(W)[None, :] >= (W - widths)[:, None]
    return np.packbits(bits[keep].astype(np.uint8)).tobytes()


def unpack_indices(payload: bytes, widths: np.ndarray) -> np.ndarray:
    widths = np.asarray(widths, dtype=np.int64)
    total = int(widths.sum())
    bits = np.unpackbits(np.frombuffer(payload, dtype=np.uint8))
    ends = np.cumsum(widths)
    if bits.size < total:
        first = int(np.searchsorted(ends, bits.size, side="right"))
        raise PayloadError(
            f"payload holds {bits.size} bits but {total} are required; "
            f"coordinate {first} is the first one missing"
        )
    if len(payload) > (total + 7) // 8:
        raise PayloadError(f"payload has {len(payload) - (total + 7) // 8} trailing bytes")
    W = int(widths.max(initial=0))
    out = np.zeros(widths.size, dtype=np.int64)
    if W == 0:
        return out
    starts = ends - widths
    for j in range(W):
        # column j holds bit (W-1-j); only coordinates at least W-j bits wide have it
        has = widths >= W - j
        pos = starts[has] + (j - (W - widths[has]))
        out[has] |= bits[pos].astype(np.int64) << (W - 1 - j)
    return out


def _check_packable(scheme: Scheme) -> None:
    for ls in scheme.level_sets:
        if ls.size & (ls.size - 1):
            raise ValueError(
                f"fixed-width packing needs power-of-two level counts, got {ls.size} ({ls.kind})"
            )


def pack_fixed(qv: QuantizedVector) -> bytes:
    _check_packable(qv.scheme)
    return pack_indices(qv.indices, qv.scheme.bit_widths())


def unpack_fixed(payload: bytes, scheme: Scheme, D: int) -> np.ndarray:
    if scheme.D != D:
        raise ValueError(f"scheme dimension {scheme.D} does not match D={D}")
    _check_packable(scheme)
    return unpack_indices(payload, scheme.bit_widths())
