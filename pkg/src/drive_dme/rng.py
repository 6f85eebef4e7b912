"""Seed derivation and counter-based random streams shared by client and server.

Every random quantity in the data path comes from a Philox4x64-10 stream
keyed by ``(mix(global_seed, client_id, round), purpose)``.  Philox output is
fully specified (Random123), so identical keys give identical 64-bit words on
every platform.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_MASK32 = (1 << 32) - 1

# Purpose tags occupy the second Philox key word so streams never overlap.
PURPOSE_SIGNS = 0
PURPOSE_SELECTION = 1
PURPOSE_ORACLE = 2
PURPOSE_LOSS = 3
PURPOSE_INPUT = 4


def splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def mix_seed(global_seed: int, client_id: int, round: int) -> int:
    """Platform-independent 64-bit mix of (global_seed, client_id, round)."""
    if not 0 <= global_seed <= _MASK64:
        raise ValueError(f"global_seed must fit in 64 bits, got {global_seed}")
    if not 0 <= client_id <= _MASK32:
        raise ValueError(f"client_id must fit in 32 bits, got {client_id}")
    if not 0 <= round <= _MASK32:
        raise ValueError(f"round must fit in 32 bits, got {round}")
    h = splitmix64(global_seed)
    h = splitmix64(h ^ client_id)
    return splitmix64(h ^ (round << 32))


@dataclass(frozen=True)
class RotationSeed:
    global_seed: int
    client_id: int = 0
    round: int = 0

    @property
    def stream_seed(self) -> int:
        return mix_seed(self.global_seed, self.client_id, self.round)

    def bit_generator(self, purpose: int = PURPOSE_SIGNS) -> np.random.Philox:
        return np.random.Philox(key=np.array([self.stream_seed, purpose], dtype=np.uint64))

    def words(self, count: int, purpose: int = PURPOSE_SIGNS) -> np.ndarray:
        """First ``count`` 64-bit words of the stream for ``purpose``."""
        return self.bit_generator(purpose).random_raw(count)

    def generator(self, purpose: int) -> np.random.Generator:
        return np.random.Generator(self.bit_generator(purpose))
