"""Seeded random rotations: randomized Hadamard transform and a dense Haar oracle."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import PURPOSE_ORACLE, PURPOSE_SIGNS, RotationSeed

MAX_ORACLE_DIM = 256


@dataclass(frozen=True)
class RotatedVector:
    """Rotated coordinates; ``values`` has the padded dimension ``D``."""

    values: np.ndarray
    original_dim: int

    @property
    def D(self) -> int:
        return self.values.shape[-1]

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def next_power_of_two(n: int) -> int:
    if n < 1:
        raise ValueError(f"dimension must be >= 1, got {n}")
    return 1 << (n - 1).bit_length()


def _as_finite_vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ValueError(f"expected a non-empty 1-d vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input vector contains non-finite values")
    return x


def fwht(a: np.ndarray) -> np.ndarray:
    """Orthonormal Walsh-Hadamard transform along the last axis, in place.

    The last axis must be a power of two.  Uses plain butterflies so the result
    is bit-identical wherever IEEE double arithmetic is.
    """
    D = a.shape[-1]
    if D & (D - 1):
        raise ValueError(f"Hadamard dimension must be a power of two, got {D}")
    lead = a.shape[:-1]
    h = 1
    while h < D:
        v = a.reshape(*lead, D // (2 * h), 2, h)
        top = v[..., 0, :].copy()
        bottom = v[..., 1, :]
        v[..., 0, :] += bottom
        top -= bottom
        v[..., 1, :] = top
        h *= 2
    a *= 1.0 / np.sqrt(D)
    return a


def rademacher_signs(seed: RotationSeed, D: int, rounds: int = 1) -> np.ndarray:
    """``(rounds, D)`` array of +-1; low bit 0 of each stream word maps to +1."""
    words = seed.words(rounds * D, PURPOSE_SIGNS)
    signs = 1.0 - 2.0 * (words & np.uint64(1)).astype(np.float64)
    return signs.reshape(rounds, D)


def randomized_hadamard(x_padded: np.ndarray, signs: np.ndarray) -> np.ndarray:
    out = np.array(x_padded, dtype=np.float64)
    for s in np.atleast_2d(signs):
        out *= s
        fwht(out)
    return out


def randomized_hadamard_inverse(values: np.ndarray, signs: np.ndarray) -> np.ndarray:
    out = np.array(values, dtype=np.float64)
    for s in np.atleast_2d(signs)[::-1]:
        fwht(out)
        out *= s
    return out


class HadamardRotation:
    """Sign flips followed by the orthonormal Hadamard transform, ``rounds`` times."""

    kind = "hadamard"

    def __init__(self, seed: RotationSeed, d: int, rounds: int = 1):
        if rounds < 1:
            raise ValueError("rounds must be >= 1")
        self.seed = seed
        self.d = d
        self.D = next_power_of_two(d)
        self.rounds = rounds
        self.signs = rademacher_signs(seed, self.D, rounds)

    def forward(self, x) -> RotatedVector:
        x = _as_finite_vector(x)
        if x.size != self.d:
            raise ValueError(f"expected dimension {self.d}, got {x.size}")
        padded = np.zeros(self.D)
        padded[: self.d] = x
        return RotatedVector(randomized_hadamard(padded, self.signs), self.d)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Full padded-dimension inverse (no truncation)."""
        return randomized_hadamard_inverse(values, self.signs)


def uniform_rotation_matrix(d: int, seed: RotationSeed) -> np.ndarray:
    """Haar-distributed orthogonal matrix from the seeded stream (QR, positive diag(R))."""
    if d > MAX_ORACLE_DIM:
        raise ValueError(f"uniform rotation oracle limited to d <= {MAX_ORACLE_DIM}, got {d}")
    if d < 1:
        raise ValueError(f"dimension must be >= 1, got {d}")
    g = seed.generator(PURPOSE_ORACLE).standard_normal((d, d))
    q, r = np.linalg.qr(g)
    return q * np.where(np.diag(r) < 0, -1.0, 1.0)


class UniformRotation:
    """Dense exact uniform rotation; O(d^3), for tests and small-d studies."""

    kind = "uniform"

    def __init__(self, seed: RotationSeed, d: int):
        self.seed = seed
        self.d = d
        self.D = d
        self.matrix = uniform_rotation_matrix(d, seed)

    def forward(self, x) -> RotatedVector:
        x = _as_finite_vector(x)
        if x.size != self.d:
            raise ValueError(f"expected dimension {self.d}, got {x.size}")
        return RotatedVector(self.matrix @ x, self.d)

    def inverse(self, values: np.ndarray) -> np.ndarray:
        return self.matrix.T @ values


def make_rotation(kind: str, seed: RotationSeed, d: int, rounds: int = 1):
    if kind == "hadamard":
        return HadamardRotation(seed, d, rounds)
    if kind in ("uniform", "uniform_oracle"):
        return UniformRotation(seed, d)
    raise ValueError(f"unknown rotation kind {kind!r}")


def hadamard_forward(x, seed: RotationSeed, rounds: int = 1) -> RotatedVector:
    x = _as_finite_vector(x)
    return HadamardRotation(seed, x.size, rounds).forward(x)


def hadamard_inverse(r: RotatedVector, seed: RotationSeed, rounds: int = 1) -> np.ndarray:
    D = r.values.shape[-1]
    if D < 1 or D & (D - 1):
        raise ValueError(f"rotated dimension must be a power of two, got {D}")
    signs = rademacher_signs(seed, D, rounds)
    return randomized_hadamard_inverse(r.values, signs)[: r.original_dim]


def uniform_rotation_oracle(x, seed: RotationSeed) -> tuple[RotatedVector, UniformRotation]:
    x = _as_finite_vector(x)
    rot = UniformRotation(seed, x.size)
    return rot.forward(x), rot
