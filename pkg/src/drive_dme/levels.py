"""Quantization level sets for N(0, 1): Lloyd-Max, equal-interval lattices, two-point."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

_SQRT_2PI = math.sqrt(2.0 * math.pi)

DELTA_MIN = 1e-4
DELTA_MAX = 20.0
LATTICE_REACH = 10.0
MAX_LLOYD_ITERATIONS = 10_000


class ConvergenceError(RuntimeError):
    pass


def _pdf(t: np.ndarray) -> np.ndarray:
    # exp(-inf) = 0 handles the unbounded outer cells.
    with np.errstate(over="ignore"):
        return np.exp(-0.5 * t * t) / _SQRT_2PI


def _t_pdf(t: np.ndarray) -> np.ndarray:
    """t * phi(t) with the limit 0 at +-inf."""
    out = np.zeros_like(t)
    finite = np.isfinite(t)
    out[finite] = t[finite] * _pdf(t[finite])
    return out


def _cell_mass(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # Take differences on the side of zero where the CDF is small to avoid cancellation.
    upper = a >= 0
    return np.where(upper, ndtr(-a) - ndtr(-b), ndtr(b) - ndtr(a))


def _boundaries(levels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mids = 0.5 * (levels[:-1] + levels[1:])
    lo = np.concatenate(([-np.inf], mids))
    hi = np.concatenate((mids, [np.inf]))
    return lo, hi


def level_set_stats(levels) -> tuple[np.ndarray, float, float]:
    """Cell probabilities, entropy (bits) and expected squared error under N(0, 1).

    Cells are the Voronoi cells of the sorted levels.  The squared error uses the
    truncated-normal moments ``int t^2 dPhi = mass + a phi(a) - b phi(b)`` and
    ``int t dPhi = phi(a) - phi(b)``, so no quadrature is involved.
    """
    levels = np.asarray(levels, dtype=np.float64)
    if levels.ndim != 1 or levels.size == 0:
        raise ValueError("levels must be a non-empty 1-d array")
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing (no duplicates)")
    lo, hi = _boundaries(levels)
    mass = _cell_mass(lo, hi)
    first = _pdf(lo) - _pdf(hi)
    second = mass + _t_pdf(lo) - _t_pdf(hi)
    sq_err = float(np.sum(second - 2.0 * levels * first + levels * levels * mass))
    nz = mass > 0
    entropy = float(-np.sum(mass[nz] * np.log2(mass[nz]))) + 0.0
    return mass, entropy, max(sq_err, 0.0)


@dataclass(frozen=True, eq=False)
class LevelSet:
    """A sorted, sign-symmetric set of levels with its N(0, 1) statistics."""

    levels: np.ndarray
    kind: str
    params: dict = field(default_factory=dict)
    probabilities: np.ndarray = field(init=False, repr=False)
    entropy_bits: float = field(init=False)
    expected_sq_error: float = field(init=False)

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        levels.setflags(write=False)
        if not np.array_equal(levels, -levels[::-1]):
            raise ValueError("level set is not sign-symmetric")
        p, h, v = level_set_stats(levels)
        p.setflags(write=False)
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "probabilities", p)
        object.__setattr__(self, "entropy_bits", h)
        object.__setattr__(self, "expected_sq_error", v)

    @property
    def size(self) -> int:
        return self.levels.size

    @property
    def bit_width(self) -> int:
        """Bits per coordinate in fixed-width packing (0 for a single level)."""
        return (self.size - 1).bit_length()

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.levels[:-1] + self.levels[1:])

    @property
    def correlation_gain(self) -> float:
        """E[t * Q(t)] for t ~ N(0, 1); the expected per-coordinate <r, q> / sigma^2."""
        lo, hi = _boundaries(self.levels)
        return float(np.sum(self.levels * (_pdf(lo) - _pdf(hi))))

    @property
    def key(self) -> tuple:
        return (self.kind, tuple(sorted(self.params.items())))

    def __eq__(self, other):
        if not isinstance(other, LevelSet):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.levels, other.levels)

    def __hash__(self):
        return hash((self.kind, self.levels.tobytes()))

    def table(self) -> str:
        """``level<TAB>probability`` rows with 17 significant digits."""
        rows = [f"{q:.17g}\t{p:.17g}" for q, p in zip(self.levels, self.probabilities)]
        return "\n".join(rows)


def _symmetrize(levels: np.ndarray) -> np.ndarray:
    return 0.5 * (levels - levels[::-1])


@functools.lru_cache(maxsize=None)
def lloyd_max_levels(z: int, tol: float = 1e-12) -> LevelSet:
    """Lloyd-Max optimal ``z``-level quantizer for N(0, 1).

    Starts at the Gaussian quantiles ``Phi^-1((i + 0.5) / z)`` and alternates
    midpoint boundaries with closed-form cell centroids until no level moves by
    more than ``tol``.
    """
    if z < 1:
        raise ValueError(f"number of levels must be >= 1, got {z}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if z == 1:
        return LevelSet(np.zeros(1), "lloyd_max", {"z": 1})
    levels = ndtri((np.arange(z) + 0.5) / z)
    for _ in range(MAX_LLOYD_ITERATIONS):
        lo, hi = _boundaries(levels)
        updated = (_pdf(lo) - _pdf(hi)) / _cell_mass(lo, hi)
        moved = float(np.max(np.abs(updated - levels)))
        levels = updated
        if moved < tol:
            break
    else:
        raise ConvergenceError(
            f"Lloyd-Max for z={z} did not converge in {MAX_LLOYD_ITERATIONS} iterations "
            f"(last movement {moved:.3e})"
        )
    return LevelSet(_symmetrize(levels), "lloyd_max", {"z": z})


def two_point_levels(psi: float) -> LevelSet:
    if psi <= 0:
        raise ValueError("psi must be positive")
    return LevelSet(np.array([-psi, psi]), "two_point", {"psi": psi})


ZERO_LEVELS = LevelSet(np.zeros(1), "zero", {})


def lattice_levels(delta: float) -> np.ndarray:
    n_max = math.ceil(LATTICE_REACH / delta)
    return delta * np.arange(-n_max, n_max + 1, dtype=np.float64)


def lattice_entropy(delta: float) -> float:
    p, _ = _lattice_masses(delta)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log2(p[nz]))) + 0.0


def _lattice_masses(delta: float):
    levels = lattice_levels(delta)
    lo, hi = _boundaries(levels)
    return _cell_mass(lo, hi), levels


@functools.lru_cache(maxsize=None)
def equal_interval_levels(b: float, tol: float = 1e-10, epsilon: float = 0.0) -> LevelSet:
    """Lattice ``{n * delta : |n| <= ceil(10 / delta)}`` whose entropy is ``b - epsilon``.

    ``delta`` is found by bisection on ``[1e-4, 20]``; entropy decreases as the
    spacing grows.
    """
    target = b - epsilon
    if b <= 0 or target <= 0:
        raise ValueError(f"entropy target must be positive, got b={b}, epsilon={epsilon}")
    lo, hi = DELTA_MIN, DELTA_MAX
    h_lo, h_hi = lattice_entropy(lo), lattice_entropy(hi)
    if not h_hi < target < h_lo:
        raise ValueError(
            f"entropy target {target} outside the bracketed range ({h_hi:.3g}, {h_lo:.3g})"
        )
    delta = 0.5 * (lo + hi)
    for _ in range(200):
        delta = 0.5 * (lo + hi)
        h = lattice_entropy(delta)
        if abs(h - target) < tol:
            break
        if h > target:
            lo = delta
        else:
            hi = delta
        if hi - lo < 1e-15:
            break
    n_max = math.ceil(LATTICE_REACH / delta)
    return LevelSet(lattice_levels(delta), "equal_interval", {"delta": delta, "n_max": n_max})
