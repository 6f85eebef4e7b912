"""Per-coordinate quantization schemes, nearest-level quantization and scales."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .levels import LevelSet, equal_interval_levels, lloyd_max_levels
from .rng import PURPOSE_SELECTION, RotationSeed
from .transform import RotatedVector

SCALE_MODES = ("unbiased", "min_vnmse")
DEGENERATE_INNER_PRODUCT = 1e-300


class DegenerateScaleError(ArithmeticError):
    """The scale formula would divide by (near) zero; callers fall back to S = 0."""


class ZeroVectorError(ValueError):
    """Quantization of an all-zero vector; handled by the single-flag zero path."""


def normalize_scale_mode(mode: str) -> str:
    m = mode.lower().replace("-", "_")
    if m in ("minvnmse", "min_vnmse", "min"):
        return "min_vnmse"
    if m == "unbiased":
        return "unbiased"
    raise ValueError(f"unknown scale mode {mode!r}")


class Scheme:
    """Assignment of a LevelSet to each of the ``D`` rotated coordinates.

    ``assignment[i]`` indexes into ``level_sets``.  ``segments()`` gives the
    run-length view.
    """

    def __init__(
        self,
        level_sets,
        assignment,
        nominal_bits: float,
        scale_mode: str = "unbiased",
        entropy_mode: bool = False,
    ):
        self.level_sets: tuple[LevelSet, ...] = tuple(level_sets)
        assignment = np.asarray(assignment, dtype=np.uint8)
        if assignment.ndim != 1 or assignment.size == 0:
            raise ValueError("assignment must be a non-empty 1-d array")
        if assignment.max() >= len(self.level_sets):
            raise ValueError("assignment refers to a missing level set")
        assignment.setflags(write=False)
        self.assignment = assignment
        used = {int(i) for i in np.unique(assignment)}
        if all(self.level_sets[i].size < 2 for i in used):
            raise ValueError("scheme needs at least one coordinate with two or more levels")
        self.nominal_bits = nominal_bits
        self.scale_mode = normalize_scale_mode(scale_mode)
        self.entropy_mode = entropy_mode
        if entropy_mode and len(used) != 1:
            raise ValueError("entropy mode requires a single level set for all coordinates")

    @classmethod
    def uniform(cls, level_set: LevelSet, D: int, scale_mode="unbiased", entropy_mode=False):
        bits = math.log2(level_set.size) if not entropy_mode else level_set.entropy_bits
        return cls([level_set], np.zeros(D, np.uint8), bits, scale_mode, entropy_mode)

    @property
    def D(self) -> int:
        return self.assignment.size

    @property
    def single_level_set(self) -> Optional[LevelSet]:
        used = np.unique(self.assignment)
        return self.level_sets[int(used[0])] if used.size == 1 else None

    def bit_widths(self) -> np.ndarray:
        widths = np.array([ls.bit_width for ls in self.level_sets], dtype=np.int64)
        return widths[self.assignment]

    @property
    def fixed_payload_bits(self) -> int:
        return int(self.bit_widths().sum())

    def segments(self) -> list[tuple[int, int, LevelSet]]:
        """Runs ``(start, stop, level_set)`` covering ``[0, D)``."""
        a = self.assignment
        cuts = np.flatnonzero(np.diff(a)) + 1
        starts = np.concatenate(([0], cuts))
        stops = np.concatenate((cuts, [a.size]))
        return [(int(s), int(e), self.level_sets[a[s]]) for s, e in zip(starts, stops)]

    def level_values(self, indices: np.ndarray) -> np.ndarray:
        """Unscaled level value of every coordinate."""
        out = np.empty(self.D)
        for k, ls in enumerate(self.level_sets):
            sel = self.assignment == k
            out[sel] = ls.levels[indices[sel]]
        return out

    def correlation_gains(self) -> np.ndarray:
        gains = np.array([ls.correlation_gain for ls in self.level_sets])
        return gains[self.assignment]

    def __repr__(self):
        runs = ", ".join(f"[{s}:{e})->{ls.kind}{ls.params}" for s, e, ls in self.segments())
        return f"Scheme(b={self.nominal_bits}, {self.scale_mode}, entropy={self.entropy_mode}, {runs})"


def build_scheme(
    b: float,
    D: int,
    scale_mode: str = "unbiased",
    entropy_mode: bool = False,
    selection: str = "first",
    selection_seed: Optional[RotationSeed] = None,
) -> Scheme:
    """Level-set assignment meeting an average budget of ``b`` bits per coordinate.

    In entropy mode with ``b > 1`` every coordinate uses the equal-interval
    lattice of entropy ``b``.  Otherwise ``floor(frac(b) * D)`` coordinates use
    ``Q_{2^(floor(b)+1)}`` and the rest ``Q_{2^floor(b)}``; ``Q_1 = {0}`` means
    the coordinate is not transmitted.  With ``selection="shared"`` the larger
    set goes to coordinates picked from the shared random stream instead of the
    first ones.
    """
    if not b > 0:
        raise ValueError(f"bit budget must be positive, got {b}")
    if D < 1:
        raise ValueError(f"dimension must be >= 1, got {D}")
    if entropy_mode and b > 1:
        return Scheme([equal_interval_levels(float(b))], np.zeros(D, np.uint8), b, scale_mode, True)
    whole = math.floor(b)
    n_high = math.floor((b - whole) * D)
    low = lloyd_max_levels(2**whole)
    high = lloyd_max_levels(2 ** (whole + 1))
    assignment = np.zeros(D, dtype=np.uint8)
    if selection == "first":
        assignment[:n_high] = 1
    elif selection == "shared":
        if selection_seed is None:
            raise ValueError("shared selection requires a selection_seed")
        words = selection_seed.words(D, PURPOSE_SELECTION)
        assignment[np.argsort(words, kind="stable")[:n_high]] = 1
    else:
        raise ValueError(f"unknown selection {selection!r}")
    if whole == 0 and n_high == 0:
        raise ValueError(f"budget b={b} transmits no coordinate at D={D}")
    return Scheme([low, high], assignment, b, scale_mode, False)


@dataclass
class QuantizedVector:
    """Level indices per coordinate plus the input norm.

    Coordinate ``i`` reconstructs to ``levels[indices[i]] * norm / sqrt(D)``,
    or to 0 when ``lost[i]`` is set.
    """

    indices: np.ndarray
    norm: float
    scheme: Scheme
    lost: Optional[np.ndarray] = None

    @property
    def D(self) -> int:
        return self.indices.size

    @property
    def unit(self) -> float:
        return self.norm / math.sqrt(self.D)

    def level_values(self) -> np.ndarray:
        vals = self.scheme.level_values(self.indices)
        if self.lost is not None:
            vals[self.lost] = 0.0
        return vals

    def dequantize(self) -> np.ndarray:
        return self.level_values() * self.unit


def round_half_away(v: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def nearest_level_indices(y: np.ndarray, level_set: LevelSet) -> np.ndarray:
    """Nearest level to each normalized value; ties go to the larger |level|."""
    if level_set.kind == "equal_interval":
        delta, n_max = level_set.params["delta"], level_set.params["n_max"]
        n = np.clip(round_half_away(y / delta), -n_max, n_max)
        return n.astype(np.int64) + n_max
    if level_set.size == 1:
        return np.zeros(y.shape, dtype=np.int64)
    mids = level_set.midpoints
    right = np.searchsorted(mids, y, side="right")
    left = np.searchsorted(mids, y, side="left")
    return np.where(y >= 0, right, left).astype(np.int64)


def quantize(r: RotatedVector, scheme: Scheme, norm: Optional[float] = None) -> QuantizedVector:
    """Map each rotated coordinate to its closest level scaled by ``norm / sqrt(D)``."""
    if r.D != scheme.D:
        raise ValueError(f"rotated dimension {r.D} does not match scheme dimension {scheme.D}")
    norm = r.norm if norm is None else float(norm)
    if norm == 0.0:
        raise ZeroVectorError("cannot quantize the zero vector")
    y = r.values * (math.sqrt(r.D) / norm)
    indices = np.empty(r.D, dtype=np.int64)
    for k, ls in enumerate(scheme.level_sets):
        sel = scheme.assignment == k
        if sel.any():
            indices[sel] = nearest_level_indices(y[sel], ls)
    return QuantizedVector(indices, norm, scheme)


def unbiased_scale(r: RotatedVector, qv: QuantizedVector) -> float:
    """``||x||^2 / <r, q>`` with the scaled level values."""
    ip = float(np.dot(r.values, qv.dequantize()))
    if ip <= DEGENERATE_INNER_PRODUCT:
        raise DegenerateScaleError(f"<r, q> = {ip:.3e}")
    return qv.norm**2 / ip


def min_vnmse_scale(r: RotatedVector, qv: QuantizedVector) -> float:
    """``<r, q> / ||q||^2``, the least-squares scale for the given quantization."""
    q = qv.dequantize()
    qq = float(np.dot(q, q))
    ip = float(np.dot(r.values, q))
    if qq == 0.0 or ip <= DEGENERATE_INNER_PRODUCT:
        raise DegenerateScaleError(f"<r, q> = {ip:.3e}, ||q||^2 = {qq:.3e}")
    return ip / qq


def compute_scale(r: RotatedVector, qv: QuantizedVector, mode: str) -> float:
    mode = normalize_scale_mode(mode)
    if mode == "unbiased":
        return unbiased_scale(r, qv)
    return min_vnmse_scale(r, qv)


def sse_closed_form(x_norm_sq: float, r: RotatedVector, qv: QuantizedVector, S: float) -> float:
    """``||x||^2 - 2 S <r, q> + S^2 ||q||^2``: the squared error of ``S * R^-1(q)``."""
    q = qv.dequantize()
    return x_norm_sq - 2.0 * S * float(np.dot(r.values, q)) + S * S * float(np.dot(q, q))
