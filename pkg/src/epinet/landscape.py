"""Synthetic epistemic landscapes.

A landscape is a Gaussian mixture over the unit hypercube. Its value at an
approach is the ground-truth significance; the perceived significance
discounts that value near approaches that have already been accepted.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError
from .utils import sq_dists

SCHEMA = "landscape/v1"


@dataclass(frozen=True)
class Approach:
    """A point in approach space, every coordinate in [0, 1]."""

    coords: tuple[float, ...]

    def __post_init__(self):
        coords = tuple(float(c) for c in self.coords)
        if len(coords) < 1:
            raise ValidationError("approach needs at least one coordinate")
        for c in coords:
            if not (0.0 <= c <= 1.0):
                raise ValidationError(f"coordinate {c!r} outside [0, 1]")
        object.__setattr__(self, "coords", coords)

    @property
    def dim(self) -> int:
        return len(self.coords)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.coords, dtype=float)

    @classmethod
    def clamped(cls, values: Iterable[float]) -> "Approach":
        return cls(tuple(min(1.0, max(0.0, float(v))) for v in values))


@dataclass(frozen=True)
class Peak:
    center: Approach
    height: float
    width: float


@dataclass(frozen=True)
class Landscape:
    dim: int
    peaks: tuple[Peak, ...]
    noise_floor: float = 0.0

    def __post_init__(self):
        if self.dim < 1:
            raise ValidationError("landscape dimension must be >= 1")
        if len(self.peaks) < 1:
            raise ValidationError("landscape needs at least one peak")
        if self.noise_floor < 0:
            raise ValidationError("noise_floor must be >= 0")
        for p in self.peaks:
            if p.center.dim != self.dim:
                raise ValidationError("peak center dimension mismatch")
            if not p.height > 0 or not p.width > 0:
                raise ValidationError("peak height and width must be > 0")
        object.__setattr__(self, "peaks", tuple(self.peaks))
        # cached arrays for vectorised evaluation
        object.__setattr__(self, "_centers", np.array([p.center.coords for p in self.peaks]))
        object.__setattr__(self, "_heights", np.array([p.height for p in self.peaks]))
        object.__setattr__(self, "_inv2w2", np.array([1.0 / (2.0 * p.width**2) for p in self.peaks]))

    def scaled(self, c: float) -> "Landscape":
        """Copy with every peak height multiplied by ``c``."""
        peaks = tuple(Peak(p.center, p.height * c, p.width) for p in self.peaks)
        return Landscape(self.dim, peaks, self.noise_floor)

    def values(self, points: np.ndarray) -> np.ndarray:
        """Ground-truth significance at each row of ``points`` (shape (n, dim))."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dim:
            raise ValidationError(f"expected dimension {self.dim}, got {points.shape[1]}")
        sq = ((points[:, None, :] - self._centers[None, :, :]) ** 2).sum(axis=2)
        return (self._heights * np.exp(-sq * self._inv2w2)).sum(axis=1) + self.noise_floor

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA,
            "dim": self.dim,
            "centers": [list(p.center.coords) for p in self.peaks],
            "heights": [p.height for p in self.peaks],
            "widths": [p.width for p in self.peaks],
            "noise_floor": self.noise_floor,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Landscape":
        if doc.get("schema") != SCHEMA:
            raise ValidationError(f"unsupported landscape schema {doc.get('schema')!r}")
        peaks = tuple(
            Peak(Approach(tuple(c)), float(h), float(w))
            for c, h, w in zip(doc["centers"], doc["heights"], doc["widths"])
        )
        return cls(int(doc["dim"]), peaks, float(doc["noise_floor"]))


@dataclass(frozen=True)
class PerceptionParams:
    decay_alpha: float = 0.5
    kernel_bandwidth: float = 0.1

    def __post_init__(self):
        if not (0.0 <= self.decay_alpha <= 1.0):
            raise ValidationError("decay_alpha must lie in [0, 1]")
        if not self.kernel_bandwidth > 0:
            raise ValidationError("kernel_bandwidth must be > 0")


def generate_landscape(dim: int, n_peaks: int, seed: int) -> Landscape:
    if dim < 1:
        raise ValidationError("dim must be >= 1")
    if n_peaks < 1:
        raise ValidationError("n_peaks must be >= 1")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_peaks, dim))
    heights = rng.uniform(0.2, 1.0, size=n_peaks)
    widths = rng.uniform(0.05, 0.3, size=n_peaks)
    peaks = tuple(
        Peak(Approach(tuple(c)), float(h), float(w)) for c, h, w in zip(centers, heights, widths)
    )
    return Landscape(dim, peaks, 0.0)


def _check_dim(landscape_dim: int, x: Approach):
    if x.dim != landscape_dim:
        raise ValidationError(f"approach has dimension {x.dim}, expected {landscape_dim}")


def _history_array(history: Sequence[Approach] | np.ndarray, dim: int) -> np.ndarray:
    if isinstance(history, np.ndarray):
        arr = history.reshape(-1, dim) if history.size else np.empty((0, dim))
        if arr.shape[1] != dim:
            raise ValidationError("history dimension mismatch")
        return arr
    for h in history:
        _check_dim(dim, h)
    if not history:
        return np.empty((0, dim))
    return np.array([h.coords for h in history], dtype=float)


def true_significance(landscape: Landscape, x: Approach) -> float:
    _check_dim(landscape.dim, x)
    return float(landscape.values(x.as_array()[None, :])[0])


def discount_factor(x: Approach, history, params: PerceptionParams) -> float:
    """Product of per-finding discounts at ``x``; 1.0 for an empty history."""
    hist = _history_array(history, x.dim)
    if len(hist) == 0:
        return 1.0
    sq = ((hist - x.as_array()) ** 2).sum(axis=1)
    k = np.exp(-sq / (2.0 * params.kernel_bandwidth**2))
    return float(np.prod(1.0 - params.decay_alpha * k))


def perceived_significance(
    landscape: Landscape, x: Approach, accepted_history, params: PerceptionParams
) -> float:
    _check_dim(landscape.dim, x)
    return true_significance(landscape, x) * discount_factor(x, accepted_history, params)


def novelty_of(x: Approach, accepted_history, params: PerceptionParams) -> float:
    hist = _history_array(accepted_history, x.dim)
    if len(hist) == 0:
        return 1.0
    sq = ((hist - x.as_array()) ** 2).sum(axis=1)
    return float(1.0 - np.exp(-sq.min() / (2.0 * params.kernel_bandwidth**2)))


def discount_factors(points: np.ndarray, history: np.ndarray, params: PerceptionParams) -> np.ndarray:
    """Vectorised :func:`discount_factor` for each row of ``points``."""
    points = np.atleast_2d(points)
    if len(history) == 0:
        return np.ones(len(points))
    sq = sq_dists(points, history)
    k = np.exp(-sq / (2.0 * params.kernel_bandwidth**2))
    return np.prod(1.0 - params.decay_alpha * k, axis=1)
