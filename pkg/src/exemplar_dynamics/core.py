"""Shared types, weighted statistics and closed-form reference quantities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Sequence

import numpy as np


class ConfigError(ValueError):
    """Invalid model, scenario or command-line configuration."""


class DegenerateStatistics(ValueError):
    """A weighted statistic was requested for zero total weight."""


class NoFiniteEquilibrium(ValueError):
    """alpha + beta lies on the boundary of (0, 2); the dispersion diverges."""


class EmptyWordError(LookupError):
    """A production event was drawn for a word with no live exemplars."""


class StabilityError(ValueError):
    """Time step too large for the explicit scheme."""


class InsufficientData(ValueError):
    """A diagnostics series is too short for the requested analysis."""


class Regime(str, Enum):
    NO_COMPETITION = "no-competition"
    PURE_COMPETITION = "pure-competition"
    DISCARDS = "competition-with-discards"

    @classmethod
    def parse(cls, value: "str | Regime") -> "Regime":
        if isinstance(value, Regime):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {
            "nocompetition": cls.NO_COMPETITION,
            "none": cls.NO_COMPETITION,
            "purecompetition": cls.PURE_COMPETITION,
            "pure": cls.PURE_COMPETITION,
            "competitionwithdiscards": cls.DISCARDS,
            "discards": cls.DISCARDS,
        }
        if key not in aliases:
            raise ConfigError(
                f"unknown regime {value!r}; expected one of {[m.value for m in cls]}"
            )
        return aliases[key]


def as_point(value, dim: int | None = None) -> np.ndarray:
    """Coerce a scalar or sequence to a 1-d float array of phonetic coordinates."""
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"phonetic point must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ValueError(f"expected a {dim}-d point, got {arr.shape[0]} coordinates")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"non-finite phonetic coordinates: {arr}")
    return arr


@dataclass(frozen=True)
class WordParams:
    """One word: its production rate and where its initial exemplars sit.

    ``init_count`` exemplars of weight ``w0`` are placed at ``init_position``.
    """

    id: str
    nu: float
    init_position: tuple[float, ...] = (0.0,)
    init_count: int = 1


@dataclass(frozen=True)
class ModelParams:
    lam: float
    words: tuple[WordParams, ...]
    w0: float
    alpha: float = 0.0
    beta: float = 0.1
    sigma: float = 1.0
    y_star: tuple[float, ...] = (0.0,)
    k: float = 10.0
    p: float = 1.0
    regime: Regime = Regime.NO_COMPETITION
    prune_threshold: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime.parse(self.regime))
        object.__setattr__(self, "words", tuple(self.words))
        object.__setattr__(self, "y_star", tuple(float(v) for v in np.atleast_1d(self.y_star)))
        self.validate()

    def validate(self) -> None:
        if not self.lam > 0:
            raise ConfigError(f"model.lam must be > 0, got {self.lam}")
        if not self.w0 > 0:
            raise ConfigError(f"model.w0 must be > 0, got {self.w0}")
        if not self.sigma >= 0:
            raise ConfigError(f"model.sigma must be >= 0, got {self.sigma}")
        if not self.k > 0:
            raise ConfigError(f"model.k must be > 0, got {self.k}")
        if not self.p >= 0:
            raise ConfigError(f"model.p must be >= 0, got {self.p}")
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError("model.alpha and model.beta must be >= 0")
        if not 0 < self.alpha + self.beta < 2:
            raise ConfigError(
                "model.alpha + model.beta must lie in (0, 2) for a finite equilibrium "
                f"dispersion, got {self.alpha + self.beta}"
            )
        if self.dim not in (1, 2):
            raise ConfigError(f"model.y_star must have 1 or 2 coordinates, got {self.dim}")
        if not self.words:
            raise ConfigError("at least one word is required")
        ids = [w.id for w in self.words]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate word ids: {ids}")
        for i, w in enumerate(self.words):
            if not (w.nu >= 0 and math.isfinite(w.nu)):
                raise ConfigError(f"words[{i}].nu must be finite and >= 0, got {w.nu}")
            if len(w.init_position) != self.dim:
                raise ConfigError(
                    f"words[{i}].init_position has {len(w.init_position)} coordinates, "
                    f"model is {self.dim}-d"
                )
            if w.init_count < 1:
                raise ConfigError(f"words[{i}].init_count must be >= 1")
        if not sum(w.nu for w in self.words) > 0:
            raise ConfigError("words: at least one word needs nu > 0")
        if self.prune_threshold is not None and self.prune_threshold < 0:
            raise ConfigError("model.prune_threshold must be >= 0")

    @property
    def dim(self) -> int:
        return len(self.y_star)

    @property
    def word_ids(self) -> list[str]:
        return [w.id for w in self.words]

    @property
    def nus(self) -> np.ndarray:
        return np.array([w.nu for w in self.words])

    @property
    def mus(self) -> np.ndarray:
        """Weight influx per word, nu * w0."""
        return self.nus * self.w0

    @property
    def prune_cutoff(self) -> float:
        return self.w0 * 1e-3 if self.prune_threshold is None else self.prune_threshold

    def with_(self, **changes) -> "ModelParams":
        return replace(self, **changes)


@dataclass
class DiagnosticsRow:
    t: float
    means: dict[str, np.ndarray]
    dispersions: dict[str, float]
    total_weights: dict[str, float]
    live_counts: dict[str, int] | None = None
    discard_counts: dict[str, int] | None = None
    extra: dict = field(default_factory=dict)


def _check_weights(points, weights):
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.shape[0] != pts.shape[0]:
        raise ValueError(f"{pts.shape[0]} points but {w.size} weights")
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise DegenerateStatistics("total weight is zero")
    return pts, w, total


def weighted_mean(points: Sequence, weights: Sequence[float]) -> np.ndarray:
    """Componentwise weighted mean; ``points`` is (n,) or (n, D)."""
    pts, w, total = _check_weights(points, weights)
    return w @ pts / total


def dispersion(points: Sequence, weights: Sequence[float]) -> float:
    """Weighted RMS Euclidean distance to the weighted mean."""
    pts, w, total = _check_weights(points, weights)
    mean = w @ pts / total
    sq = np.sum((pts - mean) ** 2, axis=1)
    return float(math.sqrt(max(w @ sq / total, 0.0)))


def equilibrium_dispersion(sigma: float, alpha: float, beta: float) -> float:
    """Width of the Gaussian single-word equilibrium.

    Only alpha + beta enters: s = sigma / sqrt(1 - (1 - (alpha + beta))**2).
    """
    g = alpha + beta
    denom = 1.0 - (1.0 - g) ** 2
    if not denom > 0:
        raise NoFiniteEquilibrium(f"alpha + beta = {g} gives no finite equilibrium")
    return sigma / math.sqrt(denom)


def equilibrium_density(y, mass: float, center, s: float) -> np.ndarray:
    """Isotropic Gaussian with total ``mass``, evaluated at points ``y`` of shape (..., D)."""
    y = np.asarray(y, dtype=float)
    center = np.atleast_1d(np.asarray(center, dtype=float))
    d = center.shape[0]
    r2 = np.sum((y - center) ** 2, axis=-1)
    return mass * np.exp(-r2 / (2 * s * s)) / (2 * math.pi * s * s) ** (d / 2)


def analytic_total_weight(t, m0: float, mu: float, lam: float):
    """Exact solution of dM/dt = -lam M + mu with M(0) = m0."""
    eq = mu / lam
    return eq + (m0 - eq) * np.exp(-lam * np.asarray(t, dtype=float))


def analytic_mean(t: float, y0, y_star, lam: float, beta: float) -> np.ndarray:
    """Weighted mean relaxing to y_star at rate lam*beta (valid once M = mu/lam)."""
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    y_star = np.atleast_1d(np.asarray(y_star, dtype=float))
    return y_star + (y0 - y_star) * math.exp(-lam * beta * t)
