"""Kernel-smoothed word densities and the three categorization regimes.

Both engines route word assignment through :func:`assignment_probabilities`,
so the exemplar model and the field model share one definition of
competition, including the degenerate cases (all densities zero, ``p = 0``,
ties under winner-take-all).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .core import ConfigError, Regime

INFINITE_P = math.inf


@dataclass(frozen=True)
class SmoothingKernel:
    """Normalized exponential kernel ``c_d(k) * exp(-k |y|)`` on R^d."""

    k: float
    dim: int = 1

    def __post_init__(self):
        if not self.k > 0:
            raise ConfigError(f"kernel sharpness k must be > 0, got {self.k}")
        if self.dim not in (1, 2):
            raise ConfigError(f"kernel dimension must be 1 or 2, got {self.dim}")

    @property
    def norm_const(self) -> float:
        # integral of exp(-k|y|) is 2/k on R and 2*pi/k**2 on R^2
        if self.dim == 1:
            return self.k / 2
        return self.k * self.k / (2 * math.pi)

    def __call__(self, r):
        return self.norm_const * np.exp(-self.k * np.asarray(r, dtype=float))


def smoothed_density_at(positions, weights, y, kernel: SmoothingKernel) -> float:
    """Smoothed density of one word at ``y``: sum_i c w_i exp(-k |y - y_i|).

    ``weights`` are the current (already decayed) exemplar weights. An empty
    word has density zero.
    """
    w = np.asarray(weights, dtype=float)
    if w.size == 0:
        return 0.0
    pts = np.asarray(positions, dtype=float).reshape(w.size, -1)
    y = np.atleast_1d(np.asarray(y, dtype=float))
    r = np.sqrt(np.sum((pts - y) ** 2, axis=1))
    return float(kernel.norm_const * (w @ np.exp(-kernel.k * r)))


def _probabilities(s: list[float], p: float) -> list[float]:
    # plain floats: the exemplar engine calls this once per event with a handful of words
    for v in s:
        if not (v >= 0 and math.isfinite(v)):
            raise ValueError(f"smoothed densities must be finite and >= 0, got {s}")
    n = len(s)
    smax = max(s) if n else 0.0
    if smax == 0.0 or p == 0:
        return [1.0 / n] * n
    if math.isinf(p):
        top = [1.0 if v == smax else 0.0 for v in s]
    else:
        top = [(v / smax) ** p for v in s]
    total = sum(top)
    return [v / total for v in top]


def assignment_probabilities(s_values: Sequence[float], p: float) -> np.ndarray:
    """Probability that a new exemplar is claimed by each word.

    f_W = S_W**p / sum_V S_V**p. Inputs are rescaled by their maximum before
    exponentiation so large ``p`` cannot overflow. When every density is zero,
    or ``p == 0``, the result is uniform. ``p = inf`` puts all mass on the
    largest density, split evenly among ties.
    """
    s = [float(v) for v in np.asarray(s_values, dtype=float).ravel()]
    if not s:
        return np.empty(0)
    return np.array(_probabilities(s, p))


def assignment_field(smoothed: np.ndarray, p: float) -> np.ndarray:
    """Pointwise :func:`assignment_probabilities` over stacked fields (word axis 0)."""
    s = np.asarray(smoothed, dtype=float)
    n = s.shape[0]
    smax = s.max(axis=0)
    dead = smax <= 0.0
    if p == 0:
        return np.full_like(s, 1.0 / n)
    safe = np.where(dead, 1.0, smax)
    if math.isinf(p):
        top = (s == smax).astype(float)
    else:
        top = (s / safe) ** p
    top[:, dead] = 1.0
    return top / top.sum(axis=0)


def draw_index(probs: Sequence[float], rng: np.random.Generator) -> int:
    """Sample an index from a probability vector with a single uniform draw."""
    u = rng.random()
    acc = 0.0
    for i, pr in enumerate(probs):
        acc += pr
        if u < acc:
            return i
    return len(probs) - 1


def classify_index(
    source: int,
    densities: np.ndarray,
    regime: Regime,
    p: float,
    rng: np.random.Generator,
) -> int | None:
    """Index-based core of :func:`classify`; ``None`` means discarded."""
    if regime is Regime.NO_COMPETITION:
        return source
    winner = draw_index(_probabilities([float(v) for v in densities], p), rng)
    if regime is Regime.PURE_COMPETITION:
        return winner
    return source if winner == source else None


def classify(
    source: str,
    densities: Mapping[str, float],
    regime: Regime | str,
    p: float,
    rng: np.random.Generator,
) -> str | None:
    """Assign an exemplar produced by ``source`` to a word, or discard it.

    ``densities`` maps every word id to its smoothed density at the new
    exemplar's position. Returns the accepting word id, or ``None`` when the
    exemplar is discarded (only possible with competition and discards).
    """
    ids = list(densities)
    if source not in densities:
        raise ConfigError(f"unknown source word {source!r}; known words: {ids}")
    regime = Regime.parse(regime)
    s = np.array([densities[w] for w in ids], dtype=float)
    idx = classify_index(ids.index(source), s, regime, p, rng)
    return None if idx is None else ids[idx]
