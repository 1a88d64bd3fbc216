"""Event-driven stochastic engine for the exemplar-level model.

Weights are never stored. An exemplar created at ``t_i`` weighs
``w0 * exp(-lam * (t - t_i))`` at time ``t``; every exemplar shares the
decay factor, so the store keeps *relative* weights
``exp(lam * (t_i - t_ref))`` and multiplies by ``w0 * exp(-lam * (t - t_ref))``
only when an absolute weight is needed. ``t_ref`` is moved forward (and all
cached sums rescaled) before the relative weights can overflow.

Exemplars of a word are appended in creation order, so their relative
weights increase along the array. Weight-proportional sampling is then a
binary search in a running prefix sum, and pruning always removes a prefix.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _kernels
from .categorize import SmoothingKernel, classify_index, draw_index
from .core import (
    ConfigError,
    DiagnosticsRow,
    EmptyWordError,
    ModelParams,
    Regime,
)
from .core import dispersion as weighted_dispersion
from .core import weighted_mean

# relative weights stay below exp(50) and kernel factors below exp(300), so
# the 1-d factored sums stay far from overflow and underflow
RENEW_EXPONENT = 50.0
FACTOR_LIMIT = 300.0


@dataclass(frozen=True)
class Exemplar:
    position: np.ndarray
    created_at: float
    word: str


class WordStore:
    """Live exemplars of one word, oldest first."""

    def __init__(self, dim: int, capacity: int = 1024):
        self.dim = dim
        self.n = 0
        self.pos = np.empty((capacity, dim))
        self.born = np.empty(capacity)
        self.rel = np.empty(capacity)
        self.cum = np.empty(capacity)
        # rel * exp(+-k (pos - center)); only maintained for 1-d stores
        self.left = np.empty(capacity)
        self.right = np.empty(capacity)
        self.sum_rel_y = np.zeros(dim)

    @property
    def sum_rel(self) -> float:
        return float(self.cum[self.n - 1]) if self.n else 0.0

    def _grow(self) -> None:
        cap = 2 * len(self.born)
        for name in ("pos", "born", "rel", "cum", "left", "right"):
            old = getattr(self, name)
            new = np.empty((cap,) + old.shape[1:])
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def append(self, y: np.ndarray, born: float, rel: float, ep: float, em: float) -> None:
        if self.n == len(self.born):
            self._grow()
        i = self.n
        self.pos[i] = y
        self.born[i] = born
        self.rel[i] = rel
        self.cum[i] = rel + (self.cum[i - 1] if i else 0.0)
        self.left[i] = rel * ep
        self.right[i] = rel * em
        self.sum_rel_y += rel * y
        self.n += 1

    def drop_oldest(self, count: int) -> None:
        if count <= 0:
            return
        keep = self.n - count
        for name in ("pos", "born", "rel", "left", "right"):
            arr = getattr(self, name)
            arr[:keep] = arr[count : self.n]
        self.n = keep
        self.recompute()

    def recompute(self) -> None:
        """Rebuild prefix sums and the weighted coordinate sum from scratch."""
        n = self.n
        np.cumsum(self.rel[:n], out=self.cum[:n])
        self.sum_rel_y = self.rel[:n] @ self.pos[:n] if n else np.zeros(self.dim)

    def rescale(self, factor: float) -> None:
        n = self.n
        self.rel[:n] *= factor
        self.cum[:n] *= factor
        self.left[:n] *= factor
        self.right[:n] *= factor
        self.sum_rel_y = self.sum_rel_y * factor

    def mean(self) -> np.ndarray:
        return self.sum_rel_y / self.sum_rel


class ExemplarStore:
    """Per-word exemplar collections with lazily decayed weights."""

    def __init__(self, word_ids: Sequence[str], dim: int, lam: float, w0: float, k: float,
                 center=None):
        self.word_ids = list(word_ids)
        self.dim = dim
        self.lam = lam
        self.w0 = w0
        self.kernel = SmoothingKernel(k, dim)
        self.t_ref = 0.0
        self.words = [WordStore(dim) for _ in self.word_ids]
        self.center = 0.0 if center is None else float(np.atleast_1d(center)[0])
        self.factored = dim == 1

    def index(self, word: str) -> int:
        try:
            return self.word_ids.index(word)
        except ValueError:
            raise ConfigError(f"unknown word {word!r}; known words: {self.word_ids}") from None

    # -- weights -----------------------------------------------------------

    def decay(self, t: float) -> float:
        """Absolute weight of relative weight 1 at time ``t``."""
        return self.w0 * math.exp(-self.lam * (t - self.t_ref))

    def relative_weight(self, t: float) -> float:
        if self.lam * (t - self.t_ref) > RENEW_EXPONENT:
            self.renew(t)
        return math.exp(self.lam * (t - self.t_ref))

    def renew(self, t: float) -> None:
        factor = math.exp(-self.lam * (t - self.t_ref))
        for ws in self.words:
            ws.rescale(factor)
        self.t_ref = t

    def weights(self, i: int, t: float) -> np.ndarray:
        ws = self.words[i]
        return self.w0 * np.exp(-self.lam * (t - ws.born[: ws.n]))

    def total_weight(self, i: int, t: float) -> float:
        return self.decay(t) * self.words[i].sum_rel

    def mean(self, i: int) -> np.ndarray:
        return self.words[i].mean()

    # -- mutation ----------------------------------------------------------

    def _factors(self, y: np.ndarray) -> tuple[float, float]:
        if not self.factored:
            return 1.0, 1.0
        x = self.kernel.k * (y[0] - self.center)
        if abs(x) > FACTOR_LIMIT:
            self.recenter(y[0])
            x = self.kernel.k * (y[0] - self.center)
            if not self.factored:
                return 1.0, 1.0
        return math.exp(x), math.exp(-x)

    def add(self, i: int, y: np.ndarray, t: float) -> None:
        rel = self.relative_weight(t)
        ep, em = self._factors(y)
        self.words[i].append(y, t, rel, ep, em)

    def recenter(self, center: float) -> None:
        """Move the expansion point of the 1-d factored kernel sums."""
        self.center = float(center)
        k = self.kernel.k
        self.factored = True
        for ws in self.words:
            x = k * (ws.pos[: ws.n, 0] - self.center)
            if x.size and np.max(np.abs(x)) > FACTOR_LIMIT:
                self.factored = False
                return
        for ws in self.words:
            x = k * (ws.pos[: ws.n, 0] - self.center)
            ws.left[: ws.n] = ws.rel[: ws.n] * np.exp(x)
            ws.right[: ws.n] = ws.rel[: ws.n] * np.exp(-x)

    def prune(self, t: float, threshold: float) -> int:
        """Remove exemplars whose weight at ``t`` is below ``threshold``."""
        removed = 0
        for i, ws in enumerate(self.words):
            if ws.n == 0 or threshold <= 0:
                continue
            count = int(np.searchsorted(self.weights(i, t), threshold, side="left"))
            ws.drop_oldest(count)
            removed += count
        if self.dim == 1:
            live = [ws.pos[: ws.n, 0] for ws in self.words if ws.n]
            if live:
                allpos = np.concatenate(live)
                lo, hi = allpos.min(), allpos.max()
                k = self.kernel.k
                if not self.factored or max(abs(lo - self.center), abs(hi - self.center)) * k > 0.8 * FACTOR_LIMIT:
                    self.recenter(0.5 * (lo + hi))
        return removed

    # -- queries -----------------------------------------------------------

    def smoothed_density(self, i: int, y: np.ndarray, t: float) -> float:
        """Smoothed density of word ``i`` at ``y`` using the decayed weights at ``t``."""
        ws = self.words[i]
        if ws.n == 0:
            return 0.0
        k = self.kernel.k
        if self.factored:
            x = k * (y[0] - self.center)
            if abs(x) <= FACTOR_LIMIT:
                lower, upper = _kernels.split_sums(ws.pos[:, 0], ws.left, ws.right, ws.n, y[0])
                s = lower * math.exp(-x) + upper * math.exp(x)
                return self.kernel.norm_const * self.decay(t) * s
        s = _kernels.kernel_sum(ws.pos, ws.rel, ws.n, np.asarray(y, dtype=float), k)
        return self.kernel.norm_const * self.decay(t) * s

    def sample(self, i: int, u: float) -> int:
        """Index of the exemplar selected by uniform variate ``u`` in [0, 1)."""
        ws = self.words[i]
        if ws.n == 0:
            raise EmptyWordError(f"word {self.word_ids[i]!r} has no live exemplars")
        target = u * ws.cum[ws.n - 1]
        j = int(np.searchsorted(ws.cum[: ws.n], target, side="right"))
        return min(j, ws.n - 1)

    def live(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        ws = self.words[i]
        return ws.pos[: ws.n], ws.born[: ws.n]

    def digest(self) -> str:
        h = hashlib.sha256()
        for ws in self.words:
            h.update(np.ascontiguousarray(ws.pos[: ws.n]).tobytes())
            h.update(np.ascontiguousarray(ws.born[: ws.n]).tobytes())
        return h.hexdigest()


def produce(z, word_mean, params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    """New phonetic value copied from ``z`` with entrenchment, lenition and noise."""
    zs = np.asarray(z, dtype=float).tolist()
    ms = np.asarray(word_mean, dtype=float).tolist()
    a, b, sig = params.alpha, params.beta, params.sigma
    noise = rng.standard_normal(len(zs)).tolist() if sig > 0 else None
    y = [zi + a * (mi - zi) + b * (si - zi) for zi, mi, si in zip(zs, ms, params.y_star)]
    if noise is not None:
        y = [yi + sig * ni for yi, ni in zip(y, noise)]
    return np.array(y)


@dataclass
class Counters:
    produced: np.ndarray
    accepted: np.ndarray
    discarded: np.ndarray
    skipped: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> "Counters":
        return cls(*(np.zeros(n, dtype=np.int64) for _ in range(4)))


@dataclass
class SimState:
    params: ModelParams
    store: ExemplarStore
    seed: int
    t: float = 0.0
    counters: Counters = None
    streams: dict = field(default_factory=dict)
    pending: tuple[float, int] | None = None
    next_prune: float = 1.0
    source_probs: list | None = None
    total_rate: float = 0.0

    def digest(self) -> str:
        h = hashlib.sha256(self.store.digest().encode())
        h.update(repr(self.t).encode())
        for arr in (self.counters.produced, self.counters.accepted,
                    self.counters.discarded, self.counters.skipped):
            h.update(arr.tobytes())
        return h.hexdigest()


STREAMS = ("clock", "source", "noise", "classify")


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent counter-based (Philox) streams, one per purpose."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


def init(
    params: ModelParams,
    seed: int,
    initial: dict[str, Sequence] | None = None,
    created_at: dict[str, Sequence[float]] | None = None,
) -> SimState:
    """Build a simulation state.

    ``initial`` maps word ids to sequences of positions; words not listed use
    their ``init_count`` copies of ``init_position``. Initial exemplars are
    created at time 0 with weight ``w0`` unless ``created_at`` gives
    (non-positive) creation times.
    """
    initial = dict(initial or {})
    created_at = dict(created_at or {})
    unknown = set(initial) - set(params.word_ids)
    if unknown:
        raise ConfigError(f"initial exemplars given for unknown words {sorted(unknown)}")
    dim = params.dim
    per_word = []
    for w in params.words:
        if w.id in initial:
            pts = np.asarray(initial[w.id], dtype=float).reshape(-1, dim)
        else:
            pts = np.tile(np.asarray(w.init_position, dtype=float), (w.init_count, 1))
        if pts.shape[0] == 0:
            raise ConfigError(f"word {w.id!r} has a positive production rate but no exemplars")
        born = np.asarray(created_at.get(w.id, np.zeros(pts.shape[0])), dtype=float)
        if born.shape != (pts.shape[0],) or np.any(born > 0):
            raise ConfigError(f"created_at for word {w.id!r} must be {pts.shape[0]} times <= 0")
        order = np.argsort(born, kind="stable")
        per_word.append((pts[order], born[order]))
    allpos = np.concatenate([p for p, _ in per_word])
    center = 0.5 * (allpos[:, 0].min() + allpos[:, 0].max())
    store = ExemplarStore(params.word_ids, dim, params.lam, params.w0, params.k, center)
    t0 = min(float(b.min()) for _, b in per_word)
    store.t_ref = t0
    for i, (pts, born) in enumerate(per_word):
        for y, b in zip(pts, born):
            store.add(i, y, b)
    return SimState(
        params=params,
        store=store,
        seed=int(seed),
        counters=Counters.zeros(len(params.words)),
        streams=make_streams(seed),
    )


def next_event(state: SimState) -> tuple[float, int]:
    """Waiting time to the next production event and the producing word's index."""
    if state.source_probs is None:
        nus = state.params.nus
        state.total_rate = float(nus.sum())
        state.source_probs = (nus / state.total_rate).tolist()
    clock = state.streams["clock"]
    dt = clock.exponential(1.0 / state.total_rate)
    src = draw_index(state.source_probs, clock) if len(state.source_probs) > 1 else 0
    return dt, src


def sample_source(state: SimState, word: str | int, t: float) -> Exemplar:
    """Draw an exemplar of ``word`` with probability proportional to its weight."""
    store = state.store
    i = store.index(word) if isinstance(word, str) else int(word)
    j = store.sample(i, state.streams["source"].random())
    ws = store.words[i]
    return Exemplar(ws.pos[j].copy(), float(ws.born[j]), store.word_ids[i])


def densities_at(state: SimState, y: np.ndarray, t: float) -> np.ndarray:
    store = state.store
    return np.array([store.smoothed_density(i, y, t) for i in range(len(store.words))])


def apply_event(state: SimState, t: float, source: int) -> int | None:
    """Run one production/classification cycle at time ``t``.

    Returns the index of the word that stored the new exemplar, or ``None``
    when it was discarded or the source word had no exemplars (counted as
    skipped).
    """
    params = state.params
    store = state.store
    c = state.counters
    if store.words[source].n == 0:
        c.skipped[source] += 1
        return None
    j = store.sample(source, state.streams["source"].random())
    z = store.words[source].pos[j]
    mean = store.mean(source) if params.alpha else z
    y = produce(z, mean, params, state.streams["noise"])
    c.produced[source] += 1
    if params.regime is Regime.NO_COMPETITION:
        target = source
    else:
        target = classify_index(
            source, densities_at(state, y, t), params.regime, params.p, state.streams["classify"]
        )
    if target is None:
        c.discarded[source] += 1
    else:
        store.add(target, y, t)
        c.accepted[target] += 1
    return target


def prune(state: SimState, t: float) -> int:
    return state.store.prune(t, state.params.prune_cutoff)


def diagnostics(state: SimState, t: float) -> DiagnosticsRow:
    store = state.store
    means, disps, totals, counts = {}, {}, {}, {}
    for i, w in enumerate(store.word_ids):
        pos, born = store.live(i)
        counts[w] = int(pos.shape[0])
        if pos.shape[0] == 0:
            means[w] = np.full(store.dim, np.nan)
            disps[w] = math.nan
            totals[w] = 0.0
            continue
        rel = np.exp(-store.lam * (born[-1] - born))
        means[w] = weighted_mean(pos, rel)
        disps[w] = weighted_dispersion(pos, rel)
        totals[w] = store.total_weight(i, t)
    return DiagnosticsRow(
        t=t,
        means=means,
        dispersions=disps,
        total_weights=totals,
        live_counts=counts,
        discard_counts=dict(zip(store.word_ids, state.counters.discarded.tolist())),
    )


def snapshot(state: SimState, t: float) -> list[tuple]:
    """Rows (word, *coords, weight) of every live exemplar at time ``t``."""
    rows = []
    store = state.store
    for i, w in enumerate(store.word_ids):
        pos, _ = store.live(i)
        for y, wt in zip(pos, store.weights(i, t)):
            rows.append((w, *y.tolist(), float(wt)))
    return rows


def run(
    state: SimState,
    t_max: float,
    sample_every: float,
    snapshot_times: Sequence[float] = (),
    prune_every: float = 1.0,
) -> tuple[list[DiagnosticsRow], SimState, dict[float, list[tuple]]]:
    """Advance to ``t_max`` recording diagnostics every ``sample_every``.

    An event drawn beyond ``t_max`` is kept pending, so running to ``t1``
    and then to ``t2`` reproduces a single run to ``t2`` exactly.
    """
    rows = [diagnostics(state, state.t)] if state.t == 0 else []
    snaps: dict[float, list[tuple]] = {}
    n_sample = math.floor(state.t / sample_every + 1e-9) + 1
    next_sample = n_sample * sample_every
    snaps_left = sorted(ts for ts in snapshot_times if ts >= state.t)
    while snaps_left and snaps_left[0] == state.t:
        snaps[state.t] = snapshot(state, state.t)
        snaps_left.pop(0)

    while True:
        if state.pending is None:
            dt, src = next_event(state)
            state.pending = (state.t + dt, src)
        t_ev, src = state.pending
        horizon = min(t_ev, t_max)
        # bookkeeping that falls before the next event
        while True:
            marks = [m for m in (next_sample, state.next_prune, snaps_left[0] if snaps_left else math.inf)
                     if m <= horizon + 1e-12]
            if not marks:
                break
            m = min(marks)
            if m == state.next_prune:
                prune(state, m)
                state.next_prune += prune_every
            if m == next_sample:
                rows.append(diagnostics(state, m))
                n_sample += 1
                next_sample = n_sample * sample_every
            if snaps_left and m == snaps_left[0]:
                snaps[m] = snapshot(state, m)
                snaps_left.pop(0)
        if t_ev > t_max:
            state.t = t_max
            break
        state.t = t_ev
        state.pending = None
        apply_event(state, t_ev, src)
    return rows, state, snaps
