"""Experiment presets, the exemplar-vs-field convergence study and merger verdicts."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from itertools import combinations
from typing import Sequence

import numpy as np

from . import exemplar
from .core import ConfigError, DiagnosticsRow, InsufficientData, ModelParams, Regime, WordParams
from .field import FieldModel, Grid

PRESET_VERSION = 1
ENGINES = ("exemplar", "field", "both")

DEFAULT_GRID_1D = Grid.uniform(-20.0, 25.0, 1024, 1)
DEFAULT_GRID_2D = Grid.uniform(-20.0, 25.0, 128, 2)


def default_grid(dim: int) -> Grid:
    return DEFAULT_GRID_1D if dim == 1 else DEFAULT_GRID_2D


@dataclass(frozen=True)
class Scenario:
    name: str
    params: ModelParams
    engine: str = "field"
    t_max: float = 100.0
    dt: float = 0.01
    grid: Grid | None = None
    sample_every: float = 1.0
    seeds: tuple[int, ...] = (1,)
    scheme: str = "euler"
    backend: str = "quadrature"
    prune_every: float = 1.0
    snapshot_times: tuple[float, ...] = ()
    notes: tuple[str, ...] = ()
    version: int = PRESET_VERSION

    def __post_init__(self):
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.grid is None:
            object.__setattr__(self, "grid", default_grid(self.params.dim))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "snapshot_times", tuple(float(s) for s in self.snapshot_times))
        object.__setattr__(self, "notes", tuple(self.notes))
        if not self.t_max > 0:
            raise ConfigError(f"run.t_max must be > 0, got {self.t_max}")
        if not self.dt > 0:
            raise ConfigError(f"run.dt must be > 0, got {self.dt}")
        if not self.sample_every > 0:
            raise ConfigError(f"run.sample_every must be > 0, got {self.sample_every}")
        if not self.seeds:
            raise ConfigError("run.seeds must list at least one seed")
        if self.grid.dim != self.params.dim:
            raise ConfigError("grid dimension differs from the model dimension")

    def with_(self, **changes) -> "Scenario":
        return replace(self, **changes)

    def field_model(self) -> FieldModel:
        return FieldModel(self.params, self.grid, backend=self.backend, scheme=self.scheme)


# -- presets ------------------------------------------------------------------

SIGMA_NOTE = "sigma for the 1-d experiments is an assumed default of 1"


def _two_word(name: str, regime: Regime, p: float, note: str) -> Scenario:
    params = ModelParams(
        lam=1.0,
        words=(WordParams("A", 1000.0, (5.0,), 50), WordParams("B", 1000.0, (10.0,), 50)),
        w0=1e-3,
        alpha=0.0,
        beta=0.1,
        sigma=1.0,
        y_star=(0.0,),
        k=10.0,
        p=p,
        regime=regime,
    )
    return Scenario(
        name=name,
        params=params,
        engine="both",
        t_max=1000.0,
        dt=0.01,
        sample_every=1.0,
        seeds=(1,),
        snapshot_times=(100.0, 1000.0),
        notes=(
            "nu=1e3, W0=1/nu (mu=1), lam=1, alpha=0, beta=0.1, y*=0, k=10",
            "50 exemplars of A at y=5 and 50 of B at y=10",
            SIGMA_NOTE,
            note,
        ),
    )


def _single_1d() -> Scenario:
    params = ModelParams(
        lam=1.0,
        words=(WordParams("A", 100.0, (5.0,), 50),),
        w0=0.01,
        alpha=0.0,
        beta=0.1,
        sigma=1.0,
        y_star=(0.0,),
        k=10.0,
        regime=Regime.NO_COMPETITION,
    )
    return Scenario(
        name="single-1d",
        params=params,
        engine="both",
        t_max=40.0,
        dt=0.01,
        sample_every=0.1,
        seeds=(1, 2, 3, 4, 5),
        snapshot_times=(0.1, 10.0, 40.0),
        notes=(
            "nu=100, lam=1, W0=1/nu, alpha=0, beta=0.1, y*=0; five trials",
            "assumed start: 50 exemplars at y=5, as in the two-word runs",
            SIGMA_NOTE,
        ),
    )


def _validate_regime2() -> Scenario:
    base = _two_word("validate-regime2", Regime.DISCARDS, 1.0, "")
    return base.with_(
        engine="both",
        t_max=10.0,
        sample_every=0.1,
        seeds=(1, 2, 3, 4, 5),
        snapshot_times=(),
        notes=(
            "competition with discards, p=1; nu in {1e2, 1e3, 1e4}, five exemplar runs each",
            "initial weight 0.05 per word (50 exemplars at nu=1e3) kept fixed across nu",
            SIGMA_NOTE,
        ),
    )


def _five_words_2d() -> Scenario:
    centers = [(-5.0, -5.0), (0.0, 0.0), (5.0, 5.0), (10.0, 10.0), (15.0, 15.0)]
    params = ModelParams(
        lam=1.0,
        words=tuple(WordParams(w, 1000.0, c, 50) for w, c in zip("ABCDE", centers)),
        w0=1e-3,
        alpha=0.0,
        beta=0.1,
        sigma=1.0,
        y_star=(0.0, 0.0),
        k=10.0,
        p=1.0,
        regime=Regime.DISCARDS,
        prune_threshold=1e-4,
    )
    return Scenario(
        name="2d-five-words",
        params=params,
        engine="both",
        t_max=200.0,
        dt=0.02,
        grid=DEFAULT_GRID_2D,
        sample_every=1.0,
        seeds=(1,),
        snapshot_times=(1.0, 10.0, 50.0, 200.0),
        notes=(
            "lam=1, mu=1, sigma=1, beta=0.1, p=1, k=10, y*=(0,0), competition with discards",
            "50 exemplars of weight 1e-3 per word; pruned below 1e-4",
            "five words, one per listed starting point",
            "field peaks perturbed by up to one cell to break the diagonal symmetry",
        ),
    )


PRESETS = {
    "single-1d": _single_1d,
    "two-word-nocomp": lambda: _two_word(
        "two-word-nocomp", Regime.NO_COMPETITION, 1.0, "expected: fast merger"),
    "two-word-pure-p1": lambda: _two_word(
        "two-word-pure-p1", Regime.PURE_COMPETITION, 1.0, "expected: slow merger"),
    "two-word-pure-p1.5": lambda: _two_word(
        "two-word-pure-p1.5", Regime.PURE_COMPETITION, 1.5, "expected: distinct, drifting right"),
    "two-word-discards-p1": lambda: _two_word(
        "two-word-discards-p1", Regime.DISCARDS, 1.0, "expected: distinct and stable"),
    "validate-regime2": _validate_regime2,
    "2d-five-words": _five_words_2d,
}


def preset(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}") from None


# -- running ------------------------------------------------------------------


def run_field(scenario: Scenario, seed: int | None = None, t_max: float | None = None):
    model = scenario.field_model()
    state = model.initial_state(seed=scenario.seeds[0] if seed is None else seed)
    return model.run(
        state,
        scenario.t_max if t_max is None else t_max,
        scenario.dt,
        scenario.sample_every,
        scenario.snapshot_times,
    )


def run_exemplar(scenario: Scenario, seed: int, t_max: float | None = None):
    state = exemplar.init(scenario.params, seed)
    return exemplar.run(
        state,
        scenario.t_max if t_max is None else t_max,
        scenario.sample_every,
        scenario.snapshot_times,
        scenario.prune_every,
    )


# -- convergence study --------------------------------------------------------


def rescale_nu(scenario: Scenario, nu: float) -> Scenario:
    """Same field limit at a different exemplar rate: W0 = mu/nu, same initial weight."""
    p = scenario.params
    mus = p.mus
    if not np.allclose(mus, mus[0]):
        raise ConfigError("convergence study needs equal weight influx for all words")
    w0 = float(mus[0]) / nu
    words = tuple(
        replace(w, nu=float(nu), init_count=max(1, round(w.init_count * p.w0 / w0)))
        for w in p.words
    )
    prune = None if p.prune_threshold is None else p.prune_threshold * w0 / p.w0
    return scenario.with_(params=p.with_(words=words, w0=w0, prune_threshold=prune))


def _series(rows: Sequence[DiagnosticsRow], word: str):
    t = np.array([r.t for r in rows])
    mean = np.array([np.atleast_1d(r.means[word]) for r in rows])
    disp = np.array([r.dispersions[word] for r in rows])
    return t, mean, disp


def sup_deviation(rows_a, rows_b, word: str) -> tuple[float, float]:
    """Sup over common sample times of the mean and dispersion differences."""
    ta, ma, sa = _series(rows_a, word)
    tb, mb, sb = _series(rows_b, word)
    ia = {round(t, 9): i for i, t in enumerate(ta)}
    common = [(ia[round(t, 9)], j) for j, t in enumerate(tb) if round(t, 9) in ia]
    if not common:
        raise InsufficientData("the two series share no sample times")
    i, j = map(np.array, zip(*common))
    dm = np.linalg.norm(ma[i] - mb[j], axis=1)
    ds = np.abs(sa[i] - sb[j])
    return float(np.nanmax(dm)), float(np.nanmax(ds))


@dataclass
class ConvergenceRow:
    nu: float
    word: str
    mean_deviation: float
    dispersion_deviation: float
    per_seed_mean: list[float] = field(default_factory=list)
    per_seed_dispersion: list[float] = field(default_factory=list)


def convergence_study(
    base: Scenario,
    nu_list: Sequence[float],
    n_seeds: int | None = None,
    field_rows: Sequence[DiagnosticsRow] | None = None,
) -> list[ConvergenceRow]:
    """Median over seeds of the sup-in-time exemplar-vs-field deviation, per nu and word."""
    nu_list = list(nu_list)
    if any(b <= a for a, b in zip(nu_list, nu_list[1:])):
        raise ConfigError("nu_list must be strictly ascending")
    seeds = base.seeds if n_seeds is None else tuple(range(1, n_seeds + 1))
    if field_rows is None:
        field_rows, _, _ = run_field(base)
    table = []
    for nu in nu_list:
        sc = rescale_nu(base, nu)
        per_word = {w: ([], []) for w in sc.params.word_ids}
        for seed in seeds:
            rows, _, _ = run_exemplar(sc, seed)
            for w in sc.params.word_ids:
                dm, ds = sup_deviation(rows, field_rows, w)
                per_word[w][0].append(dm)
                per_word[w][1].append(ds)
        for w, (dms, dss) in per_word.items():
            table.append(
                ConvergenceRow(nu, w, float(np.median(dms)), float(np.median(dss)), dms, dss)
            )
    return table


# -- merger verdicts -----------------------------------------------------------


DEFAULT_THETA_DRIFT = 1e-3
SEP_RULES = ("mean", "max")


class Verdict(str, Enum):
    MERGED = "Merged"
    DISTINCT_STABLE = "DistinctStable"
    DISTINCT_DRIFTING = "DistinctDrifting"


@dataclass
class MergerVerdict:
    verdict: Verdict
    separation: float
    theta_sep: float
    closest_pair: tuple[str, str]
    drift_rate: np.ndarray
    theta_drift: float
    window: tuple[float, float]
    sep_rule: str = "mean"

    def summary(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "separation": self.separation,
            "theta_sep": self.theta_sep,
            "closest_pair": list(self.closest_pair),
            "drift_rate": [float(v) for v in np.atleast_1d(self.drift_rate)],
            "theta_drift": self.theta_drift,
            "sep_rule": self.sep_rule,
            "window": list(self.window),
        }


def joint_mean(row: DiagnosticsRow) -> np.ndarray:
    """Weight-averaged mean over all words."""
    total = sum(row.total_weights.values())
    acc = sum(row.total_weights[w] * np.atleast_1d(row.means[w]) for w in row.means)
    return np.asarray(acc) / total


def classify_outcome(
    rows: Sequence[DiagnosticsRow],
    window: float | None = None,
    sep_factor: float = 2.0,
    theta_drift: float = DEFAULT_THETA_DRIFT,
    sep_rule: str = "mean",
) -> MergerVerdict:
    """Merged / DistinctStable / DistinctDrifting from a diagnostics series.

    Merged when the closest pair of word means is nearer than ``sep_factor``
    times the pair's dispersion scale at the final sample: their average
    (``sep_rule="mean"``, so the default threshold is s_A + s_B) or the
    larger one (``"max"``). Otherwise the words are drifting when the
    least-squares slope of the weight-averaged mean over the trailing
    ``window`` (default: last 20% of the run) exceeds ``theta_drift`` in
    magnitude.
    """
    if sep_rule not in SEP_RULES:
        raise ConfigError(f"sep_rule must be one of {SEP_RULES}, got {sep_rule!r}")
    rows = list(rows)
    if len(rows) < 2:
        raise InsufficientData("need at least two diagnostics rows")
    words = list(rows[-1].means)
    if len(words) < 2:
        raise InsufficientData("merger verdicts need at least two words")
    t_end = rows[-1].t
    span = t_end - rows[0].t
    if window is None:
        window = 0.2 * span
    if window > span + 1e-12:
        raise InsufficientData(f"series spans {span}, shorter than the window {window}")
    tail = [r for r in rows if r.t >= t_end - window - 1e-12]
    if len(tail) < 2:
        raise InsufficientData("fewer than two samples inside the window")

    last = rows[-1]
    # the pair closest to being unresolvable decides
    margin, sep, theta, pair = math.inf, math.inf, 0.0, (words[0], words[1])
    for a, b in combinations(words, 2):
        d = float(np.linalg.norm(np.atleast_1d(last.means[a]) - np.atleast_1d(last.means[b])))
        pair_s = (last.dispersions[a], last.dispersions[b])
        th = sep_factor * (max(pair_s) if sep_rule == "max" else 0.5 * sum(pair_s))
        if d - th < margin:
            margin, sep, theta, pair = d - th, d, th, (a, b)

    ts = np.array([r.t for r in tail])
    jm = np.array([joint_mean(r) for r in tail])
    slope = np.polyfit(ts, jm, 1)[0]
    drift = float(np.linalg.norm(slope))

    if sep < theta:
        verdict = Verdict.MERGED
    elif drift > theta_drift:
        verdict = Verdict.DISTINCT_DRIFTING
    else:
        verdict = Verdict.DISTINCT_STABLE
    return MergerVerdict(
        verdict, sep, theta, pair, slope, theta_drift, (t_end - window, t_end), sep_rule
    )
