import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exemplar_dynamics.core import ConfigError, DiagnosticsRow, InsufficientData, Regime
from exemplar_dynamics.scenarios import (
    PRESETS,
    SIGMA_NOTE,
    Scenario,
    Verdict,
    classify_outcome,
    convergence_study,
    joint_mean,
    preset,
    rescale_nu,
    run_exemplar,
    run_field,
    sup_deviation,
)


def series(ts, means, disps=None, weights=None):
    """Synthetic diagnostics rows; ``means`` maps word -> callable of t."""
    disps = disps or {w: (lambda t: 1.0) for w in means}
    weights = weights or {w: (lambda t: 1.0) for w in means}
    return [
        DiagnosticsRow(
            t=float(t),
            means={w: np.atleast_1d(float(f(t))) for w, f in means.items()},
            dispersions={w: float(f(t)) for w, f in disps.items()},
            total_weights={w: float(f(t)) for w, f in weights.items()},
        )
        for t in ts
    ]


def reflect(rows):
    return [
        DiagnosticsRow(r.t, {w: -m for w, m in r.means.items()}, dict(r.dispersions),
                       dict(r.total_weights))
        for r in rows
    ]


class TestPresets:
    def test_single_1d(self):
        sc = preset("single-1d")
        p = sc.params
        assert (p.words[0].nu, p.lam, p.w0, p.alpha, p.beta, p.y_star) == (
            100.0, 1.0, 0.01, 0.0, 0.1, (0.0,))
        assert sc.t_max == 40.0
        assert sc.snapshot_times == (0.1, 10.0, 40.0)
        assert SIGMA_NOTE in sc.notes

    def test_two_word_discards(self):
        p = preset("two-word-discards-p1").params
        assert p.regime is Regime.DISCARDS and p.p == 1.0
        assert [w.nu for w in p.words] == [1e3, 1e3]
        assert [(w.init_position, w.init_count) for w in p.words] == [((5.0,), 50), ((10.0,), 50)]
        assert p.mus == pytest.approx([1.0, 1.0])

    def test_five_words(self):
        sc = preset("2d-five-words")
        p = sc.params
        assert [w.init_position for w in p.words] == [
            (-5.0, -5.0), (0.0, 0.0), (5.0, 5.0), (10.0, 10.0), (15.0, 15.0)]
        assert (p.w0, p.prune_threshold, sc.dt, sc.grid.n) == (1e-3, 1e-4, 0.02, (128, 128))

    @pytest.mark.parametrize("name,regime,p", [
        ("two-word-nocomp", Regime.NO_COMPETITION, 1.0),
        ("two-word-pure-p1", Regime.PURE_COMPETITION, 1.0),
        ("two-word-pure-p1.5", Regime.PURE_COMPETITION, 1.5),
    ])
    def test_two_word_family(self, name, regime, p):
        sc = preset(name)
        assert (sc.params.regime, sc.params.p, sc.t_max) == (regime, p, 1000.0)

    def test_unknown_lists_presets(self):
        with pytest.raises(ConfigError) as err:
            preset("nope")
        for name in PRESETS:
            assert name in str(err.value)

    def test_presets_are_fresh_and_frozen(self):
        a, b = preset("single-1d"), preset("single-1d")
        assert a == b and a is not b
        with pytest.raises(AttributeError):
            a.t_max = 3.0

    @pytest.mark.parametrize("bad", [dict(engine="gpu"), dict(t_max=0.0), dict(dt=-1.0),
                                     dict(seeds=()), dict(sample_every=0.0)])
    def test_scenario_validation(self, bad):
        with pytest.raises(ConfigError):
            preset("single-1d").with_(**bad)


class TestConvergence:
    def test_rescale_nu(self):
        sc = rescale_nu(preset("validate-regime2"), 1e4)
        p = sc.params
        assert p.w0 == pytest.approx(1e-4)
        assert [w.init_count for w in p.words] == [500, 500]
        assert p.mus == pytest.approx([1.0, 1.0])
        assert [w.init_count * p.w0 for w in p.words] == pytest.approx([0.05, 0.05])

    def test_rescale_scales_prune_threshold(self):
        sc = rescale_nu(preset("2d-five-words"), 100.0)
        assert sc.params.prune_threshold == pytest.approx(1e-3)

    def test_field_against_itself(self):
        sc = preset("validate-regime2").with_(t_max=1.0)
        rows, _, _ = run_field(sc)
        assert sup_deviation(rows, rows, "A") == (0.0, 0.0)

    def test_no_common_times(self):
        a = series([0.0, 1.0], {"A": lambda t: t})
        b = series([0.5, 1.5], {"A": lambda t: t})
        with pytest.raises(InsufficientData):
            sup_deviation(a, b, "A")

    def test_ascending_required(self):
        with pytest.raises(ConfigError):
            convergence_study(preset("validate-regime2"), [1e3, 1e2])

    def test_small_study(self):
        sc = preset("validate-regime2").with_(t_max=2.0, seeds=(1, 2, 3))
        table = convergence_study(sc, [1e2, 1e3])
        assert [(r.nu, r.word) for r in table] == [(1e2, "A"), (1e2, "B"), (1e3, "A"), (1e3, "B")]
        for r in table:
            assert len(r.per_seed_mean) == 3
            assert r.mean_deviation == np.median(r.per_seed_mean)
        by = {(r.nu, r.word): r for r in table}
        for w in "AB":
            assert by[(1e3, w)].mean_deviation < by[(1e2, w)].mean_deviation

    def test_exemplar_runner_uses_scenario_cadence(self):
        sc = preset("single-1d").with_(t_max=1.0, sample_every=0.5, snapshot_times=(0.5,))
        rows, _, snaps = run_exemplar(sc, 3)
        assert [r.t for r in rows] == [0.0, 0.5, 1.0]
        assert list(snaps) == [0.5]


class TestClassify:
    ts = np.linspace(0, 100, 101)

    def test_merged(self):
        rows = series(self.ts, {"A": lambda t: 5 * math.exp(-t), "B": lambda t: 5 * math.exp(-t) + 0.1})
        assert classify_outcome(rows).verdict is Verdict.MERGED

    def test_stable(self):
        rows = series(self.ts, {"A": lambda t: -3.0, "B": lambda t: 3.0})
        v = classify_outcome(rows)
        assert v.verdict is Verdict.DISTINCT_STABLE
        assert v.separation == pytest.approx(6.0)
        assert v.theta_sep == pytest.approx(2.0)
        assert v.window == (80.0, 100.0)

    def test_drifting(self):
        rows = series(self.ts, {"A": lambda t: 0.01 * t, "B": lambda t: 5 + 0.01 * t})
        v = classify_outcome(rows)
        assert v.verdict is Verdict.DISTINCT_DRIFTING
        assert v.drift_rate[0] == pytest.approx(0.01)

    def test_thresholds_configurable(self):
        rows = series(self.ts, {"A": lambda t: 0.0, "B": lambda t: 3.0},
                      disps={"A": lambda t: 0.5, "B": lambda t: 2.0})
        assert classify_outcome(rows).verdict is Verdict.DISTINCT_STABLE
        assert classify_outcome(rows, sep_rule="max").verdict is Verdict.MERGED
        assert classify_outcome(rows, sep_factor=1.0, sep_rule="max").verdict is Verdict.DISTINCT_STABLE
        with pytest.raises(ConfigError):
            classify_outcome(rows, sep_rule="median")

    def test_closest_pair_decides(self):
        rows = series(self.ts, {"A": lambda t: 0.0, "B": lambda t: 10.0, "C": lambda t: 11.0})
        v = classify_outcome(rows)
        assert v.verdict is Verdict.MERGED
        assert v.closest_pair == ("B", "C")

    def test_insufficient(self):
        rows = series(self.ts, {"A": lambda t: 0.0, "B": lambda t: 3.0})
        with pytest.raises(InsufficientData):
            classify_outcome(rows[:1])
        with pytest.raises(InsufficientData):
            classify_outcome(rows, window=500.0)
        with pytest.raises(InsufficientData):
            classify_outcome(series(self.ts, {"A": lambda t: 0.0}))

    def test_joint_mean_weights(self):
        row = series([0.0], {"A": lambda t: 0.0, "B": lambda t: 4.0},
                     weights={"A": lambda t: 3.0, "B": lambda t: 1.0})[0]
        assert joint_mean(row) == pytest.approx([1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-10, 10), st.floats(-10, 10), st.floats(-0.05, 0.05),
           st.floats(0.1, 3), st.floats(0.1, 3))
    def test_reflection_invariance(self, a, b, drift, sa, sb):
        rows = series(self.ts, {"A": lambda t: a + drift * t, "B": lambda t: b + drift * t},
                      disps={"A": lambda t: sa, "B": lambda t: sb})
        v, r = classify_outcome(rows), classify_outcome(reflect(rows))
        assert v.verdict is r.verdict
        assert v.separation == pytest.approx(r.separation)
        assert r.drift_rate == pytest.approx(-v.drift_rate, abs=1e-12)

    def test_summary_is_json_ready(self):
        import json

        rows = series(self.ts, {"A": lambda t: -3.0, "B": lambda t: 3.0})
        s = classify_outcome(rows).summary()
        assert json.loads(json.dumps(s))["verdict"] == "DistinctStable"
