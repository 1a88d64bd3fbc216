import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from exemplar_dynamics.core import (
    ConfigError,
    DegenerateStatistics,
    ModelParams,
    NoFiniteEquilibrium,
    Regime,
    WordParams,
    analytic_mean,
    analytic_total_weight,
    dispersion,
    equilibrium_density,
    equilibrium_dispersion,
    weighted_mean,
)

finite = st.floats(-50, 50, allow_nan=False)
positive = st.floats(0.01, 10, allow_nan=False)


def word(**kw):
    return WordParams(kw.pop("id", "A"), kw.pop("nu", 100.0), **kw)


class TestWeightedStatistics:
    def test_single_point_mean(self):
        assert weighted_mean([3.0], [1.0]) == pytest.approx([3.0])

    def test_symmetric_mean(self):
        assert weighted_mean([-1.0, 1.0], [1, 1]) == pytest.approx([0.0])

    def test_hand_mean(self):
        assert weighted_mean([0.0, 3.0], [2, 1]) == pytest.approx([1.0])

    def test_dispersion_examples(self):
        assert dispersion([5.0], [1.0]) == 0.0
        assert dispersion([-1.0, 1.0], [1, 1]) == pytest.approx(1.0)
        assert dispersion([0.0, 2.0], [3, 1]) == pytest.approx(math.sqrt(0.75))

    def test_two_dimensional_dispersion_is_euclidean(self):
        pts = [[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]]
        assert dispersion(pts, [1, 1, 1, 1]) == pytest.approx(1.0)
        assert weighted_mean(pts, [1, 1, 1, 1]) == pytest.approx([0.0, 0.0])

    @pytest.mark.parametrize("fn", [weighted_mean, dispersion])
    def test_zero_weight_is_degenerate(self, fn):
        with pytest.raises(DegenerateStatistics):
            fn([1.0, 2.0], [0.0, 0.0])

    def test_mismatched_lengths(self):
        with pytest.raises(ValueError):
            weighted_mean([1.0, 2.0], [1.0])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(finite, positive), min_size=1, max_size=30), positive,
           finite, st.randoms(use_true_random=False))
    def test_invariances(self, pairs, scale, shift, rnd):
        pts = np.array([p for p, _ in pairs])
        w = np.array([w for _, w in pairs])
        m, s = weighted_mean(pts, w), dispersion(pts, w)
        perm = list(range(len(pairs)))
        rnd.shuffle(perm)
        assert weighted_mean(pts[perm], w[perm]) == pytest.approx(m, abs=1e-9)
        assert dispersion(pts[perm], w[perm]) == pytest.approx(s, abs=1e-9)
        assert dispersion(pts, w * scale) == pytest.approx(s, abs=1e-9)
        assert weighted_mean(pts, w * scale) == pytest.approx(m, abs=1e-9)
        assert dispersion(pts + shift, w) == pytest.approx(s, abs=1e-7)


class TestClosedForms:
    def test_equilibrium_dispersion_examples(self):
        assert equilibrium_dispersion(1, 0, 1) == pytest.approx(1.0)
        assert equilibrium_dispersion(1, 0, 0.1) == pytest.approx(math.sqrt(1 / 0.19))
        assert equilibrium_dispersion(1, 0, 0.1) == pytest.approx(2.2942, abs=1e-4)
        assert equilibrium_dispersion(0.5, 0.1, 0.1) == pytest.approx(0.8333, abs=1e-4)

    @pytest.mark.parametrize("g", [0.0, 2.0])
    def test_no_finite_equilibrium(self, g):
        with pytest.raises(NoFiniteEquilibrium):
            equilibrium_dispersion(1.0, g / 2, g / 2)

    @given(st.floats(0.0, 0.9), st.floats(0.01, 0.9), positive)
    def test_only_alpha_plus_beta_enters(self, a, b, sigma):
        assert equilibrium_dispersion(sigma, a, b) == pytest.approx(
            equilibrium_dispersion(sigma, b, a), rel=1e-12)

    def test_total_weight_examples(self):
        assert analytic_total_weight(0.0, 0.37, 1.0, 1.0) == pytest.approx(0.37)
        assert analytic_total_weight(1e3, 0.0, 1.0, 1.0) == pytest.approx(1.0)
        # forward Euler with dt=1e-5 as the oracle
        m, dt = 0.0, 1e-5
        for _ in range(100_000):
            m += dt * (1.0 - m)
        assert analytic_total_weight(1.0, 0.0, 1.0, 1.0) == pytest.approx(m, abs=1e-5)
        assert analytic_total_weight(1.0, 0.0, 1.0, 1.0) == pytest.approx(1 - math.exp(-1))

    def test_total_weight_ode_residual(self):
        rng = np.random.default_rng(11)
        h = 1e-4
        for t, m0 in zip(rng.uniform(0, 10, 100), rng.uniform(0, 5, 100)):
            mu, lam = 1.3, 0.7
            d = (analytic_total_weight(t + h, m0, mu, lam)
                 - analytic_total_weight(t - h, m0, mu, lam)) / (2 * h)
            assert abs(d + lam * analytic_total_weight(t, m0, mu, lam) - mu) < 1e-8

    def test_mean_examples(self):
        assert analytic_mean(0.0, [5.0], [0.0], 1, 0.1) == pytest.approx([5.0])
        assert analytic_mean(1e4, [5.0], [0.0], 1, 0.1) == pytest.approx([0.0], abs=1e-12)
        # ODE oracle: dy/dt = -lam*beta*(y - y*), RK4
        y, dt = 5.0, 1e-3
        f = lambda v: -0.1 * v  # noqa: E731
        for _ in range(10_000):
            k1 = f(y)
            k2 = f(y + dt * k1 / 2)
            k3 = f(y + dt * k2 / 2)
            k4 = f(y + dt * k3)
            y += dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6
        assert analytic_mean(10.0, [5.0], [0.0], 1, 0.1)[0] == pytest.approx(y, rel=1e-10)
        assert y == pytest.approx(1.8394, abs=1e-4)

    def test_equilibrium_density_mass(self):
        y = np.linspace(-30, 30, 6001)[:, None]
        rho = equilibrium_density(y, 2.0, [1.0], 2.2942)
        assert np.trapezoid(rho, y[:, 0]) == pytest.approx(2.0, rel=1e-10)
        g = np.linspace(-20, 20, 401)
        pts = np.stack(np.meshgrid(g, g, indexing="ij"), -1)
        rho2 = equilibrium_density(pts, 1.5, [0.0, 0.0], 2.0)
        assert np.trapezoid(np.trapezoid(rho2, g), g) == pytest.approx(1.5, rel=1e-6)


class TestModelParams:
    def test_defaults_and_mu(self):
        p = ModelParams(lam=1.0, words=(word(nu=100.0),), w0=0.01)
        assert p.mus == pytest.approx([1.0])
        assert p.dim == 1
        assert p.prune_cutoff == pytest.approx(1e-5)
        assert p.regime is Regime.NO_COMPETITION

    @pytest.mark.parametrize("bad", [
        dict(lam=0.0), dict(w0=-1.0), dict(sigma=-0.1), dict(k=0.0), dict(p=-1.0),
        dict(alpha=-0.1), dict(alpha=0.0, beta=0.0), dict(alpha=1.0, beta=1.0),
        dict(alpha=1.5, beta=0.6), dict(y_star=(0.0, 0.0, 0.0)),
    ])
    def test_invalid(self, bad):
        kw = dict(lam=1.0, words=(word(),), w0=0.01)
        kw.update(bad)
        with pytest.raises(ConfigError):
            ModelParams(**kw)

    def test_dispersion_constraint_message(self):
        with pytest.raises(ConfigError, match=r"alpha \+ model.beta must lie in \(0, 2\)"):
            ModelParams(lam=1.0, words=(word(),), w0=0.01, alpha=1.0, beta=1.0)

    def test_word_checks(self):
        with pytest.raises(ConfigError, match="duplicate"):
            ModelParams(lam=1.0, words=(word(), word()), w0=0.01)
        with pytest.raises(ConfigError, match=r"words\[0\].nu"):
            ModelParams(lam=1.0, words=(word(nu=-1.0),), w0=0.01)
        with pytest.raises(ConfigError, match="nu > 0"):
            ModelParams(lam=1.0, words=(word(nu=0.0),), w0=0.01)
        silent = ModelParams(lam=1.0, words=(word(), word(id="B", nu=0.0)), w0=0.01)
        assert silent.mus == pytest.approx([1.0, 0.0])
        with pytest.raises(ConfigError, match="init_position"):
            ModelParams(lam=1.0, words=(word(init_position=(0.0, 0.0)),), w0=0.01)

    @pytest.mark.parametrize("text,expected", [
        ("no-competition", Regime.NO_COMPETITION),
        ("PureCompetition", Regime.PURE_COMPETITION),
        ("competition_with_discards", Regime.DISCARDS),
        ("discards", Regime.DISCARDS),
    ])
    def test_regime_parsing(self, text, expected):
        assert Regime.parse(text) is expected

    def test_unknown_regime(self):
        with pytest.raises(ConfigError):
            Regime.parse("anarchy")
