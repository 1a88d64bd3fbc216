"""Built-in invariant checks run by ``exemplar-dynamics validate``."""

from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import integrate

from . import exemplar
from .categorize import SmoothingKernel, assignment_field, assignment_probabilities
from .core import ModelParams, Regime, WordParams
from .field import FieldModel, Grid, Producer, Smoother, ToeplitzConvolver, offset_grid


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _two_words(regime=Regime.PURE_COMPETITION, p=1.0, dim=1, nu=200.0) -> ModelParams:
    if dim == 1:
        words = (WordParams("A", nu, (4.0,), 20), WordParams("B", nu, (7.0,), 20))
    else:
        words = (WordParams("A", nu, (4.0, 0.0), 20), WordParams("B", nu, (7.0, 1.0), 20))
    return ModelParams(lam=1.0, words=words, w0=1.0 / nu, beta=0.1, y_star=(0.0,) * dim,
                       regime=regime, p=p)


def check_kernel_mass() -> tuple[bool, str]:
    worst = 0.0
    for dim, k in ((1, 10.0), (1, 2.0), (2, 10.0), (2, 3.0)):
        kern = SmoothingKernel(k, dim)
        if dim == 1:
            mass = 2 * integrate.quad(lambda r: kern(r), 0, math.inf)[0]
        else:
            mass = integrate.quad(lambda r: 2 * math.pi * r * kern(r), 0, math.inf)[0]
        worst = max(worst, abs(mass - 1))
    # on the lattice: smoothing a compact density keeps its trapezoid mass
    for grid in (Grid.uniform(-10, 10, 401), Grid.uniform(-10, 10, 81, 2)):
        y = grid.points
        rho = np.exp(-np.sum(y**2, axis=-1))
        q = grid.quad_weights
        smoothed = Smoother(grid, SmoothingKernel(10.0, grid.dim))(rho)
        worst = max(worst, abs(np.sum(smoothed * q) / np.sum(rho * q) - 1))
    return worst < 1e-8, f"max relative mass error {worst:.2e}"


def check_assignment_sum() -> tuple[bool, str]:
    rng = np.random.default_rng(0)
    worst = 0.0
    for p in (0.0, 0.5, 1.0, 1.5, 3.0, math.inf):
        s = rng.exponential(size=(3, 500)) ** 4
        s[:, :20] = 0.0
        s[1, 20:40] = s[0, 20:40]
        f = assignment_field(s, p)
        worst = max(worst, float(np.max(np.abs(f.sum(axis=0) - 1))))
        for col in s.T[:50]:
            worst = max(worst, abs(assignment_probabilities(col, p).sum() - 1))
    return worst < 1e-12, f"max |sum f - 1| {worst:.2e}"


def check_lazy_decay() -> tuple[bool, str]:
    params = ModelParams(lam=3.0, words=(WordParams("A", 50.0, (1.0,), 5),), w0=0.02)
    state = exemplar.init(params, seed=3)
    rows, state, _ = exemplar.run(state, 30.0, 5.0)
    t = state.t
    _, born = state.store.live(0)
    lazy = state.store.weights(0, t)
    direct = params.w0 * np.exp(-params.lam * (t - born))
    err = float(np.max(np.abs(lazy - direct) / direct))
    return err < 1e-10, f"max relative weight error {err:.2e} over {born.size} exemplars"


def check_production_mass() -> tuple[bool, str]:
    worst = 0.0
    for dim, alpha in ((1, 0.0), (1, 0.3), (2, 0.0), (2, 0.2)):
        grid = Grid.uniform(-20, 25, 512 if dim == 1 else 96, dim)
        params = _two_words(dim=dim).with_(alpha=alpha)
        for backend in ("quadrature", "direct") if dim == 1 else ("quadrature",):
            model = FieldModel(params, grid, backend=backend)
            rho = np.stack([
                np.exp(-0.5 * np.sum((grid.points - c) ** 2, axis=-1))
                for c in ((3.0,) * dim, (6.0,) * dim)
            ])
            masses = model.masses(rho)
            prod = model.production(rho, masses, model.means(rho, masses))
            got = np.sum(prod * model.q, axis=tuple(range(1, dim + 1)))
            worst = max(worst, float(np.max(np.abs(got - params.mus) / params.mus)))
    return worst < 1e-8, f"max relative error of the production integral {worst:.2e}"


def check_nonnegativity() -> tuple[bool, str]:
    worst = 0.0
    steps = 0
    for regime, p, scheme in (
        (Regime.PURE_COMPETITION, 1.5, "euler"),
        (Regime.DISCARDS, math.inf, "heun"),
        (Regime.NO_COMPETITION, 1.0, "euler"),
    ):
        model = FieldModel(_two_words(regime, p), Grid.uniform(-20, 25, 256), scheme=scheme)
        state = model.initial_state()

        def watch(s):
            nonlocal worst, steps
            steps += 1
            worst = min(worst, float(s.rho.min()))

        model.run(state, 5.0, 0.05, sample_every=1.0, callback=watch)
    return worst >= 0.0, f"minimum density {worst:.3g} over {steps} steps"


def check_fast_convolution() -> tuple[bool, str]:
    rng = np.random.default_rng(1)
    worst = 0.0
    for grid in (Grid.uniform(-5, 5, 300), Grid.uniform(-5, 5, 40, 2)):
        kern = SmoothingKernel(3.0, grid.dim)(offset_grid(grid))
        for periodic in (False, True):
            conv = ToeplitzConvolver(kern, grid.shape, periodic)
            vals = rng.random((2,) + grid.shape)
            a, b = conv(vals, "fft"), conv(vals, "direct")
            worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    grid = Grid.uniform(-10, 10, 300)
    smoother = Smoother(grid, SmoothingKernel(10.0))
    vals = rng.random((2,) + grid.shape) * np.exp(-np.abs(grid.axes[0]) * 8)
    a, b = smoother(vals, "recursive"), smoother(vals, "direct")
    # compared pointwise in relative terms: the recursion keeps tail precision
    worst = max(worst, float(np.max(np.abs(a - b) / b)))
    grid = Grid.uniform(-10, 10, 200)
    params = _two_words().with_(alpha=0.2)
    rho = rng.random(grid.shape)
    a = Producer(grid, params, "quadrature").push(rho, np.array([0.2]))
    b = Producer(grid, params, "direct").push(rho, np.array([0.2]))
    worst = max(worst, float(np.max(np.abs(a - b)) / np.max(np.abs(b))))
    return worst < 1e-8, f"max relative difference {worst:.2e}"


def check_determinism() -> tuple[bool, str]:
    params = _two_words(Regime.DISCARDS, 1.0)
    digests = []
    for _ in range(2):
        state = exemplar.init(params, seed=7)
        exemplar.run(state, 5.0, 1.0)
        digests.append(state.digest())
    field_digests = []
    for _ in range(2):
        model = FieldModel(params, Grid.uniform(-20, 25, 128))
        rows, state, _ = model.run(model.initial_state(), 2.0, 0.05, 1.0)
        field_digests.append(hashlib.sha256(state.rho.tobytes()).hexdigest())
    ok = digests[0] == digests[1] and field_digests[0] == field_digests[1]
    return ok, f"exemplar {digests[0][:12]} / field {field_digests[0][:12]}"


CHECKS: dict[str, Callable[[], tuple[bool, str]]] = {
    "kernel-mass": check_kernel_mass,
    "assignment-sums-to-one": check_assignment_sum,
    "lazy-weight-decay": check_lazy_decay,
    "production-mass": check_production_mass,
    "nonnegativity": check_nonnegativity,
    "fast-vs-direct-convolution": check_fast_convolution,
    "determinism": check_determinism,
}


def run_checks(names=None) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        start = time.perf_counter()
        try:
            ok, detail = CHECKS[name]()
        except Exception as exc:  # a crashing check is a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(name, bool(ok), detail, time.perf_counter() - start))
    return results
