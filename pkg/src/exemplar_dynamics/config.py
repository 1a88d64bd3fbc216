"""TOML configuration schema for scenarios.

Layout::

    preset = "two-word-discards-p1"   # optional; other keys then override it

    [model]    lam (required), w0, alpha, beta, sigma, y_star, k, p, regime,
               prune_threshold
    [[words]]  nu (required), id, init_position, init_count
    [engine]   kind (exemplar | field | both), scheme (euler | heun),
               backend (quadrature | direct | transform)
    [grid]     min, max, n (scalars or one value per axis)
    [run]      name, t_max, dt, sample_every, seeds, snapshot_times,
               prune_every, notes, version
    [output]   dir

Defaults for a file without a preset: ``w0 = 1/nu`` of the busiest word
(unit weight influx), alpha 0, beta 0.1, sigma 1, y_star at the origin,
k 10, p 1, no competition, every word starting as one exemplar at y_star,
field engine with Euler steps, grid [-20, 25] with 1024 points (128 per axis
in 2-d), t_max 100, dt 0.01, samples every 1, seed 1.
"""

from __future__ import annotations

import math
import sys
from dataclasses import replace
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib
import tomli_w

from .core import ConfigError, ModelParams, Regime, WordParams
from .field import Grid
from .scenarios import Scenario, default_grid, preset

SCHEMA = {
    "model": {"lam", "w0", "alpha", "beta", "sigma", "y_star", "k", "p", "regime",
              "prune_threshold"},
    "words": {"id", "nu", "init_position", "init_count"},
    "engine": {"kind", "scheme", "backend"},
    "grid": {"min", "max", "n"},
    "run": {"name", "t_max", "dt", "sample_every", "seeds", "snapshot_times", "prune_every",
            "notes", "version"},
    "output": {"dir"},
}
TOP_LEVEL = set(SCHEMA) | {"preset"}


def _check_keys(doc: Mapping, allowed: set, path: str) -> None:
    for key in doc:
        if key not in allowed:
            where = f"{path}.{key}" if path else key
            raise ConfigError(f"{where}: unknown key")


def _num(section: Mapping, key: str, path: str, default=None, kind=float):
    if key not in section:
        if default is None:
            raise ConfigError(f"{path}.{key}: missing required key")
        return default
    value = section[key]
    if kind is float and isinstance(value, str) and value.lower() in ("inf", "infinity"):
        return math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}: expected a number, got {value!r}")
    if kind is int and value != int(value):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    return kind(value)


def _vec(value, path: str, kind=float) -> tuple:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return (kind(value),)
    if isinstance(value, list) and value and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        return tuple(kind(v) for v in value)
    raise ConfigError(f"{path}: expected a number or a list of numbers, got {value!r}")


def _model(doc: Mapping, base: Scenario | None) -> ModelParams:
    m = doc.get("model", {})
    _check_keys(m, SCHEMA["model"], "model")
    words_doc = doc.get("words")
    bp = base.params if base else None

    if words_doc is None:
        if bp is None:
            raise ConfigError("words: missing required key (at least one [[words]] entry)")
        words = bp.words
    else:
        if not isinstance(words_doc, list) or not words_doc:
            raise ConfigError("words: expected a non-empty array of tables")
        y_star_default = _vec(m["y_star"], "model.y_star") if "y_star" in m else (
            bp.y_star if bp else None)
        words = []
        for i, w in enumerate(words_doc):
            path = f"words[{i}]"
            _check_keys(w, SCHEMA["words"], path)
            nu = _num(w, "nu", path)
            pos = _vec(w["init_position"], f"{path}.init_position") if "init_position" in w \
                else (y_star_default or (0.0,))
            count = _num(w, "init_count", path, 1, int)
            wid = w.get("id", chr(ord("A") + i) if i < 26 else f"W{i}")
            if not isinstance(wid, str) or not wid:
                raise ConfigError(f"{path}.id: expected a non-empty string")
            words.append(WordParams(wid, nu, pos, count))
        words = tuple(words)

    def pick(key, fallback):
        return getattr(bp, key) if bp is not None else fallback

    if "lam" not in m and bp is None:
        raise ConfigError("model.lam: missing required key")
    top_nu = max(w.nu for w in words)
    w0_default = bp.w0 if bp is not None else (1.0 / top_nu if top_nu > 0 else 1.0)
    kwargs: dict[str, Any] = dict(
        lam=_num(m, "lam", "model", pick("lam", None)),
        words=words,
        w0=_num(m, "w0", "model", w0_default),
        alpha=_num(m, "alpha", "model", pick("alpha", 0.0)),
        beta=_num(m, "beta", "model", pick("beta", 0.1)),
        sigma=_num(m, "sigma", "model", pick("sigma", 1.0)),
        k=_num(m, "k", "model", pick("k", 10.0)),
        p=_num(m, "p", "model", pick("p", 1.0)),
    )
    y_star = _vec(m["y_star"], "model.y_star") if "y_star" in m else pick(
        "y_star", (0.0,) * len(words[0].init_position))
    kwargs["y_star"] = y_star
    try:
        kwargs["regime"] = Regime.parse(m["regime"]) if "regime" in m else pick(
            "regime", Regime.NO_COMPETITION)
    except ConfigError as exc:
        raise ConfigError(f"model.regime: {exc}") from None
    if "prune_threshold" in m:
        kwargs["prune_threshold"] = _num(m, "prune_threshold", "model")
    else:
        kwargs["prune_threshold"] = pick("prune_threshold", None)
    return ModelParams(**kwargs)


def _grid(doc: Mapping, dim: int, base: Scenario | None) -> Grid:
    g = doc.get("grid")
    fallback = base.grid if base is not None and base.grid.dim == dim else default_grid(dim)
    if g is None:
        return fallback
    _check_keys(g, SCHEMA["grid"], "grid")

    def axis_values(key, current, kind):
        if key not in g:
            return current
        vals = _vec(g[key], f"grid.{key}", kind)
        if len(vals) == 1:
            vals = vals * dim
        if len(vals) != dim:
            raise ConfigError(f"grid.{key}: expected {dim} values, got {len(vals)}")
        return vals

    return Grid(
        axis_values("min", fallback.lo, float),
        axis_values("max", fallback.hi, float),
        axis_values("n", fallback.n, int),
    )


def scenario_from_dict(doc: Mapping) -> Scenario:
    _check_keys(doc, TOP_LEVEL, "")
    base = None
    if "preset" in doc:
        if not isinstance(doc["preset"], str):
            raise ConfigError("preset: expected a preset name")
        try:
            base = preset(doc["preset"])
        except ConfigError as exc:
            raise ConfigError(f"preset: {exc}") from None
    for section in ("model", "engine", "grid", "run", "output"):
        if section in doc and not isinstance(doc[section], Mapping):
            raise ConfigError(f"{section}: expected a table")

    params = _model(doc, base)
    grid = _grid(doc, params.dim, base)

    e = doc.get("engine", {})
    _check_keys(e, SCHEMA["engine"], "engine")
    r = doc.get("run", {})
    _check_keys(r, SCHEMA["run"], "run")
    _check_keys(doc.get("output", {}), SCHEMA["output"], "output")

    def pick(key, fallback):
        return getattr(base, key) if base is not None else fallback

    def text(section, path, key, fallback):
        value = section.get(key, fallback)
        if not isinstance(value, str):
            raise ConfigError(f"{path}.{key}: expected a string")
        return value

    seeds = _vec(r["seeds"], "run.seeds", int) if "seeds" in r else pick("seeds", (1,))
    snaps = (
        tuple(_vec(r["snapshot_times"], "run.snapshot_times")) if r.get("snapshot_times")
        else (() if "snapshot_times" in r else pick("snapshot_times", ()))
    )
    notes = r.get("notes", pick("notes", ()))
    if not isinstance(notes, (list, tuple)) or not all(isinstance(n, str) for n in notes):
        raise ConfigError("run.notes: expected a list of strings")
    try:
        return Scenario(
            name=text(r, "run", "name", pick("name", "custom")),
            params=params,
            engine=text(e, "engine", "kind", pick("engine", "field")),
            t_max=_num(r, "t_max", "run", pick("t_max", 100.0)),
            dt=_num(r, "dt", "run", pick("dt", 0.01)),
            grid=grid,
            sample_every=_num(r, "sample_every", "run", pick("sample_every", 1.0)),
            seeds=seeds,
            scheme=text(e, "engine", "scheme", pick("scheme", "euler")),
            backend=text(e, "engine", "backend", pick("backend", "quadrature")),
            prune_every=_num(r, "prune_every", "run", pick("prune_every", 1.0)),
            snapshot_times=snaps,
            notes=tuple(notes),
            version=_num(r, "version", "run", pick("version", 1), int),
        )
    except ConfigError as exc:
        msg = str(exc)
        if msg.startswith("engine must"):
            msg = f"engine.kind: {msg}"
        raise ConfigError(msg) from None


def parse_config(text: str, overrides: Mapping[str, Any] | None = None) -> Scenario:
    """Parse a TOML document into a validated :class:`Scenario`.

    ``overrides`` maps dotted key paths (``"model.p"``, ``"run.t_max"``) to
    values applied on top of the document before validation.
    """
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    for path, value in (overrides or {}).items():
        section, _, key = path.partition(".")
        doc.setdefault(section, {})[key] = value
    return scenario_from_dict(doc)


def output_dir(text: str) -> str | None:
    """The ``[output] dir`` value of a configuration document, if any."""
    doc = tomllib.loads(text)
    out = doc.get("output", {}).get("dir")
    if out is not None and not isinstance(out, str):
        raise ConfigError("output.dir: expected a string")
    return out


def _p_value(p: float):
    return "inf" if math.isinf(p) else p


def scenario_to_dict(sc: Scenario) -> dict:
    p = sc.params
    model = {
        "lam": p.lam,
        "w0": p.w0,
        "alpha": p.alpha,
        "beta": p.beta,
        "sigma": p.sigma,
        "y_star": list(p.y_star),
        "k": p.k,
        "p": _p_value(p.p),
        "regime": p.regime.value,
    }
    if p.prune_threshold is not None:
        model["prune_threshold"] = p.prune_threshold
    return {
        "model": model,
        "words": [
            {"id": w.id, "nu": w.nu, "init_position": list(w.init_position),
             "init_count": w.init_count}
            for w in p.words
        ],
        "engine": {"kind": sc.engine, "scheme": sc.scheme, "backend": sc.backend},
        "grid": {"min": list(sc.grid.lo), "max": list(sc.grid.hi), "n": list(sc.grid.n)},
        "run": {
            "name": sc.name,
            "t_max": sc.t_max,
            "dt": sc.dt,
            "sample_every": sc.sample_every,
            "seeds": list(sc.seeds),
            "snapshot_times": list(sc.snapshot_times),
            "prune_every": sc.prune_every,
            "notes": list(sc.notes),
            "version": sc.version,
        },
    }


def serialize(sc: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(sc))


def apply_overrides(sc: Scenario, **kw) -> Scenario:
    """Command-line style overrides on an already built scenario."""
    changes = {k: v for k, v in kw.items() if v is not None}
    params = sc.params
    model_keys = {"regime", "p"}
    model_changes = {k: changes.pop(k) for k in list(changes) if k in model_keys}
    if model_changes:
        if "regime" in model_changes:
            model_changes["regime"] = Regime.parse(model_changes["regime"])
        params = params.with_(**model_changes)
    if "seed" in changes:
        changes["seeds"] = (int(changes.pop("seed")),)
    return replace(sc, params=params, **changes)
