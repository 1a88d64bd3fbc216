"""Command-line front end.

Exit codes: 0 success, 1 configuration or usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__, _kernels
from .config import apply_overrides, output_dir, parse_config, serialize
from .core import ConfigError
from .field import Grid
from .output import (
    MANIFEST,
    RunManifest,
    default_output_root,
    exemplar_snapshot_csv,
    field_snapshot_text,
    fmt,
    now,
    read_series,
    series_csv,
    write_text,
)
from .scenarios import (
    PRESETS,
    Scenario,
    classify_outcome,
    convergence_study,
    preset,
    run_exemplar,
    run_field,
)
from .validation import run_checks

log = logging.getLogger("exemplar_dynamics")


class UsageError(ConfigError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_grid(text: str, dim: int) -> Grid:
    """``min:max:n`` for every axis, or one such triple per axis separated by commas."""
    try:
        axes = [tuple(part.split(":")) for part in text.split(",")]
        lo, hi, n = zip(*((float(a), float(b), int(c)) for a, b, c in axes))
    except ValueError:
        raise ConfigError(f"--grid: expected min:max:n, got {text!r}") from None
    if len(axes) == 1:
        lo, hi, n = lo * dim, hi * dim, n * dim
    return Grid(lo, hi, n)


def load_scenario(args) -> tuple[Scenario, str | None]:
    if args.config and args.preset:
        raise ConfigError("give either --config or --preset, not both")
    out = None
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read {args.config}: {exc.strerror}") from None
        sc = parse_config(text)
        out = output_dir(text)
    elif args.preset:
        sc = preset(args.preset)
    else:
        raise ConfigError("one of --config or --preset is required")
    return sc, out


def build_parser() -> argparse.ArgumentParser:
    p = Parser(prog="exemplar-dynamics", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=Parser)

    run = sub.add_parser("run", help="run a scenario and write series, snapshots and a manifest")
    run.add_argument("--config", help="TOML configuration file")
    run.add_argument("--preset", help="preset name (see preset-list)")
    run.add_argument("--engine", choices=["exemplar", "field", "both"])
    run.add_argument("--regime")
    run.add_argument("--p", type=float)
    run.add_argument("--seed", type=int)
    run.add_argument("--t-max", type=float)
    run.add_argument("--dt", type=float)
    run.add_argument("--scheme", choices=["euler", "heun"])
    run.add_argument("--grid", help="min:max:n, or one triple per axis separated by commas; "
                     "write --grid=-20:25:512 when min is negative")
    run.add_argument("--out-dir", help="output directory (default: $EXEMPLAR_DYNAMICS_OUT/<name>)")

    sub.add_parser("preset-list", help="list the built-in presets")

    conv = sub.add_parser("converge", help="exemplar-vs-field convergence study")
    conv.add_argument("--config")
    conv.add_argument("--preset", default=None)
    conv.add_argument("--nu", type=float, nargs="+", default=[100.0, 1000.0, 10000.0])
    conv.add_argument("--seeds", type=int, default=5, help="number of seeds per nu")
    conv.add_argument("--out", help="also write the table to this CSV file")

    cls = sub.add_parser("classify", help="merger verdict for an existing series.csv")
    cls.add_argument("series")
    cls.add_argument("--window", type=float, help="trailing window (default: last 20%%)")
    cls.add_argument("--sep-factor", type=float, default=2.0)
    cls.add_argument("--theta-drift", type=float)
    cls.add_argument("--sep-rule", choices=["mean", "max"], default="mean",
                     help="dispersion scale of a pair: average or larger of the two")

    sub.add_parser("validate", help="run the built-in invariant suite")
    return p


def _write_run(root: Path, sub: str, sc: Scenario, rows, snaps, inventory, field_grid=None):
    dim = sc.params.dim
    write_text(root, f"{sub}/series.csv", series_csv(rows, dim), inventory)
    for t, snap in sorted(snaps.items()):
        if field_grid is None:
            write_text(root, f"{sub}/snapshot_t{t:g}.csv", exemplar_snapshot_csv(snap, dim),
                       inventory)
        else:
            text = field_snapshot_text(snap, field_grid, sc.params.word_ids, t)
            write_text(root, f"{sub}/field_t{t:g}.txt", text, inventory)
    if len(sc.params.words) > 1:
        try:
            verdict = classify_outcome(rows).summary()
        except ValueError as exc:
            verdict = {"verdict": None, "reason": str(exc)}
        write_text(root, f"{sub}/verdict.json", json.dumps(verdict, indent=2) + "\n", inventory)
        log.info("%s: %s", sub, verdict["verdict"])


def cmd_run(args) -> int:
    sc, cfg_out = load_scenario(args)
    sc = apply_overrides(
        sc, engine=args.engine, regime=args.regime, p=args.p, seed=args.seed,
        t_max=args.t_max, dt=args.dt, scheme=args.scheme,
    )
    if args.grid:
        sc = sc.with_(grid=parse_grid(args.grid, sc.params.dim))
    root = Path(args.out_dir or cfg_out or default_output_root() / sc.name)
    root.mkdir(parents=True, exist_ok=True)
    started = now()
    inventory: dict[str, str] = {}
    config_text = serialize(sc)
    write_text(root, "config.toml", config_text, inventory)

    if sc.engine in ("field", "both"):
        log.info("field run to t=%s", sc.t_max)
        rows, _, snaps = run_field(sc)
        _write_run(root, "field", sc, rows, snaps, inventory, field_grid=sc.grid)
    if sc.engine in ("exemplar", "both"):
        _kernels.warmup()
        for seed in sc.seeds:
            log.info("exemplar run, seed %d, to t=%s", seed, sc.t_max)
            rows, _, snaps = run_exemplar(sc, seed)
            _write_run(root, f"exemplar-seed{seed}", sc, rows, snaps, inventory)

    manifest = RunManifest(
        tool_version=__version__,
        config=config_text,
        seeds=list(sc.seeds),
        grid=None if sc.engine == "exemplar" else {
            "min": list(sc.grid.lo), "max": list(sc.grid.hi), "n": list(sc.grid.n)},
        started=started,
        finished=now(),
        files=inventory,
    )
    (root / MANIFEST).write_text(manifest.to_json())
    print(root)
    return 0


def cmd_preset_list(args) -> int:
    for name, make in PRESETS.items():
        sc = make()
        p = sc.params
        print(f"{name:22s} {p.dim}-d  {len(p.words)} word(s)  {p.regime.value:26s} "
              f"p={p.p:g}  t_max={sc.t_max:g}")
    return 0


def cmd_converge(args) -> int:
    if args.config or args.preset:
        sc, _ = load_scenario(args)
    else:
        sc = preset("validate-regime2")
    table = convergence_study(sc, args.nu, args.seeds)
    lines = ["nu,word,mean_deviation,dispersion_deviation"]
    lines += [
        f"{fmt(r.nu)},{r.word},{fmt(r.mean_deviation)},{fmt(r.dispersion_deviation)}"
        for r in table
    ]
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
    return 0


def cmd_classify(args) -> int:
    try:
        text = Path(args.series).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {args.series}: {exc.strerror}") from None
    try:
        rows = read_series(text)
    except ValueError as exc:
        raise ConfigError(f"{args.series}: {exc}") from None
    kw = {"window": args.window, "sep_factor": args.sep_factor, "sep_rule": args.sep_rule}
    if args.theta_drift is not None:
        kw["theta_drift"] = args.theta_drift
    verdict = classify_outcome(rows, **kw)
    print(verdict.verdict.value)
    print(json.dumps(verdict.summary()))
    return 0


def cmd_validate(args) -> int:
    results = run_checks()
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:28s} {r.detail} ({r.seconds:.1f}s)")
    return 0 if all(r.passed for r in results) else 2


COMMANDS = {
    "run": cmd_run,
    "preset-list": cmd_preset_list,
    "converge": cmd_converge,
    "classify": cmd_classify,
    "validate": cmd_validate,
}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
