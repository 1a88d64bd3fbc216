"""Result files: diagnostics series, snapshots and the run manifest.

Series CSV columns, in order::

    t, word, mean_0[, mean_1], dispersion, total_weight, live_count, discard_count

The count columns are empty for field runs. Floats are written with 17
significant digits so that values survive a round trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import DiagnosticsRow
from .field import Grid

OUTPUT_ENV = "EXEMPLAR_DYNAMICS_OUT"
MANIFEST = "manifest.json"


def fmt(x: float) -> str:
    return format(float(x), ".17g")


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def series_header(dim: int) -> list[str]:
    means = [f"mean_{a}" for a in range(dim)]
    return ["t", "word", *means, "dispersion", "total_weight", "live_count", "discard_count"]


def series_csv(rows: Sequence[DiagnosticsRow], dim: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(series_header(dim))
    for r in rows:
        for word in r.means:
            live = "" if r.live_counts is None else str(r.live_counts[word])
            disc = "" if r.discard_counts is None else str(r.discard_counts[word])
            w.writerow([
                fmt(r.t),
                word,
                *(fmt(v) for v in np.atleast_1d(r.means[word])),
                fmt(r.dispersions[word]),
                fmt(r.total_weights[word]),
                live,
                disc,
            ])
    return buf.getvalue()


def read_series(text: str) -> list[DiagnosticsRow]:
    """Inverse of :func:`series_csv`; rows are grouped by time."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or header[:2] != ["t", "word"]:
        raise ValueError("not a diagnostics series: missing 't,word' header")
    dim = sum(1 for h in header if h.startswith("mean_"))
    if header != series_header(dim):
        raise ValueError(f"unexpected series columns {header}")
    rows: list[DiagnosticsRow] = []
    for rec in reader:
        if not rec:
            continue
        t = float(rec[0])
        if not rows or rows[-1].t != t:
            rows.append(DiagnosticsRow(t, {}, {}, {}, None, None))
        row = rows[-1]
        word = rec[1]
        row.means[word] = np.array([float(v) for v in rec[2:2 + dim]])
        row.dispersions[word] = float(rec[2 + dim])
        row.total_weights[word] = float(rec[3 + dim])
        if rec[4 + dim] != "":
            row.live_counts = row.live_counts or {}
            row.live_counts[word] = int(rec[4 + dim])
        if rec[5 + dim] != "":
            row.discard_counts = row.discard_counts or {}
            row.discard_counts[word] = int(rec[5 + dim])
    return rows


def exemplar_snapshot_csv(rows: Iterable[tuple], dim: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["word", *(f"y_{a}" for a in range(dim)), "weight"])
    for word, *rest in rows:
        w.writerow([word, *(fmt(v) for v in rest)])
    return buf.getvalue()


def field_snapshot_text(rho: np.ndarray, grid: Grid, word_ids: Sequence[str], t: float) -> str:
    """Self-describing header, then for each word its values one grid line per row."""
    lines = [f"# t {fmt(t)}", f"# dim {grid.dim}"]
    for a in range(grid.dim):
        lines.append(f"# axis {a} min {fmt(grid.lo[a])} max {fmt(grid.hi[a])} n {grid.n[a]}")
    for i, word in enumerate(word_ids):
        lines.append(f"# word {word}")
        block = np.atleast_2d(rho[i])
        lines.extend(" ".join(fmt(v) for v in line) for line in block)
    return "\n".join(lines) + "\n"


def read_field_snapshot(text: str) -> tuple[float, Grid, dict[str, np.ndarray]]:
    t = math.nan
    lo, hi, n = [], [], []
    fields: dict[str, list] = {}
    current = None
    for line in text.splitlines():
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "t":
                t = float(parts[1])
            elif parts[0] == "axis":
                lo.append(float(parts[3]))
                hi.append(float(parts[5]))
                n.append(int(parts[7]))
            elif parts[0] == "word":
                current = parts[1]
                fields[current] = []
        elif line.strip():
            fields[current].append([float(v) for v in line.split()])
    grid = Grid(tuple(lo), tuple(hi), tuple(n))
    out = {w: np.array(v).reshape(grid.shape) for w, v in fields.items()}
    return t, grid, out


# -- manifest -------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    tool_version: str
    config: str
    seeds: list[int]
    grid: dict | None
    started: str
    finished: str
    files: dict[str, str]

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        return cls(**json.loads(text))


def write_text(root: Path, rel: str, text: str, inventory: dict[str, str]) -> Path:
    path = root / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8", newline="\n")
    inventory[rel] = sha256_file(path)
    return path


def verify_manifest(root: Path) -> list[str]:
    """Relative paths whose content no longer matches the manifest digest."""
    root = Path(root)
    manifest = RunManifest.from_json((root / MANIFEST).read_text())
    bad = []
    for rel, digest in sorted(manifest.files.items()):
        path = root / rel
        if not path.exists() or sha256_file(path) != digest:
            bad.append(rel)
    return bad
