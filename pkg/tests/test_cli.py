import json
import subprocess
import sys

import numpy as np
import pytest

from exemplar_dynamics.cli import main, parse_grid
from exemplar_dynamics.config import parse_config
from exemplar_dynamics.core import ConfigError, equilibrium_dispersion
from exemplar_dynamics.field import Grid
from exemplar_dynamics.output import (
    MANIFEST,
    OUTPUT_ENV,
    RunManifest,
    read_field_snapshot,
    read_series,
    verify_manifest,
)
from exemplar_dynamics.scenarios import preset


@pytest.fixture(scope="module")
def single_field(tmp_path_factory):
    out = tmp_path_factory.mktemp("single")
    assert main(["run", "--preset", "single-1d", "--engine", "field", "--out-dir", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def nocomp_field(tmp_path_factory):
    out = tmp_path_factory.mktemp("nocomp")
    code = main(["run", "--preset", "two-word-nocomp", "--engine", "field", "--t-max", "100",
                 "--out-dir", str(out)])
    assert code == 0
    return out


class TestRun:
    def test_single_word_field_relaxes(self, single_field):
        rows = read_series((single_field / "field/series.csv").read_text())
        last = rows[-1]
        assert last.t == pytest.approx(40.0)
        # the mean decays as 5 exp(-0.1 t) from its equilibrated start
        assert abs(last.means["A"][0]) < 5 * np.exp(-0.1 * 35)
        assert last.dispersions["A"] == pytest.approx(equilibrium_dispersion(1, 0, 0.1), rel=0.02)

    def test_layout_and_manifest(self, single_field):
        names = sorted(p.relative_to(single_field).as_posix() for p in single_field.rglob("*")
                       if p.is_file())
        assert names == ["config.toml", "field/field_t0.1.txt", "field/field_t10.txt",
                         "field/field_t40.txt", "field/series.csv", "manifest.json"]
        m = RunManifest.from_json((single_field / MANIFEST).read_text())
        assert m.seeds == [1, 2, 3, 4, 5]
        assert m.grid == {"min": [-20.0], "max": [25.0], "n": [1024]}
        assert set(m.files) == set(names) - {"manifest.json"}
        assert verify_manifest(single_field) == []
        # the echoed configuration reproduces the scenario
        sc = parse_config((single_field / "config.toml").read_text())
        assert sc == preset("single-1d").with_(engine="field")

    def test_field_snapshot_mass(self, single_field):
        t, grid, fields = read_field_snapshot((single_field / "field/field_t40.txt").read_text())
        assert t == 40.0
        mass = np.sum(fields["A"] * grid.quad_weights)
        assert mass == pytest.approx(1.0, rel=1e-6)

    def test_tampering_detected(self, single_field, tmp_path):
        import shutil

        copy = tmp_path / "copy"
        shutil.copytree(single_field, copy)
        with open(copy / "field/series.csv", "a") as fh:
            fh.write("\n")
        assert verify_manifest(copy) == ["field/series.csv"]

    def test_exemplar_runs_are_reproducible(self, tmp_path):
        digests = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(["run", "--preset", "two-word-discards-p1", "--engine", "exemplar",
                         "--seed", "7", "--t-max", "5", "--out-dir", str(out)])
            assert code == 0
            digests.append(RunManifest.from_json((out / MANIFEST).read_text()).files)
        assert digests[0] == digests[1]
        assert "exemplar-seed7/series.csv" in digests[0]
        assert "exemplar-seed7/verdict.json" in digests[0]

    def test_default_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
        assert main(["run", "--preset", "single-1d", "--engine", "exemplar", "--seed", "2",
                     "--t-max", "1"]) == 0
        assert (tmp_path / "single-1d/exemplar-seed2/series.csv").exists()

    def test_config_file_and_flags(self, tmp_path):
        cfg = tmp_path / "run.toml"
        cfg.write_text(f"""
[model]
lam = 1.0
regime = "pure"
[[words]]
nu = 50.0
init_position = [2.0]
init_count = 10
[[words]]
nu = 50.0
init_position = [-2.0]
init_count = 10
[run]
t_max = 50.0
[output]
dir = "{(tmp_path / 'out').as_posix()}"
""")
        code = main(["run", "--config", str(cfg), "--t-max", "1", "--p", "1.5", "--dt", "0.05",
                     "--scheme", "heun", "--grid=-10:10:64", "--regime", "discards"])
        assert code == 0
        sc = parse_config((tmp_path / "out/config.toml").read_text())
        assert (sc.t_max, sc.params.p, sc.dt, sc.scheme) == (1.0, 1.5, 0.05, "heun")
        assert sc.params.regime.value == "competition-with-discards"
        assert sc.grid == Grid.uniform(-10, 10, 64)
        verdict = json.loads((tmp_path / "out/field/verdict.json").read_text())
        # two samples leave a single point in the trailing window: no verdict, with the reason
        assert verdict["verdict"] is None and "window" in verdict["reason"]


class TestClassify:
    def test_nocomp_series_is_merged(self, nocomp_field, capsys):
        assert main(["classify", str(nocomp_field / "field/series.csv")]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "Merged"
        assert json.loads(out[1])["verdict"] == "Merged"

    def test_options(self, nocomp_field, capsys):
        code = main(["classify", str(nocomp_field / "field/series.csv"), "--window", "10",
                     "--sep-factor", "0", "--theta-drift", "1.0", "--sep-rule", "max"])
        assert code == 0
        assert capsys.readouterr().out.splitlines()[0] == "DistinctStable"

    def test_bad_inputs(self, tmp_path):
        assert main(["classify", str(tmp_path / "missing.csv")]) == 1
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y\n")
        assert main(["classify", str(bad)]) == 1


class TestExitCodes:
    @pytest.mark.parametrize("argv", [
        [], ["bogus"], ["run"], ["run", "--preset", "nope"], ["run", "--preset", "single-1d", "--p", "x"],
        ["run", "--preset", "single-1d", "--config", "x.toml"], ["run", "--config", "/nonexistent.toml"],
        ["run", "--preset", "single-1d", "--grid", "1:2"], ["run", "--preset", "single-1d", "--regime", "chaos"],
    ])
    def test_config_errors(self, argv, capsys):
        assert main(argv) == 1
        assert capsys.readouterr().err

    def test_runtime_error(self, tmp_path, capsys):
        # dt * lam > 1 is rejected by the integrator
        code = main(["run", "--preset", "single-1d", "--engine", "field", "--dt", "2",
                     "--t-max", "4", "--out-dir", str(tmp_path)])
        assert code == 2
        assert "StabilityError" in capsys.readouterr().err

    def test_help_and_version(self, capsys):
        assert main(["--version"]) == 0
        assert main(["run", "--help"]) == 0
        assert "--preset" in capsys.readouterr().out


class TestOtherCommands:
    def test_preset_list(self, capsys):
        assert main(["preset-list"]) == 0
        out = capsys.readouterr().out
        assert "two-word-discards-p1" in out and "2d-five-words" in out

    def test_validate(self, capsys):
        assert main(["validate"]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 7 and all(line.startswith("PASS") for line in lines)

    def test_converge(self, tmp_path, capsys):
        cfg = tmp_path / "c.toml"
        cfg.write_text('preset = "validate-regime2"\n[run]\nt_max = 1.0\n')
        table = tmp_path / "table.csv"
        code = main(["converge", "--config", str(cfg), "--nu", "100", "1000", "--seeds", "2",
                     "--out", str(table)])
        assert code == 0
        lines = table.read_text().splitlines()
        assert lines[0] == "nu,word,mean_deviation,dispersion_deviation"
        assert [line.split(",")[:2] for line in lines[1:]] == [
            ["100", "A"], ["100", "B"], ["1000", "A"], ["1000", "B"]]
        assert capsys.readouterr().out == table.read_text()

    def test_converge_rejects_descending(self):
        assert main(["converge", "--nu", "1000", "100"]) == 1


def test_parse_grid():
    assert parse_grid("-1:1:32", 2) == Grid.uniform(-1, 1, 32, 2)
    assert parse_grid("-1:1:32,0:2:16", 2) == Grid((-1.0, 0.0), (1.0, 2.0), (32, 16))
    with pytest.raises(ConfigError):
        parse_grid("a:b:c", 1)


def test_console_script_entry_point():
    res = subprocess.run([sys.executable, "-m", "exemplar_dynamics.cli", "preset-list"],
                         capture_output=True, text=True, check=False)
    assert res.returncode == 0
    assert "single-1d" in res.stdout
