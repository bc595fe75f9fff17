import json

import pytest

from graphsvgd.cli import cli_main, ksd_null
from graphsvgd.config import ConfigError, load_config, parse_config

GRID = """\
experiment = "gaussian-grid"
seed = 3
trials = 2
iterations = 4
particle_counts = [5]
algorithms = ["vanilla", "graphical-local", "exact"]

[params]
rows = 2
cols = 2
pool = 100
"""


class TestParseConfig:
    def test_valid(self):
        cfg = parse_config(GRID)
        assert cfg.experiment == "gaussian-grid" and cfg.seed == 3
        assert cfg.algorithms == [("vanilla", "global"), ("graphical", "local"), ("exact", "none")]
        assert cfg.params["rows"] == 2 and cfg.master_step == 1.5

    @pytest.mark.parametrize("text,line,fragment", [
        ('experiment = "gaussian-grid"\ncolour = 3\n', 2, "unknown field"),
        ('seed = 1\n', 1, "missing field"),
        ('seed = 1\nexperiment = "mnist"\n', 2, "unknown experiment"),
        ('experiment = "sensor"\ntrials = "ten"\n', 2, "integer"),
        ('experiment = "sensor"\nsteps = 3\n', 2, "table"),
        ('experiment = "sensor"\ntrials = 0\n', 2, "trials"),
        ('experiment = "sensor"\n\nalgorithms = ["nuts"]\n', 3, "algorithm"),
        ('experiment = "sensor"\n[params]\nlayout = "ring"\nwidth = 2\n', 4, "width"),
        ('experiment = "sensor"\nseed = \n', 2, "malformed"),
    ])
    def test_errors_are_line_anchored(self, text, line, fragment):
        with pytest.raises(ConfigError) as info:
            parse_config(text, "exp.toml")
        assert info.value.line == line
        assert fragment in str(info.value)
        assert str(info.value).startswith(f"exp.toml:{line}:")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.toml")


@pytest.fixture
def grid_file(tmp_path):
    path = tmp_path / "grid.toml"
    path.write_text(GRID)
    return path


class TestRun:
    def test_outputs(self, grid_file, tmp_path, capsys):
        out = tmp_path / "out"
        assert cli_main(["run", str(grid_file), "--out", str(out)]) == 0
        header = (out / "results.csv").read_text().splitlines()[0].split(",")
        assert header[:10] == ["iteration", "n", "algorithm", "kernel_variant", "seed",
                               "mse_mean", "mse_second", "mmd2", "ksd2", "rmse"]
        assert len((out / "results.csv").read_text().splitlines()) == 1 + 2 * 3
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 3 and manifest["rows_written"] == 6
        assert {"graphsvgd", "numpy", "scipy"} <= manifest["versions"].keys()
        assert manifest["wall_seconds"] > 0
        assert "metric" in (out / "summary.csv").read_text().splitlines()[0]
        assert "wrote 6 rows" in capsys.readouterr().out

    def test_byte_identical(self, grid_file, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        cli_main(["run", "--config", str(grid_file), "--out", str(a)])
        cli_main(["run", "--config", str(grid_file), "--out", str(b)])
        assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()
        assert (a / "summary.csv").read_bytes() == (b / "summary.csv").read_bytes()

    def test_overrides(self, grid_file, tmp_path):
        out = tmp_path / "o"
        cli_main(["run", str(grid_file), "--out", str(out), "--seed", "9", "--trials", "1"])
        rows = (out / "results.csv").read_text().splitlines()[1:]
        assert len(rows) == 3 and all(r.split(",")[4] == "9" for r in rows)

    def test_bad_config_exit_code(self, tmp_path, capsys):
        path = tmp_path / "bad.toml"
        path.write_text('experiment = "mnist"\n')
        assert cli_main(["run", str(path)]) == 2
        err = capsys.readouterr().err
        assert "bad.toml:1" in err and "usage" in err

    def test_missing_config_argument(self, capsys):
        assert cli_main(["run"]) == 2


def test_no_command(capsys):
    assert cli_main([]) == 2
    assert "usage" in capsys.readouterr().err


def test_gradcheck(capsys):
    assert cli_main(["gradcheck", "sensor"]) == 0
    assert capsys.readouterr().out.startswith("sensor: PASS")
    assert cli_main(["gradcheck", "all"]) == 0
    assert cli_main(["gradcheck", "teapot"]) == 2


def test_audit(grid_file, capsys):
    assert cli_main(["audit", str(grid_file)]) == 0
    assert "PASS audit" in capsys.readouterr().out


def test_ksd_null(capsys):
    assert cli_main(["ksd-null", "500", "1"]) in (0, 1)
    out = capsys.readouterr().out
    assert out.startswith("global:") and "local:" in out
    assert cli_main(["ksd-null", "2", "1"]) == 2
    res = ksd_null(300, 4)
    assert res["global"]["ksd2"] == pytest.approx(res["local"]["ksd2"])
