"""CLI driver: subcommands, determinism, caching, failure reporting."""

import json
from pathlib import Path

import numpy as np
import pytest

from slod import cli
from slod.config import CoeffSpec, ExperimentConfig


QUICK = dict(
    d=2, coarse_levels=[2], ell=[1], fine_level=4,
    coeff=CoeffSpec(kind="constant"), methods=["slod"],
)


def _flags(out, extra=()):
    return [
        "--d", "2", "--coarse-levels", "2", "--ell", "1", "--fine-level", "4",
        "--coeff", "constant", "--out", str(out), *extra,
    ]


class TestCheck:
    def test_passes(self, capsys, tmp_path):
        code = cli.main(["check", *_flags(tmp_path)])
        assert code == 0
        assert "all checks passed" in capsys.readouterr().out


class TestDecay:
    def test_writes_csv_and_exit_zero(self, tmp_path):
        code = cli.main(["decay", *_flags(tmp_path)])
        assert code == 0
        csv_path = tmp_path / "decay.csv"
        text = csv_path.read_text()
        assert text.startswith(cli.CSV_SCHEMA)
        assert "slod" in text
        assert (tmp_path / "decay_timings.csv").exists()

    def test_rerun_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["decay", *_flags(a)]) == 0
        assert cli.main(["decay", *_flags(b)]) == 0
        assert (a / "decay.csv").read_bytes() == (b / "decay.csv").read_bytes()

    def test_workers_do_not_change_csv(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["decay", *_flags(a, ["--workers", "1"])]) == 0
        assert cli.main(["decay", *_flags(b, ["--workers", "4"])]) == 0
        assert (a / "decay.csv").read_bytes() == (b / "decay.csv").read_bytes()

    def test_warm_cache_identical(self, tmp_path, monkeypatch):
        cache = tmp_path / "cache"
        monkeypatch.setenv(cli.CACHE_ENV, str(cache))
        a, b = tmp_path / "a", tmp_path / "b"
        assert cli.main(["decay", *_flags(a)]) == 0
        assert list(cache.glob("basis_*.pkl"))  # cache was populated
        assert cli.main(["decay", *_flags(b)]) == 0
        assert (a / "decay.csv").read_bytes() == (b / "decay.csv").read_bytes()

    def test_stability_failure_reported(self, tmp_path, monkeypatch):
        """A contrived rank-deficient basis must flag the row, write a
        machine-readable failure record and exit nonzero."""
        real = cli._build_basis

        def degenerate(config, field, p, ell, method):
            basis = real(config, field, p, ell, method)
            broken = list(basis)
            broken[1] = broken[0]
            return broken

        monkeypatch.setattr(cli, "_build_basis", degenerate)
        code = cli.main(["decay", *_flags(tmp_path)])
        assert code != 0
        record = json.loads((tmp_path / "failure.json").read_text())
        assert record["error"] == "stability failure"
        rows = (tmp_path / "decay.csv").read_text()
        assert "failed:stability" in rows


class TestConvergence:
    def test_rates_printed(self, tmp_path, capsys):
        flags = [
            "--d", "2", "--coarse-levels", "2", "3", "--ell", "1",
            "--fine-level", "5", "--coeff", "constant", "--out", str(tmp_path),
        ]
        assert cli.main(["convergence", *flags]) == 0
        assert "observed rate" in capsys.readouterr().out
        assert (tmp_path / "convergence.csv").exists()


class TestSteklov:
    def test_row_count(self, tmp_path):
        flags = [
            "--d", "2", "--coarse-levels", "3", "--ell", "2",
            "--fine-level", "5", "--coeff", "constant", "--out", str(tmp_path),
        ]
        assert cli.main(["steklov", *flags]) == 0
        lines = (tmp_path / "steklov.csv").read_text().strip().splitlines()
        # schema comment + header + requested eigenpairs (40 by default,
        # capped at the boundary dimension)
        assert len(lines) - 2 == 40

    def test_lambda0_zero_and_ratios_trend(self, tmp_path):
        import csv as csv_mod

        from scipy.stats import spearmanr

        flags = [
            "--d", "2", "--coarse-levels", "4", "--ell", "3",
            "--fine-level", "6", "--coeff", "constant", "--out", str(tmp_path),
        ]
        assert cli.main(["steklov", *flags]) == 0
        with open(tmp_path / "steklov.csv", newline="") as fh:
            fh.readline()
            rows = list(csv_mod.DictReader(fh))
        lam = [float(r["lambda"]) for r in rows]
        ratios = [float(r["interior_mass_ratio"]) for r in rows]
        assert abs(lam[0]) <= 1e-9
        assert spearmanr(range(len(ratios)), ratios).statistic < 0


class TestPlot:
    def test_missing_file_exits_nonzero(self, tmp_path, capsys):
        code = cli.main(
            ["plot", str(tmp_path / "nope.csv"), "--kind", "decay"]
        )
        assert code != 0

    def test_empty_csv_rejected_no_file(self, tmp_path):
        empty = tmp_path / "empty.csv"
        empty.write_text(cli.CSV_SCHEMA + "\n" + ",".join(cli.ResultRow.FIELDS) + "\n")
        code = cli.main(["plot", str(empty), "--kind", "decay"])
        assert code != 0
        assert not (tmp_path / "empty.svg").exists()

    def test_synthetic_csv_renders_points(self, tmp_path):
        rows = [
            cli.ResultRow(2, 4, 0.0625, ell, "slod", 10.0 ** -ell, 1e-3, 10.0, "ok")
            for ell in (1, 2, 3)
        ]
        csv_path = tmp_path / "synthetic.csv"
        cli._write_rows(csv_path, rows)
        assert cli.main(["plot", str(csv_path), "--kind", "decay"]) == 0
        svg = (tmp_path / "synthetic.svg").read_text()
        # one marker <use> per data point per panel, plus legend markers
        assert svg.count("<use") >= 3
        assert (tmp_path / "synthetic.gp").exists()

    def test_convergence_has_guide_line(self, tmp_path):
        rows = [
            cli.ResultRow(2, p, 2.0 ** -p, 3, "slod", 4.0 ** -p, 1e-3, 10.0, "ok")
            for p in (2, 3, 4)
        ]
        csv_path = tmp_path / "conv.csv"
        cli._write_rows(csv_path, rows)
        assert cli.main(["plot", str(csv_path), "--kind", "convergence"]) == 0
        assert "slope 2" in (tmp_path / "conv.svg").read_text()


class TestBasisSubcommand:
    def test_exports_csv(self, tmp_path, capsys):
        assert cli.main(["basis", *_flags(tmp_path)]) == 0
        out = capsys.readouterr().out
        assert "riesz condition" in out
        text = (tmp_path / "basis.csv").read_text()
        assert text.count("\n") == 16 + 2  # 16 elements + schema + header


class TestConfigPlumbing:
    def test_config_file_with_override(self, tmp_path, capsys):
        config = ExperimentConfig(**QUICK, out_dir=str(tmp_path / "ignored"))
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(config.to_json())
        out = tmp_path / "actual"
        code = cli.main(
            ["decay", "--config", str(cfg_path), "--out", str(out)]
        )
        assert code == 0
        assert (out / "decay.csv").exists()
        assert not (tmp_path / "ignored").exists()

    def test_invalid_config_exits_nonzero(self, capsys, tmp_path):
        code = cli.main(
            ["decay", "--d", "2", "--coarse-levels", "4", "--fine-level", "5",
             "--coeff", "constant", "--out", str(tmp_path)]
        )
        assert code != 0
        assert "invalid configuration" in capsys.readouterr().err
