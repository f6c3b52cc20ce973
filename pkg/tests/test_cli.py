"""Command-line smoke tests on short runs."""

import pytest

from cbflab.cli import build_parser, main
from cbflab.io import read_csv, read_snapshot


def run(tmp_path, *argv):
    return main([*argv, "--out", str(tmp_path)])


class TestCli:
    def test_subcommands_listed(self):
        sub = build_parser()._subparsers._group_actions[0].choices
        assert set(sub) == {"simulate", "ou-path", "pullback", "usc-experiment", "cocycle", "continuity", "kappa", "verify"}

    def test_simulate(self, tmp_path, capsys):
        assert run(tmp_path, "simulate", "--T", "0.2", "--dt", "0.02") == 0
        h, rows = read_csv(tmp_path / "ledger.csv")
        assert len(rows) == 11 and list(rows[0]) == ["t", "H2", "V2", "Lr1", "AH2", "fu"]
        head, fields = read_snapshot(tmp_path / "final.cbf")
        assert head.config_hash == h and head.t == pytest.approx(0.2)
        assert "VERDICT PASS" in capsys.readouterr().out

    def test_ou_path(self, tmp_path):
        assert run(tmp_path, "ou-path", "--T", "1", "--seed-omega", "4") == 0
        _, rows = read_csv(tmp_path / "mode_variance.csv")
        assert len(rows) == 61
        head, _ = read_snapshot(tmp_path / "z_final.cbf")
        assert head.t == pytest.approx(1.0)

    def test_pullback(self, tmp_path):
        assert run(tmp_path, "pullback", "--t0", "0.5", "--dt", "0.05", "--cloud-size", "2", "--epsilon", "0.2") == 0
        head, fields = read_snapshot(tmp_path / "cloud.cbf")
        assert head.count == 2

    def test_cocycle(self, tmp_path):
        assert run(tmp_path, "cocycle", "--dt", "0.05") == 0
        _, rows = read_csv(tmp_path / "cocycle.csv")
        assert [r["passed"] for r in rows] == ["true"] * 3

    def test_continuity(self, tmp_path):
        assert run(tmp_path, "continuity", "--T", "0.2", "--dt", "0.05") == 0

    def test_kappa(self, tmp_path):
        assert run(tmp_path, "kappa", "--T-list", "5,10", "--dt", "0.05") == 0
        _, rows = read_csv(tmp_path / "kappa.csv")
        assert [float(r["T"]) for r in rows] == [5.0, 10.0]

    def test_verify_subset(self, tmp_path):
        assert run(tmp_path, "verify", "--only", "gateaux") == 0
        assert (tmp_path / "verify.csv").exists()

    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("grid: {n: 16}\nparams: {mu: 1.0, beta: 0.4, r: 3}\n", encoding="utf-8")
        assert run(tmp_path, "simulate", "--config", str(bad)) == 2
        assert "2βμ = 0.8 < 1" in capsys.readouterr().err
