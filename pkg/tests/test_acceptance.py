"""Acceptance gate: the full battery at the reference configuration.

The battery runs once in-process and is then rerun as an independent
``cbflab verify`` process, so the rerun-determinism criterion compares bytes
from two separate executions.  Runs are sequential so timings are not
distorted by competing for cores.  Each criterion prints one PASS/FAIL line.
"""

import subprocess
import sys
import time

import pytest

from cbflab.config import reference_config
from cbflab.suite import run_suite

BUDGET = {1: 60.0, 2: 120.0, 5: 600.0, 9: 1800.0}
TOTAL_BUDGET = 45 * 60.0


@pytest.fixture(scope="session")
def battery(tmp_path_factory):
    cfg = reference_config()
    first = tmp_path_factory.mktemp("verify-first")
    second = tmp_path_factory.mktemp("verify-second")
    start = time.perf_counter()
    res = run_suite(cfg, out_dir=first)
    elapsed = time.perf_counter() - start
    rerun = subprocess.run(
        [sys.executable, "-m", "cbflab.cli", "verify", "--out", str(second)],
        capture_output=True,
    )
    return {
        "result": res,
        "elapsed": elapsed,
        "first": first / "verify.csv",
        "second": second / "verify.csv",
        "rerun_code": rerun.returncode,
        "rerun_err": rerun.stderr.decode(),
    }


def _report(capsys, crit, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {crit:2d}] {'PASS' if ok else 'FAIL'}  {detail}")


def _criterion(battery, capsys, crit):
    checks = battery["result"].by_criterion()[crit]
    ok = all(c.passed for c in checks)
    budget = BUDGET.get(crit)
    runtime = sum(c.runtime for c in checks)
    within = budget is None or runtime < budget
    failing = [f"{r.name}: lhs={r.lhs!r} rhs={r.rhs!r}" for c in checks for r in c.rows if not r.passed]
    failing += [f"{c.name}: {c.status} {c.message}" for c in checks if c.status in ("errored", "skipped")]
    detail = f"{', '.join(c.name for c in checks)}  {runtime:.1f}s" + (f" (budget {budget:.0f}s)" if budget else "")
    _report(capsys, crit, ok and within, detail)
    assert ok, failing
    assert within, f"runtime {runtime:.1f}s exceeds {budget:.0f}s"


@pytest.mark.acceptance
class TestAcceptance:
    def test_operator_identities(self, battery, capsys):
        _criterion(battery, capsys, 1)

    def test_monotonicity_sweeps(self, battery, capsys):
        _criterion(battery, capsys, 2)

    def test_gateaux_derivative(self, battery, capsys):
        _criterion(battery, capsys, 3)

    def test_deterministic_solver(self, battery, capsys):
        _criterion(battery, capsys, 4)

    def test_absorbing_sets(self, battery, capsys):
        _criterion(battery, capsys, 5)

    def test_ou_statistics(self, battery, capsys):
        _criterion(battery, capsys, 6)

    def test_rds_structure(self, battery, capsys):
        _criterion(battery, capsys, 7)

    def test_continuity_in_data_noise_forcing(self, battery, capsys):
        _criterion(battery, capsys, 8)

    def test_upper_semicontinuity(self, battery, capsys):
        _criterion(battery, capsys, 9)

    def test_full_verify_suite(self, battery, capsys):
        a = battery["first"].read_bytes()
        b = battery["second"].read_bytes()
        same = a == b
        fast = battery["elapsed"] < TOTAL_BUDGET
        code_ok = battery["rerun_code"] == battery["result"].exit_code
        _report(capsys, 10, same and fast and code_ok, f"identical CSV bytes: {same}, runtime {battery['elapsed']:.0f}s")
        assert code_ok, battery["rerun_err"][-2000:]
        assert same
        assert fast
