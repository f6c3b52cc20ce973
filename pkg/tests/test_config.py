"""Configuration loading and validation."""

import math

import pytest

from cbflab.config import ConfigError, RunConfig, load_config, parse_config, reference_config
from cbflab.spectral import norm

MINIMAL = "grid: {n: 16}\nparams: {mu: 1.0, beta: 1.0, r: 3}\n"


class TestLoad:
    def test_minimal_fills_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.alpha == 0.0 and cfg.M0_margin == 1.1
        assert cfg.L == pytest.approx(2 * math.pi)
        assert cfg.forcing == {"kind": "zero"}

    def test_from_file(self, tmp_path):
        p = tmp_path / "run.yaml"
        p.write_text(MINIMAL + "seeds: {omega: 9}\ntime: {dt: 0.02}\n", encoding="utf-8")
        cfg = load_config(p)
        assert cfg.seed_omega == 9 and cfg.dt == 0.02

    def test_full_schema(self):
        text = """
grid: {n: 16, L: 6.0}
params: {mu: 2.0, beta: 1.0, r: 5, alpha: 0.1}
forcing: {kind: single-mode, k: [0, 1, 0], amplitude: 0.2, polarization: [1, 0, 0]}
noise: {s_exponent: 1.5, k_max: 2, alpha_ou: 1.0, epsilon: 0.3}
time: {dt: 0.01, T: 2.0, t0: 10.0}
seeds: {omega: 3, init: 4}
output: results
M0_margin: 1.5
"""
        cfg = parse_config(text)
        assert (cfg.n, cfg.L, cfg.r, cfg.noise_k_max, cfg.output) == (16, 6.0, 5, 2.0, "results")
        assert norm(cfg.forcing_field(), "H") == pytest.approx(0.2 * math.sqrt(6.0**3 / 2))

    def test_grashof_forcing(self):
        cfg = reference_config()
        f = cfg.forcing_field()
        assert norm(f, "H") / (cfg.mu**2 * cfg.grid().lambda1) == pytest.approx(1.0, rel=1e-13)

    def test_seeded_random_forcing(self):
        cfg = parse_config(MINIMAL + "forcing: {kind: seeded-random, k_max: 2, norm: 0.5, seed: 3}\n")
        f = cfg.forcing_field()
        assert norm(f, "H") == pytest.approx(0.5)
        assert f.band() <= 2


class TestValidation:
    def test_condition_on_r3(self):
        with pytest.raises(ConfigError, match=r"2βμ = 0.8 < 1"):
            parse_config("grid: {n: 16}\nparams: {mu: 1.0, beta: 0.4, r: 3}\n")

    def test_negative_mu(self):
        with pytest.raises(ConfigError, match="mu must be positive"):
            parse_config("grid: {n: 16}\nparams: {mu: -1.0, beta: 1.0, r: 5}\n")

    def test_collects_every_violation(self):
        text = "grid: {n: 16, extra: 1}\nparams: {mu: 1.0, beta: 0.4, r: 3}\nnoise: {s_exponent: 0.5}\nwhat: 1\n"
        with pytest.raises(ConfigError) as info:
            parse_config(text)
        v = info.value.violations
        assert any("grid.extra" in m for m in v)
        assert any("'what'" in m for m in v)
        assert any("2βμ" in m for m in v)
        assert any("s_exponent" in m for m in v)

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="params.r"):
            parse_config("grid: {n: 16}\nparams: {mu: 1.0, beta: 1.0}\n")

    def test_parse_error_has_line(self):
        with pytest.raises(ConfigError, match="line 2"):
            parse_config("grid: {n: 16}\nparams: mu: 1\n")

    @pytest.mark.parametrize(
        "extra, fragment",
        [
            ("forcing: {kind: single-mode, k: [7, 0, 0], amplitude: 1}\n", "dealiased band"),
            ("forcing: {kind: single-mode, k: [1, 0, 0]}\n", "exactly one of"),
            ("forcing: {kind: vortex}\n", "forcing.kind"),
            ("noise: {k_max: 9}\n", "noise.k_max"),
            ("noise: {epsilon: 2}\n", "epsilon"),
            ("time: {dt: 0}\n", "dt"),
            ("M0_margin: 1.0\n", "M0_margin"),
        ],
    )
    def test_rejections(self, extra, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(MINIMAL + extra)

    def test_noise_gate_override(self):
        cfg = parse_config(MINIMAL + "noise: {s_exponent: 0.5}\n", allow_noise_gate=True)
        assert cfg.s_exponent == 0.5

    def test_grid_size(self):
        with pytest.raises(ConfigError, match="grid.n"):
            parse_config("grid: {n: 6}\nparams: {mu: 1.0, beta: 1.0, r: 3}\n")


class TestHash:
    def test_output_excluded(self):
        a = reference_config()
        assert a.config_hash() == a.with_overrides(output="elsewhere").config_hash()
        assert a.config_hash() != a.with_overrides(seed_omega=2).config_hash()
        assert len(a.config_hash()) == 64

    def test_overrides_validated(self):
        with pytest.raises(ConfigError):
            reference_config(beta=0.1)

    def test_none_ignored(self):
        a = reference_config()
        assert a.with_overrides(dt=None) == a

    def test_frozen(self):
        with pytest.raises(Exception):
            RunConfig(n=16, mu=1, beta=1, r=3).n = 8
