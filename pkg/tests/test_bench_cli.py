import json
import math
import textwrap

import numpy as np
import pytest

from chimera2d.bench import (
    ParseError,
    autocorrelation_period,
    bench_moving_cylinder,
    config_from_dict,
    config_to_dict,
    dfg_config,
    drag_lift_coefficients,
    moving_cylinder_config,
    parse_config,
    segre_config,
    smoothness_metric,
    write_outputs,
    zero_crossing_period,
)
from chimera2d.cli import main
from chimera2d.fracstep import SolverConfig
from chimera2d.orchestrator import ConfigError, run_simulation


class TestSmoothnessMetric:
    def test_constant_and_linear_are_smooth(self):
        assert smoothness_metric(np.full(20, 3.0)) == 0.0
        assert smoothness_metric(np.linspace(0.0, 1.0, 20)) < 1e-14

    def test_alternating_flip_is_one(self):
        s = np.array([1.0, -1.0] * 10 + [1.0])
        assert np.isclose(smoothness_metric(s), 1.0)

    def test_too_short_raises(self):
        with pytest.raises(ValueError):
            smoothness_metric([1.0, 2.0])

    def test_flat_with_spike_is_infinite(self):
        s = np.zeros(40)
        s[20] = 1.0
        assert smoothness_metric(s) == math.inf

    def test_noisy_worse_than_clean(self):
        t = np.linspace(0, 10, 400)
        clean = np.sin(t)
        noisy = clean + 0.2 * np.sin(400 * t)
        assert smoothness_metric(noisy) > 3 * smoothness_metric(clean)


class TestPeriods:
    def test_zero_crossing_sine(self):
        t = np.linspace(0.0, 10.0, 2001)
        mean, intervals = zero_crossing_period(t, np.sin(2 * np.pi * t / 2.5))
        assert np.isclose(mean, 2.5, atol=1e-3)
        assert len(intervals) >= 3
        assert np.allclose(intervals, 2.5, atol=1e-2)

    def test_zero_crossing_degenerate(self):
        t = np.linspace(0.0, 1.0, 50)
        mean, intervals = zero_crossing_period(t, np.ones(50))
        assert math.isnan(mean) and len(intervals) == 0

    def test_autocorrelation_sine(self):
        t = np.linspace(0.0, 20.0, 4001)
        period = autocorrelation_period(t, np.sin(2 * np.pi * t / 2.5))
        assert np.isclose(period, 2.5, atol=0.02)

    def test_autocorrelation_constant(self):
        t = np.linspace(0.0, 1.0, 100)
        assert math.isnan(autocorrelation_period(t, np.full(100, 2.0)))


class TestCoefficients:
    def test_drag_lift_scaling(self):
        cd, cl = drag_lift_coefficients([0.01, 0.002], u_mean=1.0, length=0.1)
        assert np.isclose(cd, 0.2) and np.isclose(cl, 0.04)


class TestPresets:
    def test_dfg_geometry(self):
        cfg = dfg_config()
        assert cfg.domain == (0.0, 0.0, 2.2, 0.41)
        assert cfg.rho_f == 1.0 and cfg.mu_f == 1e-3
        spec = cfg.particles[0]
        assert tuple(spec.center) == (0.2, 0.2) and spec.radius == 0.05
        assert cfg.inlet_umax == 1.5 and cfg.inlet_profile == "parabolic"
        assert cfg.u_ref == 1.0 and cfg.l_ref == 0.1

    def test_moving_cylinder_reference_speed(self):
        cfg = moving_cylinder_config()
        assert np.isclose(cfg.u_ref, 2 * math.pi * 0.25 * 0.25)
        assert cfg.inlet_profile == "none"
        spec = cfg.particles[0]
        assert spec.motion == "prescribed"
        assert spec.oscillation_amplitude == 0.25
        assert spec.oscillation_frequency == 0.25

    def test_moving_cylinder_needs_overset_algorithm(self):
        with pytest.raises(ConfigError):
            bench_moving_cylinder(algorithm="fbm", t_end=0.1)

    def test_segre_viscosity_from_reynolds(self):
        cfg = segre_config(reynolds=12.0)
        assert np.isclose(cfg.mu_f, 2.0 / 12.0)
        assert cfg.domain == (0.0, -1.0, 5.0, 1.0)
        assert cfg.x_wrap
        spec = cfg.particles[0]
        assert spec.radius == 0.05 and spec.motion == "free"
        assert tuple(spec.center) == (1.0, 0.25)


GOOD_CONFIG = textwrap.dedent(
    """
    # tiny closed-box run
    [domain]
    algorithm = fbm
    x0 = 0.0
    y0 = 0.0
    x1 = 1.0
    y1 = 1.0
    base_nx = 6
    base_ny = 6
    level = 1
    left = wall
    right = wall
    top = wall
    bottom = wall

    [fluid]
    rho = 1.0
    mu = 0.001
    inlet_profile = none
    ramp_time = 0.0

    [particle.0]
    x = 0.5
    y = 0.5
    radius = 0.2
    atmosphere_width = 0.15
    n_theta = 16
    n_rings = 3
    motion = fixed

    [solver]
    dt = 0.05
    t_end = 0.1
    n_outer = 2
    method = direct
    """
)


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestParseConfig:
    def test_good_config(self, tmp_path):
        cfg, bench = parse_config(write_cfg(tmp_path, GOOD_CONFIG))
        assert cfg.algorithm == "fbm"
        assert cfg.domain == (0.0, 0.0, 1.0, 1.0)
        assert cfg.inlet_profile == "none"
        assert len(cfg.particles) == 1
        assert cfg.particles[0].motion == "fixed"
        assert cfg.solver.dt == 0.05 and cfg.solver.n_outer == 2
        assert cfg.t_end == 0.1
        assert bench == {}

    def test_defaults_from_empty_file(self, tmp_path):
        cfg, _ = parse_config(write_cfg(tmp_path, "[domain]\n"))
        ref = dfg_config()  # package defaults share the channel geometry
        assert cfg.domain == ref.domain

    def test_missing_file(self):
        with pytest.raises(ConfigError):
            parse_config("/nonexistent/run.cfg")

    @pytest.mark.parametrize(
        "text,line",
        [
            ("[weird]\n", 1),
            ("[domain]\nwarp = 9\n", 2),
            ("[domain]\nx0 = 1\nx0 = 2\n", 3),
            ("[domain]\n[domain]\n", 2),
            ("x0 = 1\n", 1),
            ("[domain]\nx0 = abc\n", 2),
            ("[domain]\njust words\n", 2),
            ("[particle.x]\n", 1),
        ],
    )
    def test_parse_errors_carry_line_numbers(self, tmp_path, text, line):
        with pytest.raises(ParseError) as exc:
            parse_config(write_cfg(tmp_path, text))
        assert f"line {line}:" in str(exc.value)

    def test_particle_missing_coordinate(self, tmp_path):
        text = "[particle.0]\ny = 0.5\nradius = 0.1\n"
        with pytest.raises(ConfigError):
            parse_config(write_cfg(tmp_path, text))

    def test_particles_must_be_consecutive(self, tmp_path):
        text = "[particle.1]\nx = 0.5\ny = 0.5\nradius = 0.1\n"
        with pytest.raises(ConfigError):
            parse_config(write_cfg(tmp_path, text))

    def test_comments_and_blank_lines_ignored(self, tmp_path):
        text = "# header\n\n[domain]\n# note\nx1 = 3.0  # trailing\n"
        cfg, _ = parse_config(write_cfg(tmp_path, text))
        assert cfg.domain[2] == 3.0


class TestConfigDictRoundTrip:
    def test_round_trip(self):
        cfg = segre_config(reynolds=20.0, t_end=1.0)
        back = config_from_dict(config_to_dict(cfg))
        assert back == cfg

    def test_json_serializable(self):
        blob = json.dumps(config_to_dict(dfg_config()))
        assert "chimera_w" in blob


class TestWriteOutputs:
    def test_files_and_summary(self, tmp_path):
        cfg, _ = parse_config_from_text(tmp_path)
        records, _ = run_simulation(cfg)
        paths = write_outputs(
            records, cfg, summary={"score": 1.5}, outdir=str(tmp_path / "out")
        )
        names = {p.split("/")[-1] for p in paths}
        assert names == {"forces.csv", "trajectory.csv", "summary.json"}
        blob = json.loads((tmp_path / "out" / "summary.json").read_text())
        assert blob["summary"]["score"] == 1.5
        assert blob["n_records"] == len(records)
        assert blob["config"]["algorithm"] == "fbm"


def parse_config_from_text(tmp_path):
    return parse_config(write_cfg(tmp_path, GOOD_CONFIG))


class TestCli:
    def test_validate_good(self, tmp_path, capsys):
        assert main(["validate", write_cfg(tmp_path, GOOD_CONFIG)]) == 0
        assert "ok:" in capsys.readouterr().out

    def test_validate_missing_file(self, capsys):
        assert main(["validate", "/nonexistent/run.cfg"]) == 2

    def test_validate_bad_config(self, tmp_path, capsys):
        assert main(["validate", write_cfg(tmp_path, "[domain]\nwarp = 1\n")]) == 2
        assert "config error" in capsys.readouterr().err

    def test_simulate_writes_outputs(self, tmp_path, capsys):
        cfg_path = write_cfg(tmp_path, GOOD_CONFIG)
        out = tmp_path / "results"
        assert main(["simulate", cfg_path, "--outdir", str(out)]) == 0
        assert (out / "forces.csv").exists()
        assert (out / "trajectory.csv").exists()
        assert (out / "summary.json").exists()
