import csv
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from becgrape import cli
from becgrape.config import ConfigError, dumps_config, loads_config, parse_config

GP_CONFIG = {
    "family": "gp1d",
    "lattice": {"s": 5, "q": 0, "n_max": 10},
    "beta": 1.0,
    "initial_state": {"kind": "squeezed", "x_c": 0, "p_c": 0, "xi": 0.5},
    "target_state": {"kind": "plane_wave", "n": 0},
    "time": {"t_f": 7.6},
    "control": {"n_steps": 500, "phi": 0.0},
    "propagate": {"compare_rk4": True, "rk4_substeps": 4, "betas": [0.0, 1.0]},
}

LINEAR_CONFIG = {
    "family": "linear1d",
    "lattice": {"s": 5, "n_max": 10},
    "initial_state": {"kind": "plane_wave", "n": 0},
    "target_state": {"kind": "plane_wave", "n": 2},
    "time": {"t_f": 7.6},
    "control": {"n_steps": 76},
    "optimizer": {"seed": 0, "init_amplitude": 1.0, "fidelity_goal": 0.99},
}

TWO_D_CONFIG = {
    "family": "lattice2d",
    "lattice": {"s": 5, "M": 3, "N": 3},
    "initial_state": {"kind": "plane_wave_2d", "m": 0, "n": 0},
    "target_state": {"kind": "superposition_2d", "components": [[[1, 1], 1], [[-1, -1], 1]]},
    "time": {"t_f": 250, "unit": "us"},
    "control": {"n_steps": 20, "phi": [0.3, -0.2, 0.1], "optimize": [False, True, True]},
    "propagate": {"compare_rk4": True, "rk4_substeps": 50},
}


def write_config(tmp_path, data, name="run.json"):
    data = dict(data, output_dir=str(tmp_path / "out"))
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array(rows[1:], dtype=float)


class TestConfig:
    @pytest.mark.parametrize("data", [GP_CONFIG, LINEAR_CONFIG, TWO_D_CONFIG])
    def test_round_trip(self, data):
        cfg = parse_config(data)
        assert loads_config(dumps_config(cfg)) == cfg

    @settings(max_examples=30, deadline=None)
    @given(
        beta=st.floats(-2, 2),
        t_f=st.floats(0.1, 20),
        n_steps=st.integers(1, 500),
        seed=st.one_of(st.none(), st.integers(0, 2**31)),
        eps=st.floats(1e-3, 10),
        phi=st.floats(-7, 7),
    )
    def test_round_trip_property(self, beta, t_f, n_steps, seed, eps, phi):
        data = dict(
            GP_CONFIG,
            beta=beta,
            time={"t_f": t_f},
            control={"n_steps": n_steps, "phi": phi},
            optimizer={"seed": seed, "epsilon": eps},
        )
        if seed is None:
            data["optimizer"] = {"epsilon": eps}
        cfg = parse_config(data)
        assert loads_config(dumps_config(cfg)) == cfg

    def test_microseconds(self):
        cfg = parse_config(dict(LINEAR_CONFIG, time={"t_f": 150, "unit": "us"}))
        assert cfg.t_f == pytest.approx(7.6, rel=0.02)
        assert parse_config(TWO_D_CONFIG).t_f == pytest.approx(9.5558, rel=1e-4)

    def test_scalar_phase_broadcasts_in_2d(self):
        cfg = parse_config(dict(TWO_D_CONFIG, control={"n_steps": 4, "phi": 0.5}))
        assert cfg.control.phi == (0.5, 0.5, 0.5)
        assert cfg.optimize_flags == (True, True, True)

    def test_error_reports_line(self):
        text = json.dumps(dict(LINEAR_CONFIG, lattice={"s": -1, "n_max": 10}), indent=2)
        with pytest.raises(ConfigError) as info:
            loads_config(text)
        err = info.value
        assert err.path == "lattice.s"
        assert text.splitlines()[err.line - 1].strip().startswith('"s"')

    def test_invalid_json_reports_line(self):
        with pytest.raises(ConfigError) as info:
            loads_config('{\n  "family": "gp1d",\n  oops\n}')
        assert info.value.line == 3

    @pytest.mark.parametrize(
        "patch, fragment",
        [
            ({"family": "lattice3d"}, "family"),
            ({"color": 1}, "unknown key"),
            ({"beta": 0.5}, "beta"),
            ({"lattice": {"s": 5, "q": 0.7}}, "quasi-momentum"),
            ({"time": {"t_f": 0}}, "positive"),
            ({"control": {"n_steps": 0}}, "n_steps"),
            ({"target_state": {"kind": "plane_wave", "n": 11}}, "target_state"),
            ({"initial_state": {"kind": "plane_wave_2d"}}, "does not fit"),
            ({"optimizer": {"backtrack": 2.0}}, "optimizer"),
            ({"optimizer": {"max_iterations": 1.5}}, "integer"),
        ],
    )
    def test_rejects(self, patch, fragment):
        with pytest.raises(ConfigError, match=fragment):
            parse_config(dict(LINEAR_CONFIG, **patch))

    def test_missing_key(self):
        data = dict(LINEAR_CONFIG)
        del data["time"]
        with pytest.raises(ConfigError, match="'time'"):
            parse_config(data)

    def test_all_channels_frozen(self):
        data = dict(TWO_D_CONFIG, control={"n_steps": 4, "optimize": [False] * 3})
        with pytest.raises(ConfigError, match="at least one"):
            parse_config(data)

    def test_overrides(self):
        cfg = parse_config(LINEAR_CONFIG).with_overrides("elsewhere", 7)
        assert cfg.output_dir == "elsewhere"
        assert cfg.optimizer.seed == 7


def check_time_column(path):
    _, data = read_csv(path)
    assert np.all(np.diff(data[:, 0]) > 0)
    return data


class TestPropagateCommand:
    def test_gp_with_rk4(self, tmp_path):
        path = write_config(tmp_path, GP_CONFIG)
        assert cli.main(["propagate", str(path)]) == cli.EXIT_OK
        out = tmp_path / "out"
        header, proj = read_csv(out / "projection.csv")
        assert header == ["t", "expm_beta_0", "rk4_beta_0", "expm_beta_1", "rk4_beta_1"]
        assert proj.shape == (501, 5)
        check_time_column(out / "projection.csv")
        pops = check_time_column(out / "populations.csv")
        np.testing.assert_allclose(pops[:, 1:].sum(axis=1), 1.0, atol=1e-8)
        dens = check_time_column(out / "density.csv")
        assert dens.shape == (501, 22)
        summary = json.loads((out / "summary.json").read_text())
        assert set(summary["max_gap_expm_rk4"]) == {"expm_beta_0", "expm_beta_1"}
        assert summary["max_gap_expm_rk4"]["expm_beta_0"] < 1e-6
        # first-order frozen-density scheme at this dt
        assert summary["max_gap_expm_rk4"]["expm_beta_1"] < 0.02

    @pytest.mark.filterwarnings("ignore:population")
    def test_2d(self, tmp_path):
        path = write_config(tmp_path, TWO_D_CONFIG)
        assert cli.main(["propagate", str(path)]) == cli.EXIT_OK
        out = tmp_path / "out"
        header, pops = read_csv(out / "populations.csv")
        assert header[1] == "p_-3_-3"
        np.testing.assert_allclose(pops[:, 1:].sum(axis=1), 1.0, atol=1e-8)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["max_gap_expm_rk4"]["expm"] < 1e-6
        assert not (out / "density.csv").exists()

    def test_linear_with_rk4(self, tmp_path):
        data = dict(LINEAR_CONFIG, propagate={"compare_rk4": True, "rk4_substeps": 20})
        path = write_config(tmp_path, data)
        assert cli.main(["propagate", str(path)]) == cli.EXIT_OK
        _, proj = read_csv(tmp_path / "out" / "projection.csv")
        assert np.max(np.abs(proj[:, 1] - proj[:, 2])) < 1e-6

    def test_manifest(self, tmp_path):
        path = write_config(tmp_path, GP_CONFIG)
        cli.main(["propagate", str(path)])
        man = json.loads((tmp_path / "out" / "manifest.json").read_text())
        assert man["command"] == "propagate"
        assert man["exit_code"] == 0
        assert set(man["versions"]) == {"becgrape", "python", "numpy", "scipy"}
        assert loads_config(json.dumps(man["resolved_config"])) == loads_config(path.read_text()).with_overrides(
            tmp_path / "out"
        )

    def test_bit_identical_reruns(self, tmp_path):
        path = write_config(tmp_path, dict(GP_CONFIG, propagate={}))
        cli.main(["propagate", str(path)])
        first = (tmp_path / "out" / "projection.csv").read_bytes()
        cli.main(["propagate", str(path)])
        assert (tmp_path / "out" / "projection.csv").read_bytes() == first


    def test_warns_on_unstable_rk4(self, tmp_path, caplog):
        data = dict(GP_CONFIG, control={"n_steps": 50}, propagate={"compare_rk4": True, "rk4_substeps": 1})
        with np.errstate(all="ignore"):
            cli.main(["propagate", str(write_config(tmp_path, data))])
        assert "stability limit" in caplog.text


class TestOptimizeCommand:
    def test_writes_outputs(self, tmp_path):
        path = write_config(tmp_path, LINEAR_CONFIG)
        assert cli.main(["optimize", str(path)]) == cli.EXIT_OK
        out = tmp_path / "out"
        header, pulse = read_csv(out / "pulse.csv")
        assert header == ["step_index", "t_start", "phi"]
        assert pulse.shape == (76, 3)
        assert np.all(np.diff(pulse[:, 1]) > 0)
        header, trace = read_csv(out / "trace.csv")
        assert header == ["iteration", "fidelity", "grad_norm"]
        assert np.all(np.diff(trace[:, 1]) >= 0)
        header, pops = read_csv(out / "populations.csv")
        assert header == ["index", "probability"]
        assert pops[:, 1].sum() == pytest.approx(1.0, abs=1e-8)
        summary = json.loads((out / "summary.json").read_text())
        assert summary["fidelity"] >= 0.99
        assert summary["seed"] == 0
        assert summary["termination_reason"] == "goal_reached"

    def test_below_goal_exit_code(self, tmp_path):
        data = dict(LINEAR_CONFIG, optimizer={"seed": 0, "max_iterations": 2, "fidelity_goal": 0.99})
        path = write_config(tmp_path, data)
        assert cli.main(["optimize", str(path)]) == cli.EXIT_BELOW_GOAL

    def test_seed_override(self, tmp_path):
        data = dict(LINEAR_CONFIG, optimizer={"seed": 0, "max_iterations": 3})
        path = write_config(tmp_path, data)
        cli.main(["optimize", str(path), "--seed", "11"])
        assert json.loads((tmp_path / "out" / "summary.json").read_text())["seed"] == 11
        assert json.loads((tmp_path / "out" / "manifest.json").read_text())["seed"] == 11

    @pytest.mark.filterwarnings("ignore:population")
    def test_2d_populations_header(self, tmp_path):
        data = dict(TWO_D_CONFIG, optimizer={"seed": 1, "max_iterations": 3})
        path = write_config(tmp_path, data)
        cli.main(["optimize", str(path)])
        header, pulse = read_csv(tmp_path / "out" / "pulse.csv")
        assert header == ["step_index", "t_start", "phi12", "phi23", "phi31"]
        assert np.ptp(pulse[:, 2]) == 0.0
        assert np.ptp(pulse[:, 3]) > 0.0
        header, _ = read_csv(tmp_path / "out" / "populations.csv")
        assert header == ["m", "n", "probability"]

    def test_needs_target(self, tmp_path):
        data = dict(LINEAR_CONFIG)
        del data["target_state"]
        assert cli.main(["optimize", str(write_config(tmp_path, data))]) == cli.EXIT_CONFIG


class TestBetaScanCommand:
    def test_with_pulse_file(self, tmp_path):
        pulse = tmp_path / "pulse.csv"
        rows = [[k, 7.6 * k / 76, 0.0] for k in range(76)]
        cli.write_csv(pulse, ["step_index", "t_start", "phi"], rows)
        data = dict(
            GP_CONFIG,
            control={"n_steps": 76},
            beta_scan={"betas": [0.0, 0.5, 1.0], "pulse_file": str(pulse)},
        )
        path = write_config(tmp_path, data)
        assert cli.main(["beta-scan", str(path)]) == cli.EXIT_OK
        header, table = read_csv(tmp_path / "out" / "beta_scan.csv")
        assert header == ["beta", "fidelity"]
        np.testing.assert_array_equal(table[:, 0], [0.0, 0.5, 1.0])
        assert np.all((table[:, 1] >= 0) & (table[:, 1] <= 1))

    def test_needs_betas(self, tmp_path):
        path = write_config(tmp_path, GP_CONFIG)
        assert cli.main(["beta-scan", str(path)]) == cli.EXIT_CONFIG

    def test_needs_gp_family(self, tmp_path):
        data = dict(LINEAR_CONFIG, beta_scan={"betas": [0.0]})
        assert cli.main(["beta-scan", str(write_config(tmp_path, data))]) == cli.EXIT_CONFIG

    def test_bad_pulse_header(self, tmp_path):
        pulse = tmp_path / "pulse.csv"
        pulse.write_text("a,b\n1,2\n")
        data = dict(GP_CONFIG, beta_scan={"betas": [0.0], "pulse_file": str(pulse)})
        assert cli.main(["beta-scan", str(write_config(tmp_path, data))]) == cli.EXIT_CONFIG


class TestValidateCommand:
    def test_ok(self, tmp_path, capsys):
        assert cli.main(["validate-config", str(write_config(tmp_path, GP_CONFIG))]) == cli.EXIT_OK
        assert "ok (gp1d" in capsys.readouterr().out

    def test_config_error(self, tmp_path, capsys):
        data = dict(GP_CONFIG, lattice={"s": "deep"})
        assert cli.main(["validate-config", str(write_config(tmp_path, data))]) == cli.EXIT_CONFIG
        assert "lattice.s" in capsys.readouterr().err

    @pytest.mark.parametrize("path", sorted((Path(__file__).parents[1] / "configs").glob("*.json")), ids=lambda p: p.name)
    def test_shipped_configs(self, path):
        assert cli.main(["validate-config", str(path)]) == cli.EXIT_OK

    def test_missing_file(self, tmp_path):
        assert cli.main(["validate-config", str(tmp_path / "nope.json")]) == cli.EXIT_CONFIG
