import contextlib
import io
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import lossy_pdc.cli as cli
from lossy_pdc.config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    config_from_dict,
    dump_toml,
    load_config,
    parse_override,
    parse_text,
)
from lossy_pdc.inversion import AmbiguityError, LossParams
from lossy_pdc.output import read_csv
from lossy_pdc.propagation import IntegrationError

ROOT = Path(__file__).resolve().parents[1]
REFERENCE = ROOT / "configs" / "reference.toml"
GOLDEN = ROOT / "tests" / "golden"
GOLDEN_ARGS = json.loads((GOLDEN / "args.json").read_text())
FAST = ["grid.n_points=32", "integrator.steps=128"]


def run(argv, monkeypatch=None):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), err.getvalue()


def args(command, out, *overrides, config=REFERENCE):
    argv = [command, "--config", str(config), "--out", str(out)]
    for item in overrides:
        argv += ["--set", item]
    return argv


# --- config ------------------------------------------------------------------

def test_reference_config_loads():
    cfg = load_config(REFERENCE)
    assert cfg.waveguide.gamma_per_m == "auto"
    assert cfg.grid.n_points == 192 and cfg.integrator.steps == 512
    setup = cfg.physics.build_setup(0.1)
    assert setup.waveguide.length == pytest.approx(0.01)
    assert setup.pulse.fwhm_duration == pytest.approx(0.5e-12)
    assert setup.waveguide.idler.n_ref == 1.8


def test_reference_config_matches_builtin_setup():
    from lossy_pdc.physics import reference_setup
    a = load_config(REFERENCE).physics.build_setup(0.1)
    b = reference_setup(gamma=0.1)
    np.testing.assert_allclose(a.grid.omega, b.grid.omega, rtol=1e-15)
    np.testing.assert_allclose(a.phase_mismatch, b.phase_mismatch, rtol=1e-9, atol=1e-6)


def test_toml_and_json_agree():
    data = parse_text(REFERENCE.read_text(), ".toml")
    assert config_from_dict(json.loads(json.dumps(data))) == config_from_dict(data)


def test_dump_round_trip():
    cfg = load_config(REFERENCE, {"waveguide.gamma_per_m": 0.25, "sweep.r": [0.1, -0.2]})
    again = config_from_dict(parse_text(dump_toml(cfg), ".toml"))
    assert again == cfg and again.fingerprint() == cfg.fingerprint()


@pytest.mark.parametrize("data,match", [
    ({"waveguide": {"lenght_mm": 1.0}}, "unknown"),
    ({"grid": {"n_points": 1.5}}, "int"),
    ({"grid": 3}, "table"),
    ({"waveguide": {"alpha_s_db_cm": -1.0}}, "non-negative"),
    ({"invert": {"g2_definition": "photon"}}, "g2_definition"),
    ({"integrator": {"method": "euler"}}, "method"),
    ({"hom": {"delay_reference": "middle"}}, "delay_reference"),
    ({"sweep": {"r": [0.1, "x"]}}, "list of numbers"),
])
def test_schema_violations(data, match):
    with pytest.raises(ConfigError, match=match):
        config_from_dict(data)


@given(st.floats(-1e6, 1e6, allow_nan=False), st.integers(-1000, 1000))
def test_override_literals(x, n):
    assert parse_override(f"a.b={x!r}") == ("a.b", x)
    assert parse_override(f"a={n}") == ("a", n)


def test_override_strings_and_lists():
    assert parse_override("invert.g2_definition=moment") == ("invert.g2_definition", "moment")
    assert parse_override("sweep.alphas_db_cm=[1, 2.5]") == ("sweep.alphas_db_cm", [1, 2.5])
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")
    with pytest.raises(ConfigError):
        apply_overrides({"grid": 3}, {"grid.n_points": 2})


def test_fingerprint_tracks_content():
    a = RunConfig()
    b = load_config(REFERENCE, {"pump.fwhm_ps": 0.6})
    assert a.fingerprint() != b.fingerprint()
    assert RunConfig().fingerprint() == a.fingerprint()


# --- commands --------------------------------------------------------------------

def test_zero_gamma_simulate(tmp_path):
    code, out, _ = run(args("simulate", tmp_path, "waveguide.gamma_per_m=0.0", *FAST))
    assert code == 0
    summary = json.loads(out)
    assert summary["N_total"] == 0 and summary["mu_ab"] is None
    meta, cols, data = read_csv(tmp_path / "spectrum.csv")
    assert cols == ["detuning_thz", "signal_occupation", "idler_occupation"]
    assert np.all(data[:, 1:] == 0)
    assert meta["gamma_per_m"] == "0" and "config_hash" in meta and "code_version" in meta


def test_zero_gamma_hom_and_g2(tmp_path):
    code, out, _ = run(args("hom", tmp_path, "waveguide.gamma_per_m=0.0", "hom.tau_min_ps=-1.0",
                            "hom.tau_max_ps=1.0", "hom.points=5", *FAST))
    assert code == 0 and json.loads(out)["peak"] == 0
    _, cols, data = read_csv(tmp_path / "hom.csv")
    assert np.all(data[:, 1:] == 0)
    code, out, _ = run(args("g2", tmp_path, "waveguide.gamma_per_m=0.0", *FAST))
    assert code == 0 and json.loads(out)["signal"] == {"click": None, "moment": None}


def test_g2_command_fields(tmp_path):
    code, out, _ = run(args("g2", tmp_path / "g", *FAST))
    g2 = json.loads(out)
    code2, out2, _ = run(args("simulate", tmp_path / "s", *FAST))
    s = json.loads(out2)
    assert code == code2 == 0
    assert g2["signal"]["moment"] == pytest.approx(1 + 1 / s["mu_a"], rel=1e-12)
    assert g2["idler"]["moment"] == pytest.approx(1 + 1 / s["mu_b"], rel=1e-12)
    assert g2["signal"]["click"] == pytest.approx(g2["idler"]["click"], abs=1e-6)
    _, out3, _ = run(args("g2", tmp_path / "l", "waveguide.alpha_s_db_cm=5.0",
                          "waveguide.alpha_i_db_cm=5.0", *FAST))
    lossy = json.loads(out3)
    assert abs(lossy["signal"]["click"] - lossy["idler"]["click"]) > 0.02


def test_calibrate_writes_loadable_config(tmp_path):
    code, out, _ = run(args("calibrate", tmp_path, *FAST))
    assert code == 0
    res = json.loads(out)
    assert abs(res["relative_error"]) < 1e-4
    cfg = load_config(tmp_path / "calibrated.toml")
    assert cfg.waveguide.gamma_per_m == res["gamma_per_m"]
    code, out, _ = run(args("simulate", tmp_path / "sim", config=tmp_path / "calibrated.toml"))
    assert json.loads(out)["N_total"] == pytest.approx(2.1e-4, rel=1e-4)


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    argv = ["g2", "--config", str(REFERENCE), "--set", "waveguide.gamma_per_m=0.0"] + \
        [x for f in FAST for x in ("--set", f)]
    assert run(argv)[0] == 0
    assert (tmp_path / "env" / "g2.json").exists()


@pytest.mark.parametrize("extra,code", [
    (["--set", "grid.bogus=1"], 2),
    (["--set", "nonsense"], 2),
    (["--jobs", "0"], 2),
    (["--set", "waveguide.length_mm=-1.0"], 2),
])
def test_config_errors_exit_2(tmp_path, extra, code):
    argv = args("simulate", tmp_path) + extra
    rc, _, err = run(argv)
    assert rc == code and "error" in err


def test_missing_config_file(tmp_path):
    assert run(["simulate", "--config", str(tmp_path / "none.toml")])[0] == 2


def test_numerical_failure_exit_3(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise IntegrationError("non-finite moments")

    monkeypatch.setattr(cli, "propagate", broken)
    rc, _, err = run(args("simulate", tmp_path, "waveguide.gamma_per_m=1.0", *FAST))
    assert rc == 3 and "non-finite" in err


def test_invert_exit_codes(tmp_path, monkeypatch):
    base = [x for x in GOLDEN_ARGS["overrides"]]
    rc, _, err = run(args("invert", tmp_path / "a", *base, "invert.g2_s=1.1"))
    assert rc == 4 and "no grid point" in err

    def ambiguous(*a, **k):
        raise AmbiguityError("2 separated solutions", [LossParams(1, 0.5), LossParams(1, -0.5)])

    monkeypatch.setattr(cli, "invert_losses", ambiguous)
    rc, _, _ = run(args("invert", tmp_path / "b", *base))
    assert rc == 5


def test_invert_requires_measurements(tmp_path):
    data = parse_text(REFERENCE.read_text(), ".toml")
    del data["invert"]["g2_s"]
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(data))
    rc, _, err = run(args("invert", tmp_path, *FAST, config=cfg))
    assert rc == 2 and "required" in err


def test_sweep_parallel_matches_serial(tmp_path):
    over = FAST + ["sweep.alphas_db_cm=[0.0, 2.0, 8.0]"]
    assert run(args("sweep", tmp_path / "one", *over))[0] == 0
    assert run(args("sweep", tmp_path / "two", *over) + ["--jobs", "2"])[0] == 0
    for f in sorted((tmp_path / "one").rglob("*.*")):
        twin = tmp_path / "two" / f.relative_to(tmp_path / "one")
        assert twin.read_bytes() == f.read_bytes(), f.name
    _, _, data = read_csv(tmp_path / "one" / "sweep.csv")
    n_total = data[:, 3]
    assert np.all(np.diff(n_total) < 0)


def test_sweep_grid_points_and_errors(tmp_path):
    over = FAST + ["sweep.alphas_db_cm=[]"]
    rc, _, err = run(args("sweep", tmp_path, *over, "sweep.r=[0.5]"))
    assert rc == 2
    data = parse_text(REFERENCE.read_text(), ".toml")
    data["sweep"] = {"alpha_bar_db_cm": [2.0], "r": [-0.5, 0.5]}
    cfg = tmp_path / "grid.json"
    cfg.write_text(json.dumps(data))
    rc, out, _ = run(args("sweep", tmp_path / "g", *FAST, config=cfg))
    assert rc == 0
    dirs = [p["dir"] for p in json.loads(out)["points"]]
    assert dirs == ["as_1_ai_3", "as_3_ai_1"]


# --- golden files --------------------------------------------------------------------

def _golden_run(command, out):
    argv = args(command, out, *GOLDEN_ARGS["overrides"], config=ROOT / GOLDEN_ARGS["config"])
    code, stdout, err = run(argv)
    assert code == 0, err
    return stdout


@pytest.mark.parametrize("command", GOLDEN_ARGS["commands"])
def test_golden_outputs_are_byte_stable(command, tmp_path):
    stdout = _golden_run(command, tmp_path / "run")
    expected_dir = GOLDEN / command
    assert stdout == (expected_dir / "stdout.json").read_text(encoding="utf-8")
    produced = {p.relative_to(tmp_path / "run") for p in (tmp_path / "run").rglob("*")
                if p.is_file() and "cache" not in p.parts}
    expected = {p.relative_to(expected_dir) for p in expected_dir.rglob("*")
                if p.is_file() and p.name != "stdout.json"}
    assert produced == expected
    for rel in sorted(expected):
        assert (tmp_path / "run" / rel).read_bytes() == (expected_dir / rel).read_bytes(), str(rel)
