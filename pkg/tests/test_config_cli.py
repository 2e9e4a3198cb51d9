import json
import os
import stat
import subprocess
import sys

import numpy as np
import pytest
import yaml

from shellcascade.cli import main
from shellcascade.config import ConfigError, config_from_dict, load_config, loads_config
from shellcascade.runner import (
    CheckpointError,
    atomic_write_text,
    load_checkpoint,
    resume,
    run,
)

MINIMAL = """
model: {kind: dyadic, nu: 0.01, k0: 1, lambda: 2, n_shells: 20}
noise: {mode: first_shell, sigma: 1}
sim: {dt: 1.0e-4, t_final: 100}
"""

SMALL = {
    "model": {"kind": "dyadic", "nu": 0.05, "k0": 1, "lambda": 2, "n_shells": 8},
    "noise": {"mode": "first_shell", "sigma": 1.0, "seed": 17},
    "sim": {"scheme": "ou_split", "dt": 1e-3, "t_final": 4.0, "sample_stride": 5, "ensemble_size": 2},
    "analysis": {"p_list": [2, 3], "window": {"n_minus": 2, "n_plus": 5}},
    "output": {"dir": "out", "formats": ["csv", "json", "states"]},
}


def write_config(tmp_path, data=None, name="run.yaml", **overrides):
    data = json.loads(json.dumps(data or SMALL))
    for dotted, value in overrides.items():
        sec, key = dotted.split("__")
        data[sec][key] = value
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


# -- config -------------------------------------------------------------------------


def test_minimal_config_is_valid():
    cfg = loads_config(MINIMAL)
    assert cfg.model.n_shells == 20 and cfg.sim.scheme == "ou_split"
    assert cfg.model_spec().noise.single_forced_shell() == (1, 1.0)


def test_lambda_one_is_rejected():
    with pytest.raises(ConfigError, match="lambda must exceed 1"):
        loads_config(MINIMAL.replace("lambda: 2", "lambda: 1"))


def test_sabra_condition_is_named():
    text = MINIMAL.replace("kind: dyadic", "kind: sabra, sabra_abc: [1, -0.5, -0.4]")
    with pytest.raises(ConfigError, match="energy conservation condition"):
        loads_config(text)


def test_unknown_keys_are_errors():
    with pytest.raises(ConfigError, match="model.viscosity: unknown key"):
        loads_config(MINIMAL.replace("nu: 0.01", "viscosity: 0.01"))
    with pytest.raises(ConfigError, match="unknown section 'extras'"):
        loads_config(MINIMAL + "extras: {a: 1}\n")


def test_errors_are_aggregated():
    text = """
model: {kind: sabra, nu: 0.01, lambda: 1, n_shells: 20, sabra_abc: [1, -0.5, -0.4], bogus: 1}
noise: {sigma: 1}
sim: {dt: 1e-4, t_final: -1}
"""
    with pytest.raises(ConfigError) as info:
        loads_config(text)
    joined = "\n".join(info.value.errors)
    assert "model.bogus" in joined
    assert "lambda must exceed 1" in joined
    assert "t_final" in joined
    assert len(info.value.errors) >= 3


def test_explicit_noise_length_checked():
    raw = json.loads(json.dumps(SMALL))
    raw["noise"] = {"mode": "explicit", "sigma_list": [1.0, 0.5], "seed": 1}
    with pytest.raises(ConfigError, match="expected 8 entries"):
        config_from_dict(raw)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.yaml")


def test_round_trip():
    cfg = config_from_dict(SMALL)
    again = loads_config(cfg.dumps())
    assert again == cfg
    assert again.dumps() == cfg.dumps()
    sabra = loads_config(MINIMAL.replace("kind: dyadic", "kind: sabra, sabra_abc: [1, -0.5, -0.5]"))
    assert loads_config(sabra.dumps()) == sabra


def test_physics_hash_ignores_duration_only():
    cfg = config_from_dict(SMALL)
    longer = config_from_dict({**SMALL, "sim": {**SMALL["sim"], "t_final": 9.0}})
    other_nu = config_from_dict({**SMALL, "model": {**SMALL["model"], "nu": 0.04}})
    assert cfg.physics_hash() == longer.physics_hash()
    assert cfg.physics_hash() != other_nu.physics_hash()
    assert cfg.physics_hash() != cfg.with_seed(18).physics_hash()


# -- run ----------------------------------------------------------------------------------


def test_run_outputs_are_deterministic(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "a"), "--quiet"]) == 0
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "b"), "--quiet", "--threads", "2"]) == 0
    for name in ("estimates.csv", "analysis.json", "states.npz", "checkpoint.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["seed"] == 17 and manifest["status"] == "ok"
    assert {"version", "wall_time_s", "config"} <= set(manifest)


def test_seed_precedence(tmp_path, monkeypatch):
    cfg = write_config(tmp_path)
    monkeypatch.setenv("SHELLCASCADE_SEED", "99")
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "env"), "--quiet"]) == 0
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "flag"), "--seed", "5", "--quiet"]) == 0
    monkeypatch.delenv("SHELLCASCADE_SEED")
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "plain"), "--seed", "99", "--quiet"]) == 0
    seed = lambda d: json.loads((tmp_path / d / "manifest.json").read_text())["seed"]  # noqa: E731
    assert (seed("env"), seed("flag")) == (99, 5)
    assert (tmp_path / "env" / "estimates.csv").read_bytes() == (tmp_path / "plain" / "estimates.csv").read_bytes()


def test_blow_up_exits_two(tmp_path):
    cfg = write_config(tmp_path, sim__scheme="em", sim__dt=0.5, sim__t_final=200.0, model__nu=1e-8,
                       noise__sigma=50.0)
    code = main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o"), "--quiet"])
    assert code == 2
    manifest = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert manifest["status"] == "blow_up"
    assert manifest["blow_up"]["step"] >= 1
    last = np.array([float.fromhex(x) for x in manifest["blow_up"]["last_state"]])
    assert np.all(np.isfinite(last))


def test_degenerate_analysis_exits_three(tmp_path):
    # burn-in swallows the whole run, so nothing is sampled
    cfg = write_config(tmp_path, sim__t_final=0.002, sim__burn_in_fraction=0.9, sim__sample_stride=50)
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "o"), "--quiet"]) == 3


def test_config_errors_exit_one(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text(MINIMAL.replace("lambda: 2", "lambda: 1"))
    assert main(["run", "--config", str(bad)]) == 1
    assert "lambda must exceed 1" in capsys.readouterr().err
    with pytest.raises(SystemExit) as info:
        main(["run"])
    assert info.value.code == 1


def test_verify_subcommand(capsys):
    assert main(["verify", "--vectors", "50"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 5


def test_console_script_module():
    out = subprocess.run([sys.executable, "-m", "shellcascade.cli", "verify", "--vectors", "20"],
                         capture_output=True, text=True)
    assert out.returncode == 0, out.stderr


# -- resume ----------------------------------------------------------------------------------


def test_resume_equals_uninterrupted(tmp_path):
    # burn-in is anchored to the first run's length, so use none to get identical sample sets
    short = write_config(tmp_path, name="short.yaml", sim__t_final=2.0, sim__burn_in_fraction=0.0)
    full = write_config(tmp_path, name="full.yaml", sim__t_final=4.0, sim__burn_in_fraction=0.0)
    assert main(["run", "--config", str(full), "--output-dir", str(tmp_path / "full"), "--quiet"]) == 0
    assert main(["run", "--config", str(short), "--output-dir", str(tmp_path / "half"), "--quiet"]) == 0
    assert main(["resume", "--checkpoint", str(tmp_path / "half" / "checkpoint.json"), "--additional-t", "2",
                 "--config", str(short), "--output-dir", str(tmp_path / "rest"), "--quiet"]) == 0
    full_states = np.load(tmp_path / "full" / "states.npz")
    half = np.load(tmp_path / "half" / "states.npz")
    rest = np.load(tmp_path / "rest" / "states.npz")
    joined = np.concatenate([half["states"], rest["states"]], axis=1)
    assert joined.tobytes() == full_states["states"].tobytes()
    np.testing.assert_array_equal(np.concatenate([half["steps"], rest["steps"]]), full_states["steps"])
    # batch boundaries follow the first run's length, so only the means must agree
    means = [np.genfromtxt(tmp_path / d / "estimates.csv", delimiter=",", names=True) for d in ("rest", "full")]
    for col in ("E_un2", "E_un2_un1", "S_3"):
        np.testing.assert_allclose(means[0][col], means[1][col], rtol=1e-12, atol=0)
    _, paths_a, _ = load_checkpoint(tmp_path / "rest" / "checkpoint.json")
    _, paths_b, _ = load_checkpoint(tmp_path / "full" / "checkpoint.json")
    assert all(a.state.tobytes() == b.state.tobytes() for a, b in zip(paths_a, paths_b))


def test_corrupted_checkpoint(tmp_path):
    out = run(config_from_dict({**SMALL, "sim": {**SMALL["sim"], "t_final": 0.5}}), tmp_path / "r")
    ck = tmp_path / "r" / "checkpoint.json"
    data = json.loads(ck.read_text())
    data["step"] += 1
    ck.write_text(json.dumps(data))
    assert out.exit_code == 0
    with pytest.raises(CheckpointError, match="checksum"):
        resume(ck, 0.5)
    assert main(["resume", "--checkpoint", str(ck), "--additional-t", "0.5", "--quiet"]) == 1
    ck.write_text("{not json")
    with pytest.raises(CheckpointError):
        load_checkpoint(ck)


def test_resume_with_edited_nu_is_refused(tmp_path):
    cfg = config_from_dict({**SMALL, "sim": {**SMALL["sim"], "t_final": 0.5}})
    run(cfg, tmp_path / "r")
    edited = config_from_dict({**SMALL, "model": {**SMALL["model"], "nu": 0.06}})
    with pytest.raises(CheckpointError, match="hash mismatch"):
        resume(tmp_path / "r" / "checkpoint.json", 0.5, edited)


# -- analyze / sweep ---------------------------------------------------------------------------------


def test_analyze_rewindows_stored_estimates(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run", "--config", str(cfg), "--output-dir", str(tmp_path / "r"), "--quiet"]) == 0
    first = json.loads((tmp_path / "r" / "analysis.json").read_text())
    assert main(["analyze", str(tmp_path / "r"), "--window", "2", "4", "--p", "3",
                 "--output-dir", str(tmp_path / "re")]) == 0
    again = json.loads((tmp_path / "re" / "analysis.json").read_text())
    assert first["window"] == [2, 5] and again["window"] == [2, 4]
    assert [e["p"] for e in again["exponents"]] == [3.0]
    assert again["balance"] == first["balance"]
    assert main(["analyze", str(tmp_path / "r"), "--p", "7"]) == 1


def test_sweep_writes_one_report_per_nu(tmp_path):
    cfg = write_config(tmp_path, sim__t_final=1.0)
    assert main(["sweep", "--config", str(cfg), "--nu", "0.05", "0.1", "--output-dir", str(tmp_path / "s"),
                 "--quiet"]) == 0
    summary = json.loads((tmp_path / "s" / "sweep.json").read_text())
    assert [r["nu"] for r in summary["runs"]] == [0.05, 0.1]
    for d in ("nu_0.05", "nu_0.1"):
        assert (tmp_path / "s" / d / "analysis.json").is_file()


# -- persistence --------------------------------------------------------------------------------------


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "report.json"
    atomic_write_text(target, "one\n")
    atomic_write_text(target, "two\n")
    assert target.read_text() == "two\n"
    assert [p.name for p in tmp_path.iterdir()] == ["report.json"]
    umask = os.umask(0)
    os.umask(umask)
    assert stat.S_IMODE(target.stat().st_mode) == 0o666 & ~umask


def test_csv_header_on_disk(tmp_path):
    run(config_from_dict({**SMALL, "sim": {**SMALL["sim"], "t_final": 0.5}}), tmp_path / "r")
    header = (tmp_path / "r" / "estimates.csv").read_text().splitlines()[0]
    assert header == ("n,k_n,E_un2,stderr_E_un2,E_un2_un1,stderr_E_un2_un1,eps_n,phi_n,"
                      "S_2,stderr_S_2,S_3,stderr_S_3")
