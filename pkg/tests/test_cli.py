import json

import pytest

from hydrohom import cli
from hydrohom.exceptions import ConfigError


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


SMALL = {"preset": {"name": "dirac", "params": {"gamma": "default"}},
         "grid": {"shape": [8, 8]}, "solver": {"tol": 1e-10}}


def test_bundled_config_valid():
    cfg = cli.load_config()
    assert cfg["grid"]["shape"] == [16, 16] and cfg["command"] == "check"


def test_unknown_key_rejected(tmp_path):
    path = write_cfg(tmp_path, {**SMALL, "bogus": 1})
    with pytest.raises(ConfigError):
        cli.load_config(path)
    out = tmp_path / "out"
    assert cli.main(["tensor", "--config", path, "--out", str(out)]) == cli.EXIT_CONFIG
    assert not out.exists()


def test_wrong_preset_param_rejected(tmp_path):
    cfg = {**SMALL, "preset": {"name": "scalar", "params": {"gamma": 1.0}}}
    assert cli.main(["tensor", "--config", write_cfg(tmp_path, cfg),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


def test_degenerate_exit(tmp_path):
    cfg = {**SMALL, "preset": {"name": "dirac", "params": {"gamma": 0.5}}}
    assert cli.main(["tensor", "--config", write_cfg(tmp_path, cfg),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_DEGENERATE


def test_no_convergence_exit(tmp_path):
    cfg = {**SMALL, "solver": {"tol": 1e-12, "maxiter": 1}}
    assert cli.main(["tensor", "--config", write_cfg(tmp_path, cfg),
                     "--out", str(tmp_path / "o")]) == cli.EXIT_NOCONV


def test_bad_tol_flag(tmp_path):
    assert cli.main(["tensor", "--tol", "-1", "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("command", ["tensor", "transport", "bounds"])
def test_commands_write_outputs(tmp_path, command):
    out = tmp_path / command
    code = cli.main([command, "--config", write_cfg(tmp_path, SMALL), "--out", str(out),
                     "--threads", "1"])
    assert code == cli.EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert "config" in summary and "threads" not in summary["config"]


def test_profile_modes(tmp_path):
    cfg = {**SMALL, "preset": {"name": "dirac", "params": {"gamma": {
        "offset": 0.1, "modes": [{"amplitude": 0.5, "wavevector": [1, 0]},
                                 {"amplitude": 0.5, "wavevector": [0, 1], "phase": 1.0}]}}}}
    out = tmp_path / "o"
    assert cli.main(["tensor", "--config", write_cfg(tmp_path, cfg), "--out", str(out)]) == 0


def test_check_deterministic_and_thread_free(tmp_path):
    path = write_cfg(tmp_path, SMALL)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["check", "--config", path, "--out", str(a), "--threads", "1"]) == 0
    assert cli.main(["check", "--config", path, "--out", str(b), "--threads", "2"]) == 0
    for name in ("summary.json", "rows.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
