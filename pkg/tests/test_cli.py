import json
import os

import numpy as np
import pytest
from unittest.mock import Mock

from revert_field.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_RUNTIME,
    build_parser,
    grid_shape,
    resolve_config,
    run,
)
from revert_field.core.exceptions import ConfigError
from revert_field.storage import files


@pytest.fixture(autouse=True)
def quiet_logging(mocker):
    return mocker.patch("revert_field.cli.configure_logging", return_value=Mock())


@pytest.fixture
def cloud_file(tmp_path):
    path = tmp_path / "pts.csv"
    xs = np.linspace(0.0, 1.0, 26)
    rows = "\n".join(f"{x:.4f},{0.5 + 0.1 * np.sin(6 * x):.4f}" for x in xs)
    path.write_text("x,y\n" + rows + "\n")
    return str(path)


def _read(path):
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def test_grid_shape():
    assert grid_shape("200x200") == (200, 200)
    assert grid_shape("3X5") == (3, 5)
    with pytest.raises(Exception, match="200x200"):
        grid_shape("abc")


def test_flags_override_config_file(tmp_path):
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"seed": 4, "kernel": {"kind": "se", "lengthscale": 0.1}}))
    args = build_parser().parse_args(["field-grid", "--config", str(config_path), "--cloud", "pts.csv",
                                      "--lengthscale", "0.03", "--out", "grid.csv"])
    config = resolve_config(args)
    assert config.seed == 4
    assert config.kernel.kind == "se"
    assert config.kernel.lengthscale == 0.03


def test_invalid_config_is_a_config_error(tmp_path):
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"kernel": {"shape": 2}}))
    args = build_parser().parse_args(["field-grid", "--config", str(config_path), "--cloud", "c.csv",
                                      "--out", "g.csv"])
    with pytest.raises(ConfigError, match="invalid configuration"):
        resolve_config(args)


def test_missing_required_flag_exits_2(capsys):
    assert run(["field-grid", "--cloud", "pts.csv"]) == EXIT_CONFIG
    assert "usage" in capsys.readouterr().err


def test_unknown_command_exits_2():
    assert run(["plot"]) == EXIT_CONFIG


def test_invalid_value_exits_2(tmp_path):
    assert run(["bench-distance", "--envs", "0", "--out", str(tmp_path / "r.json")]) == EXIT_CONFIG


def test_version_exits_0():
    assert run(["--version"]) == EXIT_OK


def test_missing_cloud_file_exits_1(tmp_path):
    assert run(["field-grid", "--cloud", str(tmp_path / "none.csv"), "--out", str(tmp_path / "g.csv")]) \
        == EXIT_RUNTIME


def test_field_grid(tmp_path, cloud_file):
    out = str(tmp_path / "grid.csv")
    assert run(["field-grid", "--cloud", cloud_file, "--kernel", "rq", "--lengthscale", "0.06",
                "--grid", "5x4", "--out", out]) == EXIT_OK
    lines = _read(out).splitlines()
    assert lines[0] == "x,y,d_hat,o_hat,uncertainty,status"
    assert len(lines) == 21
    manifest = json.loads(_read(out + ".manifest.json"))
    assert manifest["command"] == "field-grid"
    assert manifest["config"]["kernel"]["lengthscale"] == 0.06


def test_field_grid_is_reproducible(tmp_path, cloud_file):
    outputs = []
    for name in ("a.csv", "b.csv"):
        out = str(tmp_path / name)
        assert run(["field-grid", "--cloud", cloud_file, "--method", "fused", "--grid", "6x6",
                    "--extent", "0", "0", "1", "1", "--out", out]) == EXIT_OK
        outputs.append(_read(out))
    assert outputs[0] == outputs[1]


def test_calibrate_noise_writes_sigma_n(tmp_path, mocker):
    mocker.patch("revert_field.cli.learn_sigma_n", return_value=0.0123)
    out = str(tmp_path / "run.json")
    assert run(["calibrate-noise", "--noise-sd", "0.005", "--point-gap", "0.04", "--lengthscale", "0.06",
                "--out", out]) == EXIT_OK
    config = json.loads(_read(out))
    assert config["field"]["sigma_n"] == 0.0123
    assert config["kernel"]["lengthscale"] == 0.06
    assert config["calibration"]["noise_sd"] == 0.005
    assert config["calibration"]["point_gap"] == 0.04


def test_bench_distance(tmp_path, mocker):
    out = str(tmp_path / "report.json")
    config_path = tmp_path / "run.json"
    config_path.write_text(json.dumps({"bench": {"queries": 16, "scatter_samples": 4, "oracle_spacing": 1e-3}}))
    assert run(["bench-distance", "--config", str(config_path), "--envs", "1", "--methods", "smoothmin,ours-rq",
                "--sigma-n", "0.001", "--seed", "2", "--out", out]) == EXIT_OK
    report = json.loads(_read(out))
    assert [m["method"] for m in report["methods"]] == ["smoothmin", "ours-rq"]
    assert os.path.exists(out + ".scatter.csv")
    assert os.path.exists(out + ".scatter.csv.manifest.json")


def test_ugw_sim_echoloc_and_map(tmp_path):
    archive = str(tmp_path / "archive")
    assert run(["ugw-sim", "--rows", "3", "--cols", "3", "--noiseless", "--seed", "1",
                "--envelopes", str(tmp_path / "env"), "--out", archive]) == EXIT_OK
    assert os.path.exists(os.path.join(archive, "manifest.json"))
    assert os.path.exists(archive + ".manifest.json")
    assert len(os.listdir(tmp_path / "env")) == 9 * 2

    errors = str(tmp_path / "errors.csv")
    walks = tmp_path / "walks.json"
    walks.write_text(json.dumps([[0, 1, 4], [8, 7, 6]]))
    assert run(["echoloc", "--measurements", archive, "--traj", str(walks), "--oracle", "rect",
                "--particles", "30", "--out", errors]) == EXIT_OK
    assert _read(errors).splitlines()[0] == "trajectory,step,err_m"
    assert len(_read(errors).splitlines()) == 1 + 6
    manifest = json.loads(_read(errors + ".manifest.json"))
    assert manifest["walks"] == [[0, 1, 4], [8, 7, 6]]
    assert [(i["role"], i["path"]) for i in manifest["inputs"]] == [
        ("measurements", archive), ("trajectories", str(walks))]
    assert manifest["inputs"][0]["sha256"] == files.file_digest(archive)

    config_path = tmp_path / "map.json"
    config_path.write_text(json.dumps({"mapping": {"max_iterations": 1, "field_grid": 10}}))
    map_out = str(tmp_path / "map.json.out")
    grid_out = str(tmp_path / "map_grid.csv")
    assert run(["map", "--config", str(config_path), "--measurements", archive, "--q", "8",
                "--grid-out", grid_out, "--out", map_out]) == EXIT_OK
    result = json.loads(_read(map_out))
    assert len(result["virtual_points"]) == 8
    assert json.loads(_read(map_out + ".manifest.json"))["inputs"][0]["role"] == "measurements"
    assert len(_read(grid_out).splitlines()) == 1 + 100


def test_map_needs_an_archive(tmp_path):
    assert run(["map", "--measurements", str(tmp_path), "--out", str(tmp_path / "m.json")]) == EXIT_RUNTIME
