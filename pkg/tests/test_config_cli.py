"""Config parsing and command-line interface tests."""

import json
import os

import numpy as np
import pytest

from spectral_rnn import spt1
from spectral_rnn.cli import main
from spectral_rnn.config import (ConfigError, config_hash, from_items,
                                 parse_config, serialize)

BASE = {"model.d_x": "4", "model.d_h": "2", "model.d_y": "3"}


def _write_config(tmp_path, extra=None, name="run.cfg"):
    items = dict(BASE)
    if extra:
        items.update(extra)
    path = tmp_path / name
    path.write_text("".join(f"{k} = {v}\n" for k, v in items.items()))
    return str(path)


def test_parse_config_fills_defaults(tmp_path):
    path = _write_config(tmp_path, {"estimation.n": "5000"})
    config = parse_config(path)
    assert config.d_x == 4 and config.d_h == 2 and config.d_y == 3
    assert config["estimation.n"] == 5000
    assert config["model.l"] == 2
    assert config["input.w_scale"] == 0.5
    assert config["estimation.n_grid"] == [10000, 100000]


def test_parse_config_comments_and_blank_lines(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("# full line comment\n\nmodel.d_x = 2  # trailing\n"
                    "model.d_h = 1\nmodel.d_y = 2\n")
    config = parse_config(path)
    assert config.d_x == 2


def test_unknown_key_suggestion():
    with pytest.raises(ConfigError, match="did you mean 'model.d_x'"):
        from_items({**BASE, "model.dx": "4"})


def test_missing_required_key():
    with pytest.raises(ConfigError, match="missing required key"):
        from_items({"model.d_x": "4", "model.d_h": "2"})


def test_bad_value_reports_key():
    with pytest.raises(ConfigError, match="model.d_x"):
        from_items({**BASE, "model.d_x": "four"})


def test_stability_violation_message():
    with pytest.raises(ConfigError,
                       match=r"\|\|A1\|\| \+ \|\|U\|\| <= 1 is violated"):
        from_items({**BASE, "model.a1_scale": "0.8", "model.u_scale": "0.5"})


def test_stability_check_can_be_disabled():
    config = from_items({**BASE, "model.a1_scale": "0.8",
                         "model.u_scale": "0.5", "model.norm_check": "off"})
    assert config["model.u_scale"] == 0.5


def test_w_scale_range():
    with pytest.raises(ConfigError, match="w_scale"):
        from_items({**BASE, "input.w_scale": "1.0"})


def test_serialize_round_trip(tmp_path):
    config = from_items({**BASE, "estimation.seeds": "3,4,5"})
    path = tmp_path / "ser.cfg"
    path.write_text(serialize(config))
    again = parse_config(path)
    assert again.values == config.values
    assert config_hash(again) == config_hash(config)


def test_config_hash_changes_with_values():
    a = from_items(BASE)
    b = from_items({**BASE, "estimation.n": "123"})
    assert config_hash(a) != config_hash(b)


def test_malformed_line_reports_location(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("model.d_x 4\n")
    with pytest.raises(ConfigError, match="bad.cfg:1"):
        parse_config(path)


# ---------------------------------------------------------------------------
# command-line interface
# ---------------------------------------------------------------------------


def _run(tmp_path, command, extra_args=(), extra_cfg=None, out="out"):
    cfg = _write_config(tmp_path, extra_cfg)
    out_dir = str(tmp_path / out)
    argv = [command, "--config", cfg, "--out", out_dir, *extra_args]
    return main(argv), out_dir


def test_cli_generate_writes_artifacts(tmp_path):
    code, out = _run(tmp_path, "generate",
                     extra_cfg={"estimation.n": "200"})
    assert code == 0
    x = spt1.read_tensor(os.path.join(out, "x.spt1"))
    assert x.shape == (4, 200)
    manifest = json.loads(open(os.path.join(out, "manifest.json")).read())
    assert "x.spt1" in manifest["files"]
    assert "config_hash" in manifest and "versions" in manifest


def test_cli_generate_deterministic(tmp_path):
    _, out_a = _run(tmp_path, "generate", ("--seed", "7"),
                    {"estimation.n": "100"}, out="a")
    _, out_b = _run(tmp_path, "generate", ("--seed", "7"),
                    {"estimation.n": "100"}, out="b")
    for name in ("x.spt1", "y.spt1", "a1_true.spt1"):
        wa = open(os.path.join(out_a, name), "rb").read()
        wb = open(os.path.join(out_b, name), "rb").read()
        assert wa == wb, name


def test_cli_csv_format(tmp_path):
    code, out = _run(tmp_path, "generate", ("--format", "csv"),
                     {"estimation.n": "50"})
    assert code == 0
    x = np.loadtxt(os.path.join(out, "x.csv"), delimiter=",", ndmin=2)
    assert x.shape == (4, 50)


def test_cli_set_override(tmp_path):
    code, out = _run(tmp_path, "generate",
                     ("--set", "estimation.n=60"), {"estimation.n": "500"})
    assert code == 0
    assert spt1.read_tensor(os.path.join(out, "x.spt1")).shape[1] == 60


def test_cli_config_error_exit_code(tmp_path):
    code, _ = _run(tmp_path, "generate",
                   extra_cfg={"model.dx_typo": "1"})
    assert code == 2


def test_cli_bad_set_exit_code(tmp_path):
    code, _ = _run(tmp_path, "generate", ("--set", "estimation.n"))
    assert code == 2


def test_cli_scalar_degree_guard_exit_code(tmp_path):
    code, _ = _run(tmp_path, "train-scalar",
                   extra_cfg={"model.l": "2", "estimation.n": "100"})
    assert code == 3


def test_cli_missing_moment_file_exit_code(tmp_path):
    code, _ = _run(tmp_path, "decompose", extra_cfg={"estimation.n": "100"})
    assert code == 4


def test_cli_moments_then_decompose(tmp_path):
    cfg = {"estimation.n": "20000", "model.d_h": "2", "model.d_y": "3"}
    code, out = _run(tmp_path, "moments", extra_cfg=cfg)
    assert code == 0
    code2, _ = _run(tmp_path, "decompose", extra_cfg=cfg)
    assert code2 == 0
    weights = spt1.read_tensor(os.path.join(out, "cp_weights.spt1"))
    assert weights.shape == (1, 2)
    assert np.all(np.isfinite(weights))


def test_cli_train_and_eval(tmp_path):
    cfg = {"estimation.n": "40000"}
    code, out = _run(tmp_path, "train", ("--seed", "3"), cfg)
    assert code == 0
    report = json.loads(open(os.path.join(out, "report.json")).read())
    assert report["max_error"] < 0.5
    code2, _ = _run(tmp_path, "eval", ("--seed", "3"), cfg)
    assert code2 == 0
    ev = json.loads(open(os.path.join(out, "eval.json")).read())
    assert ev["max_error"] < 0.5
    assert sorted(ev["permutation"]) == [0, 1]


def test_cli_eval_without_estimate_exit_code(tmp_path):
    code, _ = _run(tmp_path, "eval", extra_cfg={"estimation.n": "100"})
    assert code == 4


def test_cli_train_linear(tmp_path):
    cfg = {"estimation.n": "30000", "model.u_scale": "0.4",
           "model.a1_scale": "0.5"}
    code, out = _run(tmp_path, "train-linear", extra_cfg=cfg)
    assert code == 0
    report = json.loads(open(os.path.join(out, "report.json")).read())
    assert report["a2_error"] < 1.0


def test_cli_score_check(tmp_path):
    code, out = _run(tmp_path, "score-check",
                     extra_cfg={"estimation.n": "20000"})
    assert code == 0
    rec = json.loads(open(os.path.join(out, "score_check.json")).read())
    assert rec["relative_error"] < 0.2


def test_cli_sweep_deterministic_across_workers(tmp_path):
    cfg = {"estimation.n_grid": "2000,8000", "estimation.seeds": "0,1"}
    _, out_a = _run(tmp_path, "sweep", ("--workers", "1"), cfg, out="w1")
    _, out_b = _run(tmp_path, "sweep", ("--workers", "4"), cfg, out="w4")
    csv_a = open(os.path.join(out_a, "sweep.csv")).read()
    csv_b = open(os.path.join(out_b, "sweep.csv")).read()
    assert csv_a == csv_b
    assert csv_a.splitlines()[0] == "n,seed,matrix,row,error"


def test_cli_workers_env_var(tmp_path, monkeypatch):
    monkeypatch.setenv("SPECTRAL_RNN_WORKERS", "nope")
    code, _ = _run(tmp_path, "generate", extra_cfg={"estimation.n": "50"})
    assert code == 2


def test_cli_resolved_config_written(tmp_path):
    _, out = _run(tmp_path, "generate", extra_cfg={"estimation.n": "50"})
    text = open(os.path.join(out, "config.resolved")).read()
    assert "model.d_x = 4" in text
    assert "estimation.n = 50" in text
