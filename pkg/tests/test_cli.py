"""Tests for the ``cellfree`` command line."""

import argparse
import json

import pytest

from cellfree.cli import (
    EXIT_BUDGET,
    EXIT_OK,
    EXIT_USAGE,
    _count,
    build_parser,
    cli_main,
    load_config,
)


def test_count_accepts_float_notation():
    assert _count("1e5") == 100000
    assert _count("12") == 12
    for bad in ("0", "2.5", "many"):
        with pytest.raises(argparse.ArgumentTypeError):
            _count(bad)


def test_missing_out_is_a_usage_error():
    assert cli_main(["pmf-los"]) == EXIT_USAGE


def test_unknown_experiment_is_a_usage_error(tmp_path):
    assert cli_main(["downlink", "--out", str(tmp_path)]) == EXIT_USAGE


def test_budget_guard_exit_code(tmp_path, capsys):
    code = cli_main(["rates", "--out", str(tmp_path), "--budget", "1"])
    assert code == EXIT_BUDGET
    assert "Refused" in capsys.readouterr().err
    assert not list(tmp_path.iterdir())


def test_pmf_los_writes_tables(tmp_path, capsys):
    code = cli_main(
        ["pmf-los", "--out", str(tmp_path), "--m", "8,16", "--drops", "20", "--seed", "4"]
    )
    assert code == EXIT_OK
    names = sorted(p.name for p in tmp_path.iterdir())
    assert names == ["pmf-los-m16.csv", "pmf-los-m16.json", "pmf-los-m8.csv", "pmf-los-m8.json"]
    sidecar = json.loads((tmp_path / "pmf-los-m8.json").read_text())
    assert sidecar["seed"] == 4
    assert sidecar["metadata"]["config"]["drops"] == 20
    assert "2 table(s)" in capsys.readouterr().out


def test_load_config_layers(tmp_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"n_users": 4, "trials": 30}))
    parser = build_parser()

    args = parser.parse_args(["rates", "--out", "x", "--config", str(config_file), "--trials", "50", "--m", "64"])
    config = load_config(args)
    assert (config.n_users, config.trials, config.n_aps) == (4, 50, 64)

    args = parser.parse_args(["rates", "--out", "x", "--full-scale"])
    config = load_config(args)
    assert (config.n_aps, config.n_users, config.trials) == (1024, 64, 1000)


def test_invalid_config_file_is_a_usage_error(tmp_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(json.dumps({"ap_height": 1.0}))
    assert cli_main(["geometry", "--out", str(tmp_path), "--config", str(config_file)]) == EXIT_USAGE


def test_scale_preset_flags_are_aliases():
    parser = build_parser()
    for flag in ("--paper-scale", "--full-scale"):
        config = load_config(parser.parse_args(["compare", "--out", "x", flag, "--trials", "20"]))
        assert (config.n_aps, config.n_users, config.trials) == (1024, 64, 20)


def test_reruns_write_identical_csv(tmp_path):
    config_file = tmp_path / "run.json"
    config_file.write_text(
        json.dumps(
            {
                "n_aps": 8,
                "n_users": 2,
                "n_antennas": 1,
                "area_side": 0.15,
                "trials": 20,
                "drops": 2,
                "snr_db": [0.0, 10.0],
            }
        )
    )
    outputs = []
    for run, workers in enumerate(("1", "2", "1")):
        out = tmp_path / f"run{run}"
        argv = ["compare", "--out", str(out), "--config", str(config_file), "--seed", "9", "--workers", workers]
        assert cli_main(argv) == EXIT_OK
        outputs.append((out / "compare.csv").read_bytes())
    assert outputs[0] == outputs[1] == outputs[2]
