import json
import os

import pytest

from fedmerge.cli import main, parse_grid
from fedmerge.config import (
    DATA_ROOT_ENV,
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    load_config,
    parse_config_text,
    snapshot,
)


GOOD = """
[dataset]
path = u.data
format = movielens-100k

[training]
rounds = 2
local_epochs = 1
scheme = EM

[run]
seed = 3
repeats = 1
"""


class TestConfigParsing:
    def test_round_trip_through_snapshot(self):
        cfg = parse_config_text(GOOD)
        assert parse_config_text(snapshot(cfg)) == cfg

    def test_defaults_fill_missing_keys(self):
        cfg = parse_config_text(GOOD)
        assert cfg.dim == 16 and cfg.alpha == 1.0 and cfg.batch_size == 256

    def test_unknown_key_is_a_hard_error(self):
        with pytest.raises(ConfigError, match="unknown config key training.batchsize"):
            parse_config_text("[training]\nbatchsize = 7\n")

    def test_unknown_section_is_a_hard_error(self):
        with pytest.raises(ConfigError, match=r"unknown config section \[models\]"):
            parse_config_text("[models]\ndim = 4\n")

    def test_bad_value_names_the_key(self):
        with pytest.raises(ConfigError, match="training.rounds"):
            parse_config_text("[training]\nrounds = many\n")

    def test_validation_names_the_field(self):
        with pytest.raises(ConfigError, match="training.scheme"):
            parse_config_text("[training]\nscheme = XX\n")
        with pytest.raises(ConfigError, match="aggregation.alpha"):
            parse_config_text("[aggregation]\nalpha = -1\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config(tmp_path / "nope.ini")

    def test_overrides(self):
        cfg = apply_overrides(ExperimentConfig(), ["training.lr=0.05", "run.seed=9"])
        assert cfg.lr == 0.05 and cfg.seed == 9

    def test_override_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown config key"):
            apply_overrides(ExperimentConfig(), ["training.gamma=1"])

    def test_adapter_layer_validation(self):
        with pytest.raises(ConfigError, match="adapter_layers"):
            parse_config_text("[model]\ndim = 16\nadapter_layers = 8,4,1\n")
        cfg = parse_config_text("[model]\ndim = 16\nadapter_layers = 32,16,1\n")
        assert cfg.adapter_layers == (32, 16, 1)

    def test_percent_signs_in_values_survive(self):
        # interpolation is off: % is a legal character in paths
        cfg = parse_config_text("[dataset]\npath = data/100%backup/u.data\n")
        assert cfg.path == "data/100%backup/u.data"
        assert parse_config_text(snapshot(cfg)) == cfg

    def test_data_root_resolution(self, monkeypatch):
        cfg = parse_config_text(GOOD)
        monkeypatch.setenv(DATA_ROOT_ENV, "/data/root")
        assert cfg.resolved_path() == "/data/root/u.data"
        monkeypatch.delenv(DATA_ROOT_ENV)
        assert cfg.resolved_path() == "u.data"


class TestGrid:
    def test_range_is_stop_inclusive(self):
        grid = parse_grid("0.5:1.5:0.1")
        assert len(grid) == 11
        assert grid[0] == pytest.approx(0.5) and grid[-1] == pytest.approx(1.5)

    def test_comma_list(self):
        assert parse_grid("0.5,1.0,1.5") == [0.5, 1.0, 1.5]

    def test_bad_range(self):
        with pytest.raises(ConfigError):
            parse_grid("1:2")


def write_config(tmp_path, data_path, extra=""):
    text = f"""
[dataset]
path = {data_path}
format = movielens-100k

[model]
dim = 8

[training]
rounds = 2
local_epochs = 1
batch_size = 16
scheme = EM

[run]
seed = 0
repeats = 1
out = {tmp_path / 'out'}
{extra}
"""
    p = tmp_path / "exp.ini"
    p.write_text(text)
    return str(p)


class TestCliRun:
    def test_run_writes_artifacts_and_is_reproducible(self, tmp_path, tiny_file, capsys):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["run", "--config", cfg_path]) == 0
        out = tmp_path / "out"
        blob1 = (out / "metrics.csv").read_bytes()
        summary = json.loads((out / "summary.json").read_text())
        assert "hr@10" in summary["final"]
        assert (out / "config.snapshot").exists()
        # second invocation: byte-identical csv
        assert main(["run", "--config", cfg_path]) == 0
        assert (out / "metrics.csv").read_bytes() == blob1
        assert "hr@10" in capsys.readouterr().out

    def test_rerun_from_snapshot_is_byte_identical(self, tmp_path, tiny_file):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["run", "--config", cfg_path]) == 0
        blob1 = (tmp_path / "out" / "metrics.csv").read_bytes()
        snap = tmp_path / "out" / "config.snapshot"
        out2 = tmp_path / "out2"
        assert main(["run", "--config", str(snap), "--out", str(out2)]) == 0
        assert (out2 / "metrics.csv").read_bytes() == blob1

    def test_zero_rounds_evaluates_the_random_initialization(self, tmp_path, tiny_file):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["run", "--config", cfg_path, "--set", "training.rounds=0"]) == 0
        lines = (tmp_path / "out" / "metrics.csv").read_text().splitlines()
        assert len(lines) == 2  # header + round 0
        assert lines[1].split(",")[2] == "0"

    def test_missing_dataset_is_a_clean_error(self, tmp_path, capsys):
        cfg_path = write_config(tmp_path, tmp_path / "missing.data")
        assert main(["run", "--config", cfg_path]) == 2
        assert "error" in capsys.readouterr().err

    def test_csv_schema_is_documented_and_stable(self, tmp_path, tiny_file):
        cfg_path = write_config(tmp_path, tiny_file)
        main(["run", "--config", cfg_path])
        header = (tmp_path / "out" / "metrics.csv").read_text().splitlines()[0]
        assert header == "repeat,seed,round,hr@5,hr@10,ndcg@5,ndcg@10,train_loss"


class TestCliAblate:
    def test_table_shape_and_shared_seed_guarantee(self, tmp_path, tiny_file):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["ablate", "--config", cfg_path]) == 0
        table = (tmp_path / "out" / "ablation.csv").read_text().splitlines()
        assert len(table) == 6  # header + 5 variants
        assert table[0] == "variant,hr@5,hr@10,ndcg@5,ndcg@10"
        names = [row.split(",")[0] for row in table[1:]]
        assert names == ["fedmf-sr", "fedsim-sr", "fedsim-sm", "fedsim-dm", "fedsim-em"]
        # the fedmf-sr row equals a standalone run with the same seed
        solo = tmp_path / "solo"
        assert main([
            "run", "--config", cfg_path, "--out", str(solo),
            "--set", "training.scheme=SR", "--set", "aggregation.mode=fixed",
        ]) == 0
        solo_summary = json.loads((solo / "summary.json").read_text())
        row = table[1].split(",")
        assert float(row[2]) == solo_summary["final"]["hr@10"]["mean"]


class TestCliSweep:
    def test_degenerate_grid(self, tmp_path, tiny_file, capsys):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["sweep-alpha", "--config", cfg_path, "--grid", "1.0"]) == 0
        out = capsys.readouterr().out
        assert "best alpha: 1" in out
        sweep = (tmp_path / "out" / "sweep.csv").read_text().splitlines()
        assert len(sweep) == 2
        assert (tmp_path / "out" / "final" / "metrics.csv").exists()

    def test_small_grid_selects_deterministically(self, tmp_path, tiny_file, capsys):
        cfg_path = write_config(tmp_path, tiny_file)
        assert main(["sweep-alpha", "--config", cfg_path, "--grid", "0.5,1.0"]) == 0
        first = capsys.readouterr().out
        assert main(["sweep-alpha", "--config", cfg_path, "--grid", "0.5,1.0"]) == 0
        assert capsys.readouterr().out == first


class TestCliProbe:
    def test_probe_passes_and_writes_margins(self, tmp_path, capsys):
        out = tmp_path / "probe"
        assert main(["probe-theory", "--draws", "200", "--out", str(out)]) == 0
        assert "PASS" in capsys.readouterr().out
        lines = (out / "probe.csv").read_text().splitlines()
        assert len(lines) == 201
        assert lines[0] == "draw,rho,compensation_margin,dist_replacement,dist_merge"


def test_env_var_dataset_root(tmp_path, tiny_file, monkeypatch):
    root = os.path.dirname(tiny_file)
    monkeypatch.setenv(DATA_ROOT_ENV, root)
    cfg_path = write_config(tmp_path, os.path.basename(tiny_file))
    assert main(["run", "--config", cfg_path, "--set", "training.rounds=1"]) == 0
    assert (tmp_path / "out" / "metrics.csv").exists()
