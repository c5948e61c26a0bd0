import json

import numpy as np
import pytest

from potmvc.cli import main
from potmvc.datagen import load_dataset
from potmvc.pipeline import ExperimentConfig, save_config


def write_fast_config(path, **kw):
    base = dict(classes=3, views=2, samples=120, ratio=0.5,
                view_dims=(6, 5), noise_std=0.8, stage1_epochs=3,
                stage2_epochs=2, stage3_epochs=3, batch_size=64, seed=4)
    base.update(kw)
    save_config(ExperimentConfig(**base), path)
    return path


class TestGenerateCommand:
    def test_writes_loadable_dataset(self, tmp_path, capsys):
        out = tmp_path / "ds"
        rc = main(["generate", "--classes", "3", "--views", "2",
                   "--samples", "90", "--ratio", "0.5", "--dims", "5,4",
                   "--seed", "1", "--out", str(out)])
        assert rc == 0
        ds = load_dataset(out)
        assert ds.n_samples == 90
        assert ds.n_views == 2
        assert "90 samples" in capsys.readouterr().out


class TestTrainCommand:
    def test_config_file_run_writes_report(self, tmp_path, capsys):
        cfg = write_fast_config(tmp_path / "run.cfg")
        out = tmp_path / "out"
        rc = main(["train", "--config", str(cfg), "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["failure"] is None
        assert report["metrics"]["acc"] >= 0.0
        printed = json.loads(
            capsys.readouterr().out.split("report written")[0])
        assert printed["acc"] == report["metrics"]["acc"]

    def test_flag_overrides(self, tmp_path):
        cfg = write_fast_config(tmp_path / "run.cfg")
        out = tmp_path / "out"
        rc = main(["train", "--config", str(cfg), "--seed", "9",
                   "--balanced-labels", "--stage3-epochs", "2",
                   "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["seed"] == 9
        assert report["config"]["balanced_labels"] is True
        assert report["config"]["stage3_epochs"] == 2

    def test_trains_from_dataset_directory(self, tmp_path):
        ds_dir = tmp_path / "ds"
        main(["generate", "--classes", "3", "--views", "2", "--samples",
              "90", "--ratio", "0.5", "--dims", "5,4", "--out", str(ds_dir)])
        cfg = write_fast_config(tmp_path / "run.cfg")
        out = tmp_path / "out"
        rc = main(["train", "--config", str(cfg), "--dataset", str(ds_dir),
                   "--out", str(out)])
        assert rc == 0
        report = json.loads((out / "report.json").read_text())
        assert report["config"]["dataset_path"] == str(ds_dir)


class TestEvalCommand:
    def test_scores_label_files(self, tmp_path, capsys):
        pred = tmp_path / "pred.csv"
        truth = tmp_path / "truth.csv"
        pred.write_text("0\n0\n1\n1\n")
        truth.write_text("1\n1\n0\n0\n")
        rc = main(["eval", "--pred", str(pred), "--truth", str(truth)])
        assert rc == 0
        out = json.loads(capsys.readouterr().out)
        assert out["acc"] == 1.0

    def test_bad_label_file_reported(self, tmp_path):
        pred = tmp_path / "pred.csv"
        pred.write_text("0\nnot-a-label\n")
        truth = tmp_path / "truth.csv"
        truth.write_text("0\n1\n")
        with pytest.raises(ValueError, match="pred.csv:2"):
            main(["eval", "--pred", str(pred), "--truth", str(truth)])


class TestSweepCommand:
    def test_grid_runs_and_writes_csv(self, tmp_path, capsys):
        cfg = write_fast_config(tmp_path / "run.cfg", samples=100,
                                stage1_epochs=2, stage2_epochs=1,
                                stage3_epochs=2)
        out = tmp_path / "sweep"
        rc = main(["sweep", "--config", str(cfg), "--ratios", "0.5",
                   "--seeds", "0", "--out", str(out)])
        assert rc == 0
        lines = (out / "sweep.csv").read_text().splitlines()
        assert lines[0] == "ratio,seed,variant,acc,nmi,tail_acc"
        assert len(lines) == 3  # method + baseline
        stdout = capsys.readouterr().out
        assert "method" in stdout and "baseline" in stdout
