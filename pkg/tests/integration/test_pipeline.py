"""
End-to-end runs of the command line on a tiny synthetic dataset.
"""

import logging
import os
import shutil

import numpy as np
import pytest
import yaml

from main import main
from src.integrations.dataset_io import load_manifest
from src.integrations.netpbm_io import read_pgm
from src.integrations.tensor_io import read_tensor
from src.utils.config_loader import dump_config, load_config
from src.utils.logger import set_log_level
from src.utils.validators import IGNORE
from tests.integration.cli import read_csv, run_cli, stage_state


@pytest.fixture(scope="module")
def pipeline(tiny_workspace):
    root = tiny_workspace
    runs = {}
    for name, args in [
        ("data", ["gen-data"]),
        ("cls", ["train-cls"]),
    ]:
        code, runs[name] = run_cli(root, *args)
        assert code == 0, name
    code, runs["maps"] = run_cli(root, "localize", "--checkpoint", str(runs["cls"] / "classifier"))
    assert code == 0
    code, runs["masks"] = run_cli(root, "make-masks", "--maps-dir", str(runs["maps"] / "maps"))
    assert code == 0
    code, runs["seg"] = run_cli(root, "train-seg", "--masks-dir", str(runs["masks"] / "masks"))
    assert code == 0
    code, runs["eval"] = run_cli(root, "eval", "--checkpoint", str(runs["seg"] / "fcn"))
    assert code == 0
    return root, runs


class TestPipeline:
    def test_dataset(self, pipeline):
        root, runs = pipeline
        records = load_manifest(root / "data")
        assert len(records) == 20
        assert stage_state(runs["data"], "GenData")["records"] == 20

    def test_classifier_checkpoint(self, pipeline):
        _, runs = pipeline
        run_dir = runs["cls"]
        assert (run_dir / "config.resolved.yaml").exists()
        assert (run_dir / "classifier" / "manifest.txt").exists()
        assert (run_dir / "classifier" / "block.2.fc.weight.tns").exists()
        accuracy = stage_state(run_dir, "TrainCls")["val_label_accuracy"]
        assert 0.0 <= accuracy <= 1.0
        assert run_dir.name.split("_")[1] == "seed3"

    def test_localization_maps(self, pipeline):
        root, runs = pipeline
        maps_dir = runs["maps"] / "maps"
        with open(maps_dir / "localize.yaml") as f:
            info = yaml.safe_load(f)
        assert info["block_dilations"] == [1, 2, 3]
        assert info["split"] == "weak"
        for record in load_manifest(root / "data", split="weak"):
            for class_id in record.labels:
                for block in range(3):
                    values = read_tensor(maps_dir / record.record_id / f"c{class_id}_b{block}.tns")
                    assert values.shape == (16, 16)
                    assert values.min() >= 0.0 and values.max() <= 1.0 + 1e-6
                fused = read_tensor(maps_dir / record.record_id / f"c{class_id}_fused.tns")
                assert fused.max() <= 2.0 + 1e-6
                assert (maps_dir / record.record_id / f"c{class_id}_fused.pgm").exists()

    def test_pseudo_masks(self, pipeline):
        root, runs = pipeline
        masks_dir = runs["masks"] / "masks"
        records = load_manifest(root / "data", split="weak")
        assert len(list(masks_dir.glob("*.pgm"))) == len(records)
        for record in records:
            mask = read_pgm(masks_dir / f"{record.record_id}.pgm")
            allowed = {0, IGNORE} | set(record.labels)
            assert set(np.unique(mask)) <= allowed
        quality = dict(line.split("=") for line in (masks_dir / "quality.txt").read_text().split())
        assert 0.0 <= float(quality["pseudo_mask_mIoU"]) <= 1.0
        assert 0.0 <= float(quality["ignored_fraction"]) <= 1.0

    def test_segmentation_training(self, pipeline):
        _, runs = pipeline
        run_dir = runs["seg"]
        assert (run_dir / "fcn" / "classifier.weight.tns").exists()
        rows = read_csv(run_dir / "metrics.csv")
        assert rows[0] == ["epoch", "split", "loss", "mIoU"]
        assert [r[:2] for r in rows[1:]] == [["1", "train"], ["1", "val"], ["2", "train"], ["2", "val"]]
        assert stage_state(run_dir, "TrainSeg")["mode"] == "weak"

    def test_evaluation_report(self, pipeline):
        _, runs = pipeline
        out_dir = runs["eval"] / "eval_val"
        lines = (out_dir / "metrics.txt").read_text().splitlines()
        assert lines[0].split() == ["class", "IoU"]
        assert lines[-1].startswith("mIoU=")
        assert len(list((out_dir / "pred").glob("*.pgm"))) == 4
        assert read_csv(out_dir / "metrics.csv")[-1][0] == "mIoU"


class TestMoreCommands:
    def test_semi_mode(self, pipeline):
        root, runs = pipeline
        code, run_dir = run_cli(root, "train-seg", "--masks-dir", str(runs["masks"] / "masks"), "--mode", "semi")
        assert code == 0
        assert stage_state(run_dir, "TrainSeg")["mode"] == "semi"

    def test_eval_classifier_prints_accuracy(self, pipeline, capsys):
        root, runs = pipeline
        code, run_dir = run_cli(root, "eval", "--checkpoint", str(runs["cls"] / "classifier"))
        assert code == 0
        assert "label_accuracy=" in capsys.readouterr().out
        assert (run_dir / "eval_val" / "label_accuracy.txt").exists()

    def test_eval_external_directory(self, pipeline, tmp_path):
        root, runs = pipeline
        for record in load_manifest(root / "data", split="val"):
            shutil.copy(root / "data" / record.image_path, tmp_path / f"{record.record_id}.ppm")
            shutil.copy(root / "data" / record.mask_path, tmp_path / f"{record.record_id}.mask.pgm")
        code, run_dir = run_cli(root, "eval", "--checkpoint", str(runs["seg"] / "fcn"), "--data-dir", str(tmp_path))
        assert code == 0
        assert stage_state(run_dir, "Eval")["images"] == 4

    def test_retraining_is_byte_identical(self, pipeline):
        root, runs = pipeline
        code, run_dir = run_cli(root, "train-cls")
        assert code == 0
        for path in sorted((runs["cls"] / "classifier").glob("*.tns")):
            assert path.read_bytes() == (run_dir / "classifier" / path.name).read_bytes()

    def test_receptive_field(self, pipeline, capsys):
        root, _ = pipeline
        code, run_dir = run_cli(root, "rf", "3x3 d=1; pool2; 3x3 d=3")
        assert code == 0
        assert (run_dir / "rf.txt").read_text().splitlines()[-1].split() == ["stack", "16", "16"]
        assert "stack" in capsys.readouterr().out

    def test_localization_ablation(self, pipeline):
        root, runs = pipeline
        code, run_dir = run_cli(root, "ablate", "--study", "localization",
                                "--checkpoint", str(runs["cls"] / "classifier"))
        assert code == 0
        rows = read_csv(run_dir / "ablation.csv")
        assert rows[0] == ["source", "pseudo_mIoU", "precision", "recall", "seg_val_mIoU"]
        assert [r[0] for r in rows[1:]] == ["d=1", "d=2", "d=3", "fusion", "mean_all"]
        assert (run_dir / "ablation.txt").exists()

    def test_split_ablation(self, pipeline):
        root, runs = pipeline
        code, run_dir = run_cli(root, "ablate", "--study", "splits", "--checkpoint", str(runs["cls"] / "classifier"))
        assert code == 0
        rows = read_csv(run_dir / "ablation.csv")
        assert rows[0] == ["setting", "strong_images", "seg_val_mIoU"]
        assert [r[:2] for r in rows[1:]] == [["weak-only", "0"], ["semi 25%", "3"], ["semi 30%", "4"]]


class TestFailures:
    def test_missing_checkpoint_exits_one(self, tiny_workspace, capsys):
        code, run_dir = run_cli(tiny_workspace, "localize", "--checkpoint", str(tiny_workspace / "nowhere"))
        assert code == 1
        assert "error:" in capsys.readouterr().err
        assert stage_state(run_dir, "Localize")["status"] == "failed"

    def test_split_study_needs_enough_strong_images(self, pipeline, capsys):
        root, runs = pipeline
        config = load_config(str(root / "tiny.yaml"), overrides={"ablate_strong_fractions": [0.25, 0.5]})
        dump_config(config, root / "few_strong.yaml")
        code, run_dir = run_cli(root, "ablate", "--study", "splits", "--checkpoint", str(runs["cls"] / "classifier"),
                                config_name="few_strong.yaml")
        assert code == 1
        assert "needs 6 strong images, only 4 exist" in capsys.readouterr().err
        assert stage_state(run_dir, "Ablate")["status"] == "failed"
        assert not (run_dir / "ablation.csv").exists()

    def test_missing_config_exits_one(self, tmp_path):
        assert main(["--config", str(tmp_path / "absent.yaml"), "gen-data"]) == 1

    def test_usage_error_exits_two(self):
        with pytest.raises(SystemExit) as info:
            main(["localize"])
        assert info.value.code == 2


class TestLogLevelFlag:
    @pytest.fixture(autouse=True)
    def restore_level(self, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "INFO")
        yield
        set_log_level("INFO")

    def test_debug_reaches_module_and_stage_loggers(self, tiny_workspace):
        code, _ = run_cli(tiny_workspace, "--log-level", "DEBUG", "rf", "3x3 d=2")
        assert code == 0
        for name in ("MdcClassifier", "Segmentation", "Fusion", "DatasetIO", "ReceptiveField", "RunState", "Main"):
            assert logging.getLogger(name).level == logging.DEBUG, name
        assert os.environ["LOG_LEVEL"] == "DEBUG"

    def test_error_quiets_pipeline_loggers(self, tiny_workspace):
        code, _ = run_cli(tiny_workspace, "--log-level", "ERROR", "rf", "3x3")
        assert code == 0
        assert not logging.getLogger("ReceptiveField").isEnabledFor(logging.INFO)
        assert not logging.getLogger("Evaluator").isEnabledFor(logging.WARNING)

    def test_unknown_level_name_rejected(self):
        with pytest.raises(ValueError, match="LOUD"):
            set_log_level("LOUD")
