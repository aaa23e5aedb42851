"""
train-seg: train the FCN from pseudo masks (weak) or pseudo plus human masks (semi).
eval: score a checkpoint on a split.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.core.evaluator import ConfusionMatrix, accumulate, miou, write_metrics_report
from src.core.models import FcnSpec, MdcSpec, Model, Sample
from src.core.segmentation import build_fcn, predict_mask, predict_masks, train_seg
from src.integrations.checkpoint_io import load_checkpoint, save_checkpoint
from src.integrations.dataset_io import MANIFEST_NAME, index_external_triples, load_sample, load_split
from src.integrations.netpbm_io import write_netpbm
from src.stages.base_stage import BaseStage
from src.stages.builders import fcn_spec, seg_hyper
from src.stages.classifier_stage import classifier_accuracy
from src.stages.run_state import RunState


def fit_fcn(config: Dict[str, Any], mode: str, weak: List[Sample], strong: List[Sample],
            val: List[Sample], metrics_path: Optional[Path] = None) -> Model:
    """Build and train an FCN from the run configuration."""
    model = build_fcn(fcn_spec(config), seed=config["seed"])
    return train_seg(model, mode, weak, strong, seg_hyper(config), val_set=val or None,
                     metrics_path=metrics_path, min_prob=config["online_mask_floor"])


def fcn_confusion(model: Model, samples: List[Sample]) -> ConfusionMatrix:
    spec: FcnSpec = model.spec
    cm = ConfusionMatrix(spec.num_outputs)
    if samples:
        preds = predict_masks(model, np.stack([s.image for s in samples]))
        for sample, pred in zip(samples, preds):
            accumulate(cm, sample.gt_mask, pred)
    return cm


class TrainSegStage(BaseStage):
    """Trains and checkpoints the FCN; per-epoch metrics go to metrics.csv."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, masks_dir: str,
                 mode: Optional[str] = None, data_dir: Optional[str] = None):
        super().__init__("TrainSeg", config, run_state)
        self.masks_dir = Path(masks_dir)
        self.mode = mode or config["seg_mode"]
        self.data_dir = Path(data_dir or config["data_dir"])

    def run(self) -> Dict[str, Any]:
        classes = self.config["num_classes"]
        weak = load_split(self.data_dir, "weak", with_mask=False, pseudo_mask_dir=self.masks_dir, num_classes=classes)
        strong = load_split(self.data_dir, "strong", with_mask=True, num_classes=classes) if self.mode == "semi" else []
        val = load_split(self.data_dir, "val", with_mask=True, num_classes=classes)

        model = fit_fcn(self.config, self.mode, weak, strong, val, self.run_state.path("metrics.csv"))
        checkpoint = save_checkpoint(model, self.run_state.path("fcn", "manifest.txt").parent)
        summary: Dict[str, Any] = {"checkpoint": str(checkpoint), "mode": self.mode}
        if val:
            summary["val_miou"] = float(miou(fcn_confusion(model, val)))
            self.logger.info(f"FCN ({self.mode}) val mIoU: {summary['val_miou']:.4f}")
        return summary


class EvalStage(BaseStage):
    """FCN checkpoints get an IoU report and predicted masks; classifiers get label accuracy."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, checkpoint: str,
                 split: str = "val", data_dir: Optional[str] = None):
        super().__init__("Eval", config, run_state)
        self.checkpoint = Path(checkpoint)
        self.split = split
        self.data_dir = Path(data_dir or config["data_dir"])

    def _samples(self) -> List[Sample]:
        """Manifest split, or <id>.ppm / <id>.mask.pgm pairs when the directory has no manifest."""
        if (self.data_dir / MANIFEST_NAME).exists():
            return load_split(self.data_dir, self.split, with_mask=True, num_classes=self.config["num_classes"])
        records = index_external_triples(self.data_dir, self.split)
        classes = self.config["num_classes"]
        return [load_sample(r, self.data_dir, with_mask=True, num_classes=classes) for r in records]

    def run(self) -> Dict[str, Any]:
        model = load_checkpoint(self.checkpoint)
        samples = self._samples()
        if not samples:
            raise ValueError(f"split {self.split!r} of {self.data_dir} is empty")
        out_dir = self.run_state.path(f"eval_{self.split}", "metrics.txt").parent

        if isinstance(model.spec, MdcSpec):
            accuracy = classifier_accuracy(model, samples)
            (out_dir / "label_accuracy.txt").write_text(f"label_accuracy={accuracy:.6f}\n")
            print(f"label_accuracy={accuracy:.4f}")
            return {"label_accuracy": float(accuracy)}

        cm = ConfusionMatrix(model.spec.num_outputs)
        for sample in samples:
            pred = predict_mask(model, sample.image).labels
            accumulate(cm, sample.gt_mask, pred)
            write_netpbm(out_dir / "pred" / f"{sample.record_id}.pgm", pred)
        write_metrics_report(out_dir, self.config["class_names"][:self.config["num_classes"]], cm)
        value = miou(cm)
        print(f"mIoU={value:.4f}")
        return {"miou": float(value), "images": len(samples)}
