"""
train-cls: train the MDC classifier on the weak split.
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from src.core.evaluator import label_accuracy
from src.core.mdc_classifier import build_mdc, predict_labels, train_classifier
from src.core.models import Model, Sample
from src.integrations.checkpoint_io import save_checkpoint
from src.integrations.dataset_io import load_split
from src.stages.base_stage import BaseStage
from src.stages.builders import cls_hyper, mdc_spec
from src.stages.run_state import RunState


def classifier_accuracy(model: Model, samples: List[Sample]) -> float:
    """Exact-match label accuracy of the classifier on samples."""
    predicted = predict_labels(model, np.stack([s.image for s in samples]))
    return label_accuracy(predicted, [s.labels for s in samples])


class TrainClassifierStage(BaseStage):
    """Builds, trains and checkpoints the classifier; reports val label accuracy."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, data_dir: Optional[str] = None,
                 block_dilations: Optional[list] = None):
        super().__init__("TrainCls", config, run_state)
        self.data_dir = Path(data_dir or config["data_dir"])
        self.block_dilations = block_dilations

    def train(self) -> Model:
        weak = load_split(self.data_dir, "weak", with_mask=False, num_classes=self.config["num_classes"])
        model = build_mdc(mdc_spec(self.config, self.block_dilations), seed=self.config["seed"])
        return train_classifier(model, weak, cls_hyper(self.config))

    def run(self) -> Dict[str, Any]:
        model = self.train()
        checkpoint = save_checkpoint(model, self.run_state.path("classifier", "manifest.txt").parent)
        summary: Dict[str, Any] = {"checkpoint": str(checkpoint)}

        val = load_split(self.data_dir, "val", with_mask=False, num_classes=self.config["num_classes"])
        if val:
            accuracy = classifier_accuracy(model, val)
            self.run_state.path("classifier_eval.txt").write_text(f"label_accuracy={accuracy:.6f}\n")
            self.logger.info(f"Validation exact-match label accuracy: {accuracy:.4f}")
            summary["val_label_accuracy"] = float(accuracy)
        return summary
