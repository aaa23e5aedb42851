"""
ablate: compare localization sources or strong/weak splits.

localization: pseudo masks from each single block, the fused map and the
mean of all blocks, scored against gt (mIoU, foreground precision/recall)
and, optionally, by the val mIoU of an FCN trained on them.

splits: FCN val mIoU for weak-only training and for semi training with a
growing share of strong images.
"""

import csv
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.core.evaluator import ConfusionMatrix, accumulate, localization_pr, miou, pseudo_mask_as_prediction
from src.core.fusion import localize_image, mask_from_maps
from src.core.mdc_classifier import build_mdc, train_classifier
from src.core.models import MdcSpec, Model, Sample
from src.integrations.checkpoint_io import load_checkpoint, save_checkpoint
from src.integrations.dataset_io import load_split
from src.stages.base_stage import BaseStage
from src.stages.builders import cls_hyper, mdc_spec
from src.stages.classifier_stage import classifier_accuracy
from src.stages.run_state import RunState
from src.stages.segmentation_stage import fcn_confusion, fit_fcn
from src.utils.validators import IGNORE

STUDIES = ("localization", "splits")


def source_label(source: str, dilations: Sequence[int]) -> str:
    if source.startswith("block:"):
        return f"d={dilations[int(source[6:])]}"
    return "fusion" if source == "fused" else source


def _write_table(path_txt: Path, path_csv: Path, header: List[str], rows: List[List[Any]]) -> None:
    def fmt(value):
        if isinstance(value, float):
            return "nan" if np.isnan(value) else f"{value:.4f}"
        return str(value)

    widths = [max(len(h), *(len(fmt(r[i])) for r in rows)) + 2 for i, h in enumerate(header)]
    lines = ["".join(h.ljust(w) for h, w in zip(header, widths)).rstrip()]
    lines += ["".join(fmt(v).ljust(w) for v, w in zip(row, widths)).rstrip() for row in rows]
    path_txt.write_text("\n".join(lines) + "\n")
    with open(path_csv, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(header)
        writer.writerows([[fmt(v) for v in row] for row in rows])


class AblationStage(BaseStage):
    """Runs the localization-source or the split-size study end to end."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, study: str = "localization",
                 checkpoint: Optional[str] = None, data_dir: Optional[str] = None):
        super().__init__("Ablate", config, run_state)
        if study not in STUDIES:
            raise ValueError(f"unknown study {study!r}; expected one of {STUDIES}")
        self.study = study
        self.checkpoint = checkpoint
        self.data_dir = Path(data_dir or config["data_dir"])

    def _classifier(self) -> Model:
        if self.checkpoint:
            return load_checkpoint(self.checkpoint)
        weak = load_split(self.data_dir, "weak", with_mask=False, num_classes=self.config["num_classes"])
        model = train_classifier(build_mdc(mdc_spec(self.config), seed=self.config["seed"]), weak,
                                 cls_hyper(self.config))
        save_checkpoint(model, self.run_state.path("classifier", "manifest.txt").parent)
        return model

    def _pseudo_masks(self, model: Model, samples: List[Sample], sources: List[str]) -> Dict[str, Dict[str, Any]]:
        """Pseudo masks per source plus their quality against gt (gt is read for scoring only)."""
        cfg = self.config
        results = {s: {"masks": [], "cm": ConfusionMatrix(cfg["num_classes"] + 1), "precision": [], "recall": []}
                   for s in sources}
        for sample in samples:
            locs = localize_image(model, sample.image, sample.labels, cfg["fusion_mode"])
            gt_fg = (sample.gt_mask > 0) & (sample.gt_mask != IGNORE)
            for source in sources:
                mask = mask_from_maps(locs, sample.saliency, sample.labels, source=source,
                                      fg_fraction=cfg["fg_fraction"], bg_threshold=cfg["bg_threshold"],
                                      rule=cfg["fg_threshold_rule"])
                entry = results[source]
                entry["masks"].append(mask.labels)
                accumulate(entry["cm"], sample.gt_mask, pseudo_mask_as_prediction(mask.labels))
                labeled_fg = (mask.labels > 0) & (mask.labels != IGNORE)
                precision, recall = localization_pr(labeled_fg, gt_fg)
                entry["precision"].append(precision)
                entry["recall"].append(recall)
        return results

    @staticmethod
    def _training_copies(samples: List[Sample], masks: List[np.ndarray]) -> List[Sample]:
        return [replace(s, gt_mask=None, saliency=None, pseudo_mask=m) for s, m in zip(samples, masks)]

    def run(self) -> Dict[str, Any]:
        model = self._classifier()
        spec: MdcSpec = model.spec
        classes = self.config["num_classes"]
        weak = load_split(self.data_dir, "weak", with_mask=True, with_saliency=True, num_classes=classes)
        val = load_split(self.data_dir, "val", with_mask=True, num_classes=classes)
        summary: Dict[str, Any] = {"study": self.study}
        if val:
            summary["val_label_accuracy"] = float(classifier_accuracy(model, val))
            self.logger.info(f"Classifier val label accuracy: {summary['val_label_accuracy']:.4f}")

        if self.study == "localization":
            summary.update(self._localization_study(model, spec, weak, val))
        else:
            summary.update(self._splits_study(model, weak, val))
        return summary

    def _localization_study(self, model: Model, spec: MdcSpec, weak: List[Sample],
                            val: List[Sample]) -> Dict[str, Any]:
        sources = [f"block:{b}" for b in range(len(spec.block_dilations))] + ["fused", "mean_all"]
        results = self._pseudo_masks(model, weak, sources)
        train_seg = self.config["ablate_train_seg"] and bool(val)

        header = ["source", "pseudo_mIoU", "precision", "recall"] + (["seg_val_mIoU"] if train_seg else [])
        rows = []
        for source in sources:
            entry = results[source]
            row = [source_label(source, spec.block_dilations), miou(entry["cm"]),
                   float(np.mean(entry["precision"])), float(np.mean(entry["recall"]))]
            if train_seg:
                self.logger.info(f"Training FCN on {row[0]} pseudo masks")
                fcn = fit_fcn(self.config, "weak", self._training_copies(weak, entry["masks"]), [], [])
                row.append(miou(fcn_confusion(fcn, val)))
            rows.append(row)
            self.logger.info(f"{row[0]}: " + ", ".join(f"{h}={v:.4f}" for h, v in zip(header[1:], row[1:])))

        _write_table(self.run_state.path("ablation.txt"), self.run_state.path("ablation.csv"), header, rows)
        return {f"{row[0]}_pseudo_miou": float(row[1]) for row in rows}

    def _strong_counts(self, num_weak: int, num_strong: int) -> List[int]:
        """
        Strong-image count per configured fraction of the weak set.

        Raises:
            ValueError: If a fraction needs more strong images than the split holds
        """
        counts = []
        for fraction in self.config["ablate_strong_fractions"]:
            wanted = max(1, int(round(float(fraction) * num_weak)))
            if wanted > num_strong:
                raise ValueError(f"strong fraction {fraction} of {num_weak} weak images needs {wanted} strong "
                                 f"images, only {num_strong} exist; raise strong_count and regenerate the data")
            counts.append(wanted)
        return counts

    def _splits_study(self, model: Model, weak: List[Sample], val: List[Sample]) -> Dict[str, Any]:
        if not val:
            raise ValueError("the splits study needs a non-empty val split")
        strong = load_split(self.data_dir, "strong", with_mask=True, num_classes=self.config["num_classes"])
        counts = self._strong_counts(len(weak), len(strong))
        source = self.config["mask_source"]
        masks = self._pseudo_masks(model, weak, [source])[source]["masks"]
        weak_train = self._training_copies(weak, masks)

        rows = [["weak-only", 0, miou(fcn_confusion(fit_fcn(self.config, "weak", weak_train, [], []), val))]]
        for fraction, count in zip(self.config["ablate_strong_fractions"], counts):
            fcn = fit_fcn(self.config, "semi", weak_train, strong[:count], [])
            rows.append([f"semi {float(fraction):.0%}", count, miou(fcn_confusion(fcn, val))])
            self.logger.info(f"semi {fraction}: {count} strong images, val mIoU {rows[-1][2]:.4f}")

        _write_table(self.run_state.path("ablation.txt"), self.run_state.path("ablation.csv"),
                     ["setting", "strong_images", "seg_val_mIoU"], rows)
        return {row[0].replace(" ", "_"): float(row[2]) for row in rows}
