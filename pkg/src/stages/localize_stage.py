"""
localize: per-block and fused localization maps for every image of a split.
make-masks: pseudo masks from those maps plus the saliency background cue.

Map directory layout:
    localize.yaml                       split, data_dir, block_dilations, fusion_mode
    <record_id>/c<class>_b<block>.tns   normalized block map (+ .pgm view)
    <record_id>/c<class>_fused.tns      fused map (+ .pgm view)
"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import yaml

from src.core.evaluator import ConfusionMatrix, accumulate, miou, pseudo_mask_as_prediction
from src.core.fusion import ClassLocalization, localize_image, mask_from_maps
from src.core.models import DatasetRecord, LocalizationMap
from src.integrations.checkpoint_io import CheckpointError, load_checkpoint
from src.integrations.dataset_io import load_manifest, load_sample, MANIFEST_NAME
from src.integrations.netpbm_io import map_to_pgm, write_netpbm
from src.integrations.tensor_io import read_tensor, write_tensor
from src.stages.base_stage import BaseStage
from src.stages.run_state import RunState
from src.utils.validators import IGNORE, validate_mask_values

MAPS_INFO_NAME = "localize.yaml"
MASKS_INFO_NAME = "masks.yaml"


def _map_stem(class_id: int, block: Optional[int]) -> str:
    return f"c{class_id}_fused" if block is None else f"c{class_id}_b{block}"


def write_localization(directory: Path, loc: ClassLocalization) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    entries = [(b, m) for b, m in enumerate(loc.block_maps)] + [(None, loc.fused)]
    for block, lmap in entries:
        stem = _map_stem(loc.class_id, block)
        write_tensor(directory / f"{stem}.tns", lmap.values)
        write_netpbm(directory / f"{stem}.pgm", map_to_pgm(lmap.values))


def read_localization(directory: Path, class_id: int, num_blocks: int) -> ClassLocalization:
    blocks = [LocalizationMap(class_id, read_tensor(directory / f"{_map_stem(class_id, b)}.tns"), normalized=True)
              for b in range(num_blocks)]
    fused = LocalizationMap(class_id, read_tensor(directory / f"{_map_stem(class_id, None)}.tns"))
    return ClassLocalization(class_id=class_id, block_maps=blocks, fused=fused)


class LocalizeStage(BaseStage):
    """Writes block and fused maps for each image and each of its labels."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, checkpoint: str,
                 split: str = "weak", data_dir: Optional[str] = None):
        super().__init__("Localize", config, run_state)
        self.checkpoint = Path(checkpoint)
        self.split = split
        self.data_dir = Path(data_dir or config["data_dir"])

    def run(self) -> Dict[str, Any]:
        model = load_checkpoint(self.checkpoint)
        if not hasattr(model.spec, "block_dilations"):
            raise CheckpointError(f"{self.checkpoint} is not a classifier checkpoint")
        records = load_manifest(self.data_dir / MANIFEST_NAME, self.split)
        maps_dir = self.run_state.path("maps", MAPS_INFO_NAME).parent

        for record in records:
            sample = load_sample(record, self.data_dir, with_mask=False, num_classes=self.config["num_classes"])
            locs = localize_image(model, sample.image, sample.labels, self.config["fusion_mode"])
            for loc in locs.values():
                write_localization(maps_dir / record.record_id, loc)
            self.logger.debug(f"Localized {record.record_id} ({len(locs)} classes)")

        info = {
            "split": self.split,
            "data_dir": str(self.data_dir),
            "block_dilations": list(model.spec.block_dilations),
            "fusion_mode": self.config["fusion_mode"],
            "checkpoint": str(self.checkpoint),
        }
        with open(maps_dir / MAPS_INFO_NAME, "w") as f:
            yaml.safe_dump(info, f, sort_keys=True)
        self.logger.info(f"Wrote localization maps for {len(records)} {self.split} images to {maps_dir}")
        return {"maps_dir": str(maps_dir), "images": len(records)}


class MakeMasksStage(BaseStage):
    """Turns localization maps into pseudo masks and scores them against gt."""

    def __init__(self, config: Dict[str, Any], run_state: RunState, maps_dir: str):
        super().__init__("MakeMasks", config, run_state)
        self.maps_dir = Path(maps_dir)

    def _read_info(self) -> Dict[str, Any]:
        info_path = self.maps_dir / MAPS_INFO_NAME
        if not info_path.exists():
            raise FileNotFoundError(f"{info_path} not found; run localize first")
        with open(info_path) as f:
            return yaml.safe_load(f)

    def run(self) -> Dict[str, Any]:
        info = self._read_info()
        data_dir = Path(info["data_dir"])
        num_blocks = len(info["block_dilations"])
        records: List[DatasetRecord] = load_manifest(data_dir / MANIFEST_NAME, info["split"])
        masks_dir = self.run_state.path("masks", MASKS_INFO_NAME).parent
        source = self.config["mask_source"]

        cm = ConfusionMatrix(self.config["num_classes"] + 1)
        ignored = []
        for record in records:
            # gt is read for scoring only
            sample = load_sample(record, data_dir, with_mask=True, with_saliency=True,
                                 num_classes=self.config["num_classes"])
            locs = {c: read_localization(self.maps_dir / record.record_id, c, num_blocks) for c in sample.labels}
            mask = mask_from_maps(locs, sample.saliency, sample.labels, source=source,
                                  fg_fraction=self.config["fg_fraction"],
                                  bg_threshold=self.config["bg_threshold"],
                                  rule=self.config["fg_threshold_rule"])
            validate_mask_values(mask.labels, self.config["num_classes"] + 1)
            write_netpbm(masks_dir / f"{record.record_id}.pgm", mask.labels)
            accumulate(cm, sample.gt_mask, pseudo_mask_as_prediction(mask.labels))
            ignored.append(float(np.mean(mask.labels == IGNORE)))

        quality = miou(cm) if records else float("nan")
        ignored_mean = float(np.mean(ignored)) if ignored else 0.0
        with open(masks_dir / MASKS_INFO_NAME, "w") as f:
            yaml.safe_dump({"split": info["split"], "data_dir": str(data_dir), "source": source,
                            "maps_dir": str(self.maps_dir)}, f, sort_keys=True)
        (masks_dir / "quality.txt").write_text(f"pseudo_mask_mIoU={quality:.6f}\nignored_fraction={ignored_mean:.6f}\n")
        self.logger.info(f"Wrote {len(records)} pseudo masks ({source}) to {masks_dir}: "
                         f"mIoU vs gt {quality:.4f}, ignored {ignored_mean:.1%}")
        return {"masks_dir": str(masks_dir), "pseudo_mask_miou": float(quality), "ignored_fraction": ignored_mean}
