"""
Dataset manifest and sample loading.

The manifest is tab-separated: split, image path, mask path, saliency path,
comma-joined labels. Paths are relative to the dataset root.
"""

from pathlib import Path
from typing import Iterable, List, Optional, Union

import numpy as np

from src.core.models import DatasetRecord, Sample
from src.integrations.netpbm_io import FormatError, image_to_array, read_pgm, read_ppm
from src.utils.logger import setup_logger
from src.utils.validators import IGNORE, validate_label_set, validate_mask_values

MANIFEST_NAME = "manifest.tsv"
SPLITS = ("weak", "strong", "val")

logger = setup_logger("DatasetIO")

PathLike = Union[str, Path]


def format_labels(labels: Iterable[int]) -> str:
    return ",".join(str(c) for c in sorted(labels))


def parse_labels(text: str) -> frozenset:
    return frozenset(int(t) for t in text.split(",") if t.strip())


def write_manifest(records: Iterable[DatasetRecord], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "\t".join((r.split, r.image_path, r.mask_path, r.saliency_path, format_labels(r.labels)))
        for r in records
    ]
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def load_manifest(path: PathLike, split: Optional[str] = None) -> List[DatasetRecord]:
    """
    Read manifest records, optionally keeping one split.

    Raises:
        FormatError: On a line without five tab-separated fields
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_NAME
    records = []
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 5:
            raise FormatError(f"{path}:{number}: expected 5 tab-separated fields, got {len(fields)}")
        record = DatasetRecord(split=fields[0], image_path=fields[1], mask_path=fields[2],
                               saliency_path=fields[3], labels=parse_labels(fields[4]))
        if split is None or record.split == split:
            records.append(record)
    return records


def load_sample(record: DatasetRecord, root: PathLike, with_mask: bool = True,
                with_saliency: bool = False, pseudo_mask_dir: Optional[PathLike] = None,
                num_classes: Optional[int] = None) -> Sample:
    """
    Load one record.

    Weak-split training callers pass with_mask=False so ground truth stays
    reserved for evaluation.

    Args:
        record: Manifest record
        root: Dataset root
        with_mask: Read the ground-truth mask
        with_saliency: Read the saliency map as floats in [0, 1]
        pseudo_mask_dir: Directory holding <record_id>.pgm pseudo masks
        num_classes: When given, labels and masks are range-checked against 1..C

    Returns:
        Sample with a float32 [3,H,W] image

    Raises:
        LabelError: If a label or mask id lies outside the class range
    """
    root = Path(root)
    sample = Sample(record_id=record.record_id, image=image_to_array(read_ppm(root / record.image_path)),
                    labels=record.labels)
    if with_mask and record.mask_path:
        sample.gt_mask = read_pgm(root / record.mask_path)
    if with_saliency and record.saliency_path:
        sample.saliency = read_pgm(root / record.saliency_path).astype(np.float64) / 255.0
    if pseudo_mask_dir is not None:
        sample.pseudo_mask = read_pgm(Path(pseudo_mask_dir) / f"{record.record_id}.pgm")
    if num_classes is not None:
        validate_label_set(record.labels, num_classes)
        for mask in (sample.gt_mask, sample.pseudo_mask):
            if mask is not None:
                validate_mask_values(mask, num_classes + 1)
    return sample


def load_split(root: PathLike, split: str, with_mask: bool = True, with_saliency: bool = False,
               pseudo_mask_dir: Optional[PathLike] = None, limit: Optional[int] = None,
               num_classes: Optional[int] = None) -> List[Sample]:
    records = load_manifest(Path(root) / MANIFEST_NAME, split)
    if limit is not None:
        records = records[:limit]
    logger.debug(f"Loading {len(records)} {split} samples from {root}")
    return [load_sample(r, root, with_mask, with_saliency, pseudo_mask_dir, num_classes) for r in records]


def index_external_triples(directory: PathLike, split: str = "val") -> List[DatasetRecord]:
    """
    Index external images laid out as <id>.ppm, <id>.mask.pgm and <id>.sal.pgm.

    Labels are the class ids present in each mask (background and IGNORE excluded).
    A missing saliency file leaves saliency_path empty; images without a mask are skipped.
    """
    directory = Path(directory)
    records = []
    for image_path in sorted(directory.glob("*.ppm")):
        stem = image_path.stem
        mask_path = directory / f"{stem}.mask.pgm"
        if not mask_path.exists():
            logger.warning(f"Skipping {image_path.name}: no {mask_path.name}")
            continue
        ids = np.unique(read_pgm(mask_path))
        labels = frozenset(int(c) for c in ids if c not in (0, IGNORE))
        saliency_path = directory / f"{stem}.sal.pgm"
        records.append(DatasetRecord(
            split=split,
            image_path=image_path.name,
            mask_path=mask_path.name,
            saliency_path=saliency_path.name if saliency_path.exists() else "",
            labels=labels,
        ))
    logger.info(f"Indexed {len(records)} external images in {directory}")
    return records
