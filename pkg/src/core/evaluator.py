"""
Segmentation and localization metrics: confusion matrix, per-class IoU, mIoU,
foreground precision/recall and exact-match label accuracy.
"""

import csv
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.utils.logger import setup_logger
from src.utils.validators import IGNORE, LabelError

logger = setup_logger("Evaluator")

METRICS_CSV_HEADER = ("epoch", "split", "loss", "mIoU")


class ConfusionMatrix:
    """(C+1)x(C+1) pixel counts; rows are ground truth, columns prediction."""

    def __init__(self, num_channels: int, counts: Optional[np.ndarray] = None):
        """
        Args:
            num_channels: C+1 (background plus classes)
            counts: Optional initial counts
        """
        self.num_channels = num_channels
        if counts is None:
            counts = np.zeros((num_channels, num_channels), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (num_channels, num_channels) or np.any(counts < 0):
            raise ValueError(f"counts must be a non-negative {num_channels}x{num_channels} matrix")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_channels != self.num_channels:
            raise ValueError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_channels, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def accumulate(cm: ConfusionMatrix, gt_mask: np.ndarray, pred_mask: np.ndarray) -> ConfusionMatrix:
    """
    Add one image's pixels to cm (in place); IGNORE ground-truth pixels are skipped.

    Returns:
        cm

    Raises:
        ValueError: On a shape mismatch
        LabelError: If pred holds IGNORE or an id is out of range
    """
    gt = np.asarray(gt_mask).astype(np.int64)
    pred = np.asarray(pred_mask).astype(np.int64)
    if gt.shape != pred.shape:
        raise ValueError(f"gt shape {gt.shape} != prediction shape {pred.shape}")
    k = cm.num_channels
    if np.any((pred < 0) | (pred >= k)):
        raise LabelError("prediction holds IGNORE or a class id out of range")
    valid = gt != IGNORE
    if np.any((gt[valid] < 0) | (gt[valid] >= k)):
        raise LabelError("ground truth holds a class id out of range")
    cm.counts += np.bincount(k * gt[valid] + pred[valid], minlength=k * k).reshape(k, k)
    return cm


def per_class_iou(cm: ConfusionMatrix) -> np.ndarray:
    """IoU per class; NaN marks classes absent from both ground truth and prediction."""
    diag = np.diag(cm.counts).astype(np.float64)
    union = cm.counts.sum(axis=0) + cm.counts.sum(axis=1) - diag
    iou = np.full(cm.num_channels, np.nan)
    present = union > 0
    iou[present] = diag[present] / union[present]
    return iou


def miou(cm: ConfusionMatrix) -> float:
    """Mean IoU over classes that are present; NaN when nothing was evaluated."""
    iou = per_class_iou(cm)
    if np.all(np.isnan(iou)):
        logger.warning("mIoU requested on an empty confusion matrix")
        return float("nan")
    return float(np.nanmean(iou))


def localization_pr(fg_map: np.ndarray, gt_fg: np.ndarray) -> Tuple[float, float]:
    """
    Precision and recall of a predicted foreground set.

    An empty prediction has precision 1.0; an empty ground truth has recall 1.0.

    Raises:
        ValueError: On a shape mismatch
    """
    pred = np.asarray(fg_map, dtype=bool)
    gt = np.asarray(gt_fg, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != gt shape {gt.shape}")
    hits = np.count_nonzero(pred & gt)
    predicted = np.count_nonzero(pred)
    actual = np.count_nonzero(gt)
    if predicted == 0:
        logger.debug("Empty foreground prediction: precision taken as 1.0")
        precision = 1.0
    else:
        precision = hits / predicted
    recall = hits / actual if actual else 1.0
    return float(precision), float(recall)


def label_accuracy(predicted: Sequence[Iterable[int]], truth: Sequence[Iterable[int]]) -> float:
    """Fraction of images whose predicted label set equals the true set exactly."""
    if len(predicted) != len(truth):
        raise ValueError("predicted and true label lists differ in length")
    if not truth:
        raise ValueError("label accuracy needs at least one image")
    matches = sum(frozenset(p) == frozenset(t) for p, t in zip(predicted, truth))
    return matches / len(truth)


def channel_names(class_names: Sequence[str]) -> List[str]:
    return ["background"] + list(class_names)


def write_metrics_report(out_dir: Path, class_names: Sequence[str], cm: ConfusionMatrix) -> Tuple[Path, Path]:
    """
    Write metrics.txt (class/IoU table and an mIoU line) and metrics.csv.

    Args:
        out_dir: Destination directory
        class_names: Names of classes 1..C
        cm: Accumulated confusion matrix

    Returns:
        (text path, csv path)
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    names = channel_names(class_names)
    if len(names) != cm.num_channels:
        raise ValueError(f"{len(names)} names for {cm.num_channels} channels")
    iou = per_class_iou(cm)
    mean = miou(cm)

    lines = [f"{'class':<14}IoU"]
    for name, value in zip(names, iou):
        lines.append(f"{name:<14}{'absent' if np.isnan(value) else f'{value:.4f}'}")
    lines.append(f"mIoU={mean:.4f}")
    text_path = out_dir / "metrics.txt"
    text_path.write_text("\n".join(lines) + "\n")

    csv_path = out_dir / "metrics.csv"
    with open(csv_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["class", "iou"])
        for name, value in zip(names, iou):
            writer.writerow([name, "" if np.isnan(value) else f"{value:.6f}"])
        writer.writerow(["mIoU", f"{mean:.6f}"])

    logger.debug(f"Wrote {text_path} and {csv_path}")
    return text_path, csv_path


def append_metrics_row(path: Path, epoch: int, split: str, loss: float, miou_value: Optional[float]) -> None:
    """Append one (epoch, split, loss, mIoU) row, writing the header on first use."""
    path = Path(path)
    new_file = not path.exists()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", newline="") as handle:
        writer = csv.writer(handle)
        if new_file:
            writer.writerow(METRICS_CSV_HEADER)
        writer.writerow([epoch, split, f"{loss:.6f}", "" if miou_value is None else f"{miou_value:.6f}"])


def pseudo_mask_as_prediction(mask: np.ndarray) -> np.ndarray:
    """Score a pseudo mask as a prediction: IGNORE pixels count as background."""
    mask = np.asarray(mask)
    return np.where(mask == IGNORE, 0, mask).astype(np.uint8)
