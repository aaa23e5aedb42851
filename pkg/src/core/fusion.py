"""
Localization-map fusion and pseudo-mask synthesis.

Block maps are normalized per class per block, fused as
H = H0 + mean(H1..Hn) and thresholded relative to their own maximum.
Saliency supplies the background cue.
"""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from src.core.mdc_classifier import compute_block_cams
from src.core.models import LocalizationMap, Model, PseudoMask, SaliencyMap
from src.utils.logger import setup_logger
from src.utils.validators import IGNORE, validate_fraction, validate_saliency

logger = setup_logger("Fusion")

FUSION_MODES = ("mdc", "mean_all")
THRESHOLD_RULES = ("top_range", "fraction")


class FusionError(ValueError):
    """Raised when maps cannot be fused or merged into a mask."""
    pass


@dataclass
class ClassLocalization:
    """Normalized per-block maps of one class and their fusion."""
    class_id: int
    block_maps: List[LocalizationMap]
    fused: LocalizationMap


def normalize_map(raw: LocalizationMap) -> LocalizationMap:
    """Clamp negatives to 0 and divide by the max; an all-non-positive map becomes zeros."""
    values = np.maximum(np.asarray(raw.values), 0)
    peak = values.max() if values.size else 0
    if peak > 0:
        values = values / peak
    else:
        values = np.zeros_like(values)
    return LocalizationMap(class_id=raw.class_id, values=values, normalized=True)


def fuse_maps(h0: LocalizationMap, hi: Sequence[LocalizationMap], mode: str = "mdc") -> LocalizationMap:
    """
    Fuse normalized block maps.

    Args:
        h0: Map of the standard (d=1) block
        hi: Maps of the dilated blocks
        mode: "mdc" gives H0 + mean(hi); "mean_all" averages H0 together with hi

    Returns:
        Fused map (not renormalized)

    Raises:
        FusionError: On an empty hi, unnormalized input, or a class/shape mismatch
    """
    if mode not in FUSION_MODES:
        raise FusionError(f"unknown fusion mode {mode!r}")
    if not hi:
        raise FusionError("fusion needs at least one dilated-block map")
    for m in (h0, *hi):
        if not m.normalized:
            raise FusionError(f"map for class {m.class_id} is not normalized")
        if m.class_id != h0.class_id:
            raise FusionError(f"class mismatch: {m.class_id} vs {h0.class_id}")
        if m.values.shape != h0.values.shape:
            raise FusionError(f"shape mismatch: {m.values.shape} vs {h0.values.shape}")

    dilated_sum = np.sum([m.values for m in hi], axis=0)
    if mode == "mdc":
        values = h0.values + dilated_sum / len(hi)
    else:
        values = (h0.values + dilated_sum) / (len(hi) + 1)
    return LocalizationMap(class_id=h0.class_id, values=values, normalized=False)


def foreground_threshold(peak: float, fg_fraction: float, rule: str = "top_range") -> float:
    if rule == "top_range":
        return (1.0 - fg_fraction) * peak
    if rule == "fraction":
        return fg_fraction * peak
    raise FusionError(f"unknown threshold rule {rule!r}")


def extract_foreground(h: Union[LocalizationMap, np.ndarray], fg_fraction: float = 0.30,
                       rule: str = "top_range") -> np.ndarray:
    """
    Pixels whose value is within the top fg_fraction of the range below the max.

    With rule="fraction" the threshold is fg_fraction * max instead. A map with
    a non-positive max selects nothing.

    Raises:
        ValueError: If fg_fraction is outside (0, 1)
    """
    validate_fraction(fg_fraction, "fg_fraction")
    values = np.asarray(getattr(h, "values", h))
    peak = values.max() if values.size else 0
    if peak <= 0:
        return np.zeros(values.shape, dtype=bool)
    return values >= foreground_threshold(peak, fg_fraction, rule)


def extract_background(s: Union[SaliencyMap, np.ndarray], bg_threshold: float = 0.06) -> np.ndarray:
    """
    Pixels with saliency strictly below bg_threshold.

    Raises:
        ValueError: If saliency leaves [0, 1]
    """
    values = np.asarray(getattr(s, "values", s))
    validate_saliency(values)
    return values < bg_threshold


def synthesize_mask(per_class_fg: Mapping[int, np.ndarray], bg: np.ndarray,
                    image_labels: Iterable[int]) -> PseudoMask:
    """
    Merge per-class foreground regions with the background cue.

    A pixel claimed by exactly one class and not by the background takes that
    class; claimed only by the background it is 0; every other pixel
    (class conflicts, class-vs-background conflicts, unclaimed) is IGNORE.

    Raises:
        FusionError: If a foreground map belongs to a class outside image_labels
    """
    labels = set(int(c) for c in image_labels)
    extra = set(per_class_fg) - labels
    if extra:
        raise FusionError(f"foreground maps for classes {sorted(extra)} not in image labels {sorted(labels)}")

    bg = np.asarray(bg, dtype=bool)
    claims = np.zeros(bg.shape, dtype=np.int32)
    owner = np.zeros(bg.shape, dtype=np.uint8)
    for class_id, fg in per_class_fg.items():
        fg = np.asarray(fg, dtype=bool)
        if fg.shape != bg.shape:
            raise FusionError(f"foreground shape {fg.shape} != background shape {bg.shape}")
        claims += fg
        owner[fg] = class_id

    mask = np.full(bg.shape, IGNORE, dtype=np.uint8)
    single = (claims == 1) & ~bg
    mask[single] = owner[single]
    mask[(claims == 0) & bg] = 0
    return PseudoMask(mask)


def localize_image(model: Model, image: np.ndarray, labels: Iterable[int],
                   fusion_mode: str = "mdc") -> Dict[int, ClassLocalization]:
    """
    Per-class normalized block maps plus the fused map for one image.

    Args:
        model: Trained MDC classifier
        image: [3,H,W] image
        labels: Dataset class ids present in the image
        fusion_mode: See fuse_maps

    Returns:
        ClassLocalization per class id
    """
    class_ids = sorted(int(c) for c in labels)
    per_block = compute_block_cams(model, image, class_ids)
    result: Dict[int, ClassLocalization] = {}
    for class_id in class_ids:
        block_maps = [normalize_map(block[class_id]) for block in per_block]
        fused = fuse_maps(block_maps[0], block_maps[1:], mode=fusion_mode)
        if not np.any(fused.values > 0):
            logger.debug(f"Class {class_id}: fused map is empty")
        result[class_id] = ClassLocalization(class_id=class_id, block_maps=block_maps, fused=fused)
    return result


def select_source_map(loc: ClassLocalization, source: str) -> LocalizationMap:
    """
    Pick the map a pseudo mask is built from.

    Args:
        loc: Localization of one class
        source: "fused", "mean_all" or "block:<index>"

    Raises:
        FusionError: On an unknown source or block index
    """
    if source == "fused":
        return loc.fused
    if source == "mean_all":
        return fuse_maps(loc.block_maps[0], loc.block_maps[1:], mode="mean_all")
    if source.startswith("block:"):
        try:
            return loc.block_maps[int(source.split(":", 1)[1])]
        except (ValueError, IndexError) as exc:
            raise FusionError(f"invalid block source {source!r}") from exc
    raise FusionError(f"unknown mask source {source!r}")


def mask_from_maps(maps_by_class: Mapping[int, ClassLocalization], saliency: Union[SaliencyMap, np.ndarray],
                   labels: Iterable[int], source: str = "fused", fg_fraction: float = 0.30,
                   bg_threshold: float = 0.06, rule: str = "top_range") -> PseudoMask:
    """Build a pseudo mask from one map source per class plus the saliency background."""
    per_class_fg = {
        class_id: extract_foreground(select_source_map(loc, source), fg_fraction, rule)
        for class_id, loc in maps_by_class.items()
    }
    return synthesize_mask(per_class_fg, extract_background(saliency, bg_threshold), labels)
