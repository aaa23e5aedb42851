"""
Deterministic synthetic shapes dataset.

Each image holds 1..N shapes over a cluttered gray background. A shape is a
large low-contrast body in its class hue plus a small high-contrast marker
at its top-left-most part, so the discriminative evidence for a class is
local while the object itself is much larger. Later shapes occlude earlier
ones. Every record derives its own generator from (seed, index).
"""

import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Tuple, Union

import numpy as np
from scipy.ndimage import distance_transform_edt, zoom

from src.core.models import SHAPE_VOCABULARY, DatasetRecord, GenConfig, SaliencyMap
from src.integrations.dataset_io import MANIFEST_NAME, SPLITS, write_manifest
from src.integrations.netpbm_io import saliency_to_pgm, write_netpbm
from src.utils.logger import setup_logger, start_log_listener, stop_log_listener
from src.utils.validators import validate_fraction

logger = setup_logger("SynthData")

# Class hues (RGB in [0, 1]), in class-id order
CLASS_HUES = np.array([
    [0.90, 0.15, 0.15],
    [0.15, 0.75, 0.20],
    [0.20, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.20, 0.85],
    [0.10, 0.85, 0.90],
])

BACKGROUND_GRAY = 0.5
BODY_CONTRAST = 0.30
MARKER_FRACTION = 0.30


class DatasetError(RuntimeError):
    """Raised when a dataset cannot be generated or is internally inconsistent."""
    pass


def _disk(dy, dx, r):
    return dy ** 2 + dx ** 2 <= r ** 2


def _square(dy, dx, r):
    return (np.abs(dy) <= 0.85 * r) & (np.abs(dx) <= 0.85 * r)


def _triangle(dy, dx, r):
    return (dy >= -r) & (dy <= 0.8 * r) & (np.abs(dx) <= 0.55 * (dy + r))


def _ring(dy, dx, r):
    dist2 = dy ** 2 + dx ** 2
    return (dist2 <= r ** 2) & (dist2 >= (0.55 * r) ** 2)


def _cross(dy, dx, r):
    return ((np.abs(dx) <= 0.3 * r) & (np.abs(dy) <= r)) | ((np.abs(dy) <= 0.3 * r) & (np.abs(dx) <= r))


def _diamond(dy, dx, r):
    return np.abs(dy) + np.abs(dx) <= r


SHAPE_FUNCTIONS: Dict[str, Callable] = {
    "disk": _disk,
    "square": _square,
    "triangle": _triangle,
    "ring": _ring,
    "cross": _cross,
    "diamond": _diamond,
}


def shape_mask(name: str, size: int, center: Tuple[float, float], radius: float) -> np.ndarray:
    """Boolean mask of one shape on a size x size grid."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    return SHAPE_FUNCTIONS[name](yy - center[0], xx - center[1], radius)


def marker_region(mask: np.ndarray, radius: float) -> np.ndarray:
    """Shape pixels within MARKER_FRACTION * radius of its top-left-most pixel."""
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return mask.copy()
    corner = np.argmin(ys + xs)
    yy, xx = np.mgrid[0:mask.shape[0], 0:mask.shape[1]]
    reach = max(2.0, MARKER_FRACTION * radius)
    return mask & ((yy - ys[corner]) ** 2 + (xx - xs[corner]) ** 2 <= reach ** 2)


def _background(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    size = cfg.image_size
    coarse_size = max(2, size // 8)
    coarse = rng.uniform(-cfg.clutter_amplitude, cfg.clutter_amplitude, (coarse_size, coarse_size, 3))
    clutter = zoom(coarse, (size / coarse_size, size / coarse_size, 1), order=1)[:size, :size]
    fine = rng.uniform(-0.5, 0.5, (size, size, 3)) * cfg.clutter_amplitude
    return BACKGROUND_GRAY + clutter + fine


def render_record(cfg: GenConfig, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Render image `index` of the dataset.

    Returns:
        (uint8 pixels [H,W,3], uint8 class-id mask [H,W])
    """
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, index]))
    size = cfg.image_size
    pixels = _background(cfg, rng)
    mask = np.zeros((size, size), dtype=np.uint8)

    count = int(rng.integers(cfg.shapes_min, cfg.shapes_max + 1))
    for k in range(count):
        class_id = index % cfg.num_classes + 1 if k == 0 else int(rng.integers(1, cfg.num_classes + 1))
        radius = rng.uniform(cfg.scale_min, cfg.scale_max) * size / 2
        cy, cx = rng.uniform(radius, size - radius, size=2)
        region = shape_mask(SHAPE_VOCABULARY[class_id - 1], size, (cy, cx), radius)
        if not region.any():
            continue

        hue = np.clip(CLASS_HUES[class_id - 1] + rng.uniform(-0.05, 0.05, 3), 0, 1)
        body = BACKGROUND_GRAY + BODY_CONTRAST * (hue - BACKGROUND_GRAY)
        pixels[region] = body + rng.uniform(-0.02, 0.02, (int(region.sum()), 3))
        pixels[marker_region(region, radius)] = hue
        mask[region] = class_id

    return np.rint(np.clip(pixels, 0, 1) * 255).astype(np.uint8), mask


def synth_saliency(gt_mask: np.ndarray, noise_level: float = 0.0, seed: int = 0,
                   falloff: float = 4.0) -> SaliencyMap:
    """
    Synthetic saliency: 1 on foreground, decaying linearly to 0 over `falloff`
    pixels of Euclidean distance outside it, plus uniform noise, clamped to [0, 1].

    Raises:
        ValueError: If noise_level is outside [0, 1) or falloff is not positive
    """
    if noise_level != 0:
        validate_fraction(noise_level, "noise_level", low_open=False)
    if falloff <= 0:
        raise ValueError("falloff must be positive")
    fg = np.asarray(gt_mask) > 0
    if not fg.any():
        values = np.zeros(fg.shape)
    elif fg.all():
        values = np.ones(fg.shape)
    else:
        distance = distance_transform_edt(~fg)
        values = np.clip(1.0 - distance / falloff, 0.0, 1.0)
        values[fg] = 1.0
    if noise_level > 0:
        rng = np.random.default_rng(seed)
        values = values + rng.uniform(-noise_level, noise_level, values.shape)
    return SaliencyMap(np.clip(values, 0.0, 1.0))


def _split_of(cfg: GenConfig, index: int) -> str:
    if index < cfg.weak_count:
        return "weak"
    if index < cfg.weak_count + cfg.strong_count:
        return "strong"
    return "val"


def _write_record(cfg: GenConfig, out_dir: Path, index: int) -> DatasetRecord:
    split = _split_of(cfg, index)
    pixels, mask = render_record(cfg, index)
    saliency = synth_saliency(mask, cfg.saliency_noise, seed=cfg.seed * 1_000_003 + index,
                              falloff=cfg.saliency_falloff)
    record_id = f"{split}_{index:06d}"
    record = DatasetRecord(
        split=split,
        image_path=f"{split}/images/{record_id}.ppm",
        mask_path=f"{split}/masks/{record_id}.pgm",
        saliency_path=f"{split}/saliency/{record_id}.pgm",
        labels=frozenset(int(c) for c in np.unique(mask) if c != 0),
    )
    check_record(record, mask)
    write_netpbm(out_dir / record.image_path, pixels)
    write_netpbm(out_dir / record.mask_path, mask)
    write_netpbm(out_dir / record.saliency_path, saliency_to_pgm(saliency.values))
    return record


def _worker_init(log_queue) -> None:
    global logger
    logger = setup_logger("SynthData", log_queue=log_queue)


def _write_chunk(args) -> List[DatasetRecord]:
    cfg, out_dir, indices = args
    records = [_write_record(cfg, out_dir, i) for i in indices]
    logger.debug(f"Worker rendered {len(records)} records")
    return records


def check_record(record: DatasetRecord, mask: np.ndarray) -> None:
    """
    Raises:
        DatasetError: If the label set differs from the ids present in the mask
    """
    present = frozenset(int(c) for c in np.unique(mask) if c != 0)
    if present != record.labels:
        raise DatasetError(f"{record.record_id}: labels {sorted(record.labels)} != mask ids {sorted(present)}")
    if not present:
        raise DatasetError(f"{record.record_id}: image has no visible shape")


def generate_dataset(cfg: GenConfig, out_dir: Union[str, Path], num_workers: int = 1) -> List[DatasetRecord]:
    """
    Render every split to disk and write the manifest.

    Args:
        cfg: Generator settings
        out_dir: Dataset root
        num_workers: Processes used for rendering (output is identical for any value)

    Returns:
        Manifest records in index order

    Raises:
        InvalidSpecError: If cfg is invalid
        DatasetError: If out_dir cannot be written or a record is inconsistent
    """
    cfg.validate()
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for split in SPLITS:
            for sub in ("images", "masks", "saliency"):
                (out_dir / split / sub).mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DatasetError(f"cannot write dataset to {out_dir}: {exc}") from exc

    total = cfg.weak_count + cfg.strong_count + cfg.val_count
    logger.info(f"Generating {total} images ({cfg.weak_count} weak / {cfg.strong_count} strong / "
                f"{cfg.val_count} val, C={cfg.num_classes}, {cfg.image_size}px) into {out_dir}")

    indices = list(range(total))
    try:
        if num_workers > 1 and total > 1:
            chunks = [indices[w::num_workers] for w in range(num_workers)]
            log_queue = multiprocessing.Queue()
            start_log_listener(log_queue)
            try:
                with ProcessPoolExecutor(max_workers=num_workers, initializer=_worker_init,
                                         initargs=(log_queue,)) as pool:
                    parts = list(pool.map(_write_chunk, [(cfg, out_dir, c) for c in chunks]))
            finally:
                stop_log_listener()
            records = sorted((r for part in parts for r in part), key=lambda r: r.record_id.split("_")[1])
        else:
            records = [_write_record(cfg, out_dir, i) for i in indices]
    except OSError as exc:
        raise DatasetError(f"failed writing dataset files under {out_dir}: {exc}") from exc

    write_manifest(records, out_dir / MANIFEST_NAME)
    counts = {c: sum(c in r.labels for r in records) for c in range(1, cfg.num_classes + 1)}
    logger.info(f"Wrote {len(records)} records; images per class: {counts}")
    return records
