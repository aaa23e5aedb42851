"""
Multi-dilated-convolution classifier.

A shared backbone feeds parallel conv blocks, one per dilation rate. Every
block has its own GAP + fully-connected head, so each block yields its own
class activation maps. The block losses are summed.
"""

from collections import Counter
from typing import Dict, FrozenSet, List, Sequence, Tuple

import numpy as np
from scipy.special import expit

from src.core import functional as F
from src.core.autograd import NonFiniteError, Tensor, get_default_dtype, no_grad
from src.core.backbone import as_batch, he_normal, init_backbone, random_crop, run_backbone
from src.core.models import InvalidSpecError, LocalizationMap, MdcSpec, Model, Sample, TrainHyper
from src.core.optim import SGD, TrainingDivergedError, step_decay_lr
from src.utils.logger import setup_logger
from src.utils.validators import labels_to_multi_hot

logger = setup_logger("MdcClassifier")


def build_mdc(spec: MdcSpec, seed: int) -> Model:
    """
    Initialize a classifier with He-style fan-in scaling.

    Args:
        spec: Network spec
        seed: Init seed; the same seed gives bitwise-identical parameters

    Returns:
        Model with backbone, block conv and block head parameters

    Raises:
        InvalidSpecError: If ``spec`` fails validation
    """
    spec.validate()
    duplicates = [d for d, count in Counter(spec.block_dilations).items() if count > 1]
    if duplicates:
        logger.warning(f"Duplicate dilation rates {duplicates}: those blocks share geometry")

    rng = np.random.default_rng(seed)
    params, channels = init_backbone(spec.backbone, spec.in_channels, rng)
    dtype = get_default_dtype()

    for b in range(len(spec.block_dilations)):
        in_ch = channels
        for level in range(spec.block_depth):
            shape = (spec.block_channels, in_ch, 3, 3)
            params[f"block.{b}.conv{level}.weight"] = Tensor(he_normal(rng, shape, in_ch * 9), requires_grad=True)
            params[f"block.{b}.conv{level}.bias"] = Tensor(np.zeros(spec.block_channels, dtype=dtype),
                                                           requires_grad=True)
            in_ch = spec.block_channels
        params[f"block.{b}.fc.weight"] = Tensor(
            he_normal(rng, (spec.num_classes, spec.block_channels), spec.block_channels, gain=1.0),
            requires_grad=True)
        params[f"block.{b}.fc.bias"] = Tensor(np.zeros(spec.num_classes, dtype=dtype), requires_grad=True)

    logger.debug(f"Built MDC classifier with a standard block and {spec.num_dilated} dilated blocks "
                 f"(dilations {spec.block_dilations}), {len(params)} parameter tensors")
    return Model(spec=spec, params=params, seed=seed)


def block_features(model: Model, block_index: int, shared: Tensor) -> Tensor:
    """Run one dilated block (3x3 conv + ReLU, repeated block_depth times) on the backbone output."""
    spec: MdcSpec = model.spec
    d = int(spec.block_dilations[block_index])
    x = shared
    for level in range(spec.block_depth):
        conv = F.ConvSpec(in_channels=x.shape[1], out_channels=spec.block_channels,
                          kernel=(3, 3), stride=1, padding=d, dilation=d)
        x = F.conv2d(x, model.params[f"block.{block_index}.conv{level}.weight"],
                     model.params[f"block.{block_index}.conv{level}.bias"], conv)
        x = F.relu(x)
    return x


def forward_cls(model: Model, batch) -> Tuple[List[Tensor], List[Tensor]]:
    """
    Forward a batch through the backbone and every block head.

    Args:
        model: MDC classifier
        batch: [N,3,H,W] images (Tensor or array)

    Returns:
        (per-block pre-GAP features [N,K,h,w], per-block logits [N,C])

    Raises:
        ShapeMismatchError: If the input is too small for the backbone
    """
    spec: MdcSpec = model.spec
    shared = run_backbone(model.params, spec.backbone, as_batch(batch))
    features, logits = [], []
    for b in range(len(spec.block_dilations)):
        feats = block_features(model, b, shared)
        pooled = F.global_avg_pool(feats)
        logits.append(F.fully_connected(pooled, model.params[f"block.{b}.fc.weight"],
                                        model.params[f"block.{b}.fc.bias"]))
        features.append(feats)
    return features, logits


def cls_loss(per_block_logits: Sequence[Tensor], labels: np.ndarray) -> Tensor:
    """Sum over blocks of the multi-label sigmoid cross-entropy."""
    total = None
    for logits in per_block_logits:
        loss = F.sigmoid_cross_entropy_multilabel(logits, labels)
        total = loss if total is None else total + loss
    return total


def _check_indices(spec: MdcSpec, block_index: int, class_c: int) -> None:
    if not 0 <= block_index < len(spec.block_dilations):
        raise IndexError(f"block_index {block_index} outside 0..{len(spec.block_dilations) - 1}")
    if not 0 <= class_c < spec.num_classes:
        raise IndexError(f"class index {class_c} outside 0..{spec.num_classes - 1}")


def cam_from_features(features: np.ndarray, weights: np.ndarray, class_c: int) -> np.ndarray:
    """M(x,y) = sum_k W[c,k] * F_k(x,y) for features [K,h,w]."""
    return np.tensordot(weights[class_c], features, axes=(0, 0))


def compute_cam(model: Model, image, block_index: int, class_c: int, upsample: bool = True) -> LocalizationMap:
    """
    Raw (unnormalized) class activation map of one block.

    Args:
        model: Trained classifier
        image: [3,H,W] or [1,3,H,W] image
        block_index: Block to read (0 is the standard d=1 block)
        class_c: Classifier output index; the map's class_id is class_c + 1
        upsample: Bilinearly resize to image resolution; False keeps feature resolution

    Returns:
        LocalizationMap with normalized=False

    Raises:
        IndexError: On an invalid block or class index
    """
    spec: MdcSpec = model.spec
    _check_indices(spec, block_index, class_c)
    batch = as_batch(image)
    with no_grad():
        shared = run_backbone(model.params, spec.backbone, batch)
        feats = block_features(model, block_index, shared).data[0]
    values = cam_from_features(feats, model.params[f"block.{block_index}.fc.weight"].data, class_c)
    if upsample:
        values = F.upsample_bilinear_forward(values, batch.shape[2:])
    return LocalizationMap(class_id=class_c + 1, values=values)


def compute_block_cams(model: Model, image, class_ids: Sequence[int]) -> List[Dict[int, LocalizationMap]]:
    """
    Raw CAMs of every block for the given dataset class ids, sharing one backbone pass.

    Returns:
        One {class_id: LocalizationMap} dict per block, at image resolution
    """
    spec: MdcSpec = model.spec
    batch = as_batch(image)
    size = batch.shape[2:]
    out: List[Dict[int, LocalizationMap]] = []
    with no_grad():
        shared = run_backbone(model.params, spec.backbone, batch)
        for b in range(len(spec.block_dilations)):
            feats = block_features(model, b, shared).data[0]
            weights = model.params[f"block.{b}.fc.weight"].data
            maps = {}
            for class_id in class_ids:
                _check_indices(spec, b, class_id - 1)
                raw = cam_from_features(feats, weights, class_id - 1)
                maps[class_id] = LocalizationMap(class_id=class_id, values=F.upsample_bilinear_forward(raw, size))
            out.append(maps)
    return out


def predict_labels(model: Model, images: np.ndarray, threshold: float = 0.5,
                   batch_size: int = 32) -> List[FrozenSet[int]]:
    """
    Image-level label sets from the mean of the block sigmoid probabilities.

    Returns:
        One frozenset of class ids (1..C) per image
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[None]
    predictions: List[FrozenSet[int]] = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            _, logits = forward_cls(model, images[start:start + batch_size])
            probs = np.mean([expit(l.data) for l in logits], axis=0)
            for row in probs:
                predictions.append(frozenset(int(c) + 1 for c in np.flatnonzero(row >= threshold)))
    return predictions


def _stack_samples(samples: Sequence[Sample], indices: np.ndarray, num_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    dtype = get_default_dtype()
    images = np.stack([samples[i].image for i in indices]).astype(dtype, copy=False)
    labels = np.stack([labels_to_multi_hot(samples[i].labels, num_classes, dtype) for i in indices])
    return images, labels


def train_classifier(model: Model, samples: Sequence[Sample], hyper: TrainHyper) -> Model:
    """
    Train the classifier on image-level labels with momentum SGD and step decay.

    Args:
        model: Model from build_mdc (updated in place)
        samples: Weak-split samples; only image and labels are read
        hyper: Training protocol

    Returns:
        The trained model

    Raises:
        ValueError: If the dataset is empty
        TrainingDivergedError: If the loss or a gradient turns NaN/Inf
    """
    if not samples:
        raise ValueError("classifier training needs a non-empty dataset")
    spec: MdcSpec = model.spec
    rng = np.random.default_rng(hyper.seed)
    optimizer = SGD(model.params, lr=hyper.lr, momentum=hyper.momentum, weight_decay=hyper.weight_decay)

    logger.info(f"Training classifier on {len(samples)} images for {hyper.epochs} epochs "
                f"(batch {hyper.batch}, crop {hyper.crop}, lr {hyper.lr:g})")

    epoch_loss = float("nan")
    for epoch in range(hyper.epochs):
        optimizer.set_lr(step_decay_lr(epoch, hyper.lr, hyper.lr_decay_epoch))
        order = rng.permutation(len(samples))
        losses = []
        for step, start in enumerate(range(0, len(order), hyper.batch)):
            images, labels = _stack_samples(samples, order[start:start + hyper.batch], spec.num_classes)
            images, _ = random_crop(images, hyper.crop, rng)
            try:
                optimizer.zero_grad()
                _, logits = forward_cls(model, images)
                loss = cls_loss(logits, labels)
                loss.backward()
                optimizer.step()
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"classifier diverged at epoch {epoch}, step {step}, lr {optimizer.lr:g}: {exc}") from exc
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses))
        model.epoch = epoch + 1
        logger.info(f"Classifier epoch {epoch + 1}/{hyper.epochs}: loss={epoch_loss:.4f} lr={optimizer.lr:g}")

    logger.info(f"Classifier final-epoch training loss: {epoch_loss:.4f}")
    return model


# =============================================================================
# Receptive field
# =============================================================================

def receptive_field(layers: Sequence[Tuple[int, int, int]]) -> int:
    """
    Analytic receptive field of a layer stack.

    Args:
        layers: (kernel, stride, dilation) per layer

    Returns:
        Receptive field in input pixels

    Raises:
        InvalidSpecError: If an entry is < 1
    """
    rf, jump = 1, 1
    for k, s, d in layers:
        if min(k, s, d) < 1:
            raise InvalidSpecError(f"layer ({k}, {s}, {d}) has an entry < 1")
        rf += (k - 1) * d * jump
        jump *= s
    return rf


def probe_receptive_field(layers: Sequence[Tuple[int, int, int]]) -> int:
    """
    Measure the receptive field by impulse response.

    Each layer becomes an all-ones, zero-bias conv without padding (a pool
    becomes a strided conv), applied along one row. A batch of zero images,
    each with a single 1-valued pixel at a different column, is pushed
    through the stack; the measured field is the span from the first to the
    last impulse that reaches the central output unit (dilated layers leave
    gaps inside that span).
    """
    total_stride = int(np.prod([s for _, s, _ in layers])) if layers else 1
    width = 3 * receptive_field(layers) + 2 * total_stride + 1
    dtype = np.float64

    x = np.zeros((width, 1, 1, width), dtype=dtype)
    x[np.arange(width), 0, 0, np.arange(width)] = 1.0
    for k, s, d in layers:
        spec = F.ConvSpec(in_channels=1, out_channels=1, kernel=(1, k), stride=s, padding=0, dilation=d)
        x = F.conv2d_forward(x, np.ones((1, 1, 1, k), dtype=dtype), None, spec)
    center = x.shape[-1] // 2
    hits = np.flatnonzero(x[:, 0, 0, center] > 0)
    return int(hits[-1] - hits[0] + 1) if hits.size else 0
