"""
FCN segmentation network trained from pseudo masks (weak mode) or from
pseudo masks plus a small set of human masks (semi mode).

The weak objective adds a second cross-entropy term whose target is the
network's own label-restricted argmax, recomputed every step from a
stop-gradient copy of the current prediction.
"""

from pathlib import Path
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from src.core import functional as F
from src.core.autograd import NonFiniteError, Tensor, get_default_dtype, no_grad
from src.core.backbone import as_batch, he_normal, init_backbone, random_crop, run_backbone
from src.core.evaluator import ConfusionMatrix, accumulate, append_metrics_row, miou
from src.core.models import FcnSpec, Model, PseudoMask, Sample, TrainBatchStrong, TrainBatchWeak, TrainHyper
from src.core.optim import SGD, TrainingDivergedError, step_decay_lr
from src.utils.logger import setup_logger
from src.utils.validators import IGNORE

logger = setup_logger("Segmentation")

SEG_MODES = ("weak", "semi")


def build_fcn(spec: FcnSpec, seed: int) -> Model:
    """
    Initialize an FCN: backbone, then a 1x1 conv to C+1 channels.

    Raises:
        InvalidSpecError: If ``spec`` fails validation
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    params, channels = init_backbone(spec.backbone, spec.in_channels, rng)
    params["classifier.weight"] = Tensor(he_normal(rng, (spec.num_outputs, channels, 1, 1), channels, gain=1.0),
                                         requires_grad=True)
    params["classifier.bias"] = Tensor(np.zeros(spec.num_outputs, dtype=get_default_dtype()), requires_grad=True)
    logger.debug(f"Built FCN with {spec.num_outputs} outputs at output stride {spec.output_stride}")
    return Model(spec=spec, params=params, seed=seed)


def forward_seg(model: Model, images) -> Tensor:
    """
    Per-pixel logits [N, C+1, H, W] at input resolution.

    Raises:
        ShapeMismatchError: If the input is too small for the backbone
    """
    spec: FcnSpec = model.spec
    x = as_batch(images)
    feats = run_backbone(model.params, spec.backbone, x)
    head = F.ConvSpec(in_channels=feats.shape[1], out_channels=spec.num_outputs, kernel=(1, 1))
    logits = F.conv2d(feats, model.params["classifier.weight"], model.params["classifier.bias"], head)
    return F.upsample_bilinear(logits, x.shape[2:])


def _as_channels(confidences) -> np.ndarray:
    values = np.asarray(getattr(confidences, "data", confidences))
    if values.ndim == 4:
        if values.shape[0] != 1:
            raise ValueError(f"expected a single image, got batch of {values.shape[0]}")
        values = values[0]
    return values


def infer_online_mask(confidences, labels: Iterable[int], min_prob: Optional[float] = None) -> PseudoMask:
    """
    Argmax restricted to background plus the image's labels.

    Args:
        confidences: [1,C+1,H,W] or [C+1,H,W] logits (or probabilities)
        labels: Image-level class ids; must be non-empty
        min_prob: Optional floor; pixels whose softmax probability for the
            chosen channel is below it become IGNORE

    Returns:
        Mask with ids in {0} and labels (plus IGNORE when a floor is set);
        ties go to the lowest class id
    """
    allowed = np.array([0] + sorted(set(int(c) for c in labels)), dtype=np.int64)
    if len(allowed) == 1:
        raise ValueError("online mask inference needs a non-empty label set")
    values = _as_channels(confidences)
    picked = np.argmax(values[allowed], axis=0)
    mask = allowed[picked].astype(np.uint8)
    if min_prob is not None:
        probs = softmax(values, axis=0)
        chosen = np.take_along_axis(probs, mask[None].astype(np.int64), axis=0)[0]
        mask[chosen < min_prob] = IGNORE
    return PseudoMask(mask)


def online_masks(logits: np.ndarray, label_sets: Sequence[Iterable[int]],
                 min_prob: Optional[float] = None) -> np.ndarray:
    """infer_online_mask over a batch [N,C+1,H,W]; returns [N,H,W] uint8."""
    return np.stack([infer_online_mask(logits[i], label_sets[i], min_prob).labels for i in range(len(logits))])


def weak_loss_from_logits(logits: Tensor, pseudo_masks: np.ndarray, label_sets: Sequence[Iterable[int]],
                          online: Optional[np.ndarray] = None, min_prob: Optional[float] = None) -> Tensor:
    """J_w = CE(f, M_w) + CE(f, online mask), each per-image normalized."""
    if online is None:
        online = online_masks(logits.data, label_sets, min_prob)
    if np.all(pseudo_masks == IGNORE) and np.all(online == IGNORE):
        logger.warning("Weak batch has no labeled pixels in either mask: loss is 0")
    return (F.pixel_softmax_ce_ignored(logits, pseudo_masks, per_image=True)
            + F.pixel_softmax_ce_ignored(logits, online, per_image=True))


def weak_loss(model: Model, batch: TrainBatchWeak, online_masks: Optional[np.ndarray] = None,
              min_prob: Optional[float] = None) -> Tensor:
    """
    Weak objective of one batch.

    Args:
        model: FCN
        batch: Images, pseudo masks and label sets
        online_masks: Override for the online masks (default: inferred from the current prediction)
        min_prob: Online-mask probability floor

    Returns:
        Scalar loss
    """
    logits = forward_seg(model, batch.images)
    return weak_loss_from_logits(logits, batch.pseudo_masks, batch.label_sets, online_masks, min_prob)


def strong_loss(model: Model, batch: TrainBatchStrong) -> Tensor:
    """J_s = CE(f, M_s)."""
    logits = forward_seg(model, batch.images)
    return F.pixel_softmax_ce_ignored(logits, batch.masks, per_image=True)


def semi_objective(model: Model, weak_batch: TrainBatchWeak, strong_batch: Optional[TrainBatchStrong],
                   min_prob: Optional[float] = None) -> Tensor:
    """J_w + J_s with unit weights; a missing strong batch leaves J_w."""
    loss = weak_loss(model, weak_batch, min_prob=min_prob)
    if strong_batch is not None:
        loss = loss + strong_loss(model, strong_batch)
    return loss


def predict_mask(model: Model, image) -> PseudoMask:
    """Unrestricted argmax over all C+1 channels (ties to the lowest id)."""
    with no_grad():
        logits = forward_seg(model, image).data
    return PseudoMask(np.argmax(logits[0], axis=0).astype(np.uint8))


def predict_masks(model: Model, images: np.ndarray, batch_size: int = 32) -> np.ndarray:
    out = []
    with no_grad():
        for start in range(0, len(images), batch_size):
            logits = forward_seg(model, images[start:start + batch_size]).data
            out.append(np.argmax(logits, axis=1).astype(np.uint8))
    return np.concatenate(out)


def evaluate_fcn(model: Model, samples: Sequence[Sample], batch_size: int = 32) -> Tuple[ConfusionMatrix, float]:
    """
    Confusion matrix and mean cross-entropy of the FCN on samples with gt masks.
    """
    spec: FcnSpec = model.spec
    cm = ConfusionMatrix(spec.num_outputs)
    losses = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunk = samples[start:start + batch_size]
            images = np.stack([s.image for s in chunk])
            gts = np.stack([s.gt_mask for s in chunk])
            logits = forward_seg(model, images)
            losses.append(F.pixel_softmax_ce_ignored(logits, gts, per_image=True).item() * len(chunk))
            for gt, pred in zip(gts, np.argmax(logits.data, axis=1)):
                accumulate(cm, gt, pred)
    return cm, float(np.sum(losses) / max(len(samples), 1))


class _StrongCycler:
    """Endless reshuffled mini-batches over the strong set."""

    def __init__(self, size: int, batch: int, rng: np.random.Generator):
        self.size = size
        self.batch = min(batch, size)
        self.rng = rng
        self.order = rng.permutation(size)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch > self.size:
            self.order = self.rng.permutation(self.size)
            self.cursor = 0
        picked = self.order[self.cursor:self.cursor + self.batch]
        self.cursor += self.batch
        return picked


def _weak_batch(samples: Sequence[Sample], indices: np.ndarray, crop: int,
                rng: np.random.Generator) -> TrainBatchWeak:
    images = np.stack([samples[i].image for i in indices]).astype(get_default_dtype(), copy=False)
    masks = np.stack([samples[i].pseudo_mask for i in indices])
    images, masks = random_crop(images, crop, rng, masks)
    return TrainBatchWeak(images=images, pseudo_masks=masks, label_sets=[samples[i].labels for i in indices])


def _strong_batch(samples: Sequence[Sample], indices: np.ndarray, crop: int,
                  rng: np.random.Generator) -> TrainBatchStrong:
    images = np.stack([samples[i].image for i in indices]).astype(get_default_dtype(), copy=False)
    masks = np.stack([samples[i].gt_mask for i in indices])
    images, masks = random_crop(images, crop, rng, masks)
    return TrainBatchStrong(images=images, masks=masks)


def train_seg(model: Model, mode: str, weak_set: Sequence[Sample], strong_set: Sequence[Sample],
              hyper: TrainHyper, val_set: Optional[Sequence[Sample]] = None,
              metrics_path: Optional[Path] = None, min_prob: Optional[float] = None) -> Model:
    """
    Train the FCN.

    Every step uses one weak mini-batch; in semi mode it also draws one strong
    mini-batch and adds the two losses. Weak mode never touches strong_set.

    Args:
        model: Model from build_fcn (updated in place)
        mode: "weak" or "semi"
        weak_set: Samples carrying pseudo_mask and labels
        strong_set: Samples carrying gt_mask (semi mode only)
        hyper: Training protocol
        val_set: Optional samples with gt masks, evaluated after every epoch
        metrics_path: CSV receiving (epoch, split, loss, mIoU) rows
        min_prob: Online-mask probability floor

    Returns:
        The trained model

    Raises:
        ValueError: On an unknown mode, an empty weak set, or semi mode without strong images
        TrainingDivergedError: If the loss or a gradient turns NaN/Inf
    """
    if mode not in SEG_MODES:
        raise ValueError(f"unknown segmentation mode {mode!r}")
    if not weak_set:
        raise ValueError("segmentation training needs a non-empty weak set")
    if mode == "semi" and not strong_set:
        raise ValueError("semi mode needs a non-empty strong set")

    rng = np.random.default_rng(hyper.seed)
    optimizer = SGD(model.params, lr=hyper.lr, momentum=hyper.momentum, weight_decay=hyper.weight_decay)
    cycler = _StrongCycler(len(strong_set), hyper.batch, rng) if mode == "semi" else None
    logger.info(f"Training FCN ({mode}) on {len(weak_set)} weak"
                f"{f' + {len(strong_set)} strong' if cycler else ''} images for {hyper.epochs} epochs")

    epoch_loss = float("nan")
    for epoch in range(hyper.epochs):
        optimizer.set_lr(step_decay_lr(epoch, hyper.lr, hyper.lr_decay_epoch))
        order = rng.permutation(len(weak_set))
        losses = []
        for step, start in enumerate(range(0, len(order), hyper.batch)):
            weak_batch = _weak_batch(weak_set, order[start:start + hyper.batch], hyper.crop, rng)
            strong_batch = _strong_batch(strong_set, cycler.next(), hyper.crop, rng) if cycler else None
            try:
                optimizer.zero_grad()
                loss = semi_objective(model, weak_batch, strong_batch, min_prob=min_prob)
                loss.backward()
                optimizer.step()
            except NonFiniteError as exc:
                raise TrainingDivergedError(
                    f"FCN diverged at epoch {epoch}, step {step}, lr {optimizer.lr:g}: {exc}") from exc
            losses.append(loss.item())
        epoch_loss = float(np.mean(losses))
        model.epoch = epoch + 1
        logger.info(f"FCN epoch {epoch + 1}/{hyper.epochs}: loss={epoch_loss:.4f} lr={optimizer.lr:g}")

        if metrics_path is not None:
            append_metrics_row(metrics_path, epoch + 1, "train", epoch_loss, None)
            if val_set:
                cm, val_loss = evaluate_fcn(model, val_set)
                val_miou = miou(cm)
                append_metrics_row(metrics_path, epoch + 1, "val", val_loss, val_miou)
                logger.info(f"FCN epoch {epoch + 1}: val loss={val_loss:.4f} mIoU={val_miou:.4f}")

    logger.info(f"FCN final-epoch training loss: {epoch_loss:.4f}")
    return model
