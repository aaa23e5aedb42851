"""
Translate the flat run configuration into specs and training hyperparameters.
"""

from typing import Any, Dict, Optional

from src.core.models import FcnSpec, GenConfig, MdcSpec, TrainHyper, parse_layers


def gen_config(config: Dict[str, Any]) -> GenConfig:
    return GenConfig(
        num_classes=config["num_classes"],
        image_size=config["image_size"],
        weak_count=config["weak_count"],
        strong_count=config["strong_count"],
        val_count=config["val_count"],
        shapes_min=config["shapes_min"],
        shapes_max=config["shapes_max"],
        scale_min=config["scale_min"],
        scale_max=config["scale_max"],
        clutter_amplitude=config["clutter_amplitude"],
        saliency_noise=config["saliency_noise"],
        saliency_falloff=config["saliency_falloff"],
        seed=config["seed"],
    )


def mdc_spec(config: Dict[str, Any], block_dilations: Optional[list] = None) -> MdcSpec:
    return MdcSpec(
        backbone=parse_layers(config["backbone"]),
        block_dilations=[int(d) for d in (block_dilations or config["block_dilations"])],
        block_channels=config["block_channels"],
        num_classes=config["num_classes"],
        block_depth=config["block_depth"],
    )


def fcn_spec(config: Dict[str, Any]) -> FcnSpec:
    return FcnSpec(backbone=parse_layers(config["seg_backbone"]), num_classes=config["num_classes"])


def cls_hyper(config: Dict[str, Any]) -> TrainHyper:
    return TrainHyper(
        epochs=config["cls_epochs"],
        lr=config["cls_lr"],
        lr_decay_epoch=config["cls_lr_decay_epoch"],
        batch=config["cls_batch"],
        crop=config["cls_crop"],
        momentum=config["momentum"],
        weight_decay=config["weight_decay"],
        seed=config["seed"],
    )


def seg_hyper(config: Dict[str, Any]) -> TrainHyper:
    return TrainHyper(
        epochs=config["seg_epochs"],
        lr=config["seg_lr"],
        lr_decay_epoch=config["seg_lr_decay_epoch"],
        batch=config["seg_batch"],
        crop=config["seg_crop"],
        momentum=config["momentum"],
        weight_decay=config["weight_decay"],
        seed=config["seed"],
    )
