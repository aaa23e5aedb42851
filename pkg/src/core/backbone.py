"""
Backbone construction and forward pass shared by the classifier and the FCN.
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from src.core import functional as F
from src.core.autograd import ShapeMismatchError, Tensor, get_default_dtype
from src.core.models import LayerSpec


def he_normal(rng: np.random.Generator, shape: Tuple[int, ...], fan_in: int, gain: float = 2.0) -> np.ndarray:
    """Gaussian init with variance gain / fan_in."""
    return (rng.standard_normal(shape) * np.sqrt(gain / fan_in)).astype(get_default_dtype())


def conv_spec_for(layer: LayerSpec, in_channels: int) -> F.ConvSpec:
    """Same-padded stride-1 conv geometry for a backbone conv layer."""
    padding = layer.dilation * (layer.kernel - 1) // 2
    return F.ConvSpec(in_channels=in_channels, out_channels=layer.out_channels,
                      kernel=(layer.kernel, layer.kernel), stride=1, padding=padding,
                      dilation=layer.dilation)


def init_backbone(layers: List[LayerSpec], in_channels: int, rng: np.random.Generator,
                  prefix: str = "backbone") -> Tuple[Dict[str, Tensor], int]:
    """
    Create conv parameters for every conv layer of a backbone.

    Returns:
        (params by name, number of output channels)
    """
    params: Dict[str, Tensor] = {}
    channels = in_channels
    for index, layer in enumerate(layers):
        if layer.kind != "conv":
            continue
        fan_in = channels * layer.kernel * layer.kernel
        shape = (layer.out_channels, channels, layer.kernel, layer.kernel)
        params[f"{prefix}.{index}.weight"] = Tensor(he_normal(rng, shape, fan_in), requires_grad=True)
        params[f"{prefix}.{index}.bias"] = Tensor(np.zeros(layer.out_channels, dtype=get_default_dtype()),
                                                  requires_grad=True)
        channels = layer.out_channels
    return params, channels


def backbone_output_size(layers: List[LayerSpec], height: int, width: int) -> Tuple[int, int]:
    for layer in layers:
        if layer.kind == "pool":
            height = (height - layer.kernel) // layer.stride + 1
            width = (width - layer.kernel) // layer.stride + 1
    return height, width


def run_backbone(params: Dict[str, Tensor], layers: List[LayerSpec], x: Tensor,
                 prefix: str = "backbone") -> Tensor:
    """
    Forward through the backbone.

    Raises:
        ShapeMismatchError: If the input is too small for a >= 1x1 feature map
    """
    out_h, out_w = backbone_output_size(layers, x.shape[2], x.shape[3])
    if out_h < 1 or out_w < 1:
        raise ShapeMismatchError(f"input {x.shape[2:]} is too small for the backbone")

    channels = x.shape[1]
    for index, layer in enumerate(layers):
        if layer.kind == "conv":
            spec = conv_spec_for(layer, channels)
            x = F.conv2d(x, params[f"{prefix}.{index}.weight"], params[f"{prefix}.{index}.bias"], spec)
            channels = layer.out_channels
        elif layer.kind == "relu":
            x = F.relu(x)
        elif layer.kind == "pool":
            x = F.max_pool2d(x, layer.kernel, layer.stride)
    return x


def as_batch(images) -> Tensor:
    """Accept a Tensor, a [3,H,W] array or an [N,3,H,W] array."""
    if isinstance(images, Tensor):
        return images
    array = np.asarray(images)
    if array.ndim == 3:
        array = array[None]
    return Tensor(array.astype(get_default_dtype(), copy=False))


def random_crop(images: np.ndarray, crop: int, rng: np.random.Generator,
                masks: Optional[np.ndarray] = None) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Crop each image (and its mask) to crop x crop at a random offset.

    A crop at least as large as the image returns the inputs untouched and draws nothing from rng.
    """
    n, _, h, w = images.shape
    if crop >= h and crop >= w:
        return images, masks
    crop_h, crop_w = min(crop, h), min(crop, w)
    tops = rng.integers(0, h - crop_h + 1, size=n)
    lefts = rng.integers(0, w - crop_w + 1, size=n)
    out_images = np.stack([images[i, :, t:t + crop_h, l:l + crop_w] for i, (t, l) in enumerate(zip(tops, lefts))])
    out_masks = None
    if masks is not None:
        out_masks = np.stack([masks[i, t:t + crop_h, l:l + crop_w] for i, (t, l) in enumerate(zip(tops, lefts))])
    return out_images, out_masks
