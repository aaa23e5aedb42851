"""
Data models for the MDC segmentation pipeline.
"""

import re
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np

from src.core.autograd import Tensor
from src.utils.validators import IGNORE

SHAPE_VOCABULARY = ("disk", "square", "triangle", "ring", "cross", "diamond")


class InvalidSpecError(ValueError):
    """Raised when a network or generator spec violates its invariants."""
    pass


_LAYER_PATTERN = re.compile(r"^conv(\d+)x(\d+):(\d+)(?:@d(\d+))?$")


@dataclass(frozen=True)
class LayerSpec:
    """One backbone layer: 'conv' (same-padded), 'relu' or 'pool' (max, window == stride)."""
    kind: str
    out_channels: int = 0
    kernel: int = 3
    stride: int = 1
    dilation: int = 1

    @classmethod
    def parse(cls, text: str) -> "LayerSpec":
        """
        Parse 'conv3x3:16', 'conv3x3:16@d2', 'relu' or 'pool2'.

        Raises:
            InvalidSpecError: On an unknown descriptor
        """
        text = text.strip()
        if text == "relu":
            return cls(kind="relu")
        if text.startswith("pool") and text[4:].isdigit():
            size = int(text[4:])
            return cls(kind="pool", kernel=size, stride=size)
        match = _LAYER_PATTERN.match(text)
        if match is None:
            raise InvalidSpecError(f"unknown layer descriptor {text!r}")
        kh, kw, channels, dilation = match.groups()
        if kh != kw:
            raise InvalidSpecError(f"only square kernels are supported: {text!r}")
        return cls(kind="conv", out_channels=int(channels), kernel=int(kh), dilation=int(dilation or 1))

    def describe(self) -> str:
        if self.kind == "relu":
            return "relu"
        if self.kind == "pool":
            return f"pool{self.kernel}"
        suffix = f"@d{self.dilation}" if self.dilation != 1 else ""
        return f"conv{self.kernel}x{self.kernel}:{self.out_channels}{suffix}"


def parse_layers(descriptors: Sequence[str]) -> List[LayerSpec]:
    return [LayerSpec.parse(d) for d in descriptors]


@dataclass
class MdcSpec:
    """Classifier with a shared backbone and one dilated block per rate."""
    backbone: List[LayerSpec]
    block_dilations: List[int]
    block_channels: int
    num_classes: int
    block_depth: int = 1
    in_channels: int = 3

    def validate(self) -> None:
        """
        Raises:
            InvalidSpecError: If a field is out of range
        """
        if not self.block_dilations or self.block_dilations[0] != 1:
            raise InvalidSpecError("block_dilations[0] must be 1 (the standard block)")
        if len(self.block_dilations) < 2:
            raise InvalidSpecError("at least one dilated block is required")
        if any(int(d) < 1 for d in self.block_dilations):
            raise InvalidSpecError("dilation rates must be >= 1")
        if self.block_channels < 1 or self.num_classes < 1 or self.block_depth < 1:
            raise InvalidSpecError("block_channels, num_classes and block_depth must be positive")
        if not any(layer.kind == "conv" for layer in self.backbone):
            raise InvalidSpecError("backbone needs at least one conv layer")

    @property
    def num_dilated(self) -> int:
        return len(self.block_dilations) - 1


@dataclass
class FcnSpec:
    """Segmentation network: backbone, 1x1 classifier to C+1 channels, bilinear upsampling."""
    backbone: List[LayerSpec]
    num_classes: int
    in_channels: int = 3

    @property
    def num_outputs(self) -> int:
        return self.num_classes + 1

    @property
    def output_stride(self) -> int:
        stride = 1
        for layer in self.backbone:
            if layer.kind == "pool":
                stride *= layer.stride
        return stride

    def validate(self) -> None:
        if self.num_classes < 1:
            raise InvalidSpecError("num_classes must be positive")
        if not any(layer.kind == "conv" for layer in self.backbone):
            raise InvalidSpecError("backbone needs at least one conv layer")


@dataclass
class Model:
    """Network spec plus its learned parameters theta."""
    spec: object
    params: Dict[str, Tensor]
    seed: int = 0
    epoch: int = 0

    def parameter_arrays(self) -> Dict[str, np.ndarray]:
        return {name: tensor.data for name, tensor in self.params.items()}


@dataclass
class LocalizationMap:
    """Per-class 2-D heat map at image resolution."""
    class_id: int
    values: np.ndarray
    normalized: bool = False

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape


@dataclass
class PseudoMask:
    """Per-pixel class ids: 0 background, 1..C classes, IGNORE (255) excluded from training."""
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.labels.shape

    def ignored_fraction(self) -> float:
        return float(np.mean(self.labels == IGNORE))


@dataclass
class SaliencyMap:
    """Per-pixel foreground-likeness in [0, 1]."""
    values: np.ndarray


@dataclass
class GenConfig:
    """Synthetic dataset generator settings."""
    num_classes: int = 5
    image_size: int = 64
    weak_count: int = 2000
    strong_count: int = 400
    val_count: int = 200
    shapes_min: int = 1
    shapes_max: int = 3
    scale_min: float = 0.30
    scale_max: float = 0.60
    clutter_amplitude: float = 0.08
    saliency_noise: float = 0.0
    saliency_falloff: float = 4.0
    seed: int = 0

    def validate(self) -> None:
        """
        Raises:
            InvalidSpecError: On any out-of-range field
        """
        if not 1 <= self.num_classes <= len(SHAPE_VOCABULARY):
            raise InvalidSpecError(f"num_classes must lie in 1..{len(SHAPE_VOCABULARY)}")
        if self.shapes_min < 1:
            raise InvalidSpecError("shapes per image must be at least 1")
        if self.shapes_max < self.shapes_min:
            raise InvalidSpecError("shapes_max must be >= shapes_min")
        if not 0.0 < self.scale_min <= self.scale_max < 1.0:
            raise InvalidSpecError("scale range must lie within (0, 1)")
        if self.image_size < 8:
            raise InvalidSpecError("image_size must be at least 8")
        if min(self.weak_count, self.strong_count, self.val_count) < 0:
            raise InvalidSpecError("split counts must be non-negative")
        if not 0.0 <= self.saliency_noise < 1.0:
            raise InvalidSpecError("saliency_noise must lie in [0, 1)")
        if self.saliency_falloff <= 0:
            raise InvalidSpecError("saliency_falloff must be positive")
        if self.clutter_amplitude < 0:
            raise InvalidSpecError("clutter_amplitude must be non-negative")


@dataclass
class DatasetRecord:
    """One manifest line; paths are relative to the dataset root."""
    split: str
    image_path: str
    mask_path: str
    saliency_path: str
    labels: FrozenSet[int]

    @property
    def record_id(self) -> str:
        return self.image_path.rsplit("/", 1)[-1].rsplit(".", 1)[0]


@dataclass
class Sample:
    """A loaded record: float image [3,H,W] plus what the consumer may see."""
    record_id: str
    image: np.ndarray
    labels: FrozenSet[int]
    gt_mask: Optional[np.ndarray] = None
    saliency: Optional[np.ndarray] = None
    pseudo_mask: Optional[np.ndarray] = None


@dataclass
class TrainHyper:
    """Training protocol knobs shared by the classifier and the FCN."""
    epochs: int = 15
    lr: float = 0.01
    lr_decay_epoch: int = 6
    batch: int = 16
    crop: int = 64
    momentum: float = 0.9
    weight_decay: float = 5e-4
    seed: int = 0


@dataclass
class TrainBatchWeak:
    """Images with pseudo masks M_w and image-level label sets."""
    images: np.ndarray
    pseudo_masks: np.ndarray
    label_sets: List[FrozenSet[int]] = field(default_factory=list)


@dataclass
class TrainBatchStrong:
    """Images with human masks M_s."""
    images: np.ndarray
    masks: np.ndarray
