"""
Model checkpoints: a directory holding manifest.txt (key=value lines) and
one .tns file per named parameter.
"""

from pathlib import Path
from typing import Dict, Union

from src.core.autograd import Tensor, get_default_dtype
from src.core.models import FcnSpec, MdcSpec, Model, parse_layers
from src.integrations.tensor_io import FormatError, read_tensor, write_tensor
from src.utils.logger import setup_logger

MANIFEST_NAME = "manifest.txt"


class CheckpointError(RuntimeError):
    """Raised when a checkpoint directory is missing, incomplete or inconsistent."""
    pass


class CheckpointIO:
    """Saves and restores classifier and FCN models."""

    def __init__(self):
        self.logger = setup_logger("CheckpointIO")

    def save(self, model: Model, directory: Union[str, Path]) -> Path:
        """
        Write a model checkpoint.

        Args:
            model: MDC classifier or FCN
            directory: Target directory (created if needed)

        Returns:
            The checkpoint directory
        """
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        fields = self._spec_fields(model.spec)
        fields["seed"] = str(model.seed)
        fields["epoch"] = str(model.epoch)
        fields["params"] = ",".join(model.params)

        for name, values in model.parameter_arrays().items():
            write_tensor(directory / f"{name}.tns", values)
        lines = [f"{key}={value}" for key, value in fields.items()]
        (directory / MANIFEST_NAME).write_text("\n".join(lines) + "\n")
        self.logger.info(f"Saved {fields['kind']} checkpoint ({len(model.params)} tensors) to {directory}")
        return directory

    def load(self, directory: Union[str, Path]) -> Model:
        """
        Restore a model written by save().

        Raises:
            CheckpointError: If the manifest or a parameter file is missing or malformed
        """
        directory = Path(directory)
        manifest = directory / MANIFEST_NAME
        if not manifest.exists():
            raise CheckpointError(f"no {MANIFEST_NAME} in {directory}")
        fields = self._read_manifest(manifest)

        try:
            spec = self._spec_from_fields(fields)
            names = [n for n in fields["params"].split(",") if n]
            seed, epoch = int(fields["seed"]), int(fields["epoch"])
        except (KeyError, ValueError) as exc:
            raise CheckpointError(f"malformed manifest {manifest}: {exc}") from exc

        params: Dict[str, Tensor] = {}
        dtype = get_default_dtype()
        for name in names:
            path = directory / f"{name}.tns"
            if not path.exists():
                raise CheckpointError(f"missing parameter file {path}")
            try:
                params[name] = Tensor(read_tensor(path).astype(dtype), requires_grad=True)
            except FormatError as exc:
                raise CheckpointError(str(exc)) from exc
        self.logger.info(f"Loaded {fields['kind']} checkpoint from {directory} (epoch {epoch})")
        return Model(spec=spec, params=params, seed=seed, epoch=epoch)

    @staticmethod
    def _read_manifest(path: Path) -> Dict[str, str]:
        fields = {}
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CheckpointError(f"bad manifest line {line!r} in {path}")
            fields[key.strip()] = value.strip()
        return fields

    @staticmethod
    def _spec_fields(spec) -> Dict[str, str]:
        backbone = ",".join(layer.describe() for layer in spec.backbone)
        if isinstance(spec, MdcSpec):
            return {
                "kind": "mdc",
                "backbone": backbone,
                "block_dilations": ",".join(str(d) for d in spec.block_dilations),
                "block_channels": str(spec.block_channels),
                "block_depth": str(spec.block_depth),
                "num_classes": str(spec.num_classes),
                "in_channels": str(spec.in_channels),
            }
        if isinstance(spec, FcnSpec):
            return {
                "kind": "fcn",
                "backbone": backbone,
                "num_classes": str(spec.num_classes),
                "in_channels": str(spec.in_channels),
            }
        raise CheckpointError(f"cannot checkpoint spec of type {type(spec).__name__}")

    @staticmethod
    def _spec_from_fields(fields: Dict[str, str]):
        backbone = parse_layers(fields["backbone"].split(","))
        kind = fields["kind"]
        if kind == "mdc":
            return MdcSpec(
                backbone=backbone,
                block_dilations=[int(d) for d in fields["block_dilations"].split(",")],
                block_channels=int(fields["block_channels"]),
                num_classes=int(fields["num_classes"]),
                block_depth=int(fields["block_depth"]),
                in_channels=int(fields["in_channels"]),
            )
        if kind == "fcn":
            return FcnSpec(backbone=backbone, num_classes=int(fields["num_classes"]),
                           in_channels=int(fields["in_channels"]))
        raise CheckpointError(f"unknown checkpoint kind {kind!r}")


def save_checkpoint(model: Model, directory: Union[str, Path]) -> Path:
    return CheckpointIO().save(model, directory)


def load_checkpoint(directory: Union[str, Path]) -> Model:
    return CheckpointIO().load(directory)
