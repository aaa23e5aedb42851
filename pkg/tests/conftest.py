"""
Shared fixtures: tiny network specs, a tiny on-disk dataset and a tiny run config.
"""

import os
import tempfile

# Loggers are created at import time; keep their log files out of the repo.
os.environ.setdefault("LOG_DIR", tempfile.mkdtemp(prefix="mdc-test-logs-"))

import numpy as np  # noqa: E402
import pytest  # noqa: E402

from src.core.models import FcnSpec, GenConfig, MdcSpec, TrainHyper, parse_layers  # noqa: E402
from src.core.synth_data import generate_dataset  # noqa: E402
from src.utils.config_loader import dump_config, load_config  # noqa: E402

TINY_BACKBONE = ["conv3x3:4", "relu", "pool2", "conv3x3:6", "relu"]


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run the full-size acceptance tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_mdc_spec():
    return MdcSpec(backbone=parse_layers(TINY_BACKBONE), block_dilations=[1, 2, 3],
                   block_channels=5, num_classes=3)


@pytest.fixture
def tiny_fcn_spec():
    return FcnSpec(backbone=parse_layers(TINY_BACKBONE), num_classes=3)


@pytest.fixture
def tiny_hyper():
    return TrainHyper(epochs=2, lr=0.01, lr_decay_epoch=1, batch=4, crop=16, seed=7)


@pytest.fixture
def tiny_gen_config():
    return GenConfig(num_classes=3, image_size=16, weak_count=12, strong_count=4, val_count=4,
                     shapes_min=1, shapes_max=2, scale_min=0.4, scale_max=0.6, seed=3)


@pytest.fixture
def tiny_dataset(tmp_path, tiny_gen_config):
    root = tmp_path / "data"
    generate_dataset(tiny_gen_config, root)
    return root


TINY_OVERRIDES = {
    "seed": 3,
    "num_classes": 3,
    "image_size": 16,
    "weak_count": 12,
    "strong_count": 4,
    "val_count": 4,
    "shapes_max": 2,
    "scale_min": 0.4,
    "scale_max": 0.6,
    "backbone": TINY_BACKBONE,
    "block_dilations": [1, 2, 3],
    "block_channels": 5,
    "cls_epochs": 2,
    "cls_lr_decay_epoch": 1,
    "cls_batch": 4,
    "cls_crop": 16,
    "seg_backbone": TINY_BACKBONE,
    "seg_epochs": 2,
    "seg_lr_decay_epoch": 1,
    "seg_batch": 4,
    "seg_crop": 16,
    "ablate_strong_fractions": [0.25, 0.3],
}


def tiny_run_config(root):
    """Resolved run configuration sized for seconds-long end-to-end runs under root."""
    return load_config(None, overrides={
        **TINY_OVERRIDES,
        "output_root": str(root / "runs"),
        "data_dir": str(root / "data"),
    })


@pytest.fixture
def tiny_config(tmp_path):
    return tiny_run_config(tmp_path)


@pytest.fixture(scope="module")
def tiny_workspace(tmp_path_factory):
    """Directory holding tiny.yaml; its data and runs live next to it."""
    root = tmp_path_factory.mktemp("pipeline")
    dump_config(tiny_run_config(root), root / "tiny.yaml")
    return root
