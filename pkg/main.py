#!/usr/bin/env python3
"""
Main entry point for the MDC weakly-supervised segmentation pipeline.
Each subcommand runs one stage inside a fresh run directory.
"""

import argparse
import sys
from typing import List, Optional

from src.stages.ablation_stage import STUDIES, AblationStage
from src.stages.classifier_stage import TrainClassifierStage
from src.stages.data_stage import GenDataStage
from src.stages.localize_stage import LocalizeStage, MakeMasksStage
from src.stages.rf_stage import ReceptiveFieldStage
from src.stages.run_state import RunState
from src.stages.segmentation_stage import EvalStage, TrainSegStage
from src.utils.config_loader import load_config
from src.utils.logger import set_log_level, setup_logger

SPLIT_CHOICES = ("weak", "strong", "val")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdc", description="Multi-dilated CAM pseudo masks and FCN training")
    parser.add_argument("--config", default="config/mdc.yaml", help="Flat YAML run configuration")
    parser.add_argument("--seed", type=int, default=None, help="Overrides the config seed")
    parser.add_argument("--out", default=None, help="Parent directory for run directories")
    parser.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-data", help="Render the synthetic dataset")
    gen.add_argument("--data-dir", default=None)

    cls = sub.add_parser("train-cls", help="Train the MDC classifier")
    cls.add_argument("--data-dir", default=None)

    loc = sub.add_parser("localize", help="Write block and fused localization maps")
    loc.add_argument("--checkpoint", required=True)
    loc.add_argument("--split", default="weak", choices=SPLIT_CHOICES)
    loc.add_argument("--data-dir", default=None)

    masks = sub.add_parser("make-masks", help="Synthesize pseudo masks from localization maps")
    masks.add_argument("--maps-dir", required=True)

    seg = sub.add_parser("train-seg", help="Train the FCN")
    seg.add_argument("--masks-dir", required=True)
    seg.add_argument("--mode", default=None, choices=["weak", "semi"])
    seg.add_argument("--data-dir", default=None)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--split", default="val", choices=SPLIT_CHOICES)
    ev.add_argument("--data-dir", default=None)

    rf = sub.add_parser("rf", help="Receptive-field table, e.g. \"3x3 d=1; pool2; 3x3 d=3\"")
    rf.add_argument("layers")

    ab = sub.add_parser("ablate", help="Localization-source or strong/weak split study")
    ab.add_argument("--study", default="localization", choices=STUDIES)
    ab.add_argument("--checkpoint", default=None, help="Reuse a trained classifier")
    ab.add_argument("--data-dir", default=None)
    return parser


def make_stage(args: argparse.Namespace, config: dict, run_state: RunState):
    """Instantiate the stage behind a parsed subcommand."""
    command = args.command
    if command == "gen-data":
        return GenDataStage(config, run_state, data_dir=args.data_dir)
    if command == "train-cls":
        return TrainClassifierStage(config, run_state, data_dir=args.data_dir)
    if command == "localize":
        return LocalizeStage(config, run_state, args.checkpoint, split=args.split, data_dir=args.data_dir)
    if command == "make-masks":
        return MakeMasksStage(config, run_state, args.maps_dir)
    if command == "train-seg":
        return TrainSegStage(config, run_state, args.masks_dir, mode=args.mode, data_dir=args.data_dir)
    if command == "eval":
        return EvalStage(config, run_state, args.checkpoint, split=args.split, data_dir=args.data_dir)
    if command == "rf":
        return ReceptiveFieldStage(config, run_state, args.layers)
    if command == "ablate":
        return AblationStage(config, run_state, study=args.study, checkpoint=args.checkpoint,
                             data_dir=args.data_dir)
    raise ValueError(f"unknown command {command!r}")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        Process exit code (0 on success, 1 on any pipeline error; argparse exits with 2)
    """
    args = build_parser().parse_args(argv)
    if args.log_level:
        set_log_level(args.log_level)
    logger = setup_logger("Main")
    try:
        config = load_config(args.config, overrides={"seed": args.seed})
        run_state = RunState(config, output_root=args.out)
        stage = make_stage(args, config, run_state)
        summary = stage.execute()
        logger.info(f"{args.command} finished: {summary}")
        return 0
    except Exception as e:
        logger.exception(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
