from __future__ import annotations

import argparse
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .run_config import RunConfig, add_run_arguments, config_from_args, ensure_run_dir, load_records, split_records
from .services.datasets import DatasetManifest
from .services.gridding import SplitResult, count_unmapped, save_grid

logger = logging.getLogger(__name__)

GRID_FILE = "grid.json"
SPLIT_FILE = "split.json"


@dataclass(frozen=True)
class PreparedRun:
    config: RunConfig
    manifest: DatasetManifest
    split: SplitResult
    run_dir: Path


def prepare_run(config: RunConfig) -> PreparedRun:
    """Load both files, grid and split them, and write grid.json plus split.json."""
    manifest, train, test = load_records(config)
    split = split_records(config, train, test)
    run_dir = ensure_run_dir(config)

    audit = config.audit()
    save_grid(split.grid, run_dir / GRID_FILE, extra={"run_config": audit})
    unmapped = count_unmapped(split.test, split.grid)
    payload = {
        "mode": config.split.mode,
        "seed": config.seed,
        "class_count": split.grid.class_count,
        "grid_fingerprint": split.grid.fingerprint(),
        "unmapped_test_points": unmapped,
        # original: train/val index the training file, test the test file; combined: the pooled list.
        "train_index": split.train_index,
        "val_index": split.val_index,
        "test_index": split.test_index,
        "run_config": audit,
    }
    (run_dir / SPLIT_FILE).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    logger.info("Prepared %s split in %s: %d classes, %d unmapped test points",
                config.split.mode, run_dir, split.grid.class_count, unmapped)
    return PreparedRun(config=config, manifest=manifest, split=split, run_dir=run_dir)


def _cmd_prepare(args: argparse.Namespace) -> int:
    prepare_run(config_from_args(args))
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("prepare", help="grid the dataset and write the split")
    add_run_arguments(parser)
    parser.set_defaults(handler=_cmd_prepare)
