from __future__ import annotations

import argparse
import logging
from pathlib import Path

import pandas as pd

from .errors import ConfigError
from .prepare import GRID_FILE, prepare_run
from .run_config import RunConfig, add_run_arguments, config_from_args
from .services.evaluation import write_table_csv
from .services.model import CaeCnnLocModel, count_parameters
from .services.quantization import quantize_f16, quantize_int8
from .services.storage import load_model, save_model
from .services.training import fit_split

logger = logging.getLogger(__name__)

HISTORY_FILE = "history.csv"
QUANTIZERS = {"f16": quantize_f16, "i8": quantize_int8}


def model_path(run_dir: Path, precision: str) -> Path:
    return run_dir / f"model_{precision}.cnlc"


def write_variants(model: CaeCnnLocModel, config: RunConfig, run_dir: Path, precisions: list[str]) -> dict[str, int]:
    """Write each requested precision next to the grid; returns file sizes."""
    sizes: dict[str, int] = {}
    audit = config.audit()
    for precision in precisions:
        variant = model if precision == "f32" else QUANTIZERS[precision](model)
        sizes[precision] = save_model(variant, model_path(run_dir, precision), grid_file=GRID_FILE, run_config=audit)
    if "f32" in sizes:
        for precision, size in sizes.items():
            logger.info("%s file: %d bytes (%.2fx of f32)", precision, size, size / sizes["f32"])
    return sizes


def _cmd_train(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    prepared = prepare_run(config)
    metadata = {"run_name": config.run_name, "split_mode": config.split.mode, "config_digest": config.digest()}
    model, histories = fit_split(prepared.split, prepared.manifest, config.train, metadata=metadata)
    logger.info("Classifier has %d trainable parameters", count_parameters(model))

    curves = pd.concat([history.to_frame() for history in histories], ignore_index=True)
    write_table_csv(curves, prepared.run_dir / HISTORY_FILE, config.audit())
    write_variants(model, config, prepared.run_dir, list(config.precisions))
    return 0


def _cmd_quantize(args: argparse.Namespace) -> int:
    config = config_from_args(args, precision="precisions")
    run_dir = config.run_dir()
    source = Path(args.model) if args.model else model_path(run_dir, "f32")
    if not source.exists():
        raise ConfigError(f"model file {source} does not exist (run 'train' first)")
    model = load_model(source)
    if not isinstance(model, CaeCnnLocModel):
        raise ConfigError(f"{source} is already quantized ({model.precision}); quantize a float32 model")
    write_variants(model, config, source.parent, [p for p in config.precisions if p != "f32"])
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("train", help="pretrain the CAE, train the classifier, write model files")
    add_run_arguments(parser)
    parser.set_defaults(handler=_cmd_train)

    parser = subparsers.add_parser("quantize", help="write float16/int8 variants of a trained model")
    add_run_arguments(parser)
    parser.add_argument("--model", default=None, help="float32 model file (default: the run's model_f32.cnlc)")
    parser.add_argument("--precision", action="append", choices=sorted(QUANTIZERS), default=None,
                        help="sets precisions (repeatable)")
    parser.set_defaults(handler=_cmd_quantize)
