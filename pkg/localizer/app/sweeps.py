from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .errors import ConfigError
from .prepare import prepare_run
from .run_config import add_run_arguments, config_from_args, ensure_run_dir, load_records
from .services.evaluation import l_sweep, noise_sweep, quant_sweep, write_table_csv
from .services.gridding import GridMap
from .services.model import CaeCnnLocModel
from .services.storage import StoredModel, load_model
from .train import model_path

logger = logging.getLogger(__name__)


def _load_model_file(path: Path, grid: GridMap) -> StoredModel:
    if not path.exists():
        raise ConfigError(f"model file {path} does not exist (run 'train' first)")
    return load_model(path, grid=grid)


def _cmd_sweep_l(args: argparse.Namespace) -> int:
    config = config_from_args(args, lengths="evaluation.cell_lengths")
    manifest, train, test = load_records(config)
    table = l_sweep(
        train,
        test,
        manifest,
        config.evaluation.cell_lengths,
        config.train,
        split_mode=config.split.mode,
        fractions=config.split.fractions,
        origin=config.grid.origin,
    )
    write_table_csv(table, ensure_run_dir(config) / "l_sweep.csv", config.audit())
    return 0


def _cmd_sweep_noise(args: argparse.Namespace) -> int:
    config = config_from_args(args, magnitudes="evaluation.noise_magnitudes")
    prepared = prepare_run(config)
    path = Path(args.model) if args.model else model_path(prepared.run_dir, "f32")
    model = _load_model_file(path, prepared.split.grid)
    table = noise_sweep(
        model,
        prepared.split.test,
        prepared.split.grid,
        prepared.manifest,
        config.evaluation.noise_magnitudes,
        config.evaluation.noise_seeds,
    )
    write_table_csv(table, prepared.run_dir / f"noise_sweep_{model.precision}.csv", config.audit())
    return 0


def _cmd_bench(args: argparse.Namespace) -> int:
    config = config_from_args(args, repetitions="evaluation.bench_repetitions")
    prepared = prepare_run(config)
    model = _load_model_file(model_path(prepared.run_dir, "f32"), prepared.split.grid)
    if not isinstance(model, CaeCnnLocModel):
        raise ConfigError("bench needs the float32 model as its reference")
    table = quant_sweep(
        model,
        prepared.split.test,
        prepared.manifest,
        repetitions=config.evaluation.bench_repetitions,
    )
    write_table_csv(table, prepared.run_dir / "quant_sweep.csv", config.audit())
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("sweep-l", help="train and evaluate once per cell length")
    add_run_arguments(parser)
    parser.add_argument("--lengths", type=float, nargs="+", default=None, help="sets evaluation.cell_lengths")
    parser.set_defaults(handler=_cmd_sweep_l)

    parser = subparsers.add_parser("sweep-noise", help="evaluate under uniform RSSI noise")
    add_run_arguments(parser)
    parser.add_argument("--model", default=None)
    parser.add_argument("--magnitudes", type=float, nargs="+", default=None, help="sets evaluation.noise_magnitudes")
    parser.set_defaults(handler=_cmd_sweep_noise)

    parser = subparsers.add_parser("bench", help="size, accuracy and host latency per precision")
    add_run_arguments(parser)
    parser.add_argument("--repetitions", type=int, default=None, help="sets evaluation.bench_repetitions")
    parser.set_defaults(handler=_cmd_bench)
