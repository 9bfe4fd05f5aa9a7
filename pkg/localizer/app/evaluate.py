from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .errors import ConfigError, EmptyInputError
from .prepare import prepare_run
from .run_config import add_run_arguments, config_from_args
from .services.datasets import load_dataset, to_radio_image
from .services.evaluation import evaluate, oracle_report, write_report_json
from .services.knn import knn_baseline
from .services.model import predict
from .services.storage import load_model
from .train import model_path

logger = logging.getLogger(__name__)


def _cmd_evaluate(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    prepared = prepare_run(config)
    grid, audit = prepared.split.grid, config.audit()

    if args.model:
        paths = [Path(args.model)]
    else:
        paths = [model_path(prepared.run_dir, p) for p in config.precisions]
    missing = [str(p) for p in paths if not p.exists()]
    if missing:
        raise ConfigError(f"model file(s) not found: {', '.join(missing)} (run 'train' first)")

    for path in paths:
        model = load_model(path, grid=grid)
        report = evaluate(model, prepared.split.test, grid, prepared.manifest, label=model.precision)
        report.size_bytes = {model.precision: path.stat().st_size}
        write_report_json(report, prepared.run_dir / f"report_{model.precision}.json", audit)

    write_report_json(oracle_report(prepared.split.test, grid), prepared.run_dir / "report_oracle.json", audit)
    return 0


def _cmd_knn(args: argparse.Namespace) -> int:
    config = config_from_args(args, k="evaluation.knn_k", weighting="evaluation.knn_weighting")
    prepared = prepare_run(config)
    k, weighting = config.evaluation.knn_k, config.evaluation.knn_weighting
    report = knn_baseline(
        prepared.split.train + prepared.split.val,
        prepared.split.test,
        prepared.manifest,
        k,
        weighting,
        grid=prepared.split.grid,
    )
    write_report_json(report, prepared.run_dir / f"report_knn_k{k}_{weighting}.json", config.audit())
    return 0


def _cmd_predict(args: argparse.Namespace) -> int:
    config = config_from_args(args)
    manifest = config.manifest()
    path = Path(args.model) if args.model else model_path(config.run_dir(), "f32")
    if not path.exists():
        raise ConfigError(f"model file {path} does not exist")
    model = load_model(path)

    records = load_dataset(args.row, manifest)
    if not 0 <= args.index < len(records):
        raise EmptyInputError(f"{args.row} has no data row {args.index}")
    prediction = predict(model, to_radio_image(records[args.index], manifest))
    x, y = prediction.centroid
    print(
        f"class={prediction.class_id} building={prediction.building} floor={prediction.floor} "
        f"x={x:.3f} y={y:.3f} probability={prediction.probability:.4f}"
    )
    return 0


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("evaluate", help="score model files on the test split")
    add_run_arguments(parser)
    parser.add_argument("--model", default=None, help="single model file (default: every configured precision)")
    parser.set_defaults(handler=_cmd_evaluate)

    parser = subparsers.add_parser("knn", help="k-nearest-neighbour baseline report")
    add_run_arguments(parser)
    parser.add_argument("--k", type=int, default=None, help="sets evaluation.knn_k")
    parser.add_argument("--weighting", choices=["uniform", "inverse-distance"], default=None,
                        help="sets evaluation.knn_weighting")
    parser.set_defaults(handler=_cmd_knn)

    parser = subparsers.add_parser("predict", help="predict one CSV row")
    add_run_arguments(parser)
    parser.add_argument("--model", default=None, help="model file (default: the run's model_f32.cnlc)")
    parser.add_argument("--row", required=True, help="CSV file in the dataset layout")
    parser.add_argument("--index", type=int, default=0, help="data row to predict (default 0)")
    parser.set_defaults(handler=_cmd_predict)
