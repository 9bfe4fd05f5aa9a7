from __future__ import annotations

import argparse
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, Field, field_validator, model_validator

from .config import settings
from .errors import ConfigError
from .services.datasets import UJIINDOORLOC, DatasetManifest, FingerprintRecord, load_dataset, load_manifest
from .services.gridding import DEFAULT_FRACTIONS, GridConfig, SplitResult, make_split
from .services.model import TrainConfig
from .utils import canonical_json, sha256_hex, slugify

PRESETS = {"ujiindoorloc": UJIINDOORLOC}
Precision = Literal["f32", "f16", "i8"]
# Top-level RunConfig keys that are recorded in artifacts but do not select the run directory.
EVALUATION_ONLY_KEYS = ("evaluation", "precisions")


class DatasetSection(BaseModel):
    train_csv: str
    test_csv: str
    # Either a JSON manifest path or a built-in preset name.
    manifest: str | None = None
    preset: Literal["ujiindoorloc"] | None = None

    @model_validator(mode="after")
    def _one_manifest_source(self) -> "DatasetSection":
        if (self.manifest is None) == (self.preset is None):
            raise ValueError("dataset needs exactly one of 'manifest' or 'preset'")
        return self


class SplitSection(BaseModel):
    mode: Literal["original", "combined"] = "original"
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS


class EvaluationSection(BaseModel):
    cell_lengths: list[float] = Field(default_factory=lambda: [1, 3, 5, 7, 10, 20, 30, 50])
    noise_magnitudes: list[float] = Field(default_factory=lambda: [0, 3, 5, 7, 10])
    noise_seeds: list[int] = Field(default_factory=lambda: [0, 1, 2, 3, 4])
    knn_k: int = Field(default=3, ge=1)
    knn_weighting: Literal["uniform", "inverse-distance"] = "uniform"
    bench_repetitions: int = Field(default=100, ge=30)

    @field_validator("cell_lengths")
    @classmethod
    def _positive_lengths(cls, values: list[float]) -> list[float]:
        if not values or any(v <= 0 for v in values):
            raise ValueError("cell_lengths must be a non-empty list of positive lengths")
        return values


class RunConfig(BaseModel):
    """Everything one pipeline run depends on; embedded in every artifact it writes."""

    run_name: str = "localizer"
    seed: int
    dataset: DatasetSection
    grid: GridConfig = Field(default_factory=lambda: GridConfig(cell_length=7.0))
    split: SplitSection = Field(default_factory=SplitSection)
    train: TrainConfig = Field(default_factory=TrainConfig)
    evaluation: EvaluationSection = Field(default_factory=EvaluationSection)
    precisions: list[Precision] = Field(default_factory=lambda: ["f32", "i8"])
    output_dir: str | None = None

    @model_validator(mode="after")
    def _single_seed(self) -> "RunConfig":
        # The run seed drives training too, so there is one number to report.
        if self.train.seed != self.seed:
            self.train = self.train.model_copy(update={"seed": self.seed})
        if "f32" not in self.precisions:
            self.precisions = ["f32", *self.precisions]
        return self

    def audit(self) -> dict[str, Any]:
        return self.model_dump(mode="json")

    def digest(self) -> str:
        return sha256_hex(canonical_json(self.audit()))

    def run_key(self) -> str:
        """Digest of the keys that shape the trained model; evaluation settings and precisions share a run."""
        return sha256_hex(canonical_json(self.model_dump(mode="json", exclude=set(EVALUATION_ONLY_KEYS))))

    def run_dir(self) -> Path:
        root = Path(self.output_dir or settings.output_root)
        return root / f"{slugify(self.run_name)}-{self.run_key()[:10]}"

    def manifest(self) -> DatasetManifest:
        if self.dataset.preset is not None:
            return PRESETS[self.dataset.preset]
        return load_manifest(resolve_data_path(self.dataset.manifest))


def resolve_data_path(value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else Path(settings.data_dir) / path


def _parse_value(text: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_override(payload: dict[str, Any], assignment: str) -> None:
    """Apply 'section.key=value' (value parsed as JSON, else kept as a string)."""
    key, sep, raw = assignment.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    set_key(payload, key, _parse_value(raw))


def set_key(payload: dict[str, Any], key: str, value: Any) -> None:
    parts = key.split(".")
    node = payload
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"override {key!r}: {part!r} is not a section")
        node = child
    node[parts[-1]] = value


def load_run_config(
    path: str | Path,
    overrides: list[str] | None = None,
    *,
    seed: int | None = None,
    output_dir: str | None = None,
    updates: dict[str, Any] | None = None,
) -> RunConfig:
    """Read the JSON config, then apply --set overrides and flag updates (dotted key -> value)."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"run config {path} does not exist")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"run config {path} is not valid JSON: {exc}") from exc
    for assignment in overrides or []:
        apply_override(payload, assignment)
    for key, value in (updates or {}).items():
        set_key(payload, key, value)
    if seed is not None:
        payload["seed"] = seed
    if output_dir is not None:
        payload["output_dir"] = output_dir

    config = RunConfig.model_validate(payload)
    for value in (config.dataset.train_csv, config.dataset.test_csv, config.dataset.manifest):
        if value is not None and not resolve_data_path(value).exists():
            raise ConfigError(f"referenced file {resolve_data_path(value)} does not exist")
    return config


def load_records(config: RunConfig) -> tuple[DatasetManifest, list[FingerprintRecord], list[FingerprintRecord]]:
    manifest = config.manifest()
    train = load_dataset(resolve_data_path(config.dataset.train_csv), manifest)
    test = load_dataset(resolve_data_path(config.dataset.test_csv), manifest)
    return manifest, train, test


def split_records(config: RunConfig, train: list[FingerprintRecord], test: list[FingerprintRecord]) -> SplitResult:
    return make_split(
        train,
        test,
        config.grid,
        config.split.mode,
        fractions=config.split.fractions,
        val_fraction=config.train.val_fraction,
        seed=config.seed,
    )


def ensure_run_dir(config: RunConfig) -> Path:
    run_dir = config.run_dir()
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def add_run_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="run config JSON file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config key (repeatable)")
    parser.add_argument("--seed", type=int, default=None, help="override the run seed")
    parser.add_argument("--output-dir", default=None, help="override the output directory")


def config_from_args(args: argparse.Namespace, **flag_keys: str) -> RunConfig:
    """flag_keys maps a command's own flags (argparse dest) to the config key each one overrides."""
    updates = {key: getattr(args, dest) for dest, key in flag_keys.items() if getattr(args, dest) is not None}
    return load_run_config(args.config, args.overrides, seed=args.seed, output_dir=args.output_dir, updates=updates)
