"""Localization metrics, noise injection and experiment sweeps."""

from __future__ import annotations

import json
import logging
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from app.errors import EmptyInputError, ModelMismatchError
from app.services.benchmark import LatencyStats, latency_bench
from app.services.datasets import DatasetManifest, FingerprintRecord, rssi_matrix, to_radio_images
from app.services.gridding import NO_BUILDING, GridConfig, GridMap, count_unmapped, label_records, make_split
from app.services.model import CaeCnnLocModel, Localizer, TrainConfig, predict_batch
from app.services.quantization import quantize_f16, quantize_int8
from app.services.storage import payload_bytes, serialized_size
from app.services.training import fit_split
from app.utils import canonical_json

logger = logging.getLogger(__name__)

NOISE_MAGNITUDES = (0.0, 3.0, 5.0, 7.0, 10.0)


class EvalReport(BaseModel):
    label: str = ""
    sample_count: int = Field(ge=0)
    building_hitrate: float = Field(ge=0, le=1)
    floor_hitrate: float = Field(ge=0, le=1)
    mean_error: float = Field(ge=0)
    error_p50: float = Field(ge=0)
    error_p75: float = Field(ge=0)
    error_p95: float = Field(ge=0)
    unmapped_count: int = Field(default=0, ge=0)
    class_count: int | None = None
    size_bytes: dict[str, int] = Field(default_factory=dict)
    latency: dict[str, LatencyStats] = Field(default_factory=dict)


class NoiseSpec(BaseModel):
    magnitude: float = Field(default=0.0, ge=0)
    distribution: Literal["uniform"] = "uniform"
    seed: int = 0


def count_unmapped_optional(records: list[FingerprintRecord], grid: GridMap | None) -> int:
    return 0 if grid is None else count_unmapped(records, grid)


def score_predictions(
    records: list[FingerprintRecord],
    buildings: np.ndarray,
    floors: np.ndarray,
    positions: np.ndarray,
    *,
    unmapped: int = 0,
    label: str = "",
    class_count: int | None = None,
) -> EvalReport:
    """Hitrates and Euclidean error of predicted labels/positions against the records."""
    if not records:
        raise EmptyInputError("cannot score an empty test set")
    true_buildings = np.array([NO_BUILDING if r.building is None else r.building for r in records])
    true_floors = np.array([r.floor for r in records])
    truth = np.array([(r.x, r.y) for r in records], dtype=np.float64)
    errors = np.hypot(*(truth - np.asarray(positions, dtype=np.float64)).T)
    p50, p75, p95 = np.percentile(errors, [50, 75, 95])
    return EvalReport(
        label=label,
        sample_count=len(records),
        building_hitrate=float(np.mean(np.asarray(buildings) == true_buildings)),
        floor_hitrate=float(np.mean(np.asarray(floors) == true_floors)),
        mean_error=float(errors.mean()),
        error_p50=float(p50),
        error_p75=float(max(p75, p50)),
        error_p95=float(max(p95, p75, p50)),
        unmapped_count=unmapped,
        class_count=class_count,
    )


def evaluate(
    localizer: Localizer,
    records: list[FingerprintRecord],
    grid: GridMap,
    manifest: DatasetManifest,
    *,
    label: str = "",
) -> EvalReport:
    """
    Predict every record (unmapped ones included) and score against its exact position.
    """
    if not records:
        raise EmptyInputError("evaluate needs at least one test record")
    if grid.fingerprint() != localizer.grid.fingerprint():
        raise ModelMismatchError("evaluation grid differs from the grid the model was trained on")
    batch = predict_batch(localizer, to_radio_images(records, manifest))
    report = score_predictions(
        records,
        batch.buildings,
        batch.floors,
        batch.centroids,
        unmapped=count_unmapped(records, grid),
        label=label or getattr(localizer, "precision", ""),
        class_count=grid.class_count,
    )
    logger.info(
        "%s: mean error %.3f m, building %.4f, floor %.4f, %d unmapped of %d",
        report.label or "evaluate", report.mean_error, report.building_hitrate,
        report.floor_hitrate, report.unmapped_count, report.sample_count,
    )
    return report


def oracle_report(records: list[FingerprintRecord], grid: GridMap) -> EvalReport:
    """Perfect classifier: each mapped record predicts its own cell. Unmapped records are skipped."""
    classes = label_records(records, grid)
    mapped = [(record, cls) for record, cls in zip(records, classes) if cls is not None]
    if not mapped:
        raise EmptyInputError("no test record falls inside a known cell")
    kept = [record for record, _ in mapped]
    ids = np.array([cls for _, cls in mapped], dtype=np.int64)
    return score_predictions(
        kept,
        grid.buildings()[ids],
        grid.floors()[ids],
        grid.centroids()[ids],
        unmapped=len(records) - len(kept),
        label="oracle",
        class_count=grid.class_count,
    )


def inject_noise(
    records: list[FingerprintRecord],
    spec: NoiseSpec,
    manifest: DatasetManifest,
) -> list[FingerprintRecord]:
    """Add i.i.d. uniform dBm noise to every detected AP, clamped to [rssi_min, 0]."""
    if spec.magnitude == 0 or not records:
        return list(records)
    raw = rssi_matrix(records)
    rng = np.random.default_rng(spec.seed)
    noise = rng.uniform(-spec.magnitude, spec.magnitude, size=raw.shape)
    detected = raw <= 0
    noisy = np.where(detected, np.clip(raw + noise, manifest.rssi_min, 0.0), raw)
    return [record.with_rssi(row) for record, row in zip(records, noisy)]


def noise_sweep(
    localizer: Localizer,
    records: list[FingerprintRecord],
    grid: GridMap,
    manifest: DatasetManifest,
    magnitudes: Sequence[float] = NOISE_MAGNITUDES,
    seeds: Sequence[int] = (0, 1, 2, 3, 4),
) -> pd.DataFrame:
    """One row per magnitude, metrics averaged over the seeds."""
    rows = []
    for magnitude in magnitudes:
        reports = [
            evaluate(localizer, inject_noise(records, NoiseSpec(magnitude=magnitude, seed=seed), manifest),
                     grid, manifest, label=f"noise {magnitude:g} dBm seed {seed}")
            for seed in seeds
        ]
        errors = [r.mean_error for r in reports]
        rows.append({
            "magnitude_dbm": float(magnitude),
            "seeds": len(reports),
            "mean_error": float(np.mean(errors)),
            "mean_error_std": float(np.std(errors)),
            "building_hitrate": float(np.mean([r.building_hitrate for r in reports])),
            "floor_hitrate": float(np.mean([r.floor_hitrate for r in reports])),
        })
    return pd.DataFrame(rows)


def quant_sweep(
    model: CaeCnnLocModel,
    records: list[FingerprintRecord],
    manifest: DatasetManifest,
    *,
    repetitions: int = 100,
) -> pd.DataFrame:
    """Size, accuracy and host latency of the float32, float16 and int8 variants."""
    variants: dict[str, Localizer] = {"f32": model, "f16": quantize_f16(model), "i8": quantize_int8(model)}
    images = to_radio_images(records, manifest)
    base_payload = payload_bytes(model)
    rows = []
    for precision, variant in variants.items():
        report = evaluate(variant, records, model.grid, manifest, label=precision)
        stats = latency_bench(variant, images, repetitions)
        payload = payload_bytes(variant)
        rows.append({
            "precision": precision,
            "file_bytes": serialized_size(variant),
            "payload_bytes": payload,
            "payload_ratio": payload / base_payload,
            "mean_error": report.mean_error,
            "building_hitrate": report.building_hitrate,
            "floor_hitrate": report.floor_hitrate,
            "latency_median_us": stats.median_us,
            "latency_p95_us": stats.p95_us,
        })
    return pd.DataFrame(rows)


def l_sweep(
    train: list[FingerprintRecord],
    test: list[FingerprintRecord],
    manifest: DatasetManifest,
    cell_lengths: Sequence[float],
    cfg: TrainConfig,
    *,
    split_mode: str = "original",
    fractions: tuple[float, float, float] = (0.7, 0.1, 0.2),
    origin: tuple[float, float] | None = None,
) -> pd.DataFrame:
    """Full prepare -> train -> evaluate cycle per cell length; columns follow the class-count table."""
    rows = []
    for length in cell_lengths:
        config = GridConfig(cell_length=length, origin=origin)
        split = make_split(train, test, config, split_mode,
                           fractions=fractions, val_fraction=cfg.val_fraction, seed=cfg.seed)
        model, _ = fit_split(split, manifest, cfg)
        report = evaluate(model, split.test, split.grid, manifest, label=f"L={length:g}")
        rows.append({
            "cell_length": float(length),
            "class_count": split.grid.class_count,
            "mean_error": report.mean_error,
            "building_hitrate": report.building_hitrate,
            "floor_hitrate": report.floor_hitrate,
            "unmapped_count": report.unmapped_count,
            "f32_bytes": serialized_size(model),
            "i8_bytes": serialized_size(quantize_int8(model)),
        })
    return pd.DataFrame(rows)


def write_report_json(report: EvalReport | dict[str, Any], path: str | Path, run_config: dict[str, Any]) -> None:
    payload = report.model_dump(mode="json") if isinstance(report, EvalReport) else dict(report)
    payload["run_config"] = run_config
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    logger.info("Wrote report %s", path)


def read_report_json(path: str | Path) -> tuple[EvalReport, dict[str, Any]]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    run_config = payload.pop("run_config", {})
    return EvalReport.model_validate(payload), run_config


def write_table_csv(frame: pd.DataFrame, path: str | Path, run_config: dict[str, Any]) -> None:
    """CSV with a leading '# run_config: {...}' line; read back with pd.read_csv(comment='#')."""
    with Path(path).open("w", encoding="utf-8", newline="") as handle:
        handle.write(f"# run_config: {canonical_json(run_config)}\n")
        frame.to_csv(handle, index=False, lineterminator="\n")
    logger.info("Wrote table %s (%d rows)", path, len(frame))
