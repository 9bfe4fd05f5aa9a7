"""Fingerprint ingestion, RSSI normalization and radio-image construction.

Two on-disk layouts are described by the same `DatasetManifest`:
- UJIIndoorLoc CSV: WAP001..WAP520, LONGITUDE, LATITUDE, FLOOR, BUILDINGID
- generic CSV: rssi_0..rssi_{N-1}, x, y, floor, [building] plus a JSON manifest
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, model_validator

from app.errors import DataValidationError, ParseError, SchemaError

logger = logging.getLogger(__name__)


class DatasetManifest(BaseModel):
    name: str = Field(min_length=1)
    ap_count: int = Field(ge=1)
    rssi_min: int = Field(lt=0)
    no_signal_sentinel: int = 100
    rssi_column_format: str = "rssi_{}"
    rssi_column_start: int = 0
    x_column: str = "x"
    y_column: str = "y"
    floor_column: str = "floor"
    building_column: str | None = "building"

    @model_validator(mode="after")
    def _sentinel_outside_range(self) -> "DatasetManifest":
        if self.rssi_min <= self.no_signal_sentinel <= 0:
            raise ValueError("no_signal_sentinel must lie outside [rssi_min, 0]")
        return self

    def rssi_columns(self) -> list[str]:
        return [
            self.rssi_column_format.format(self.rssi_column_start + i)
            for i in range(self.ap_count)
        ]

    def label_columns(self) -> list[str]:
        columns = [self.x_column, self.y_column, self.floor_column]
        if self.building_column:
            columns.append(self.building_column)
        return columns


UJIINDOORLOC = DatasetManifest(
    name="UJIIndoorLoc",
    ap_count=520,
    rssi_min=-104,
    no_signal_sentinel=100,
    rssi_column_format="WAP{:03d}",
    rssi_column_start=1,
    x_column="LONGITUDE",
    y_column="LATITUDE",
    floor_column="FLOOR",
    building_column="BUILDINGID",
)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Read a JSON manifest file holding DatasetManifest fields."""
    return DatasetManifest.model_validate_json(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True, eq=False)
class FingerprintRecord:
    """One scan: raw dBm vector (sentinel allowed) plus exact position and labels."""

    rssi: np.ndarray
    x: float
    y: float
    floor: int
    building: int | None = None

    def with_rssi(self, rssi: np.ndarray) -> "FingerprintRecord":
        return FingerprintRecord(rssi=rssi, x=self.x, y=self.y, floor=self.floor, building=self.building)


@dataclass(frozen=True, eq=False)
class RadioImage:
    side: int
    pixels: np.ndarray
    pad_count: int


def _is_sentinel(raw: np.ndarray | float) -> np.ndarray | bool:
    # Any positive reading is the "no signal" code; valid dBm never exceed 0.
    return np.asarray(raw) > 0


def validate_rssi(rssi: np.ndarray, manifest: DatasetManifest, *, row_index: int | None = None) -> None:
    values = np.asarray(rssi, dtype=np.float64)
    if values.shape != (manifest.ap_count,):
        raise DataValidationError(
            f"expected {manifest.ap_count} RSSI values, got shape {values.shape}")
    bad = ~((values == manifest.no_signal_sentinel) | ((values >= manifest.rssi_min) & (values <= 0)))
    if bad.any():
        position = int(np.flatnonzero(bad)[0])
        where = f"row {row_index}, " if row_index is not None else ""
        raise DataValidationError(
            f"{where}AP {position}: {values[position]} outside [{manifest.rssi_min}, 0] "
            f"and not the sentinel {manifest.no_signal_sentinel}")


def load_dataset(path: str | Path, manifest: DatasetManifest) -> list[FingerprintRecord]:
    """Read one CSV into records, preserving row order and raw values."""
    frame = pd.read_csv(path, header=0, dtype=str, keep_default_na=False)

    rssi_columns = manifest.rssi_columns()
    missing = [column for column in rssi_columns + manifest.label_columns() if column not in frame.columns]
    if missing:
        preview = ", ".join(missing[:5])
        raise SchemaError(f"{path}: missing {len(missing)} column(s): {preview}")

    rssi = _numeric_block(frame, rssi_columns)
    labels = _numeric_block(frame, manifest.label_columns())

    records: list[FingerprintRecord] = []
    for row_index in range(len(frame)):
        row = rssi[row_index]
        validate_rssi(row, manifest, row_index=row_index)
        row.flags.writeable = False
        x, y, floor = labels[row_index, 0], labels[row_index, 1], labels[row_index, 2]
        building = int(labels[row_index, 3]) if manifest.building_column else None
        records.append(FingerprintRecord(rssi=row, x=float(x), y=float(y), floor=int(floor), building=building))

    logger.info("Loaded %d records from %s (%s, %d APs)", len(records), path, manifest.name, manifest.ap_count)
    return records


def _numeric_block(frame: pd.DataFrame, columns: list[str]) -> np.ndarray:
    block = frame[columns].apply(pd.to_numeric, errors="coerce")
    invalid = block.isna().to_numpy()
    if invalid.any():
        row_index, column_index = (int(i[0]) for i in np.nonzero(invalid))
        column = columns[column_index]
        raise ParseError(row_index, column, frame[column].iloc[row_index])
    return block.to_numpy(dtype=np.float64).copy()


def normalize_rssi(raw: float, rssi_min: float) -> float:
    """Map one dBm reading into [0, 1]; sentinel (positive) readings map to 0."""
    if rssi_min >= 0:
        raise DataValidationError("rssi_min must be negative")
    if raw > 0:
        return 0.0
    if raw < rssi_min:
        raise DataValidationError(f"measurement {raw} below rssi_min {rssi_min}")
    return float(min(max((raw - rssi_min) / -rssi_min, 0.0), 1.0))


def normalize_rssi_array(raw: np.ndarray, rssi_min: float) -> np.ndarray:
    """Vectorized normalize_rssi with the same sentinel and range rules."""
    if rssi_min >= 0:
        raise DataValidationError("rssi_min must be negative")
    values = np.asarray(raw, dtype=np.float64)
    sentinel = _is_sentinel(values)
    if (values[~sentinel] < rssi_min).any():
        raise DataValidationError(f"measurement below rssi_min {rssi_min}")
    normalized = np.clip((values - rssi_min) / -rssi_min, 0.0, 1.0)
    return np.where(sentinel, 0.0, normalized)


def image_side(ap_count: int) -> int:
    """Smallest side whose square holds every AP."""
    return math.isqrt(ap_count - 1) + 1 if ap_count > 0 else 0


def to_radio_image(record: FingerprintRecord, manifest: DatasetManifest) -> RadioImage:
    side = image_side(manifest.ap_count)
    pad_count = side * side - manifest.ap_count
    flat = np.zeros(side * side, dtype=np.float64)
    flat[: manifest.ap_count] = normalize_rssi_array(record.rssi, manifest.rssi_min)
    # Row-major reshape; pads occupy the trailing pixels.
    return RadioImage(side=side, pixels=flat.reshape(side, side), pad_count=pad_count)


def rssi_matrix(records: list[FingerprintRecord]) -> np.ndarray:
    if not records:
        return np.zeros((0, 0), dtype=np.float64)
    return np.stack([record.rssi for record in records]).astype(np.float64)


def to_radio_images(records: list[FingerprintRecord], manifest: DatasetManifest) -> np.ndarray:
    """Batch form of to_radio_image: float32 array shaped (N, side, side, 1)."""
    side = image_side(manifest.ap_count)
    batch = np.zeros((len(records), side * side), dtype=np.float32)
    if records:
        batch[:, : manifest.ap_count] = normalize_rssi_array(rssi_matrix(records), manifest.rssi_min)
    return batch.reshape(len(records), side, side, 1)
