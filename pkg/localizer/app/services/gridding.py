"""Region gridding: exact positions -> joint (building, floor, cell) classes.

Cells are half-open squares [x0 + ix*L, x0 + (ix+1)*L) x [y0 + iy*L, y0 + (iy+1)*L)
per (building, floor). Only occupied cells become classes; class ids follow
lexicographic (building, floor, ix, iy) order.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import BaseModel, Field
from sklearn.model_selection import train_test_split

from app.errors import ConfigError, EmptyInputError
from app.services.datasets import FingerprintRecord
from app.utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

CellKey = tuple[int, int, int, int]
# Records without a building column all live in building 0.
NO_BUILDING = 0
FRACTION_TOLERANCE = 1e-9
DEFAULT_FRACTIONS = (0.70, 0.10, 0.20)


class GridConfig(BaseModel):
    cell_length: float = Field(gt=0)
    # None -> per-dataset minimum (x, y) so every index is non-negative.
    origin: tuple[float, float] | None = None


@dataclass(frozen=True)
class GridCell:
    building: int
    floor: int
    ix: int
    iy: int
    centroid: tuple[float, float]
    class_id: int
    member_count: int


@dataclass(frozen=True)
class GridMap:
    config: GridConfig
    origin: tuple[float, float]
    cells: tuple[GridCell, ...]

    def __post_init__(self) -> None:
        lookup = {(c.building, c.floor, c.ix, c.iy): c.class_id for c in self.cells}
        object.__setattr__(self, "_lookup", lookup)

    @property
    def class_count(self) -> int:
        return len(self.cells)

    @property
    def lookup(self) -> dict[CellKey, int]:
        return self._lookup  # type: ignore[attr-defined]

    def cell_key(self, record: FingerprintRecord) -> CellKey:
        length = self.config.cell_length
        ix = math.floor((record.x - self.origin[0]) / length)
        iy = math.floor((record.y - self.origin[1]) / length)
        building = record.building if record.building is not None else NO_BUILDING
        return building, record.floor, ix, iy

    def centroids(self) -> np.ndarray:
        return np.array([cell.centroid for cell in self.cells], dtype=np.float64).reshape(-1, 2)

    def buildings(self) -> np.ndarray:
        return np.array([cell.building for cell in self.cells], dtype=np.int64)

    def floors(self) -> np.ndarray:
        return np.array([cell.floor for cell in self.cells], dtype=np.int64)

    def to_dict(self) -> dict[str, Any]:
        return {
            "config": self.config.model_dump(mode="json"),
            "origin": list(self.origin),
            "cells": [
                {
                    "building": c.building,
                    "floor": c.floor,
                    "ix": c.ix,
                    "iy": c.iy,
                    "centroid": list(c.centroid),
                    "class_id": c.class_id,
                    "member_count": c.member_count,
                }
                for c in self.cells
            ],
        }

    def to_json(self, extra: dict[str, Any] | None = None) -> str:
        payload = self.to_dict()
        if extra:
            payload.update(extra)
        return json.dumps(payload, sort_keys=True, indent=1)

    def fingerprint(self) -> str:
        """sha256 of the canonical grid payload; models record it to detect mismatches."""
        return sha256_hex(canonical_json(self.to_dict()))

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> "GridMap":
        cells = tuple(
            GridCell(
                building=int(c["building"]),
                floor=int(c["floor"]),
                ix=int(c["ix"]),
                iy=int(c["iy"]),
                centroid=(float(c["centroid"][0]), float(c["centroid"][1])),
                class_id=int(c["class_id"]),
                member_count=int(c["member_count"]),
            )
            for c in payload["cells"]
        )
        origin = payload["origin"]
        return cls(
            config=GridConfig.model_validate(payload["config"]),
            origin=(float(origin[0]), float(origin[1])),
            cells=cells,
        )

    @classmethod
    def from_json(cls, text: str) -> "GridMap":
        return cls.from_dict(json.loads(text))


def save_grid(grid: GridMap, path: str | Path, extra: dict[str, Any] | None = None) -> None:
    Path(path).write_text(grid.to_json(extra), encoding="utf-8")


def load_grid(path: str | Path) -> GridMap:
    return GridMap.from_json(Path(path).read_text(encoding="utf-8"))


def _resolve_origin(records: list[FingerprintRecord], config: GridConfig) -> tuple[float, float]:
    if config.origin is not None:
        return float(config.origin[0]), float(config.origin[1])
    return min(r.x for r in records), min(r.y for r in records)


def build_grid(records: list[FingerprintRecord], config: GridConfig) -> GridMap:
    """Group records into occupied cells; centroid = mean member position."""
    if not records:
        raise EmptyInputError("build_grid needs at least one record")
    for index, record in enumerate(records):
        if not (math.isfinite(record.x) and math.isfinite(record.y)):
            raise EmptyInputError(f"record {index} has a non-finite position")

    origin = _resolve_origin(records, config)
    lookup = GridMap(config=config, origin=origin, cells=())

    members: dict[CellKey, list[tuple[float, float]]] = {}
    for record in records:
        members.setdefault(lookup.cell_key(record), []).append((record.x, record.y))

    cells: list[GridCell] = []
    for class_id, key in enumerate(sorted(members)):
        # Sorting member positions makes the float sum independent of input order.
        points = np.array(sorted(members[key]), dtype=np.float64)
        centroid = points.mean(axis=0)
        building, floor, ix, iy = key
        cells.append(
            GridCell(
                building=building,
                floor=floor,
                ix=ix,
                iy=iy,
                centroid=(float(centroid[0]), float(centroid[1])),
                class_id=class_id,
                member_count=len(points),
            )
        )

    logger.info("Grid L=%s: %d records -> %d classes", config.cell_length, len(records), len(cells))
    return GridMap(config=config, origin=origin, cells=tuple(cells))


def assign_class(record: FingerprintRecord, grid: GridMap) -> int | None:
    """Class of the record's cell, or None when that cell has no training members."""
    return grid.lookup.get(grid.cell_key(record))


def label_records(records: list[FingerprintRecord], grid: GridMap) -> list[int | None]:
    return [assign_class(record, grid) for record in records]


def count_unmapped(records: list[FingerprintRecord], grid: GridMap) -> int:
    return sum(1 for label in label_records(records, grid) if label is None)


def _validate_fractions(fractions: tuple[float, float, float]) -> None:
    if len(fractions) != 3 or any(f <= 0 for f in fractions):
        raise ConfigError("split fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > FRACTION_TOLERANCE:
        raise ConfigError(f"split fractions must sum to 1, got {sum(fractions)!r}")


@dataclass(frozen=True)
class SplitResult:
    train: list[FingerprintRecord]
    val: list[FingerprintRecord]
    test: list[FingerprintRecord]
    grid: GridMap
    # Positions into the source pool each split was drawn from.
    train_index: list[int]
    val_index: list[int]
    test_index: list[int]


def combined_split(
    train: list[FingerprintRecord],
    test: list[FingerprintRecord],
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
    config: GridConfig | None = None,
) -> SplitResult:
    """
    Pool both files, grid the union, then split with a seeded shuffle.

    Indices refer to the pooled list (train file rows first, then test file rows).
    Each class keeps at least one member in the training share.
    """
    _validate_fractions(fractions)
    pooled = list(train) + list(test)
    if not pooled:
        raise EmptyInputError("combined_split needs at least one record")

    grid = build_grid(pooled, config or GridConfig(cell_length=7.0))
    labels = label_records(pooled, grid)

    total = len(pooled)
    n_train = int(round(fractions[0] * total))
    n_val = int(round(fractions[1] * total))
    n_val = min(n_val, total - n_train)
    if grid.class_count > n_train:
        raise ConfigError(
            f"training share of {n_train} records cannot cover {grid.class_count} classes")

    order = np.random.default_rng(seed).permutation(total).tolist()

    first_of_class: dict[int, int] = {}
    for position in order:
        first_of_class.setdefault(labels[position], position)
    anchors = set(first_of_class.values())

    # Anchors take training slots first; the rest fill by shuffled order.
    train_index = [p for p in order if p in anchors]
    remaining = [p for p in order if p not in anchors]
    fill = n_train - len(train_index)
    train_index += remaining[:fill]
    rest = remaining[fill:]
    val_index = rest[:n_val]
    test_index = rest[n_val:]

    # Restore shuffled order inside the training share.
    rank = {p: i for i, p in enumerate(order)}
    train_index.sort(key=rank.__getitem__)

    logger.info(
        "Combined split (seed=%d): %d/%d/%d records, %d classes",
        seed, len(train_index), len(val_index), len(test_index), grid.class_count,
    )
    return SplitResult(
        train=[pooled[i] for i in train_index],
        val=[pooled[i] for i in val_index],
        test=[pooled[i] for i in test_index],
        grid=grid,
        train_index=train_index,
        val_index=val_index,
        test_index=test_index,
    )


def original_split(
    train: list[FingerprintRecord],
    test: list[FingerprintRecord],
    config: GridConfig,
    val_fraction: float = 0.1,
    seed: int = 0,
) -> SplitResult:
    """
    Grid the training file only; carve a seeded validation subset from it.

    Train/val indices refer to the training file, test indices to the test file.
    """
    if not 0 < val_fraction < 1:
        raise ConfigError("val_fraction must lie in (0, 1)")
    if not train:
        raise EmptyInputError("original_split needs training records")

    grid = build_grid(train, config)
    positions = list(range(len(train)))
    if len(train) < 2:
        train_index, val_index = positions, []
    else:
        train_index, val_index = train_test_split(positions, test_size=val_fraction, random_state=seed)
        train_index, val_index = list(train_index), list(val_index)
    test_index = list(range(len(test)))

    unmapped = count_unmapped(test, grid)
    logger.info(
        "Original split (seed=%d): %d/%d/%d records, %d classes, %d unmapped test points",
        seed, len(train_index), len(val_index), len(test_index), grid.class_count, unmapped,
    )
    return SplitResult(
        train=[train[i] for i in train_index],
        val=[train[i] for i in val_index],
        test=list(test),
        grid=grid,
        train_index=train_index,
        val_index=val_index,
        test_index=test_index,
    )


def make_split(
    train: list[FingerprintRecord],
    test: list[FingerprintRecord],
    config: GridConfig,
    mode: str = "original",
    *,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    val_fraction: float = 0.1,
    seed: int = 0,
) -> SplitResult:
    if mode == "original":
        return original_split(train, test, config, val_fraction=val_fraction, seed=seed)
    if mode == "combined":
        return combined_split(train, test, fractions=fractions, seed=seed, config=config)
    raise ConfigError(f"unknown split mode {mode!r} (expected 'original' or 'combined')")
