"""(Weighted) k-nearest-neighbour fingerprint matching baseline."""

from __future__ import annotations

import logging
from collections import Counter
from typing import Literal

import numpy as np
from sklearn.neighbors import NearestNeighbors

from app.errors import ConfigError, EmptyInputError
from app.services.datasets import DatasetManifest, FingerprintRecord, normalize_rssi_array, rssi_matrix
from app.services.evaluation import EvalReport, count_unmapped_optional, score_predictions
from app.services.gridding import NO_BUILDING, GridMap

logger = logging.getLogger(__name__)

Weighting = Literal["uniform", "inverse-distance"]


def _vote(labels: np.ndarray) -> int:
    # labels are ordered nearest first, so the first tied label is the nearest one.
    counts = Counter(labels.tolist())
    best = max(counts.values())
    return next(int(label) for label in labels if counts[label] == best)


def _position(distances: np.ndarray, positions: np.ndarray, weighting: Weighting) -> np.ndarray:
    if weighting == "uniform":
        return positions.mean(axis=0)
    exact = distances == 0
    if exact.any():
        return positions[exact].mean(axis=0)
    weights = 1.0 / distances
    return (weights[:, None] * positions).sum(axis=0) / weights.sum()


def knn_baseline(
    train: list[FingerprintRecord],
    test: list[FingerprintRecord],
    manifest: DatasetManifest,
    k: int = 1,
    weighting: Weighting = "uniform",
    *,
    grid: GridMap | None = None,
) -> EvalReport:
    """
    Euclidean neighbours in normalized RSSI space.

    Position is the (inverse-distance weighted) mean of the neighbours' exact
    positions; building and floor go to the neighbour majority.
    """
    if k < 1:
        raise ConfigError("k must be at least 1")
    if k > len(train):
        raise ConfigError(f"k={k} exceeds the {len(train)} training records")
    if weighting not in ("uniform", "inverse-distance"):
        raise ConfigError(f"unknown weighting {weighting!r}")
    if not test:
        raise EmptyInputError("knn_baseline needs at least one test record")

    features = normalize_rssi_array(rssi_matrix(train), manifest.rssi_min)
    queries = normalize_rssi_array(rssi_matrix(test), manifest.rssi_min)
    index = NearestNeighbors(n_neighbors=k, algorithm="brute", metric="euclidean").fit(features)
    distances, neighbours = index.kneighbors(queries)

    positions = np.array([(r.x, r.y) for r in train], dtype=np.float64)
    buildings = np.array([NO_BUILDING if r.building is None else r.building for r in train], dtype=np.int64)
    floors = np.array([r.floor for r in train], dtype=np.int64)

    predicted_positions = np.array(
        [_position(d, positions[n], weighting) for d, n in zip(distances, neighbours)])
    predicted_buildings = np.array([_vote(buildings[n]) for n in neighbours], dtype=np.int64)
    predicted_floors = np.array([_vote(floors[n]) for n in neighbours], dtype=np.int64)

    report = score_predictions(
        test,
        predicted_buildings,
        predicted_floors,
        predicted_positions,
        unmapped=count_unmapped_optional(test, grid),
        label=f"knn k={k} {weighting}",
    )
    logger.info("KNN k=%d (%s): mean error %.3f m", k, weighting, report.mean_error)
    return report
