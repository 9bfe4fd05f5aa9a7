"""Generate a small synthetic fingerprint dataset (generic schema + manifest) for CI and demos.

Two buildings with two floors each; every (building, floor) hears its own access
points with log-distance path loss, the other floor of the same building hears
them attenuated, and everything too weak is reported as the no-signal sentinel.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np
import pandas as pd

AP_COUNT = 280
RSSI_MIN = -100
SENTINEL = 100
FLOOR_LOSS_DB = 15.0
AREA_M = 15.0
CELL_M = 5.0


def _rssi(points: np.ndarray, building: int, floor: int, aps: np.ndarray, groups: np.ndarray,
          rng: np.random.Generator) -> np.ndarray:
    distances = np.linalg.norm(points[:, None, :] - aps[None, :, :], axis=2)
    level = -35.0 - 25.0 * np.log10(1.0 + distances) + rng.normal(0.0, 2.0, size=distances.shape)
    same_floor = (groups[:, 0] == building) & (groups[:, 1] == floor)
    same_building = groups[:, 0] == building
    level = np.where(same_floor, level, np.where(same_building, level - FLOOR_LOSS_DB, -np.inf))
    raw = np.rint(level)
    return np.where(raw < RSSI_MIN, SENTINEL, np.minimum(raw, 0)).astype(np.int64)


def generate_toy_dataset(
    out_dir: str | Path,
    *,
    train_per_cell: int = 8,
    test_per_cell: int = 3,
    seed: int = 0,
) -> tuple[Path, Path, Path]:
    """Write train.csv, test.csv and manifest.json into out_dir; returns their paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    aps = rng.uniform(0.0, AREA_M, size=(AP_COUNT, 2))
    # Column 0: building, column 1: floor of the (building, floor) each AP serves.
    index = np.arange(AP_COUNT)
    groups = np.stack([(index % 4) // 2, index % 2], axis=1)
    cells_per_axis = int(AREA_M // CELL_M)

    frames: dict[str, list[pd.DataFrame]] = {"train": [], "test": []}
    for building in (0, 1):
        for floor in (0, 1):
            for ix in range(cells_per_axis):
                for iy in range(cells_per_axis):
                    for name, count in (("train", train_per_cell), ("test", test_per_cell)):
                        low = np.array([ix * CELL_M, iy * CELL_M]) + 0.25
                        points = low + rng.uniform(0.0, CELL_M - 0.5, size=(count, 2))
                        rssi = _rssi(points, building, floor, aps, groups, rng)
                        frame = pd.DataFrame(rssi, columns=[f"rssi_{i}" for i in range(AP_COUNT)])
                        frame["x"] = np.round(points[:, 0], 3)
                        frame["y"] = np.round(points[:, 1], 3)
                        frame["floor"] = floor
                        frame["building"] = building
                        frames[name].append(frame)

    train_path, test_path = out_dir / "train.csv", out_dir / "test.csv"
    pd.concat(frames["train"], ignore_index=True).to_csv(train_path, index=False)
    pd.concat(frames["test"], ignore_index=True).to_csv(test_path, index=False)

    manifest_path = out_dir / "manifest.json"
    manifest = {"name": "toy", "ap_count": AP_COUNT, "rssi_min": RSSI_MIN, "no_signal_sentinel": SENTINEL}
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return train_path, test_path, manifest_path


def main() -> None:
    parser = argparse.ArgumentParser(description="Write the synthetic toy fingerprint dataset.")
    parser.add_argument("out_dir", nargs="?", default="data/toy")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()
    paths = generate_toy_dataset(args.out_dir, seed=args.seed)
    for path in paths:
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
