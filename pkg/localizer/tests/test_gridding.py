import numpy as np
import pytest

from app.errors import ConfigError, EmptyInputError
from app.services.gridding import (
    GridConfig,
    GridMap,
    assign_class,
    build_grid,
    combined_split,
    count_unmapped,
    label_records,
    load_grid,
    make_split,
    original_split,
    save_grid,
)
from builders import make_record


def _lattice(count: int = 100, seed: int = 0, span: float = 40.0) -> list:
    rng = np.random.default_rng(seed)
    return [
        make_record(x, y, floor=int(f), building=int(b))
        for x, y, f, b in zip(
            rng.uniform(0, span, count), rng.uniform(0, span, count),
            rng.integers(0, 3, count), rng.integers(0, 2, count),
        )
    ]


def test_two_points_share_one_cell_with_mean_centroid() -> None:
    grid = build_grid([make_record(1, 1), make_record(3, 5)], GridConfig(cell_length=7, origin=(0, 0)))
    assert grid.class_count == 1
    assert grid.cells[0].centroid == pytest.approx((2.0, 3.0))
    assert grid.cells[0].member_count == 2


def test_singleton_cell_index_and_centroid() -> None:
    grid = build_grid([make_record(10.2, 4.4)], GridConfig(cell_length=1, origin=(0, 0)))
    cell = grid.cells[0]
    assert (cell.ix, cell.iy) == (10, 4)
    assert cell.centroid == pytest.approx((10.2, 4.4))


def test_empty_records_raise() -> None:
    with pytest.raises(EmptyInputError):
        build_grid([], GridConfig(cell_length=7))


def test_cell_length_must_be_positive() -> None:
    with pytest.raises(ValueError):
        GridConfig(cell_length=0)


def test_origin_defaults_to_minimum_position() -> None:
    grid = build_grid([make_record(5, 8), make_record(2, 9)], GridConfig(cell_length=10))
    assert grid.origin == (2.0, 8.0)
    assert min(c.ix for c in grid.cells) == 0


def test_boundary_points_use_half_open_cells() -> None:
    config = GridConfig(cell_length=7, origin=(0, 0))
    grid = build_grid([make_record(6.9, 1), make_record(7.0, 1)], config)
    assert [c.ix for c in grid.cells] == [0, 1]
    assert assign_class(make_record(14.0, 1), grid) is None
    assert assign_class(make_record(7.0, 6.99), grid) == 1


def test_training_records_map_to_their_own_cell() -> None:
    records = _lattice()
    grid = build_grid(records, GridConfig(cell_length=7))
    labels = label_records(records, grid)
    assert None not in labels
    assert sorted(set(labels)) == list(range(grid.class_count))
    assert sum(c.member_count for c in grid.cells) == len(records)


def test_point_in_empty_cell_is_unmapped() -> None:
    grid = build_grid([make_record(1, 1)], GridConfig(cell_length=5, origin=(0, 0)))
    assert assign_class(make_record(30, 30), grid) is None
    assert assign_class(make_record(1, 1, floor=3), grid) is None
    assert count_unmapped([make_record(30, 30), make_record(2, 2)], grid) == 1


def test_centroids_lie_inside_their_cells() -> None:
    length = 7.0
    grid = build_grid(_lattice(300), GridConfig(cell_length=length))
    x0, y0 = grid.origin
    for cell in grid.cells:
        assert abs(cell.centroid[0] - (cell.ix + 0.5) * length - x0) <= length / 2 + 1e-9
        assert abs(cell.centroid[1] - (cell.iy + 0.5) * length - y0) <= length / 2 + 1e-9


def test_class_ids_follow_lexicographic_cell_order() -> None:
    grid = build_grid(_lattice(200), GridConfig(cell_length=5))
    keys = [(c.building, c.floor, c.ix, c.iy) for c in grid.cells]
    assert keys == sorted(keys)
    assert [c.class_id for c in grid.cells] == list(range(grid.class_count))


def test_build_grid_is_permutation_invariant() -> None:
    records = _lattice(150)
    shuffled = [records[i] for i in np.random.default_rng(9).permutation(len(records))]
    config = GridConfig(cell_length=6)
    assert build_grid(records, config).cells == build_grid(shuffled, config).cells


def test_nested_cells_never_add_classes() -> None:
    records = _lattice(300)
    coarse = build_grid(records, GridConfig(cell_length=8, origin=(0, 0)))
    fine = build_grid(records, GridConfig(cell_length=4, origin=(0, 0)))
    assert coarse.class_count <= fine.class_count


def test_grid_json_round_trip_keeps_fingerprint(tmp_path) -> None:
    grid = build_grid(_lattice(80), GridConfig(cell_length=7))
    path = tmp_path / "grid.json"
    save_grid(grid, path, extra={"run_config": {"seed": 1}})
    loaded = load_grid(path)
    assert loaded.cells == grid.cells
    assert loaded.origin == grid.origin
    assert loaded.fingerprint() == grid.fingerprint()
    assert GridMap.from_json(grid.to_json()).lookup == grid.lookup


def test_combined_split_sizes_and_disjointness() -> None:
    records = _lattice(100, span=10)
    result = combined_split(records[:60], records[60:], (0.7, 0.1, 0.2), seed=4, config=GridConfig(cell_length=7))
    assert (len(result.train), len(result.val), len(result.test)) == (70, 10, 20)
    indices = result.train_index + result.val_index + result.test_index
    assert sorted(indices) == list(range(100))


def test_combined_split_is_deterministic() -> None:
    records = _lattice(100, span=10)
    config = GridConfig(cell_length=7)
    first = combined_split(records[:50], records[50:], seed=11, config=config)
    second = combined_split(records[:50], records[50:], seed=11, config=config)
    assert first.train_index == second.train_index
    assert first.test_index == second.test_index


def test_combined_split_leaves_no_unmapped_test_points() -> None:
    records = _lattice(400, seed=2)
    result = combined_split(records[:300], records[300:], seed=0, config=GridConfig(cell_length=10))
    train_classes = set(label_records(result.train, result.grid))
    assert train_classes == set(range(result.grid.class_count))
    assert set(label_records(result.test, result.grid)) <= train_classes


def test_combined_split_rejects_bad_fractions() -> None:
    records = _lattice(20)
    with pytest.raises(ConfigError):
        combined_split(records, [], (0.7, 0.1, 0.1))
    with pytest.raises(ConfigError):
        combined_split(records, [], (0.8, 0.3, -0.1))


def test_original_split_grids_training_file_only() -> None:
    train = _lattice(120, seed=5, span=20)
    test = [make_record(100, 100), *_lattice(10, seed=6, span=20)]
    result = original_split(train, test, GridConfig(cell_length=7), val_fraction=0.25, seed=0)
    assert len(result.train) + len(result.val) == len(train)
    assert len(result.val) == 30
    assert result.test == test
    assert count_unmapped(result.test, result.grid) >= 1


def test_make_split_rejects_unknown_mode() -> None:
    with pytest.raises(ConfigError):
        make_split(_lattice(10), [], GridConfig(cell_length=7), "random")
