import struct

import numpy as np
import pytest

from app.errors import ModelMismatchError, SchemaError
from app.services.gridding import save_grid
from app.services.model import CaeCnnLocModel, TrainConfig, build_model
from app.services.quantization import QuantizedModel, quantize_f16, quantize_int8
from app.services.storage import (
    MAGIC,
    decode_model,
    encode_model,
    load_model,
    read_header,
    save_model,
    serialized_size,
)
from builders import synthetic_grid


def _model(classes: int = 4, side: int = 17, seed: int = 0) -> CaeCnnLocModel:
    model = build_model(side, synthetic_grid(classes), TrainConfig(seed=seed))
    model.metadata = {"seed": seed, "cell_length": 7.0, "run_name": "unit"}
    return model


def _images(count: int = 5) -> np.ndarray:
    return np.random.default_rng(0).uniform(size=(count, 17, 17, 1)).astype(np.float32)


def test_f32_round_trip_preserves_predictions() -> None:
    model = _model()
    restored = decode_model(encode_model(model), model.grid)
    assert isinstance(restored, CaeCnnLocModel)
    assert restored.metadata == model.metadata
    assert np.array_equal(restored.predict_proba(_images()), model.predict_proba(_images()))


@pytest.mark.parametrize("quantize", [quantize_f16, quantize_int8])
def test_quantized_round_trip_preserves_tensors(quantize) -> None:
    quantized = quantize(_model())
    restored = decode_model(encode_model(quantized), quantized.grid)
    assert isinstance(restored, QuantizedModel)
    assert restored.precision == quantized.precision
    for name, tensor in quantized.tensors.items():
        other = restored.tensors[name]
        assert other.values.dtype == tensor.values.dtype
        assert np.array_equal(other.values, tensor.values)
        assert (other.scale, other.zero_point) == (tensor.scale, tensor.zero_point)
    assert np.array_equal(restored.predict_proba(_images()), quantized.predict_proba(_images()))


def test_encoding_is_bit_exact_across_save_load() -> None:
    model = quantize_int8(_model())
    first = encode_model(model, grid_file="grid.json", run_config={"seed": 0})
    again = encode_model(decode_model(first, model.grid), grid_file="grid.json", run_config={"seed": 0})
    assert first == again
    assert first[:4] == MAGIC


def test_header_lists_tensors_in_blob_order() -> None:
    header, blob = read_header(encode_model(_model(), run_config={"seed": 3}))
    offsets = [entry.offset for entry in header.tensors]
    assert offsets == sorted(offsets)
    assert sum(entry.nbytes for entry in header.tensors) == len(blob)
    assert header.run_config == {"seed": 3}
    assert header.class_count == 4
    assert header.input_shape == [17, 17, 1]


def test_corrupt_files_raise_schema_error() -> None:
    data = encode_model(_model())
    with pytest.raises(SchemaError):
        read_header(b"XXXX" + data[4:])
    with pytest.raises(SchemaError):
        read_header(data[:5])
    with pytest.raises(SchemaError):
        read_header(data[:-3])
    bumped = struct.pack("<4sH", MAGIC, 99) + data[6:]
    with pytest.raises(SchemaError):
        read_header(bumped)


def test_grid_mismatch_is_rejected() -> None:
    model = _model(classes=4)
    data = encode_model(model)
    with pytest.raises(ModelMismatchError):
        decode_model(data, synthetic_grid(4, cell_length=5.0))
    with pytest.raises(ModelMismatchError):
        decode_model(data, synthetic_grid(5))


def test_save_and_load_with_referenced_grid(tmp_path) -> None:
    model = _model()
    save_grid(model.grid, tmp_path / "grid.json")
    path = tmp_path / "model_f32.cnlc"
    written = save_model(model, path, grid_file="grid.json")
    assert written == path.stat().st_size
    restored = load_model(path)
    assert restored.grid.fingerprint() == model.grid.fingerprint()

    save_model(model, tmp_path / "orphan.cnlc")
    with pytest.raises(ModelMismatchError):
        load_model(tmp_path / "orphan.cnlc")
    (tmp_path / "grid.json").unlink()
    with pytest.raises(ModelMismatchError):
        load_model(path)


def test_int8_file_for_823_classes_is_about_half_a_megabyte() -> None:
    model = _model(classes=823, side=23)
    f32_size = serialized_size(model)
    i8_size = serialized_size(quantize_int8(model))
    assert 400_000 <= i8_size <= 600_000
    assert i8_size / f32_size <= 0.29
