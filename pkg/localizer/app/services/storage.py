"""Versioned model container.

Layout (all integers little-endian):

    magic        4 bytes   b"CNLC"
    version      u16
    header_len   u32
    header       header_len bytes of UTF-8 JSON (sorted keys)
    blob         raw tensors, concatenated in header order

The header lists layer specs, the tensor table (dtype, shape, blob offset and
int8 scale/zero point), the grid file name and fingerprint, training metadata
and the run config. f32 files carry the deployed classifier only.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from app.errors import ModelMismatchError, SchemaError
from app.nn.layers import LayerSpec
from app.nn.network import Sequential
from app.services.gridding import GridMap, load_grid
from app.services.model import CaeCnnLocModel, classifier_network
from app.services.quantization import QuantizedModel, QuantizedTensor

logger = logging.getLogger(__name__)

MAGIC = b"CNLC"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sHI")

_DTYPES = {"f32": "<f4", "f16": "<f2", "i8": "|i1"}
_PRECISION_OF = {code: name for name, code in _DTYPES.items()}

StoredModel = CaeCnnLocModel | QuantizedModel


class TensorEntry(BaseModel):
    name: str
    dtype: Literal["<f4", "<f2", "|i1"]
    shape: list[int]
    offset: int = Field(ge=0)
    nbytes: int = Field(ge=0)
    scale: float | None = None
    zero_point: int | None = None


class ModelHeader(BaseModel):
    format_version: int = FORMAT_VERSION
    precision: Literal["f32", "f16", "i8"]
    input_shape: list[int]
    class_count: int = Field(ge=1)
    layers: list[LayerSpec]
    tensors: list[TensorEntry]
    grid_file: str | None = None
    grid_fingerprint: str
    metadata: dict[str, Any] = Field(default_factory=dict)
    run_config: dict[str, Any] | None = None


def _stored_tensors(model: StoredModel) -> list[tuple[str, QuantizedTensor]]:
    if isinstance(model, QuantizedModel):
        return list(model.tensors.items())
    return [
        (name, QuantizedTensor(values=np.asarray(value, dtype=np.float32), precision="f32"))
        for name, value in classifier_network(model).state_dict().items()
    ]


def _specs(model: StoredModel) -> tuple[list[LayerSpec], tuple[int, ...]]:
    if isinstance(model, QuantizedModel):
        return model.specs, model.input_shape
    network = classifier_network(model)
    return network.specs, network.input_shape


def encode_model(
    model: StoredModel,
    *,
    grid_file: str | None = None,
    run_config: dict[str, Any] | None = None,
) -> bytes:
    specs, input_shape = _specs(model)
    entries: list[TensorEntry] = []
    chunks: list[bytes] = []
    offset = 0
    for name, tensor in _stored_tensors(model):
        dtype = _DTYPES[tensor.precision]
        raw = np.ascontiguousarray(tensor.values, dtype=np.dtype(dtype)).tobytes()
        entries.append(
            TensorEntry(
                name=name,
                dtype=dtype,
                shape=list(tensor.shape),
                offset=offset,
                nbytes=len(raw),
                scale=tensor.scale,
                zero_point=tensor.zero_point,
            )
        )
        chunks.append(raw)
        offset += len(raw)

    header = ModelHeader(
        precision=model.precision,
        input_shape=list(input_shape),
        class_count=model.class_count,
        layers=specs,
        tensors=entries,
        grid_file=grid_file,
        grid_fingerprint=model.grid.fingerprint(),
        metadata=model.metadata,
        run_config=run_config,
    )
    text = json.dumps(header.model_dump(mode="json", exclude_none=True), sort_keys=True, separators=(",", ":"))
    encoded = text.encode("utf-8")
    return _PREFIX.pack(MAGIC, FORMAT_VERSION, len(encoded)) + encoded + b"".join(chunks)


def read_header(data: bytes) -> tuple[ModelHeader, memoryview]:
    if len(data) < _PREFIX.size:
        raise SchemaError("model file is truncated")
    magic, version, header_len = _PREFIX.unpack_from(data)
    if magic != MAGIC:
        raise SchemaError(f"not a model file (magic {magic!r})")
    if version != FORMAT_VERSION:
        raise SchemaError(f"unsupported model format version {version}")
    end = _PREFIX.size + header_len
    if len(data) < end:
        raise SchemaError("model header is truncated")
    try:
        header = ModelHeader.model_validate_json(data[_PREFIX.size:end])
    except ValidationError as exc:
        raise SchemaError(f"invalid model header: {exc.error_count()} problem(s)") from exc
    blob = memoryview(data)[end:]
    expected = sum(entry.nbytes for entry in header.tensors)
    if len(blob) != expected:
        raise SchemaError(f"model blob holds {len(blob)} bytes, header lists {expected}")
    return header, blob


def _read_tensor(entry: TensorEntry, blob: memoryview) -> np.ndarray:
    dtype = np.dtype(entry.dtype)
    count = int(np.prod(entry.shape, dtype=np.int64))
    if count * dtype.itemsize != entry.nbytes:
        raise SchemaError(f"tensor {entry.name!r}: shape {entry.shape} does not match {entry.nbytes} bytes")
    values = np.frombuffer(blob, dtype=dtype, count=count, offset=entry.offset)
    return values.reshape(entry.shape).copy()


def decode_model(data: bytes, grid: GridMap) -> StoredModel:
    header, blob = read_header(data)
    if grid.fingerprint() != header.grid_fingerprint:
        raise ModelMismatchError("model was trained on a different grid (fingerprint mismatch)")
    if grid.class_count != header.class_count:
        raise ModelMismatchError(f"model predicts {header.class_count} classes, grid has {grid.class_count}")

    input_shape = tuple(header.input_shape)
    if header.precision == "f32":
        classifier = Sequential(header.layers, input_shape, dtype=np.float32)
        classifier.load_state_dict({entry.name: _read_tensor(entry, blob) for entry in header.tensors})
        return CaeCnnLocModel(classifier=classifier, grid=grid, metadata=header.metadata)

    tensors = {
        entry.name: QuantizedTensor(
            values=_read_tensor(entry, blob),
            precision=_PRECISION_OF[entry.dtype],
            scale=entry.scale,
            zero_point=entry.zero_point,
        )
        for entry in header.tensors
    }
    return QuantizedModel(
        specs=header.layers,
        input_shape=input_shape,
        tensors=tensors,
        grid=grid,
        precision=header.precision,
        metadata=header.metadata,
    )


def save_model(
    model: StoredModel,
    path: str | Path,
    *,
    grid_file: str | None = None,
    run_config: dict[str, Any] | None = None,
) -> int:
    data = encode_model(model, grid_file=grid_file, run_config=run_config)
    Path(path).write_bytes(data)
    logger.info("Wrote %s model to %s (%d bytes)", model.precision, path, len(data))
    return len(data)


def load_model(path: str | Path, grid: GridMap | None = None) -> StoredModel:
    """Load a model file; without an explicit grid, the referenced grid file next to it is used."""
    path = Path(path)
    data = path.read_bytes()
    if grid is None:
        header, _ = read_header(data)
        if not header.grid_file:
            raise ModelMismatchError(f"{path} names no grid file; pass the grid explicitly")
        grid_path = path.parent / header.grid_file
        if not grid_path.exists():
            raise ModelMismatchError(f"grid file {grid_path} referenced by {path} does not exist")
        grid = load_grid(grid_path)
    return decode_model(data, grid)


def serialized_size(model: StoredModel) -> int:
    return len(encode_model(model))


def payload_bytes(model: StoredModel) -> int:
    """Bytes of stored parameters only (header excluded)."""
    return int(sum(tensor.values.nbytes for _, tensor in _stored_tensors(model)))
