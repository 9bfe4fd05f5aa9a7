"""Post-training quantization (float16, per-tensor affine int8) and quantized inference.

Batch norms are folded into the preceding conv/dense weights first, so the
deployed graph runs conv -> relu. Only weights are quantized; biases and
activations stay float32. The int8 path multiplies by the centered weight codes
(code - zero_point) and rescales the accumulator once per layer; weights are
prepared once per model, never per call.
"""

from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import partial
from typing import Any

import numpy as np

from app.errors import ModelMismatchError, QuantizationError
from app.nn import functional as F
from app.nn.layers import LayerSpec
from app.nn.network import Sequential
from app.services.gridding import GridMap
from app.services.model import (
    PREDICT_CHUNK,
    CaeCnnLocModel,
    Prediction,
    as_image_batch,
    classifier_network,
    predict,
)

logger = logging.getLogger(__name__)

INT8_MIN, INT8_MAX = -128, 127
INT8_LEVELS = 255
FLOAT16_MAX = float(np.finfo(np.float16).max)
_FOLDABLE = {"conv2d", "dense"}


@dataclass(frozen=True, eq=False)
class QuantizedTensor:
    values: np.ndarray
    precision: str
    scale: float | None = None
    zero_point: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(self.values.shape)

    def dequantize(self) -> np.ndarray:
        if self.precision == "i8":
            return ((self.values.astype(np.float64) - self.zero_point) * self.scale).astype(np.float32)
        return self.values.astype(np.float32)


def int8_params(values: np.ndarray) -> tuple[float, int]:
    """Per-tensor scale and zero point; the represented range always contains 0."""
    low = min(float(values.min()), 0.0)
    high = max(float(values.max()), 0.0)
    if high == low:
        # Constant (necessarily all-zero) tensor: fixed scale keeps codes well defined.
        constant = float(values.flat[0]) if values.size else 0.0
        scale = max(abs(constant), 1.0) * 2.0 / INT8_LEVELS
    else:
        scale = (high - low) / INT8_LEVELS
    zero_point = int(np.clip(round(-low / scale) + INT8_MIN, INT8_MIN, INT8_MAX))
    return scale, zero_point


def quantize_tensor_int8(values: np.ndarray, name: str = "tensor") -> QuantizedTensor:
    data = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise QuantizationError(f"{name}: non-finite weights cannot be quantized")
    scale, zero_point = int8_params(data)
    codes = np.clip(np.rint(data / scale) + zero_point, INT8_MIN, INT8_MAX).astype(np.int8)
    return QuantizedTensor(values=codes, precision="i8", scale=scale, zero_point=zero_point)


def quantize_tensor_f16(values: np.ndarray, name: str = "tensor") -> QuantizedTensor:
    data = np.asarray(values, dtype=np.float32)
    if not np.all(np.isfinite(data)):
        raise QuantizationError(f"{name}: non-finite weights cannot be quantized")
    peak = float(np.abs(data).max()) if data.size else 0.0
    if peak > FLOAT16_MAX:
        raise QuantizationError(f"{name}: magnitude {peak:g} overflows float16 (max {FLOAT16_MAX:g})")
    return QuantizedTensor(values=data.astype(np.float16), precision="f16")


def fold_batchnorm(network: Sequential) -> Sequential:
    """Equivalent float32 network with every BN merged into the conv/dense before it."""
    state = network.copy_state()
    specs: list[LayerSpec] = []
    for index, spec in enumerate(network.specs):
        if spec.kind == "batchnorm" and not spec.folded and index > 0 and network.specs[index - 1].kind in _FOLDABLE:
            previous = network.specs[index - 1].name
            gamma = state.pop(f"{spec.name}/gamma").astype(np.float64)
            beta = state.pop(f"{spec.name}/beta").astype(np.float64)
            mean = state.pop(f"{spec.name}/moving_mean").astype(np.float64)
            var = state.pop(f"{spec.name}/moving_var").astype(np.float64)
            factor = gamma / np.sqrt(var + F.BN_EPSILON)
            kernel = state[f"{previous}/kernel"].astype(np.float64)
            bias = state[f"{previous}/bias"].astype(np.float64)
            state[f"{previous}/kernel"] = (kernel * factor).astype(np.float32)
            state[f"{previous}/bias"] = ((bias - mean) * factor + beta).astype(np.float32)
            specs.append(spec.model_copy(update={"folded": True}))
        else:
            specs.append(spec)
    folded = Sequential(specs, network.input_shape, dtype=np.float32)
    folded.load_state_dict(state)
    return folded


@dataclass
class QuantizedModel:
    specs: list[LayerSpec]
    input_shape: tuple[int, ...]
    tensors: dict[str, QuantizedTensor]
    grid: GridMap
    precision: str
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._plan = _build_plan(self)

    @property
    def side(self) -> int:
        return self.input_shape[0]

    @property
    def class_count(self) -> int:
        dense = [spec for spec in self.specs if spec.kind == "dense"]
        return dense[-1].filters

    def payload_bytes(self) -> int:
        return int(sum(tensor.values.nbytes for tensor in self.tensors.values()))

    def dequantized_network(self) -> Sequential:
        """Float32 network carrying the dequantized weights (reference for the int8 path)."""
        network = Sequential(self.specs, self.input_shape, dtype=np.float32)
        network.load_state_dict({name: tensor.dequantize() for name, tensor in self.tensors.items()})
        return network

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        return quantized_predict_proba(self, images)


def _quantize_model(model: CaeCnnLocModel | Sequential, grid: GridMap | None, precision: str) -> QuantizedModel:
    if isinstance(model, CaeCnnLocModel):
        network, grid, metadata = classifier_network(model), model.grid, dict(model.metadata)
    else:
        network, metadata = model, {}
    if grid is None:
        raise ModelMismatchError("quantization needs the grid the model was trained on")

    folded = fold_batchnorm(network)
    for spec in folded.specs:
        if spec.kind == "batchnorm" and not spec.folded:
            raise QuantizationError(f"{spec.name}: batch norm without a preceding conv/dense cannot be folded")

    tensors: dict[str, QuantizedTensor] = {}
    for name, values in folded.state_dict().items():
        if precision == "f16":
            tensors[name] = quantize_tensor_f16(values, name)
        elif name.endswith("/kernel"):
            tensors[name] = quantize_tensor_int8(values, name)
        else:
            if not np.all(np.isfinite(values)):
                raise QuantizationError(f"{name}: non-finite weights cannot be quantized")
            tensors[name] = QuantizedTensor(values=values.astype(np.float32), precision="f32")

    quantized = QuantizedModel(
        specs=folded.specs,
        input_shape=folded.input_shape,
        tensors=tensors,
        grid=grid,
        precision=precision,
        metadata=metadata,
    )
    logger.info("Quantized to %s: payload %d bytes", precision, quantized.payload_bytes())
    return quantized


def quantize_f16(model: CaeCnnLocModel | Sequential, grid: GridMap | None = None) -> QuantizedModel:
    return _quantize_model(model, grid, "f16")


def quantize_int8(model: CaeCnnLocModel | Sequential, grid: GridMap | None = None) -> QuantizedModel:
    return _quantize_model(model, grid, "i8")


def _int8_conv(x: np.ndarray, centered: np.ndarray, weight_scale: np.float32, bias: np.ndarray,
               stride: int) -> np.ndarray:
    kernel, _, _, filters = centered.shape
    n = x.shape[0]
    ho, wo = F.output_dim(x.shape[1], kernel, stride), F.output_dim(x.shape[2], kernel, stride)
    acc = F.im2col(x, kernel, stride) @ centered.reshape(-1, filters)
    acc *= weight_scale
    acc += bias
    return acc.reshape(n, ho, wo, filters)


def _int8_dense(x: np.ndarray, centered: np.ndarray, weight_scale: np.float32, bias: np.ndarray) -> np.ndarray:
    acc = x @ centered
    acc *= weight_scale
    acc += bias
    return acc


def _build_plan(model: QuantizedModel) -> list[Callable[[np.ndarray], np.ndarray]]:
    """One closure per layer that does work at inference; weights resolved once."""
    tensors = model.tensors
    plan: list[Callable[[np.ndarray], np.ndarray]] = []
    for spec in model.specs:
        kind = spec.kind
        if kind in ("conv2d", "dense", "transposed_conv2d"):
            kernel = tensors[f"{spec.name}/kernel"]
            bias = tensors[f"{spec.name}/bias"].dequantize()
            if kernel.precision == "i8" and kind != "transposed_conv2d":
                centered = kernel.values.astype(np.float32) - np.float32(kernel.zero_point)
                scale = np.float32(kernel.scale)
                if kind == "conv2d":
                    plan.append(partial(_int8_conv, centered=centered, weight_scale=scale, bias=bias,
                                        stride=spec.stride))
                else:
                    plan.append(partial(_int8_dense, centered=centered, weight_scale=scale, bias=bias))
            elif kind == "conv2d":
                plan.append(partial(F.conv2d_forward, weights=kernel.dequantize(), bias=bias, stride=spec.stride))
            elif kind == "dense":
                plan.append(partial(F.dense_forward, weights=kernel.dequantize(), bias=bias))
            else:
                plan.append(partial(F.transposed_conv2d_forward, weights=kernel.dequantize(), bias=bias))
        elif kind == "activation":
            plan.append(partial(F.activation_forward, activation=spec.activation))
        elif kind == "maxpool":
            plan.append(partial(_maxpool, pool_size=spec.pool_size, stride=spec.stride))
        elif kind == "flatten":
            plan.append(_flatten)
        elif kind == "upsample":
            plan.append(partial(F.upsample_forward, factor=spec.factor, output_size=spec.output_size))
        # Folded batch norms and inference-time dropout are identities.
    return plan


def _maxpool(x: np.ndarray, pool_size: int, stride: int) -> np.ndarray:
    return F.maxpool_forward(x, pool_size, stride)[0]


def _flatten(x: np.ndarray) -> np.ndarray:
    return x.reshape(x.shape[0], -1)


def _forward(model: QuantizedModel, x: np.ndarray) -> np.ndarray:
    for step in model._plan:
        x = step(x)
    return x


def quantized_predict_proba(model: QuantizedModel, images: np.ndarray) -> np.ndarray:
    batch = as_image_batch(images, model.side)
    chunks = [_forward(model, batch[start:start + PREDICT_CHUNK]) for start in range(0, len(batch), PREDICT_CHUNK)]
    if not chunks:
        return np.zeros((0, model.class_count), dtype=np.float32)
    return np.concatenate(chunks).astype(np.float32, copy=False)


def quantized_predict(model: QuantizedModel, image) -> Prediction:
    """Same contract as model.predict, through the quantized inference path."""
    return predict(model, image)
