"""Trainable layers wrapping the functional kernels with forward caches."""

from __future__ import annotations

from typing import Literal

import numpy as np
from pydantic import BaseModel, Field, model_validator

from app.errors import ConfigError, StateError
from app.nn import functional as F

LayerKind = Literal[
    "conv2d",
    "maxpool",
    "upsample",
    "transposed_conv2d",
    "batchnorm",
    "dropout",
    "flatten",
    "dense",
    "activation",
]
Activation = Literal["relu", "sigmoid", "softmax", "identity"]

_FIELDS_BY_KIND: dict[str, set[str]] = {
    "conv2d": {"filters", "kernel_size", "stride"},
    "transposed_conv2d": {"filters", "kernel_size"},
    "maxpool": {"pool_size", "stride"},
    "upsample": {"factor", "output_size"},
    "batchnorm": {"momentum", "folded"},
    "dropout": {"rate"},
    "flatten": set(),
    "dense": {"filters"},
    "activation": {"activation"},
}
_OPTIONAL = {"output_size", "folded", "momentum"}


class LayerSpec(BaseModel):
    """Serializable description of one layer; parameters present iff meaningful."""

    name: str
    kind: LayerKind
    filters: int | None = Field(default=None, ge=1)
    kernel_size: int | None = Field(default=None, ge=1)
    pool_size: int | None = Field(default=None, ge=1)
    stride: int | None = Field(default=None, ge=1)
    factor: int | None = Field(default=None, ge=1)
    output_size: int | None = Field(default=None, ge=1)
    rate: float | None = Field(default=None, ge=0, lt=1)
    momentum: float | None = Field(default=None, ge=0, le=1)
    activation: Activation | None = None
    folded: bool | None = None

    @model_validator(mode="after")
    def _fields_match_kind(self) -> "LayerSpec":
        allowed = _FIELDS_BY_KIND[self.kind]
        for field in ("filters", "kernel_size", "pool_size", "stride", "factor",
                      "output_size", "rate", "momentum", "activation", "folded"):
            value = getattr(self, field)
            if field in allowed and value is None and field not in _OPTIONAL:
                raise ValueError(f"{self.kind} layer {self.name!r} needs {field}")
            if field not in allowed and value is not None:
                raise ValueError(f"{self.kind} layer {self.name!r} does not take {field}")
        return self


def he_uniform(shape: tuple[int, ...], fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    """Base layer: params/grads dicts, cached forward state, explicit build step."""

    trainable_names: tuple[str, ...] = ()
    state_names: tuple[str, ...] = ()

    def __init__(self, spec: LayerSpec) -> None:
        self.spec = spec
        self.name = spec.name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.input_shape: tuple[int, ...] | None = None
        self.output_shape: tuple[int, ...] | None = None
        self._cache: tuple | None = None

    def build(self, input_shape: tuple[int, ...], rng: np.random.Generator, dtype) -> tuple[int, ...]:
        """Create parameters for a per-sample input shape; returns the output shape."""
        self.input_shape = tuple(input_shape)
        self.output_shape = self._infer_shape(self.input_shape)
        return self.output_shape

    def _infer_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dout: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _take_cache(self) -> tuple:
        if self._cache is None:
            raise StateError(f"layer {self.name!r}: backward called without a recorded forward pass")
        cache, self._cache = self._cache, None
        return cache

    def parameter_count(self) -> int:
        return int(sum(self.params[name].size for name in self.trainable_names))


class Conv2D(Layer):
    trainable_names = ("kernel", "bias")

    def build(self, input_shape, rng, dtype):
        k, f = self.spec.kernel_size, self.spec.filters
        c_in = input_shape[2]
        self.params = {
            "kernel": he_uniform((k, k, c_in, f), k * k * c_in, rng, dtype),
            "bias": np.zeros(f, dtype=dtype),
        }
        return super().build(input_shape, rng, dtype)

    def _infer_shape(self, input_shape):
        h, w, _ = input_shape
        k, s = self.spec.kernel_size, self.spec.stride
        if k > h or k > w:
            raise ConfigError(f"layer {self.name!r}: kernel {k} larger than input {h}x{w}")
        return F.output_dim(h, k, s), F.output_dim(w, k, s), self.spec.filters

    def forward(self, x, training=False):
        out = F.conv2d_forward(x, self.params["kernel"], self.params["bias"], self.spec.stride)
        self._cache = (x,)
        return out

    def backward(self, dout):
        (x,) = self._take_cache()
        dx, dk, db = F.conv2d_backward(dout, x, self.params["kernel"], self.spec.stride)
        self.grads = {"kernel": dk, "bias": db}
        return dx


class TransposedConv2D(Layer):
    trainable_names = ("kernel", "bias")

    def build(self, input_shape, rng, dtype):
        k, f = self.spec.kernel_size, self.spec.filters
        c_in = input_shape[2]
        self.params = {
            "kernel": he_uniform((k, k, c_in, f), k * k * c_in, rng, dtype),
            "bias": np.zeros(f, dtype=dtype),
        }
        return super().build(input_shape, rng, dtype)

    def _infer_shape(self, input_shape):
        h, w, _ = input_shape
        k = self.spec.kernel_size
        return h + k - 1, w + k - 1, self.spec.filters

    def forward(self, x, training=False):
        self._cache = (x,)
        return F.transposed_conv2d_forward(x, self.params["kernel"], self.params["bias"])

    def backward(self, dout):
        (x,) = self._take_cache()
        dx, dk, db = F.transposed_conv2d_backward(dout, x, self.params["kernel"])
        self.grads = {"kernel": dk, "bias": db}
        return dx


class MaxPool2D(Layer):
    def _infer_shape(self, input_shape):
        h, w, c = input_shape
        p, s = self.spec.pool_size, self.spec.stride
        if p > h or p > w:
            raise ConfigError(f"layer {self.name!r}: pool {p} larger than input {h}x{w}")
        return F.output_dim(h, p, s), F.output_dim(w, p, s), c

    def forward(self, x, training=False):
        out, argmax = F.maxpool_forward(x, self.spec.pool_size, self.spec.stride)
        self._cache = (argmax, x.shape)
        return out

    def backward(self, dout):
        argmax, shape = self._take_cache()
        return F.maxpool_backward(dout, argmax, shape, self.spec.pool_size, self.spec.stride)


class Upsample2D(Layer):
    def _infer_shape(self, input_shape):
        h, w, c = input_shape
        factor = self.spec.factor
        size = self.spec.output_size
        return (size or h * factor), (size or w * factor), c

    def forward(self, x, training=False):
        self._cache = (x.shape,)
        return F.upsample_forward(x, self.spec.factor, self.spec.output_size)

    def backward(self, dout):
        (shape,) = self._take_cache()
        return F.upsample_backward(dout, self.spec.factor, shape)


class BatchNorm(Layer):
    trainable_names = ("gamma", "beta")
    state_names = ("moving_mean", "moving_var")

    def build(self, input_shape, rng, dtype):
        if self.spec.folded:
            self.trainable_names = ()
            self.state_names = ()
            return super().build(input_shape, rng, dtype)
        channels = input_shape[-1]
        self.params = {
            "gamma": np.ones(channels, dtype=dtype),
            "beta": np.zeros(channels, dtype=dtype),
            "moving_mean": np.zeros(channels, dtype=dtype),
            "moving_var": np.ones(channels, dtype=dtype),
        }
        return super().build(input_shape, rng, dtype)

    @property
    def momentum(self) -> float:
        return 0.99 if self.spec.momentum is None else self.spec.momentum

    def forward(self, x, training=False):
        if self.spec.folded:
            # Scale and shift already live in the preceding layer's weights.
            return x
        out, cache = F.batchnorm_forward(
            x,
            self.params["gamma"],
            self.params["beta"],
            "train" if training else "infer",
            self.params["moving_mean"],
            self.params["moving_var"],
            momentum=self.momentum,
        )
        self._cache = (cache,) if training else None
        return out

    def backward(self, dout):
        (cache,) = self._take_cache()
        dx, dgamma, dbeta = F.batchnorm_backward(dout, self.params["gamma"], cache)
        self.grads = {"gamma": dgamma, "beta": dbeta}
        return dx


class Dropout(Layer):
    def __init__(self, spec: LayerSpec) -> None:
        super().__init__(spec)
        self.rng = np.random.default_rng(0)
        # Gradient checks pin the mask so repeated forwards see the same units.
        self.reuse_mask = False
        self._mask: np.ndarray | None = None

    def build(self, input_shape, rng, dtype):
        self.rng = np.random.default_rng(rng.integers(2**63))
        return super().build(input_shape, rng, dtype)

    def forward(self, x, training=False):
        if not training or self.spec.rate == 0:
            self._cache = (None,)
            return x
        if not (self.reuse_mask and self._mask is not None and self._mask.shape == x.shape):
            self._mask = F.dropout_mask(x.shape, self.spec.rate, self.rng, dtype=x.dtype)
        self._cache = (self._mask,)
        return x * self._mask

    def backward(self, dout):
        (mask,) = self._take_cache()
        return dout if mask is None else dout * mask


class Flatten(Layer):
    def _infer_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False):
        self._cache = (x.shape,)
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        (shape,) = self._take_cache()
        return dout.reshape(shape)


class Dense(Layer):
    trainable_names = ("kernel", "bias")

    def build(self, input_shape, rng, dtype):
        (width,) = input_shape
        units = self.spec.filters
        self.params = {
            "kernel": he_uniform((width, units), width, rng, dtype),
            "bias": np.zeros(units, dtype=dtype),
        }
        return super().build(input_shape, rng, dtype)

    def _infer_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ConfigError(f"layer {self.name!r}: dense needs a flat input, got {input_shape}")
        return (self.spec.filters,)

    def forward(self, x, training=False):
        self._cache = (x,)
        return F.dense_forward(x, self.params["kernel"], self.params["bias"])

    def backward(self, dout):
        (x,) = self._take_cache()
        self.grads = {"kernel": x.T @ dout, "bias": dout.sum(axis=0)}
        return dout @ self.params["kernel"].T


class ActivationLayer(Layer):
    def forward(self, x, training=False):
        y = F.activation_forward(x, self.spec.activation)
        self._cache = (x, y)
        return y

    def backward(self, dout):
        x, y = self._take_cache()
        return F.activation_backward(dout, x, y, self.spec.activation)


LAYER_TYPES: dict[str, type[Layer]] = {
    "conv2d": Conv2D,
    "transposed_conv2d": TransposedConv2D,
    "maxpool": MaxPool2D,
    "upsample": Upsample2D,
    "batchnorm": BatchNorm,
    "dropout": Dropout,
    "flatten": Flatten,
    "dense": Dense,
    "activation": ActivationLayer,
}


def make_layer(spec: LayerSpec) -> Layer:
    return LAYER_TYPES[spec.kind](spec)
