"""Sequential network: ordered layers, reverse-mode gradients, flat state dicts."""

from __future__ import annotations

from collections.abc import Callable, Iterator

import numpy as np

from app.errors import ShapeError, StateError
from app.nn.layers import ActivationLayer, Layer, LayerSpec, make_layer
from app.nn.optim import OptimizerState, nadam_step


class Sequential:
    def __init__(
        self,
        specs: list[LayerSpec],
        input_shape: tuple[int, ...],
        *,
        seed: int = 0,
        dtype=np.float32,
    ) -> None:
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = [make_layer(spec) for spec in self.specs]
        rng = np.random.default_rng(seed)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
        self.output_shape = shape
        self._forward_recorded = False

    def __iter__(self) -> Iterator[Layer]:
        return iter(self.layers)

    def layer(self, name: str) -> Layer:
        for layer in self.layers:
            if layer.name == name:
                return layer
        raise KeyError(name)

    def _check_input(self, x: np.ndarray) -> None:
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"network expects samples shaped {self.input_shape}, got {x.shape[1:]}")

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        self._check_input(x)
        out = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            out = layer.forward(out, training=training)
        self._forward_recorded = True
        return out

    def forward_logits(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        """Forward pass stopping before a trailing softmax (for fused CCE)."""
        self._check_input(x)
        out = x.astype(self.dtype, copy=False)
        for layer in self._logit_layers():
            out = layer.forward(out, training=training)
        self._forward_recorded = True
        return out

    def _logit_layers(self) -> list[Layer]:
        last = self.layers[-1] if self.layers else None
        if isinstance(last, ActivationLayer) and last.spec.activation == "softmax":
            return self.layers[:-1]
        return self.layers

    def backward(self, dout: np.ndarray, *, from_logits: bool = False) -> np.ndarray:
        """Propagate dL/d(output) back; fills every layer's grads and returns dL/dx."""
        if not self._forward_recorded:
            raise StateError("backward called without a recorded forward pass")
        layers = self._logit_layers() if from_logits else self.layers
        grad = dout
        for layer in reversed(layers):
            grad = layer.backward(grad)
        self._forward_recorded = False
        return grad

    def parameters(self) -> Iterator[tuple[str, np.ndarray]]:
        """Trainable parameters keyed 'layer/param'."""
        for layer in self.layers:
            for name in layer.trainable_names:
                yield f"{layer.name}/{name}", layer.params[name]

    def gradients(self) -> dict[str, np.ndarray]:
        grads: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for name in layer.trainable_names:
                grads[f"{layer.name}/{name}"] = layer.grads.get(name, np.zeros_like(layer.params[name]))
        return grads

    def parameter_count(self) -> int:
        return sum(layer.parameter_count() for layer in self.layers)

    def state_dict(self) -> dict[str, np.ndarray]:
        """Every stored tensor (trainable and running statistics) in layer order."""
        state: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for name, value in layer.params.items():
                state[f"{layer.name}/{name}"] = value
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for layer in self.layers:
            for name, current in layer.params.items():
                key = f"{layer.name}/{name}"
                if key not in state:
                    raise ShapeError(f"state is missing {key!r}")
                value = np.asarray(state[key])
                if value.shape != current.shape:
                    raise ShapeError(f"{key!r}: stored shape {value.shape}, expected {current.shape}")
                layer.params[name] = value.astype(self.dtype, copy=True)

    def copy_state(self) -> dict[str, np.ndarray]:
        return {key: value.copy() for key, value in self.state_dict().items()}

    def apply_gradients(self, state: OptimizerState) -> None:
        params = dict(self.parameters())
        nadam_step(params, self.gradients(), state)


def gradient_check(
    loss_fn: Callable[[], float],
    param: np.ndarray,
    analytic: np.ndarray,
    *,
    step: float = 1e-5,
) -> float:
    """Max relative error between analytic and central-difference gradients of param."""
    numeric = np.zeros_like(param, dtype=np.float64)
    flat = param.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + step
        plus = loss_fn()
        flat[i] = original - step
        minus = loss_fn()
        flat[i] = original
        numeric.reshape(-1)[i] = (plus - minus) / (2 * step)
    scale = np.maximum(np.abs(numeric) + np.abs(analytic), 1e-6)
    return float(np.max(np.abs(numeric - analytic) / scale))


def chain(first: Sequential, second: Sequential) -> Sequential:
    """A network running first then second on the same layer objects (shared weights)."""
    if first.output_shape != second.input_shape:
        raise ShapeError(f"cannot chain {first.output_shape} into {second.input_shape}")
    combined = Sequential.__new__(Sequential)
    combined.specs = first.specs + second.specs
    combined.input_shape = first.input_shape
    combined.dtype = first.dtype
    combined.layers = first.layers + second.layers
    combined.output_shape = second.output_shape
    combined._forward_recorded = False
    return combined
