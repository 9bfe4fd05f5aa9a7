import numpy as np
import pytest

from app.errors import ModelMismatchError, QuantizationError
from app.nn.layers import LayerSpec
from app.nn.network import Sequential
from app.services.model import TrainConfig, build_model, count_parameters
from app.services.quantization import (
    fold_batchnorm,
    int8_params,
    quantize_f16,
    quantize_int8,
    quantize_tensor_f16,
    quantize_tensor_int8,
    quantized_predict,
    quantized_predict_proba,
)
from builders import synthetic_grid


def _images(count: int, side: int = 17, seed: int = 0) -> np.ndarray:
    return np.random.default_rng(seed).uniform(size=(count, side, side, 1)).astype(np.float32)


def _randomize_batchnorms(network: Sequential, seed: int = 0) -> None:
    rng = np.random.default_rng(seed)
    for layer in network:
        if layer.spec.kind == "batchnorm":
            size = layer.params["gamma"].shape
            layer.params["gamma"] = rng.uniform(0.5, 1.5, size).astype(np.float32)
            layer.params["beta"] = rng.normal(0, 0.1, size).astype(np.float32)
            layer.params["moving_mean"] = rng.normal(0, 0.1, size).astype(np.float32)
            layer.params["moving_var"] = rng.uniform(0.5, 2.0, size).astype(np.float32)


def test_int8_params_keep_zero_in_range() -> None:
    scale, zero_point = int8_params(np.array([-1.0, 3.0]))
    assert scale == pytest.approx(4.0 / 255)
    assert zero_point == -64
    scale, zero_point = int8_params(np.array([0.5, 2.0]))
    assert scale == pytest.approx(2.0 / 255)
    assert zero_point == -128


def test_int8_round_trip_error_is_bounded_by_half_a_step() -> None:
    values = np.random.default_rng(1).normal(size=1000)
    tensor = quantize_tensor_int8(values)
    assert tensor.values.dtype == np.int8
    assert np.max(np.abs(tensor.dequantize() - values)) <= tensor.scale / 2 + 1e-6


def test_int8_all_zero_tensor_dequantizes_exactly() -> None:
    tensor = quantize_tensor_int8(np.zeros(5))
    assert np.all(tensor.dequantize() == 0.0)


def test_non_finite_and_overflowing_weights_are_rejected() -> None:
    with pytest.raises(QuantizationError):
        quantize_tensor_int8(np.array([1.0, np.inf]))
    with pytest.raises(QuantizationError):
        quantize_tensor_f16(np.array([np.nan]))
    with pytest.raises(QuantizationError):
        quantize_tensor_f16(np.array([1e6]))


def test_fold_batchnorm_preserves_inference_output() -> None:
    model = build_model(17, synthetic_grid(5), TrainConfig())
    _randomize_batchnorms(model.classifier)
    folded = fold_batchnorm(model.classifier)
    assert all(spec.folded for spec in folded.specs if spec.kind == "batchnorm")
    assert not any(key.endswith("moving_mean") for key in folded.state_dict())
    images = _images(6)
    assert np.allclose(folded.forward(images), model.classifier.forward(images), atol=1e-5)


def test_f16_is_exact_for_representable_weights() -> None:
    specs = [
        LayerSpec(name="c", kind="conv2d", filters=4, kernel_size=3, stride=1),
        LayerSpec(name="r", kind="activation", activation="relu"),
        LayerSpec(name="f", kind="flatten"),
        LayerSpec(name="d", kind="dense", filters=3),
        LayerSpec(name="s", kind="activation", activation="softmax"),
    ]
    network = Sequential(specs, (5, 5, 1), seed=3)
    network.load_state_dict({k: v.astype(np.float16).astype(np.float32) for k, v in network.state_dict().items()})
    quantized = quantize_f16(network, synthetic_grid(3))
    images = _images(4, side=5)
    assert np.array_equal(quantized.predict_proba(images), network.forward(images))


def test_int8_stays_close_to_dequantized_float_network() -> None:
    model = build_model(17, synthetic_grid(5), TrainConfig())
    _randomize_batchnorms(model.classifier, seed=2)
    quantized = quantize_int8(model)
    images = _images(8, seed=4)
    reference = quantized.dequantized_network().forward(images)
    assert np.allclose(quantized.predict_proba(images), reference, atol=1e-4)
    assert np.allclose(quantized.predict_proba(images).sum(axis=1), 1.0, atol=1e-5)


def test_int8_identity_conv_error_is_within_one_weight_step() -> None:
    network = Sequential([LayerSpec(name="c", kind="conv2d", filters=1, kernel_size=1, stride=1)], (4, 4, 1))
    network.load_state_dict({"c/kernel": np.ones((1, 1, 1, 1)), "c/bias": np.zeros(1)})
    quantized = quantize_int8(network, synthetic_grid(1))
    x = np.random.default_rng(5).uniform(-1, 1, size=(3, 4, 4, 1)).astype(np.float32)
    out = quantized_predict_proba(quantized, x)
    kernel = quantized.tensors["c/kernel"]
    assert np.all(np.abs(out - x) <= kernel.scale / 2 * np.abs(x) + 1e-6)


def test_payload_sizes_for_823_classes() -> None:
    model = build_model(23, synthetic_grid(823), TrainConfig())
    float_bytes = count_parameters(model) * 4
    int8 = quantize_int8(model)
    f16 = quantize_f16(model)
    assert int8.payload_bytes() == 497_232 + 3_740
    assert int8.payload_bytes() / float_bytes <= 0.29
    assert 0.45 <= f16.payload_bytes() / float_bytes <= 0.5
    assert int8.class_count == 823


def test_quantized_predict_follows_predict_contract() -> None:
    grid = synthetic_grid(4)
    model = build_model(17, grid, TrainConfig())
    quantized = quantize_f16(model)
    image = _images(1)[0]
    result = quantized_predict(quantized, image)
    assert result.class_id == int(np.argmax(quantized.predict_proba(image[None])[0]))
    assert result.centroid == grid.cells[result.class_id].centroid


def test_unfoldable_batchnorm_and_missing_grid_are_rejected() -> None:
    specs = [
        LayerSpec(name="bn", kind="batchnorm"),
        LayerSpec(name="c", kind="conv2d", filters=1, kernel_size=1, stride=1),
    ]
    network = Sequential(specs, (3, 3, 1))
    with pytest.raises(QuantizationError):
        quantize_int8(network, synthetic_grid(1))
    with pytest.raises(ModelMismatchError):
        quantize_int8(network)


def test_non_finite_model_weights_are_rejected() -> None:
    model = build_model(17, synthetic_grid(2), TrainConfig())
    model.classifier.layer("clf_dense").params["bias"][0] = np.nan
    with pytest.raises(QuantizationError):
        quantize_int8(model)
