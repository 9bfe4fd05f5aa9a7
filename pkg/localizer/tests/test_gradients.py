import numpy as np
import pytest

from app.nn.layers import Dropout, LayerSpec
from app.nn.losses import mse, sparse_cce
from app.nn.network import Sequential, gradient_check

TOLERANCE = 1e-4

CASES = {
    "conv2d": ([LayerSpec(name="c", kind="conv2d", filters=2, kernel_size=3, stride=1)], (5, 5, 2)),
    "conv2d_stride": ([LayerSpec(name="c", kind="conv2d", filters=3, kernel_size=2, stride=2)], (6, 6, 1)),
    "transposed_conv2d": ([LayerSpec(name="t", kind="transposed_conv2d", filters=2, kernel_size=3)], (3, 3, 2)),
    "maxpool": ([LayerSpec(name="p", kind="maxpool", pool_size=2, stride=2)], (4, 4, 2)),
    "upsample": ([LayerSpec(name="u", kind="upsample", factor=2, output_size=5)], (2, 2, 1)),
    "batchnorm": ([LayerSpec(name="bn", kind="batchnorm", momentum=0.9)], (3, 3, 2)),
    "dense": ([LayerSpec(name="f", kind="flatten"), LayerSpec(name="d", kind="dense", filters=3)], (2, 2, 2)),
    "relu": ([LayerSpec(name="a", kind="activation", activation="relu")], (3, 3, 1)),
    "sigmoid": ([LayerSpec(name="a", kind="activation", activation="sigmoid")], (3, 3, 1)),
    "softmax": ([LayerSpec(name="f", kind="flatten"), LayerSpec(name="a", kind="activation", activation="softmax")],
                (2, 2, 1)),
    "dropout": ([LayerSpec(name="f", kind="flatten"), LayerSpec(name="drop", kind="dropout", rate=0.5),
                 LayerSpec(name="d", kind="dense", filters=2)], (3, 3, 1)),
}


def _pin_dropout(net: Sequential) -> None:
    for layer in net:
        if isinstance(layer, Dropout):
            layer.reuse_mask = True


@pytest.mark.parametrize("case", sorted(CASES))
def test_layer_gradients_match_central_differences(case: str) -> None:
    specs, input_shape = CASES[case]
    net = Sequential(specs, input_shape, seed=1, dtype=np.float64)
    _pin_dropout(net)
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, *input_shape))
    projection = rng.normal(size=(4, *net.output_shape))

    def loss() -> float:
        return float(np.sum(net.forward(x, training=True) * projection))

    loss()
    dx = net.backward(projection)
    grads = {name: grad.copy() for name, grad in net.gradients().items()}

    for name, param in net.parameters():
        assert gradient_check(loss, param, grads[name]) < TOLERANCE, name
    assert gradient_check(loss, x, dx) < TOLERANCE


def test_softmax_cross_entropy_fused_gradient() -> None:
    specs = [
        LayerSpec(name="f", kind="flatten"),
        LayerSpec(name="d", kind="dense", filters=4),
        LayerSpec(name="s", kind="activation", activation="softmax"),
    ]
    net = Sequential(specs, (3, 3, 1), seed=2, dtype=np.float64)
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 3, 3, 1))
    labels = np.array([0, 1, 2, 3, 1])

    def loss() -> float:
        return sparse_cce(net.forward_logits(x, training=True), labels)[0]

    value, grad = sparse_cce(net.forward_logits(x, training=True), labels)
    net.backward(grad, from_logits=True)
    grads = net.gradients()
    for name, param in net.parameters():
        assert gradient_check(loss, param, grads[name]) < TOLERANCE, name
    assert value > 0


def test_sigmoid_mse_gradient() -> None:
    specs = [
        LayerSpec(name="c", kind="conv2d", filters=1, kernel_size=3, stride=1),
        LayerSpec(name="s", kind="activation", activation="sigmoid"),
    ]
    net = Sequential(specs, (5, 5, 1), seed=4, dtype=np.float64)
    rng = np.random.default_rng(5)
    x = rng.uniform(size=(3, 5, 5, 1))
    target = rng.uniform(size=(3, 3, 3, 1))

    def loss() -> float:
        return mse(net.forward(x, training=True), target)[0]

    _, grad = mse(net.forward(x, training=True), target)
    net.backward(grad)
    grads = net.gradients()
    for name, param in net.parameters():
        assert gradient_check(loss, param, grads[name]) < TOLERANCE, name


def test_encoder_block_gradient() -> None:
    specs = [
        LayerSpec(name="c", kind="conv2d", filters=3, kernel_size=3, stride=1),
        LayerSpec(name="r", kind="activation", activation="relu"),
        LayerSpec(name="bn", kind="batchnorm", momentum=0.99),
        LayerSpec(name="p", kind="maxpool", pool_size=3, stride=3),
    ]
    net = Sequential(specs, (8, 8, 1), seed=6, dtype=np.float64)
    rng = np.random.default_rng(8)
    x = rng.normal(size=(3, 8, 8, 1))
    projection = rng.normal(size=(3, *net.output_shape))

    def loss() -> float:
        return float(np.sum(net.forward(x, training=True) * projection))

    loss()
    net.backward(projection)
    grads = {name: grad.copy() for name, grad in net.gradients().items()}
    for name, param in net.parameters():
        assert gradient_check(loss, param, grads[name]) < TOLERANCE, name
