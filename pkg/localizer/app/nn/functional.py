"""Stateless forward/backward kernels on NHWC numpy batches.

Every kernel takes a batch shaped (N, H, W, C) (or (N, D) for dense) and
uses valid padding. Backward helpers return gradients in the same layout.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from app.errors import ConfigError, ShapeError

BN_EPSILON = 1e-3


def _require_rank(x: np.ndarray, rank: int, op: str) -> None:
    if x.ndim != rank:
        raise ShapeError(f"{op} expects a rank-{rank} batch, got shape {x.shape}")


def output_dim(size: int, window: int, stride: int) -> int:
    return (size - window) // stride + 1


def _patches(x: np.ndarray, window: int, stride: int) -> np.ndarray:
    # (N, Ho, Wo, C, k, k) view; no copy until reshaped.
    view = sliding_window_view(x, (window, window), axis=(1, 2))
    return view[:, ::stride, ::stride]


def im2col(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """(N, H, W, C) -> (N*Ho*Wo, k*k*C) with (ki, kj, c) ordering."""
    patches = _patches(x, kernel, stride)
    n, ho, wo, c = patches.shape[:4]
    return patches.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kernel * kernel * c)


def conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray, stride: int = 1) -> np.ndarray:
    """Cross-correlation; weights shaped (k, k, C_in, F)."""
    _require_rank(x, 4, "conv2d")
    kernel, _, c_in, filters = weights.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"conv2d expects {c_in} input channels, got {x.shape[3]}")
    if kernel > x.shape[1] or kernel > x.shape[2]:
        raise ShapeError(f"conv2d kernel {kernel} larger than input {x.shape[1:3]}")
    n = x.shape[0]
    ho, wo = output_dim(x.shape[1], kernel, stride), output_dim(x.shape[2], kernel, stride)
    cols = im2col(x, kernel, stride)
    out = cols @ weights.reshape(-1, filters) + bias
    return out.reshape(n, ho, wo, filters)


def conv2d_backward(
    dout: np.ndarray, x: np.ndarray, weights: np.ndarray, stride: int = 1
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel, _, c_in, filters = weights.shape
    n, ho, wo, _ = dout.shape
    cols = im2col(x, kernel, stride)
    dout2d = dout.reshape(-1, filters)
    dweights = (cols.T @ dout2d).reshape(weights.shape)
    dbias = dout2d.sum(axis=0)
    dcols = (dout2d @ weights.reshape(-1, filters).T).reshape(n, ho, wo, kernel, kernel, c_in)
    dx = np.zeros_like(x)
    for i in range(kernel):
        for j in range(kernel):
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    return dx, dweights, dbias


def maxpool_forward(x: np.ndarray, pool_size: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Returns the pooled batch and the flat argmax inside each window."""
    _require_rank(x, 4, "maxpool")
    if pool_size > x.shape[1] or pool_size > x.shape[2]:
        raise ShapeError(f"pool {pool_size} larger than input {x.shape[1:3]}")
    patches = _patches(x, pool_size, stride)
    flat = patches.reshape(*patches.shape[:4], pool_size * pool_size)
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]
    return out, argmax


def maxpool_backward(
    dout: np.ndarray, argmax: np.ndarray, input_shape: tuple[int, ...], pool_size: int, stride: int
) -> np.ndarray:
    dx = np.zeros(input_shape, dtype=dout.dtype)
    ho, wo = dout.shape[1], dout.shape[2]
    for i in range(pool_size):
        for j in range(pool_size):
            routed = np.where(argmax == i * pool_size + j, dout, 0)
            dx[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += routed
    return dx


def upsample_forward(x: np.ndarray, factor: int, output_size: int | None = None) -> np.ndarray:
    """Nearest-neighbour repetition; optional edge padding up to output_size."""
    _require_rank(x, 4, "upsample")
    if factor < 1:
        raise ConfigError("upsample factor must be >= 1")
    out = np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)
    if output_size is not None:
        grow_h, grow_w = output_size - out.shape[1], output_size - out.shape[2]
        if grow_h < 0 or grow_w < 0:
            raise ShapeError(f"upsample output {out.shape[1:3]} exceeds target {output_size}")
        if grow_h or grow_w:
            out = np.pad(out, ((0, 0), (0, grow_h), (0, grow_w), (0, 0)), mode="edge")
    return out


def upsample_backward(dout: np.ndarray, factor: int, input_shape: tuple[int, ...]) -> np.ndarray:
    n, h, w, c = input_shape
    hf, wf = h * factor, w * factor
    grad = dout.copy()
    if grad.shape[1] > hf:
        grad[:, hf - 1] += grad[:, hf:].sum(axis=1)
        grad = grad[:, :hf]
    if grad.shape[2] > wf:
        grad[:, :, wf - 1] += grad[:, :, wf:].sum(axis=2)
        grad = grad[:, :, :wf]
    return grad.reshape(n, h, factor, w, factor, c).sum(axis=(2, 4))


def transposed_conv2d_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 transposed convolution; weights (k, k, C_in, F); output side = in + k - 1."""
    _require_rank(x, 4, "transposed_conv2d")
    kernel, _, c_in, filters = weights.shape
    if x.shape[3] != c_in:
        raise ShapeError(f"transposed_conv2d expects {c_in} input channels, got {x.shape[3]}")
    n, h, w, _ = x.shape
    out = np.zeros((n, h + kernel - 1, w + kernel - 1, filters), dtype=np.result_type(x, weights))
    for i in range(kernel):
        for j in range(kernel):
            out[:, i:i + h, j:j + w, :] += x @ weights[i, j]
    return out + bias


def transposed_conv2d_backward(
    dout: np.ndarray, x: np.ndarray, weights: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    kernel, _, c_in, filters = weights.shape
    n, h, w, _ = x.shape
    x2d = x.reshape(-1, c_in)
    dx = np.zeros_like(x)
    dweights = np.zeros_like(weights)
    for i in range(kernel):
        for j in range(kernel):
            window = dout[:, i:i + h, j:j + w, :]
            dx += window @ weights[i, j].T
            dweights[i, j] = x2d.T @ window.reshape(-1, filters)
    dbias = dout.reshape(-1, filters).sum(axis=0)
    return dx, dweights, dbias


def _moment_axes(x: np.ndarray) -> tuple[int, ...]:
    return tuple(range(x.ndim - 1))


def batchnorm_forward(
    x: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    mode: str,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    momentum: float = 0.99,
    epsilon: float = BN_EPSILON,
) -> tuple[np.ndarray, dict[str, np.ndarray] | None]:
    """
    Per-channel normalization over every axis but the last.

    Train mode updates running_mean/running_var in place and returns a cache
    for the backward pass; infer mode returns (output, None).
    """
    if mode == "infer":
        return gamma * (x - running_mean) / np.sqrt(running_var + epsilon) + beta, None
    if mode != "train":
        raise ConfigError(f"unknown batchnorm mode {mode!r}")
    if x.shape[0] == 0:
        raise ShapeError("batchnorm in train mode needs a non-empty batch")

    axes = _moment_axes(x)
    mean = x.mean(axis=axes)
    var = x.var(axis=axes)
    inv_std = 1.0 / np.sqrt(var + epsilon)
    x_hat = (x - mean) * inv_std

    running_mean *= momentum
    running_mean += (1.0 - momentum) * mean
    running_var *= momentum
    running_var += (1.0 - momentum) * var
    return gamma * x_hat + beta, {"x_hat": x_hat, "inv_std": inv_std}


def batchnorm_backward(
    dout: np.ndarray, gamma: np.ndarray, cache: dict[str, np.ndarray]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    axes = _moment_axes(dout)
    x_hat, inv_std = cache["x_hat"], cache["inv_std"]
    count = dout.size // dout.shape[-1]
    dgamma = (dout * x_hat).sum(axis=axes)
    dbeta = dout.sum(axis=axes)
    dx_hat = dout * gamma
    dx = (inv_std / count) * (
        count * dx_hat - dx_hat.sum(axis=axes) - x_hat * (dx_hat * x_hat).sum(axis=axes)
    )
    return dx, dgamma, dbeta


def dropout_mask(shape: tuple[int, ...], rate: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability rate, 1/(1-rate) otherwise."""
    if not 0 <= rate < 1:
        raise ConfigError("dropout rate must lie in [0, 1)")
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


def dropout_forward(
    x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None = None, seed: int | None = None
) -> np.ndarray:
    if not 0 <= rate < 1:
        raise ConfigError("dropout rate must lie in [0, 1)")
    if mode == "infer" or rate == 0:
        return x
    generator = rng if rng is not None else np.random.default_rng(seed)
    return x * dropout_mask(x.shape, rate, generator, dtype=x.dtype)


def dense_forward(x: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> np.ndarray:
    _require_rank(x, 2, "dense")
    if x.shape[1] != weights.shape[0]:
        raise ShapeError(f"dense expects width {weights.shape[0]}, got {x.shape[1]}")
    return x @ weights + bias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    z = np.exp(x[~positive])
    out[~positive] = z / (1.0 + z)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def activation_forward(x: np.ndarray, activation: str) -> np.ndarray:
    if activation == "relu":
        return relu(x)
    if activation == "sigmoid":
        return sigmoid(x)
    if activation == "softmax":
        return softmax(x)
    if activation == "identity":
        return x
    raise ConfigError(f"unknown activation {activation!r}")


def activation_backward(dout: np.ndarray, x: np.ndarray, y: np.ndarray, activation: str) -> np.ndarray:
    """Gradient wrt the activation input given its input x and output y."""
    if activation == "relu":
        return dout * (x > 0)
    if activation == "sigmoid":
        return dout * y * (1.0 - y)
    if activation == "softmax":
        return y * (dout - (dout * y).sum(axis=-1, keepdims=True))
    if activation == "identity":
        return dout
    raise ConfigError(f"unknown activation {activation!r}")
