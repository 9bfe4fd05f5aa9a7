"""Localizer architecture: convolutional auto-encoder plus classifier head.

    input 23x23x1
    encoder   conv f=16 k=3 -> BN -> relu -> maxpool 3/3      21x21x16 -> 7x7x16
    decoder   upsample x3 -> transposed conv k=3 -> sigmoid    21x21x16 -> 23x23x1
    head      conv f=32 k=3 -> BN -> relu                      5x5x32
              conv f=64 k=3 -> BN -> relu                      3x3x64
              flatten -> dropout -> dense K -> softmax         576 -> K

The decoder only exists during training; the deployed classifier is encoder + head.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Protocol

import numpy as np
from pydantic import BaseModel, Field

from app.errors import ModelMismatchError
from app.nn.functional import output_dim
from app.nn.layers import LayerSpec
from app.nn.network import Sequential, chain
from app.services.datasets import RadioImage
from app.services.gridding import GridMap

ENCODER_FILTERS = 16
HEAD_FILTERS = (32, 64)
KERNEL_SIZE = 3
POOL_SIZE = 3
PREDICT_CHUNK = 1024


class TrainConfig(BaseModel):
    cae_epochs: int = Field(default=30, ge=0)
    clf_epochs: int = Field(default=100, ge=0)
    batch_size: int = Field(default=128, ge=1)
    dropout_rate: float = Field(default=0.3, ge=0, lt=1)
    seed: int = 0
    patience: int = Field(default=10, ge=1)
    learning_rate: float = Field(default=0.001, ge=0)
    bn_momentum: float = Field(default=0.99, ge=0, le=1)
    val_fraction: float = Field(default=0.1, gt=0, lt=1)


def encoder_specs(bn_momentum: float = 0.99) -> list[LayerSpec]:
    return [
        LayerSpec(name="enc_conv", kind="conv2d", filters=ENCODER_FILTERS, kernel_size=KERNEL_SIZE, stride=1),
        LayerSpec(name="enc_bn", kind="batchnorm", momentum=bn_momentum),
        LayerSpec(name="enc_relu", kind="activation", activation="relu"),
        LayerSpec(name="enc_pool", kind="maxpool", pool_size=POOL_SIZE, stride=POOL_SIZE),
    ]


def decoder_specs(side: int) -> list[LayerSpec]:
    # Mirror of the encoder; edge padding covers conv outputs that are not a multiple of the pool.
    conv_side = side - KERNEL_SIZE + 1
    return [
        LayerSpec(name="dec_upsample", kind="upsample", factor=POOL_SIZE, output_size=conv_side),
        LayerSpec(name="dec_deconv", kind="transposed_conv2d", filters=1, kernel_size=KERNEL_SIZE),
        LayerSpec(name="dec_sigmoid", kind="activation", activation="sigmoid"),
    ]


def head_specs(class_count: int, dropout_rate: float = 0.3, bn_momentum: float = 0.99) -> list[LayerSpec]:
    specs: list[LayerSpec] = []
    for index, filters in enumerate(HEAD_FILTERS, start=1):
        specs += [
            LayerSpec(name=f"clf_conv{index}", kind="conv2d", filters=filters, kernel_size=KERNEL_SIZE, stride=1),
            LayerSpec(name=f"clf_bn{index}", kind="batchnorm", momentum=bn_momentum),
            LayerSpec(name=f"clf_relu{index}", kind="activation", activation="relu"),
        ]
    specs += [
        LayerSpec(name="clf_flatten", kind="flatten"),
        LayerSpec(name="clf_dropout", kind="dropout", rate=dropout_rate),
        LayerSpec(name="clf_dense", kind="dense", filters=class_count),
        LayerSpec(name="clf_softmax", kind="activation", activation="softmax"),
    ]
    return specs


def encoded_side(side: int) -> int:
    return output_dim(side - KERNEL_SIZE + 1, POOL_SIZE, POOL_SIZE)


@dataclass
class ConvAutoencoder:
    encoder: Sequential
    decoder: Sequential

    @property
    def side(self) -> int:
        return self.encoder.input_shape[0]

    @property
    def network(self) -> Sequential:
        return chain(self.encoder, self.decoder)

    def reconstruct(self, images: np.ndarray) -> np.ndarray:
        return self.network.forward(images, training=False)


def build_autoencoder(side: int, cfg: TrainConfig, *, dtype=np.float32) -> ConvAutoencoder:
    encoder = Sequential(encoder_specs(cfg.bn_momentum), (side, side, 1), seed=cfg.seed, dtype=dtype)
    decoder = Sequential(decoder_specs(side), encoder.output_shape, seed=cfg.seed + 1, dtype=dtype)
    if decoder.output_shape != (side, side, 1):
        raise ModelMismatchError(f"decoder reconstructs {decoder.output_shape}, expected {(side, side, 1)}")
    return ConvAutoencoder(encoder=encoder, decoder=decoder)


@dataclass(frozen=True)
class Prediction:
    class_id: int
    probabilities: np.ndarray
    building: int
    floor: int
    centroid: tuple[float, float]

    @property
    def probability(self) -> float:
        return float(self.probabilities[self.class_id])


class Localizer(Protocol):
    """Anything that maps radio images to class probabilities over a grid."""

    grid: GridMap

    @property
    def side(self) -> int: ...

    def predict_proba(self, images: np.ndarray) -> np.ndarray: ...


@dataclass
class CaeCnnLocModel:
    classifier: Sequential
    grid: GridMap
    decoder: Sequential | None = None
    metadata: dict[str, Any] = field(default_factory=dict)
    precision: str = "f32"

    @property
    def side(self) -> int:
        return self.classifier.input_shape[0]

    @property
    def class_count(self) -> int:
        return self.classifier.output_shape[0]

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        images = as_image_batch(images, self.side)
        chunks = [
            self.classifier.forward(images[start:start + PREDICT_CHUNK], training=False)
            for start in range(0, len(images), PREDICT_CHUNK)
        ]
        if not chunks:
            return np.zeros((0, self.class_count), dtype=np.float32)
        return np.concatenate(chunks)


def attach_classifier(
    autoencoder: ConvAutoencoder,
    grid: GridMap,
    cfg: TrainConfig,
    metadata: dict[str, Any] | None = None,
) -> CaeCnnLocModel:
    """Stack a fresh classifier head on the (shared, not copied) pretrained encoder."""
    head = Sequential(
        head_specs(grid.class_count, cfg.dropout_rate, cfg.bn_momentum),
        autoencoder.encoder.output_shape,
        seed=cfg.seed + 2,
        dtype=autoencoder.encoder.dtype,
    )
    return CaeCnnLocModel(
        classifier=chain(autoencoder.encoder, head),
        grid=grid,
        decoder=autoencoder.decoder,
        metadata=dict(metadata or {}),
    )


def build_model(side: int, grid: GridMap, cfg: TrainConfig, *, dtype=np.float32) -> CaeCnnLocModel:
    return attach_classifier(build_autoencoder(side, cfg, dtype=dtype), grid, cfg)


def as_image_batch(images: np.ndarray | RadioImage, side: int) -> np.ndarray:
    if isinstance(images, RadioImage):
        images = images.pixels
    batch = np.asarray(images, dtype=np.float32)
    if batch.ndim == 2:
        batch = batch[None, :, :, None]
    elif batch.ndim == 3:
        batch = batch[..., None] if batch.shape[1:] == (side, side) else batch[None]
    if batch.ndim != 4 or batch.shape[1:] != (side, side, 1):
        raise ModelMismatchError(f"model expects {side}x{side} radio images, got shape {np.shape(images)}")
    return batch


def predict(model: Localizer, image: np.ndarray | RadioImage) -> Prediction:
    """Argmax class plus the building/floor/centroid recorded for it in the grid."""
    probabilities = model.predict_proba(as_image_batch(image, model.side))[0]
    class_id = int(np.argmax(probabilities))
    cell = model.grid.cells[class_id]
    return Prediction(
        class_id=class_id,
        probabilities=probabilities,
        building=cell.building,
        floor=cell.floor,
        centroid=cell.centroid,
    )


@dataclass(frozen=True, eq=False)
class BatchPrediction:
    class_ids: np.ndarray
    probabilities: np.ndarray
    buildings: np.ndarray
    floors: np.ndarray
    centroids: np.ndarray


def predict_batch(model: Localizer, images: np.ndarray) -> BatchPrediction:
    probabilities = model.predict_proba(as_image_batch(images, model.side))
    class_ids = probabilities.argmax(axis=1) if len(probabilities) else np.zeros(0, dtype=np.int64)
    grid = model.grid
    return BatchPrediction(
        class_ids=class_ids,
        probabilities=probabilities,
        buildings=grid.buildings()[class_ids],
        floors=grid.floors()[class_ids],
        centroids=grid.centroids()[class_ids],
    )


def classifier_network(model: CaeCnnLocModel) -> Sequential:
    """The deployed graph: encoder plus head, no decoder."""
    return model.classifier


def count_parameters(model: CaeCnnLocModel) -> int:
    """Trainable parameters of the deployed classifier (decoder excluded)."""
    return classifier_network(model).parameter_count()
