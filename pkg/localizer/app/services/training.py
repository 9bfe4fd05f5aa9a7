"""Two-stage training: CAE reconstruction pretraining, then end-to-end classification."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from tqdm import tqdm

from app.config import settings
from app.errors import DataValidationError, DivergenceError, EmptyInputError
from app.nn.losses import mse, sparse_cce
from app.nn.network import Sequential
from app.nn.optim import OptimizerState
from app.services.datasets import DatasetManifest, to_radio_images
from app.services.gridding import GridMap, SplitResult, label_records
from app.services.model import (
    CaeCnnLocModel,
    ConvAutoencoder,
    TrainConfig,
    attach_classifier,
    build_autoencoder,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainHistory:
    stage: str
    loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    accuracy: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    best_epoch: int | None = None

    def to_frame(self) -> pd.DataFrame:
        epochs = len(self.loss)

        def _column(values: list[float]) -> list[float]:
            return values + [math.nan] * (epochs - len(values))

        return pd.DataFrame(
            {
                "stage": [self.stage] * epochs,
                "epoch": list(range(1, epochs + 1)),
                "loss": self.loss,
                "val_loss": _column(self.val_loss),
                "accuracy": _column(self.accuracy),
                "val_accuracy": _column(self.val_accuracy),
            }
        )


def _batches(count: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(count)
    for start in range(0, count, batch_size):
        yield order[start:start + batch_size]


def _check_finite(loss: float, stage: str, epoch: int) -> None:
    if not math.isfinite(loss):
        raise DivergenceError(f"{stage}: loss became {loss} in epoch {epoch}")


def _epochs(count: int, stage: str):
    return tqdm(range(1, count + 1), desc=stage, disable=not settings.progress)


def train_cae(
    images: np.ndarray,
    cfg: TrainConfig,
    *,
    autoencoder: ConvAutoencoder | None = None,
) -> tuple[ConvAutoencoder, TrainHistory]:
    """Minimize MSE(decoder(encoder(x)), x) with Nadam; returns the model and per-epoch loss."""
    if len(images) == 0:
        raise EmptyInputError("train_cae needs at least one image")
    autoencoder = autoencoder or build_autoencoder(images.shape[1], cfg)
    network = autoencoder.network
    state = OptimizerState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed)
    history = TrainHistory(stage="cae")

    for epoch in _epochs(cfg.cae_epochs, "cae"):
        total, seen = 0.0, 0
        for batch in _batches(len(images), cfg.batch_size, rng):
            x = images[batch]
            reconstruction = network.forward(x, training=True)
            loss, grad = mse(reconstruction, x)
            _check_finite(loss, "cae", epoch)
            network.backward(grad)
            network.apply_gradients(state)
            total += loss * len(batch)
            seen += len(batch)
        history.loss.append(total / seen)
        logger.info("cae epoch %d/%d: mse=%.6f", epoch, cfg.cae_epochs, history.loss[-1])

    return autoencoder, history


def _validate_labels(labels: np.ndarray, class_count: int) -> np.ndarray:
    array = np.asarray(labels)
    if array.dtype == object or not np.issubdtype(array.dtype, np.integer):
        raise DataValidationError("labels must be integer class ids (unmapped records must be dropped first)")
    if array.size and (array.min() < 0 or array.max() >= class_count):
        raise DataValidationError(f"labels must lie in [0, {class_count})")
    return array.astype(np.int64)


def evaluate_loss(network: Sequential, images: np.ndarray, labels: np.ndarray, batch_size: int = 1024) -> tuple[float, float]:
    """Mean CCE and accuracy in inference mode."""
    total_loss, correct = 0.0, 0
    for start in range(0, len(images), batch_size):
        logits = network.forward_logits(images[start:start + batch_size], training=False)
        y = labels[start:start + batch_size]
        loss, _ = sparse_cce(logits, y)
        total_loss += loss * len(y)
        correct += int((logits.argmax(axis=1) == y).sum())
    return total_loss / len(images), correct / len(images)


def train_classifier(
    model: CaeCnnLocModel,
    images: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    *,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
) -> tuple[CaeCnnLocModel, TrainHistory]:
    """
    Fine-tune encoder and head end to end on sparse CCE.

    Early stopping watches validation loss (training loss when no validation set);
    the best epoch's weights are restored before returning.
    """
    if len(images) == 0:
        raise EmptyInputError("train_classifier needs at least one image")
    labels = _validate_labels(labels, model.class_count)
    has_val = val_images is not None and val_labels is not None and len(val_images) > 0
    if has_val:
        val_labels = _validate_labels(val_labels, model.class_count)

    network = model.classifier
    state = OptimizerState(learning_rate=cfg.learning_rate)
    rng = np.random.default_rng(cfg.seed + 3)
    history = TrainHistory(stage="classifier")

    best_monitor = math.inf
    best_state = network.copy_state()
    stale = 0

    for epoch in _epochs(cfg.clf_epochs, "classifier"):
        total, correct, seen = 0.0, 0, 0
        for batch in _batches(len(images), cfg.batch_size, rng):
            x, y = images[batch], labels[batch]
            logits = network.forward_logits(x, training=True)
            loss, grad = sparse_cce(logits, y)
            _check_finite(loss, "classifier", epoch)
            network.backward(grad, from_logits=True)
            network.apply_gradients(state)
            total += loss * len(batch)
            correct += int((logits.argmax(axis=1) == y).sum())
            seen += len(batch)
        history.loss.append(total / seen)
        history.accuracy.append(correct / seen)

        if has_val:
            val_loss, val_accuracy = evaluate_loss(network, val_images, val_labels)
            history.val_loss.append(val_loss)
            history.val_accuracy.append(val_accuracy)
            monitor = val_loss
        else:
            monitor = history.loss[-1]
        logger.info(
            "classifier epoch %d/%d: loss=%.4f acc=%.4f%s",
            epoch, cfg.clf_epochs, history.loss[-1], history.accuracy[-1],
            f" val_loss={history.val_loss[-1]:.4f} val_acc={history.val_accuracy[-1]:.4f}" if has_val else "",
        )

        if monitor < best_monitor:
            best_monitor, best_state, stale = monitor, network.copy_state(), 0
            history.best_epoch = epoch
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("early stop after epoch %d (best epoch %s)", epoch, history.best_epoch)
                break

    network.load_state_dict(best_state)
    return model, history


def train_model(
    train_images: np.ndarray,
    train_labels: np.ndarray,
    grid: GridMap,
    cfg: TrainConfig,
    *,
    val_images: np.ndarray | None = None,
    val_labels: np.ndarray | None = None,
    metadata: dict | None = None,
) -> tuple[CaeCnnLocModel, list[TrainHistory]]:
    """Both stages back to back: CAE pretraining, then classifier fine-tuning."""
    autoencoder, cae_history = train_cae(train_images, cfg)
    model = attach_classifier(autoencoder, grid, cfg, metadata)
    model.metadata.update({"seed": cfg.seed, "cae_epochs": cfg.cae_epochs, "clf_epochs": cfg.clf_epochs,
                           "cell_length": grid.config.cell_length})
    model, clf_history = train_classifier(
        model, train_images, train_labels, cfg, val_images=val_images, val_labels=val_labels)
    return model, [cae_history, clf_history]


def fit_split(
    split: SplitResult,
    manifest: DatasetManifest,
    cfg: TrainConfig,
    *,
    metadata: dict | None = None,
) -> tuple[CaeCnnLocModel, list[TrainHistory]]:
    """Train on a prepared split; validation rows outside the grid are left out."""
    train_images = to_radio_images(split.train, manifest)
    train_labels = np.array(label_records(split.train, split.grid), dtype=np.int64)
    val_classes = label_records(split.val, split.grid)
    keep = [i for i, label in enumerate(val_classes) if label is not None]
    val_images = to_radio_images([split.val[i] for i in keep], manifest)
    val_labels = np.array([val_classes[i] for i in keep], dtype=np.int64)
    logger.info("Training on %d images (%d validation) over %d classes",
                len(train_images), len(val_images), split.grid.class_count)
    return train_model(
        train_images, train_labels, split.grid, cfg,
        val_images=val_images, val_labels=val_labels, metadata=metadata)
