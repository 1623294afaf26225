"""Mini-batch SGD training with on-the-fly augmentation.

Training is single-threaded and fully deterministic per seed: batch
order, augmentation draws and dropout masks all come from one generator,
so identical configs give identical epoch losses and weight files.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..imaging import GrayImage, resize_bilinear
from .layers import softmax_rows
from .network import INPUT_SIZE, LayerStack, image_to_input

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; training aborted."""


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 6
    batch_size: int = 32
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0
    augment: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")


def _affine_zoom(image: GrayImage, scale) -> GrayImage:
    """Zoom about the image centre; exposed regions are filled black."""
    h, w = image.height, image.width
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys = cy + (np.arange(h) - cy) / scale
    xs = cx + (np.arange(w) - cx) / scale
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    src = image.pixels.astype(np.float64)

    def grab(yy, xx):
        valid = ((yy >= 0) & (yy < h))[:, None] & ((xx >= 0) & (xx < w))[None, :]
        vals = src[np.clip(yy, 0, h - 1)][:, np.clip(xx, 0, w - 1)]
        return np.where(valid, vals, 0.0)

    out = (
        grab(y0, x0) * (1 - fy) * (1 - fx)
        + grab(y0, x0 + 1) * (1 - fy) * fx
        + grab(y0 + 1, x0) * fy * (1 - fx)
        + grab(y0 + 1, x0 + 1) * fy * fx
    )
    return GrayImage(np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8))


def augment(image: GrayImage, rng) -> GrayImage:
    """Random zoom in [0.8, 1.2], independent horizontal/vertical flips at
    probability 0.5 each, then resize to the network input size."""
    scale = rng.uniform(0.8, 1.2)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    out = _affine_zoom(image, scale)
    px = out.pixels
    if flip_h:
        px = px[:, ::-1]
    if flip_v:
        px = px[::-1, :]
    out = GrayImage(px)
    if out.height != INPUT_SIZE or out.width != INPUT_SIZE:
        out = resize_bilinear(out, INPUT_SIZE, INPUT_SIZE)
    return out


def _as_input_image(image: GrayImage) -> GrayImage:
    if image.height == INPUT_SIZE and image.width == INPUT_SIZE:
        return image
    return resize_bilinear(image, INPUT_SIZE, INPUT_SIZE)


def cross_entropy(probs, targets):
    """Mean -log p(target) with probabilities clamped to >= 1e-12."""
    p = np.clip(probs[np.arange(len(targets)), targets], 1e-12, None)
    return float(-np.log(p).mean())


def evaluate(net: LayerStack, images, targets, batch_size=32):
    """Eval-mode loss and accuracy over a labelled slice list."""
    total_loss = 0.0
    correct = 0
    n = len(images)
    for start in range(0, n, batch_size):
        batch = images[start : start + batch_size]
        x = np.concatenate([image_to_input(_as_input_image(img)) for img in batch], axis=0)
        probs = net.forward(x, mode="eval")
        t = np.asarray(targets[start : start + len(batch)])
        total_loss += cross_entropy(probs, t) * len(batch)
        correct += int((probs.argmax(axis=1) == t).sum())
    return total_loss / n, correct / n


def train(net: LayerStack, train_set, val_set, cfg: TrainConfig):
    """Fit the stack on (GrayImage, class_index) pairs.

    Minimizes cross-entropy via SGD with momentum, using the fused
    softmax gradient (p - target)/N injected at the softmax input.
    Batches with fewer than 2 slices are skipped (batch norm needs a
    population).  Returns one metrics dict per epoch.
    """
    if not train_set:
        raise ValueError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    images = [img for img, _ in train_set]
    targets = np.asarray([t for _, t in train_set])
    n_classes = net.n_classes
    if targets.min() < 0 or targets.max() >= n_classes:
        raise ValueError(f"targets outside [0, {n_classes})")

    velocity = {}
    for layer in net.layers:
        for name in layer.params:
            velocity[(id(layer), name)] = np.zeros_like(layer.params[name])

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(images))
        epoch_loss = 0.0
        epoch_count = 0
        epoch_correct = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            if idx.size < 2:
                continue
            prepared = []
            for i in idx:
                img = augment(images[i], rng) if cfg.augment else _as_input_image(images[i])
                prepared.append(image_to_input(img))
            x = np.concatenate(prepared, axis=0)
            t = targets[idx]

            logits = net.forward_logits(x, mode="train", rng=rng)
            probs = softmax_rows(logits)
            loss = cross_entropy(probs, t)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch + 1}, batch {start // cfg.batch_size}"
                )
            onehot = np.zeros_like(probs)
            onehot[np.arange(len(t)), t] = 1.0
            net.backward_from_logits((probs - onehot) / len(t))

            for layer in net.layers:
                for name, grad in layer.grads.items():
                    v = velocity[(id(layer), name)]
                    v *= cfg.momentum
                    v -= cfg.learning_rate * grad
                    layer.params[name] += v

            epoch_loss += loss * idx.size
            epoch_count += idx.size
            epoch_correct += int((probs.argmax(axis=1) == t).sum())

        stats = {
            "epoch": epoch + 1,
            "train_loss": epoch_loss / max(epoch_count, 1),
            "train_acc": epoch_correct / max(epoch_count, 1),
        }
        if val_set:
            val_images = [img for img, _ in val_set]
            val_targets = [t for _, t in val_set]
            stats["val_loss"], stats["val_acc"] = evaluate(net, val_images, val_targets)
        history.append(stats)
        log.info(
            "epoch %d: train loss %.4f acc %.3f%s",
            stats["epoch"],
            stats["train_loss"],
            stats["train_acc"],
            f" | val loss {stats['val_loss']:.4f} acc {stats['val_acc']:.3f}"
            if "val_loss" in stats
            else "",
        )
    return history
