"""Synthetic two-scale blob dataset and a small SGD trainer.

The dataset is the end-to-end gradient exercise for the whole stack: class 0
images contain several small blobs, class 1 one large blob, so the scale of
the dominant structure is the label. A reduced-width trunk with a pooled
classifier head must overfit it quickly if gradients flow through every
fusion lane.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .errors import ConfigError, NumericalError
from .mafpn import MAFPN
from .model import Backbone, ModelConfig
from .modules import Conv2d, Module
from .tensor import Tensor, no_grad


@dataclass
class BlobDataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return self.images.shape[0]


def make_blob_dataset(
    n: int = 64, size: int = 64, channels: int = 3, seed: int = 0
) -> BlobDataset:
    """Deterministic blob images: class 0 = small blobs, class 1 = one large blob."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, channels, size, size), dtype=np.float32)
    labels = np.zeros(n, dtype=np.int64)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    for i in range(n):
        label = i % 2
        canvas = np.zeros((size, size))
        if label == 0:
            for _ in range(rng.integers(3, 6)):
                cy, cx = rng.uniform(6, size - 6, 2)
                sigma = rng.uniform(1.0, 1.8)
                canvas += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        else:
            cy, cx = rng.uniform(size * 0.3, size * 0.7, 2)
            sigma = rng.uniform(size * 0.12, size * 0.2)
            canvas += np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma**2))
        canvas += rng.normal(0, 0.02, canvas.shape)
        for c in range(channels):
            images[i, c] = ((0.8 + 0.2 * rng.random()) * canvas).astype(np.float32)
        labels[i] = label
    return BlobDataset(images=images, labels=labels)


class ToyClassifier(Module):
    """Backbone + fusion neck + pooled linear classifier over all three outputs."""

    def __init__(self, cfg: ModelConfig, num_classes: int = 2, dtype=np.float32):
        super().__init__()
        rng = np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng, dtype)
        self.neck = MAFPN(cfg.stage_widths, cfg.neck, rng=rng, dtype=dtype)
        self.classifier = Conv2d(
            sum(cfg.neck.widths), num_classes, 1, bias=True, rng=rng, dtype=dtype
        )

    def forward(self, x: Tensor) -> Tensor:
        taps = self.backbone(x)
        outs, _ = self.neck.forward_taps(taps)
        pooled = ops.concat_channels(
            [ops.global_avg_pool(outs[k]) for k in ("N3", "N4", "N5")]
        )
        return self.classifier(pooled)


class SGD:
    """Plain stochastic gradient descent, fixed learning rate."""

    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = float(lr)

    def step(self):
        for p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()


@dataclass
class ToyTrainResult:
    losses: list[float] = field(default_factory=list)
    final_loss: float = 0.0
    accuracy: float = 0.0
    steps: int = 0

    def moving_average(self, window: int = 20) -> list[float]:
        if len(self.losses) < window:
            return [float(np.mean(self.losses))] if self.losses else []
        k = np.ones(window) / window
        return list(np.convolve(self.losses, k, mode="valid"))


def evaluate_accuracy(model: Module, ds: BlobDataset, batch_size: int = 16) -> float:
    was_training = model.training
    model.eval()
    correct = 0
    try:
        with no_grad():
            for lo in range(0, len(ds), batch_size):
                xb = Tensor(ds.images[lo : lo + batch_size])
                logits = model(xb)
                pred = logits.data.reshape(logits.shape[0], -1).argmax(axis=1)
                correct += int((pred == ds.labels[lo : lo + batch_size]).sum())
    finally:
        if was_training:
            model.train()
    return correct / len(ds)


def train_toy(
    model: Module,
    ds: BlobDataset,
    steps: int = 500,
    lr: float = 0.05,
    batch_size: int = 16,
    log_fn=None,
) -> ToyTrainResult:
    """Run plain SGD; returns the loss curve and final training-set accuracy.

    Raises NumericalError naming the step if the loss diverges to NaN/Inf.
    """
    if steps < 1:
        raise ConfigError(f"train_toy: steps must be >= 1, got {steps}")
    n = len(ds)
    opt = SGD(model.parameters(), lr)
    model.train()
    result = ToyTrainResult()
    for step in range(steps):
        idx = [(step * batch_size + j) % n for j in range(batch_size)]
        xb = Tensor(ds.images[idx])
        yb = ds.labels[idx]
        try:
            logits = model(xb)
            loss = ops.softmax_cross_entropy(logits, yb)
            loss_val = loss.item()
            if not np.isfinite(loss_val):
                raise NumericalError("loss is not finite")
            opt.zero_grad()
            loss.backward()
            opt.step()
        except NumericalError as e:
            raise NumericalError(f"train_toy: diverged at step {step}: {e}") from None
        result.losses.append(loss_val)
        if log_fn is not None:
            log_fn(step, loss_val)
    result.steps = steps
    result.final_loss = result.losses[-1]
    result.accuracy = evaluate_accuracy(model, ds)
    return result


def write_curve_csv(result: ToyTrainResult, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,loss\n")
        for i, v in enumerate(result.losses):
            f.write(f"{i},{v:.8e}\n")
