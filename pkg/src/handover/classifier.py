"""Torque-window action classifier: network assembly, training, inference.

The network treats a flattened torque window as a 1-channel, length-280
signal and stacks three identical conv blocks (conv -> batch norm -> ReLU,
64 filters, kernel 3), global average pooling, and a dense 64 -> 6 head.
Inputs are standardized per joint with statistics from the training split.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .core import (
    FLAT_SIZE,
    NUM_CLASSES,
    NUM_JOINTS,
    RELEASE_ACTIONS,
    ActionClass,
    ActionScores,
    TorqueWindow,
)
from . import nn_kernel as nn

STD_FLOOR = 1e-6
MODEL_FORMAT_VERSION = "handover-model-v1"


@dataclass(frozen=True)
class TorqueNetConfig:
    """Architecture plus training hyperparameters (defaults are the preset)."""

    blocks: int = 3
    filters_per_block: int = 64
    kernel_size: int = 3
    classes: int = NUM_CLASSES
    input_channels: int = 1
    input_length: int = FLAT_SIZE
    seed: int = 7
    epochs: int = 30
    learning_rate: float = 1e-2
    momentum: float = 0.9
    batch_size: int = 32
    holdout_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.blocks < 1 or self.filters_per_block < 1:
            raise ValueError("need at least one block and one filter")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError("kernel size must be odd for same padding")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if self.input_channels < 1 or self.input_length < self.kernel_size:
            raise ValueError(f"invalid input shape {(self.input_channels, self.input_length)}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch size must be positive")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout fraction must lie in (0, 1)")


@dataclass(frozen=True)
class LabeledWindow:
    window: TorqueWindow
    label: ActionClass

    def __post_init__(self) -> None:
        object.__setattr__(self, "label", ActionClass(self.label))

    def to_json_dict(self) -> dict[str, Any]:
        return {"window": self.window.to_json_dict(), "label": int(self.label)}

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "LabeledWindow":
        return cls(
            window=TorqueWindow.from_json_dict(doc["window"]),
            label=ActionClass(int(doc["label"])),
        )


@dataclass(frozen=True)
class NormalizationStats:
    """Per-joint mean/std of the training torques; std floored at 1e-6."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(NUM_JOINTS)
        std = np.maximum(np.asarray(self.std, dtype=np.float64).reshape(NUM_JOINTS), STD_FLOOR)
        mean.flags.writeable = False
        std.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_windows(cls, windows: Iterable[TorqueWindow]) -> "NormalizationStats":
        stacked = np.stack([w.samples for w in windows])
        return cls(mean=stacked.mean(axis=(0, 2)), std=stacked.std(axis=(0, 2)))

    def to_json_dict(self) -> dict[str, Any]:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_json_dict(cls, doc: dict[str, Any]) -> "NormalizationStats":
        return cls(mean=np.asarray(doc["mean"]), std=np.asarray(doc["std"]))


@dataclass
class TrainingReport:
    epoch_losses: list[float]
    epoch_train_accuracy: list[float]
    epoch_holdout_accuracy: list[float]
    confusion_matrix: np.ndarray  # (6, 6), rows = true class, cols = predicted
    holdout_accuracy: float
    n_train: int
    n_holdout: int
    wall_seconds: float

    def to_json_dict(self) -> dict[str, Any]:
        return {
            "epoch_losses": self.epoch_losses,
            "epoch_train_accuracy": self.epoch_train_accuracy,
            "epoch_holdout_accuracy": self.epoch_holdout_accuracy,
            "confusion_matrix": self.confusion_matrix.tolist(),
            "holdout_accuracy": self.holdout_accuracy,
            "n_train": self.n_train,
            "n_holdout": self.n_holdout,
            "wall_seconds": self.wall_seconds,
        }


def build_network(config: TorqueNetConfig = TorqueNetConfig()) -> nn.Network:
    """Assemble the conv/batch-norm/ReLU stack; seeded, so reproducible."""
    rng = np.random.default_rng(config.seed)
    layers: list[nn.Layer] = []
    in_ch = config.input_channels
    for _ in range(config.blocks):
        layers.append(nn.Conv1D(in_ch, config.filters_per_block, config.kernel_size, rng=rng))
        layers.append(nn.BatchNorm1D(config.filters_per_block))
        layers.append(nn.ReLU())
        in_ch = config.filters_per_block
    layers.append(nn.GlobalAvgPool1D())
    layers.append(nn.Linear(config.filters_per_block, config.classes, rng=rng))
    return nn.Network(layers)


def count_parameters(net: nn.Network, include_running_stats: bool = True) -> int:
    """Total stored values; batch-norm running stats count by default."""
    total = 0
    for layer in net.layers:
        for arr in layer.params().values():
            total += arr.size
        if include_running_stats and isinstance(layer, nn.BatchNorm1D):
            total += layer.running_mean.size + layer.running_var.size
    return total


def normalize_input(window: TorqueWindow, stats: NormalizationStats) -> np.ndarray:
    """Per-joint z-score, then flatten to the (1, 280) network input."""
    z = (window.samples - stats.mean[:, None]) / stats.std[:, None]
    return z.reshape(1, FLAT_SIZE)


def _stratified_split(
    labels: np.ndarray, holdout_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    train_idx: list[int] = []
    holdout_idx: list[int] = []
    for cls in range(NUM_CLASSES):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        n_hold = max(1, int(round(members.size * holdout_fraction)))
        if n_hold >= members.size:
            n_hold = members.size - 1
        holdout_idx.extend(members[:n_hold])
        train_idx.extend(members[n_hold:])
    return np.sort(np.asarray(train_idx)), np.sort(np.asarray(holdout_idx))


def _predict_classes(net: nn.Network, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    preds = []
    for start in range(0, inputs.shape[0], batch_size):
        probs = net.predict_proba(inputs[start:start + batch_size])
        preds.append(np.argmax(probs, axis=1))
    return np.concatenate(preds)


def train(
    dataset: Sequence[LabeledWindow],
    config: TorqueNetConfig = TorqueNetConfig(),
) -> tuple[nn.Network, NormalizationStats, TrainingReport]:
    """Train on a labeled window set; returns (network, stats, report).

    The split is stratified 80/20 by class using the config seed, input
    statistics come from the training split only, and the whole run is
    deterministic for a fixed seed.
    """
    labels = np.asarray([int(item.label) for item in dataset], dtype=np.int64)
    counts = np.bincount(labels, minlength=NUM_CLASSES)
    missing = [ActionClass(i).name for i in range(NUM_CLASSES) if counts[i] < 2]
    if missing:
        raise ValueError(f"need >= 2 examples per class, deficient: {', '.join(missing)}")

    rng = np.random.default_rng(config.seed)
    train_idx, holdout_idx = _stratified_split(labels, config.holdout_fraction, rng)

    stats = NormalizationStats.from_windows(dataset[i].window for i in train_idx)
    all_inputs = np.stack([normalize_input(item.window, stats) for item in dataset])
    x_train, y_train = all_inputs[train_idx], labels[train_idx]
    x_hold, y_hold = all_inputs[holdout_idx], labels[holdout_idx]

    net = build_network(config)
    optimizer = nn.MomentumSGD(net, config.learning_rate, config.momentum)

    started = time.perf_counter()
    epoch_losses: list[float] = []
    epoch_train_acc: list[float] = []
    epoch_hold_acc: list[float] = []
    for _ in range(config.epochs):
        order = rng.permutation(x_train.shape[0])
        batch_losses = []
        correct = 0
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            loss, probs, tape = nn.backward(net, x_train[batch], y_train[batch])
            optimizer.step(tape)
            batch_losses.append(loss)
            correct += int(np.sum(np.argmax(probs, axis=1) == y_train[batch]))
        epoch_losses.append(float(np.mean(batch_losses)))
        epoch_train_acc.append(correct / order.size)
        epoch_hold_acc.append(float(np.mean(_predict_classes(net, x_hold) == y_hold)))
    wall = time.perf_counter() - started

    hold_pred = _predict_classes(net, x_hold)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for true, pred in zip(y_hold, hold_pred):
        confusion[true, pred] += 1
    report = TrainingReport(
        epoch_losses=epoch_losses,
        epoch_train_accuracy=epoch_train_acc,
        epoch_holdout_accuracy=epoch_hold_acc,
        confusion_matrix=confusion,
        holdout_accuracy=float(np.trace(confusion) / max(1, confusion.sum())),
        n_train=int(train_idx.size),
        n_holdout=int(holdout_idx.size),
        wall_seconds=wall,
    )
    return net, stats, report


def classify_window(
    net: nn.Network, stats: NormalizationStats, window: TorqueWindow
) -> ActionScores:
    """Classify one window; pure (batch norm frozen to running stats)."""
    if not isinstance(window, TorqueWindow):
        raise TypeError("classify_window expects a TorqueWindow")
    probs = net.predict_proba(normalize_input(window, stats)[None])[0]
    return ActionScores.from_probabilities(probs)


def classify_windows(
    net: nn.Network, stats: NormalizationStats, windows: Sequence[TorqueWindow]
) -> list[ActionScores]:
    """Batched classify_window: one forward pass over all windows."""
    if not windows:
        return []
    inputs = np.stack([normalize_input(w, stats) for w in windows])
    probs = net.predict_proba(inputs)
    return [ActionScores.from_probabilities(row) for row in probs]


def torque_vote(scores: ActionScores) -> bool:
    """True iff the predicted action calls for releasing the object."""
    return scores.predicted in RELEASE_ACTIONS


def evaluate(
    net: nn.Network, stats: NormalizationStats, dataset: Sequence[LabeledWindow]
) -> tuple[float, np.ndarray]:
    """Accuracy and 6x6 confusion matrix (rows true, cols predicted)."""
    inputs = np.stack([normalize_input(item.window, stats) for item in dataset])
    labels = np.asarray([int(item.label) for item in dataset], dtype=np.int64)
    preds = _predict_classes(net, inputs)
    confusion = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    for true, pred in zip(labels, preds):
        confusion[true, pred] += 1
    return float(np.mean(preds == labels)), confusion


# ---------------------------------------------------------------------------
# model and dataset files
# ---------------------------------------------------------------------------

def save_model(path: str | Path, net: nn.Network, stats: NormalizationStats) -> None:
    doc = {
        "format": MODEL_FORMAT_VERSION,
        "network": nn.network_to_json(net),
        "normalization": stats.to_json_dict(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def load_model(path: str | Path) -> tuple[nn.Network, NormalizationStats]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    return nn.network_from_json(doc["network"]), NormalizationStats.from_json_dict(doc["normalization"])


def write_dataset_jsonl(path: str | Path, items: Iterable[LabeledWindow]) -> int:
    from .core import dumps_canonical

    n = 0
    with Path(path).open("w", encoding="utf-8") as fh:
        for item in items:
            fh.write(dumps_canonical(item.to_json_dict()) + "\n")
            n += 1
    return n


def read_dataset_jsonl(path: str | Path) -> list[LabeledWindow]:
    items = []
    with Path(path).open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(LabeledWindow.from_json_dict(json.loads(line)))
    return items
