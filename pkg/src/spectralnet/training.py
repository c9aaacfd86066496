"""Mini-batch SGD with momentum, evaluation and training history."""

from __future__ import annotations

import io
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import ndtensor as nd
from .hsidata import PatchSet
from .metrics import ConfusionMatrix
from .model import SpectralNet


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int, batch: int, detail: str = ""):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}{': ' + detail if detail else ''}")
        self.epoch = epoch
        self.batch = batch


@dataclass
class TrainConfig:
    epochs: int = 150
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingHistory:
    loss: list[float] = field(default_factory=list)
    train_acc: list[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.loss)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss,train_acc\n")
        for e, (l, a) in enumerate(zip(self.loss, self.train_acc), start=1):
            buf.write(f"{e},{l!r},{a!r}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "TrainingHistory":
        hist = cls()
        for line in text.strip().splitlines()[1:]:
            _, l, a = line.split(",")
            hist.loss.append(float(l))
            hist.train_acc.append(float(a))
        return hist


def as_network_input(patches: np.ndarray) -> np.ndarray:
    """(k, S, S, B) patches -> (k, B, S, S) network batch."""
    return np.ascontiguousarray(patches.transpose(0, 3, 1, 2))


def fit(
    network: SpectralNet,
    trainset: PatchSet,
    config: TrainConfig,
    on_epoch=None,
) -> TrainingHistory:
    """Train on every patch of ``trainset``. ``on_epoch(epoch, loss, acc)`` is called after each epoch."""
    n = len(trainset)
    if n == 0:
        raise ValueError("training set is empty")
    order_rng = np.random.default_rng(config.seed)
    dropout_rng = np.random.default_rng([config.seed, 1])
    params = network.parameters()
    state = nd.OptimizerState(params, config.learning_rate, config.momentum)
    history = TrainingHistory()
    network.train()
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(n) if config.shuffle else np.arange(n)
        loss_sum = 0.0
        correct = 0
        for b, start in enumerate(range(0, n, config.batch_size), start=1):
            idx = order[start : start + config.batch_size]
            x = as_network_input(trainset.batch(idx))
            y = trainset.labels[idx]
            network.zero_grad()
            try:
                logits = network(x, rng=dropout_rng)
                loss = nd.softmax_cross_entropy(logits, y)
            except nd.NonFiniteError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from None
            nd.backward(loss)
            nd.sgd_momentum_step(params, state)
            loss_sum += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == y).sum())
        history.loss.append(loss_sum / n)
        history.train_acc.append(correct / n)
        if on_epoch is not None:
            on_epoch(epoch, history.loss[-1], history.train_acc[-1])
    return history


def _evaluate_range(network, testset, indices, batch_size):
    k = network.config.class_count
    cm = np.zeros((k, k), dtype=np.int64)
    loss_sum = 0.0
    for start in range(0, len(indices), batch_size):
        idx = indices[start : start + batch_size]
        logits = network(as_network_input(testset.batch(idx)))
        y = testset.labels[idx]
        loss_sum += float(nd.softmax_cross_entropy(logits, y).data) * len(idx)
        pred = logits.data.argmax(axis=1)  # first maximum wins ties
        np.add.at(cm, (y, pred), 1)
    return cm, loss_sum


def evaluate(
    network: SpectralNet,
    testset: PatchSet,
    batch_size: int = 64,
    workers: int = 1,
) -> tuple[ConfusionMatrix, float]:
    """Confusion matrix and mean cross-entropy over ``testset`` in eval mode.

    With ``workers > 1`` the set is split into contiguous shards evaluated in
    threads; integer confusion counts are summed and loss sums are combined in
    shard order.
    """
    n = len(testset)
    if n == 0:
        raise ValueError("test set is empty")
    network.eval()
    shards = [s for s in np.array_split(np.arange(n), max(1, min(workers, n))) if len(s)]
    if len(shards) == 1:
        results = [_evaluate_range(network, testset, shards[0], batch_size)]
    else:
        with ThreadPoolExecutor(max_workers=len(shards)) as pool:
            results = list(pool.map(lambda s: _evaluate_range(network, testset, s, batch_size), shards))
    counts = sum(r[0] for r in results)
    loss = sum(r[1] for r in results) / n
    return ConfusionMatrix(counts), loss


def predict(network: SpectralNet, patchset: PatchSet, batch_size: int = 64) -> np.ndarray:
    network.eval()
    out = []
    for start in range(0, len(patchset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(patchset)))
        out.append(network(as_network_input(patchset.batch(idx))).data.argmax(axis=1))
    return np.concatenate(out)
