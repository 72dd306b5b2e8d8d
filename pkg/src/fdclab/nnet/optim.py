"""SGD with heavy-ball momentum, the training loop and evaluation."""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .network import N_CLASSES, Network, cross_entropy

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    momentum: float = 0.90
    batch: int = 100
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.lr >= 0:
            raise ValueError("lr must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must lie in [0, 1)")
        if self.batch < 1 or self.epochs < 0:
            raise ValueError("batch must be >= 1 and epochs >= 0")

    def to_dict(self):
        return asdict(self)


class ArrayDataset:
    """Ready-made images (n, 1, H, W) with integer labels."""

    def __init__(self, images, labels):
        self.images = np.asarray(images)
        self.labels = np.asarray(labels, dtype=np.int64)

    def __len__(self):
        return len(self.labels)

    def batch(self, idx):
        return self.images[idx]


def sgd_step(model: Network, grads, config: TrainConfig):
    """v <- mu v + g ;  w <- w - lr v  (in place)."""
    lr = model.dtype.type(config.lr)
    mu = model.dtype.type(config.momentum)
    for name, w in model.named_params():
        g = grads.get(name)
        if g is None:
            continue
        v = model.momentum[name]
        v *= mu
        v += g
        w -= lr * v
    return model


def evaluate(model: Network, dataset, batch_size=100):
    """Accuracy in percent and the 10x10 confusion matrix (rows = true label)."""
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    conf = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    for s in range(0, n, batch_size):
        idx = np.arange(s, min(n, s + batch_size))
        pred = model.forward(dataset.batch(idx)).argmax(axis=1)
        np.add.at(conf, (dataset.labels[idx], pred), 1)
    return 100.0 * np.trace(conf) / n, conf


def train(model: Network, dataset, config: TrainConfig, test=None, on_epoch=None):
    """Shuffled mini-batch training; returns one history record per epoch.

    Training accuracy is accumulated from the pre-update forward pass of
    each batch.  When ``test`` is given it is evaluated after every epoch.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(config.seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        tot_loss = 0.0
        correct = 0
        for s in range(0, n, config.batch):
            idx = np.sort(order[s:s + config.batch])
            y = dataset.labels[idx]
            logits = model.forward(dataset.batch(idx), train=True)
            loss, dlogits = cross_entropy(logits, y)
            model.backward(dlogits)
            sgd_step(model, dict(model.named_grads()), config)
            tot_loss += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y).sum())
        rec = {"epoch": epoch, "loss": tot_loss / n, "train_acc": 100.0 * correct / n}
        if test is not None:
            rec["test_acc"], _ = evaluate(model, test)
        history.append(rec)
        log.info("epoch %d %s", epoch, {k: round(v, 4) for k, v in rec.items()})
        if on_epoch is not None:
            on_epoch(rec)
    return history
