"""Adam training loop with validation-loss early stopping."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import Network, forward, loss_and_grads, one_hot
from .layers import cross_entropy
from .preprocess import stack_patches, train_size
from .seeding import derive_rng

IMPROVEMENT = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 250
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    validation_fraction: float = 0.1

    def __post_init__(self):
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_oa: float
    elapsed_ms: float = field(compare=False)


@dataclass
class TrainLog:
    records: list = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_csv(self) -> str:
        # wall-clock time is left out so that identical runs give identical files
        lines = ["epoch,train_loss,val_loss,val_oa"]
        for r in self.records:
            lines.append(f"{r.epoch},{r.train_loss!r},{r.val_loss!r},{r.val_oa!r}")
        lines.append(f"# best_epoch={self.best_epoch} stopped_early={int(self.stopped_early)}")
        return "\n".join(lines) + "\n"

    def timing_csv(self) -> str:
        return "epoch,elapsed_ms\n" + "".join(
            f"{r.epoch},{r.elapsed_ms:.1f}\n" for r in self.records)


def adam_step(params: dict, grads: dict, m: dict, v: dict, t: int, config: TrainConfig) -> None:
    """One in-place Adam update at step ``t`` (1-based).

    Complex parameters are updated as two independent real coordinates by
    working on their float64 views.
    """
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=p.dtype)
        pr, gr = p.view(np.float64), g.view(np.float64)
        mr, vr = m[name].view(np.float64), v[name].view(np.float64)
        mr *= b1
        mr += (1.0 - b1) * gr
        vr *= b2
        vr += (1.0 - b2) * gr * gr
        pr -= config.learning_rate * (mr / c1) / (np.sqrt(vr / c2) + config.eps)


def split_validation(labels: np.ndarray, fraction: float, seed: int):
    """Stratified ``(train_idx, val_idx)``; classes with one sample stay in train."""
    rng = derive_rng(seed, "validation")
    train_idx, val_idx = [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        if len(idx) < 2:
            train_idx.extend(idx)
            continue
        n_val = min(train_size(fraction, len(idx)), len(idx) - 1)
        perm = rng.permutation(len(idx))
        val_idx.extend(idx[perm[:n_val]])
        train_idx.extend(idx[perm[n_val:]])
    return np.sort(np.array(train_idx, dtype=np.int64)), np.sort(np.array(val_idx, dtype=np.int64))


def evaluate_loss(net: Network, data, labels, batch_size=256):
    """Mean cross-entropy and overall accuracy over a sample set (inference mode)."""
    if len(data) == 0:
        return float("nan"), float("nan")
    total = 0.0
    correct = 0
    for s in range(0, len(data), batch_size):
        prob = forward(net, data[s:s + batch_size])
        y = labels[s:s + batch_size]
        total += cross_entropy(prob, one_hot(y, net.config.num_classes)) * len(y)
        correct += int(np.sum(np.argmax(prob, axis=1) + 1 == y))
    return total / len(data), correct / len(data)


def _canonical(patches):
    return sorted(patches, key=lambda p: (p.label, p.center_row, p.center_col))


def fit(net: Network, train_patches, config: TrainConfig = TrainConfig(), progress=None):
    """Train in place and return ``(network at best weights, TrainLog)``.

    The patch list is put in canonical (class, row, col) order first, so the
    result does not depend on the order it was passed in. Batches are always
    accumulated in ascending sample index.
    """
    if not train_patches:
        raise ValueError("no training data")
    data, labels = stack_patches(_canonical(train_patches))
    tr, va = split_validation(labels, config.validation_fraction, config.seed)
    x_tr, y_tr = data[tr], labels[tr]
    x_va, y_va = data[va], labels[va]
    monitor_train = len(va) == 0
    rng = derive_rng(config.seed, "train")
    log = TrainLog()
    best = net.copy()
    best_loss = float("inf")
    wait = 0
    start = time.perf_counter()
    for epoch in range(1, config.max_epochs + 1):
        order = rng.permutation(len(x_tr))
        running = 0.0
        for s in range(0, len(order), config.batch_size):
            idx = np.sort(order[s:s + config.batch_size])
            loss, grads = loss_and_grads(net, x_tr[idx], y_tr[idx], training=True, rng=rng)
            net.step += 1
            adam_step(net.params, grads, net.adam_m, net.adam_v, net.step, config)
            running += loss * len(idx)
        train_loss = running / len(x_tr)
        if monitor_train:
            val_loss, val_oa = evaluate_loss(net, x_tr, y_tr, config.batch_size)
        else:
            val_loss, val_oa = evaluate_loss(net, x_va, y_va, config.batch_size)
        log.records.append(EpochRecord(epoch, train_loss, val_loss, val_oa,
                                       1000.0 * (time.perf_counter() - start)))
        if progress is not None:
            progress(log.records[-1])
        if val_loss < best_loss - IMPROVEMENT:
            best_loss = val_loss
            log.best_epoch = epoch
            net.best_val_loss = val_loss
            best = net.copy()
            wait = 0
        else:
            wait += 1
            if wait >= config.patience:
                log.stopped_early = epoch < config.max_epochs
                break
    return best, log
