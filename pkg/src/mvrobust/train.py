"""Minibatch training with Adam and early stopping on a held-out slice."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import TrainingError
from .fusion import MultiViewBatch, Task
from .nn import Module
from .optim import Adam
from .tensor import Tensor, backward, cross_entropy, mse, no_grad

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    max_epochs: int = 200
    patience: int = 10
    lr: float = 1e-3
    es_fraction: float = 0.1


@dataclass(frozen=True)
class FitResult:
    epochs: int
    best_epoch: int
    best_loss: float


class EarlyStopping:
    """Tracks the best validation loss and a snapshot of the parameters that produced it."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = -1
        self.best_state: list[np.ndarray] | None = None
        self.bad_epochs = 0

    def update(self, epoch: int, loss: float, module: Module) -> bool:
        """Record one epoch; returns True when training should stop."""
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.best_state = module.get_state()
            self.bad_epochs = 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience

    def restore(self, module: Module) -> None:
        if self.best_state is not None:
            module.set_state(self.best_state)


def loss_fn(output: Tensor, targets: np.ndarray, task: Task) -> Tensor:
    if task.is_classification:
        return cross_entropy(output, targets)
    return mse(output.reshape(-1), Tensor(targets))


def _take(views: Mapping[str, np.ndarray], rows: np.ndarray) -> MultiViewBatch:
    return MultiViewBatch.full({v: arr[rows] for v, arr in views.items()})


def fit_network(
    net: Module,
    views: Mapping[str, np.ndarray],
    targets: np.ndarray,
    task: Task,
    config: TrainConfig,
    rng: np.random.Generator,
    label: str = "model",
) -> FitResult:
    """Train ``net`` in place and restore its best early-stopping parameters.

    ``targets`` are class indices, or already standardised regression values.
    """
    n = len(targets)
    perm = rng.permutation(n)
    n_stop = max(1, int(round(config.es_fraction * n)))
    stop_rows, fit_rows = np.sort(perm[:n_stop]), perm[n_stop:]
    if len(fit_rows) == 0:
        raise TrainingError(f"{label}: no rows left for training after the early-stopping split")
    stop_batch = _take(views, stop_rows)
    stop_targets = targets[stop_rows]

    optimizer = Adam(net.parameters(), lr=config.lr)
    stopper = EarlyStopping(config.patience)
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = fit_rows[rng.permutation(len(fit_rows))]
        for start in range(0, len(order), config.batch_size):
            rows = order[start : start + config.batch_size]
            try:
                loss = loss_fn(net(_take(views, rows)), targets[rows], task)
            except FloatingPointError as exc:
                raise TrainingError(f"{label}: non-finite values in epoch {epoch} ({exc})") from exc
            if not np.isfinite(loss.item()):
                raise TrainingError(f"{label}: loss diverged in epoch {epoch}")
            optimizer.step(backward(loss))
        with no_grad():
            stop_loss = loss_fn(net(stop_batch), stop_targets, task).item()
        if not np.isfinite(stop_loss):
            raise TrainingError(f"{label}: validation loss diverged in epoch {epoch}")
        if stopper.update(epoch, stop_loss, net):
            break
    stopper.restore(net)
    log.debug("%s: %d epochs, best %d (loss %.4f)", label, epoch, stopper.best_epoch, stopper.best_loss)
    return FitResult(epoch, stopper.best_epoch, stopper.best_loss)
