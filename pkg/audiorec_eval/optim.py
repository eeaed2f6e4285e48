"""Adam, reduce-on-plateau and early stopping for the numpy models."""
import logging

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["epoch", "train_loss", "val_metric", "lr"]


class Adam:
    """Adam over a dict of named arrays, updated in place; only ``names`` are ever touched."""

    def __init__(self, params, names, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.names = list(names)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {n: np.zeros_like(params[n]) for n in self.names}
        self.v = {n: np.zeros_like(params[n]) for n in self.names}

    def step(self, grads):
        self.t += 1
        bias1 = 1.0 - self.beta1 ** self.t
        bias2 = 1.0 - self.beta2 ** self.t
        for name in self.names:
            grad = grads.get(name)
            if grad is None:
                continue
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(grad)
            self.params[name] -= (self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)).astype(
                self.params[name].dtype, copy=False)


class ReduceLROnPlateau:
    """Multiply the optimizer's lr by ``factor`` after ``patience`` epochs without improvement."""

    def __init__(self, optimizer, mode="max", factor=0.5, patience=5, min_lr=1e-5, threshold=0.0):
        if mode not in ("min", "max"):
            raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
        self.optimizer = optimizer
        self.mode = mode
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = None
        self.num_bad_epochs = 0

    def _is_better(self, current):
        if self.best is None:
            return True
        if self.mode == "max":
            return current > self.best + self.threshold
        return current < self.best - self.threshold

    def step(self, current):
        """Feed one epoch's metric; returns True when the lr was reduced."""
        if self._is_better(current):
            self.best = current
            self.num_bad_epochs = 0
            return False
        self.num_bad_epochs += 1
        if self.num_bad_epochs < self.patience:
            return False
        self.num_bad_epochs = 0
        old_lr = self.optimizer.lr
        new_lr = max(old_lr * self.factor, self.min_lr)
        if new_lr < old_lr:
            self.optimizer.lr = new_lr
            logger.info("reducing learning rate from %.3g to %.3g", old_lr, new_lr)
            return True
        return False


class EarlyStopping:
    """Stop once the monitored metric has not improved for ``patience`` epochs."""

    def __init__(self, patience=10, mode="max", delta=0.0):
        self.patience = patience
        self.mode = mode
        self.delta = delta
        self.counter = 0
        self.best_score = None
        self.best_epoch = None
        self.early_stop = False

    def __call__(self, score, epoch):
        """Returns True when ``score`` is a new best."""
        signed = score if self.mode == "max" else -score
        if self.best_score is None or signed > self.best_score + self.delta:
            self.best_score = signed
            self.best_epoch = epoch
            self.counter = 0
            return True
        self.counter += 1
        if self.counter >= self.patience:
            self.early_stop = True
        return False


def history_frame(rows):
    return pd.DataFrame(rows, columns=HISTORY_COLUMNS)
