"""Training loop: AdamW, cyclic learning rate, per-epoch subsets.

Everything downstream of the seed is deterministic: parameter init,
epoch subset sampling, batch shuffling, and dropout masks all draw from
one seeded generator in a fixed order.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from .losses import loss_ce, softmax
from .network import Network
from .optim import AdamW, cyclic_lr


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 60
    epoch_subset: int = 500_000
    batch_size: int = 256
    base_lr: float = 1e-4
    max_lr: float = 1e-3
    cycle_epochs: int = 10
    weight_decay: float = 1e-2
    seed: int = 42

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    best_epoch: int
    best_val_accuracy: float
    epoch_val_accuracy: list[float] = field(default_factory=list)
    epoch_train_loss: list[float] = field(default_factory=list)


def eval_logits(network: Network, pstats: np.ndarray, flowstats: np.ndarray,
                batch_size: int = 2048) -> np.ndarray:
    """Eval-mode forward over a dataset, batched to bound memory."""
    chunks = []
    for start in range(0, len(pstats), batch_size):
        chunks.append(network.forward(
            pstats[start:start + batch_size],
            flowstats[start:start + batch_size], train=False))
    if not chunks:
        return np.zeros((0, network.topology.num_classes))
    return np.concatenate(chunks)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(logits.argmax(axis=1) == labels))


def train(network: Network,
          train_pstats: np.ndarray, train_flowstats: np.ndarray,
          train_labels: np.ndarray,
          val_pstats: np.ndarray, val_flowstats: np.ndarray,
          val_labels: np.ndarray,
          config: TrainConfig) -> TrainResult:
    """Train in place; the network ends at its best-validation epoch."""
    n = len(train_labels)
    if n == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng(config.seed)
    network.init_params(rng)
    optimizer = AdamW(weight_decay=config.weight_decay)

    subset_size = min(config.epoch_subset, n)
    batches_per_epoch = -(-subset_size // config.batch_size)
    steps_per_cycle = config.cycle_epochs * batches_per_epoch

    result = TrainResult(best_epoch=-1, best_val_accuracy=-1.0)
    best_state: list[np.ndarray] | None = None
    step = 0
    for epoch in range(config.epochs):
        if subset_size < n:
            order = rng.choice(n, size=subset_size, replace=False)
        else:
            order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, subset_size, config.batch_size):
            idx = order[start:start + config.batch_size]
            logits = network.forward(
                train_pstats[idx], train_flowstats[idx], train=True, rng=rng)
            losses, dlogits = loss_ce(logits, train_labels[idx])
            mean_loss = float(losses.mean())
            if not np.isfinite(mean_loss):
                raise TrainingDiverged(
                    f"non-finite loss {mean_loss} at epoch {epoch}, step {step}")
            epoch_loss += mean_loss * len(idx)
            network.backward(dlogits / len(idx))
            lr = cyclic_lr(step, steps_per_cycle, config.base_lr, config.max_lr)
            optimizer.step(network.param_arrays(), network.grad_arrays(), lr)
            step += 1
        result.epoch_train_loss.append(epoch_loss / subset_size)

        val_acc = accuracy(
            eval_logits(network, val_pstats, val_flowstats), val_labels)
        result.epoch_val_accuracy.append(val_acc)
        if val_acc > result.best_val_accuracy:
            result.best_val_accuracy = val_acc
            result.best_epoch = epoch
            best_state = network.snapshot()

    if best_state is not None:
        network.load_state_arrays(best_state)
    return result


def nll(logits: np.ndarray, labels: np.ndarray, temperature: float) -> float:
    probs = softmax(logits, temperature)
    return float(-np.mean(np.log(probs[np.arange(len(labels)), labels])))


def fit_temperature(logits: np.ndarray, labels: np.ndarray,
                    mode: str = "fixed", fixed_value: float = 3.0,
                    bounds: tuple[float, float] = (0.05, 20.0),
                    tol: float = 1e-4) -> float:
    """Pick the softmax temperature.

    The default mode returns the configured value. "optimize" minimizes
    validation negative log-likelihood over T by golden-section search.
    """
    if mode == "fixed":
        return fixed_value
    if mode != "optimize":
        raise ValueError(f"unknown temperature mode {mode!r}")
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    lo, hi = bounds
    a = hi - (hi - lo) * invphi
    b = lo + (hi - lo) * invphi
    fa, fb = nll(logits, labels, a), nll(logits, labels, b)
    while hi - lo > tol:
        if fa < fb:
            hi, b, fb = b, a, fa
            a = hi - (hi - lo) * invphi
            fa = nll(logits, labels, a)
        else:
            lo, a, fa = a, b, fb
            b = lo + (hi - lo) * invphi
            fb = nll(logits, labels, b)
    best = (lo + hi) / 2.0
    # Never return a temperature worse than no scaling at all.
    return best if nll(logits, labels, best) <= nll(logits, labels, 1.0) else 1.0
