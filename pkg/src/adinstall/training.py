"""Training protocol: seeded 3:1 split, early stopping on validation loss
with best-weights restore, and full-data retraining at the chosen epoch
count.

All randomness (split, initialization, per-epoch batch order) derives from
declared seeds, so a run is reproducible bit for bit on one machine.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteGradientError, PipelineMismatchError
from .network import NetworkConfig, NetworkParams, backward, bce_loss, forward, init_network
from .optim import OptimizerState, optimizer_step
from .prep import PreparedDataset


@dataclass(frozen=True)
class TrainConfig:
    val_fraction: float = 0.25
    max_epochs: int = 50
    patience: int = 3
    monitor_head: str = "is_installed"
    monitor_mode: str = "single"  # "single" or "per_head"
    seed: int = 0
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    batch_size: int = 4096
    eval_batch_size: int = 65536

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie strictly between 0 and 1")
        if self.max_epochs < 1 or self.patience < 1 or self.batch_size < 1:
            raise ValueError("max_epochs, patience, and batch_size must be >= 1")
        if self.monitor_mode not in ("single", "per_head"):
            raise ValueError(f"unknown monitor_mode {self.monitor_mode!r}")


@dataclass
class EpochRecord:
    epoch: int  # 1-based
    train_loss: dict[str, float]
    val_loss: dict[str, float]
    wall_time: float
    is_best: bool = False


@dataclass
class TrainingHistory:
    """Per-epoch losses plus the bookkeeping early stopping relied on."""

    heads: tuple[str, ...]
    monitor_head: str
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0
    per_head_best: dict[str, int] = field(default_factory=dict)
    diverged: bool = False
    diagnostic: str = ""

    def monitored(self, epoch: int) -> float:
        return self.epochs[epoch - 1].val_loss[self.monitor_head]

    def best_val_loss(self) -> float:
        return self.monitored(self.best_epoch)

    # -- exports (wall times stay out of both files so artifacts are
    #    byte-identical across reruns) --------------------------------------

    def record_lines(self) -> list[str]:
        cols = ["epoch"]
        cols += [f"train_loss.{h}" for h in self.heads]
        cols += [f"val_loss.{h}" for h in self.heads]
        cols.append("best")
        lines = ["\t".join(cols)]
        for rec in self.epochs:
            row = [str(rec.epoch)]
            row += [repr(rec.train_loss[h]) for h in self.heads]
            row += [repr(rec.val_loss.get(h, float("nan"))) for h in self.heads]
            row.append("1" if rec.is_best else "0")
            lines.append("\t".join(row))
        return lines

    def render_table(self) -> str:
        headers = ["epoch"]
        headers += [f"train {h}" for h in self.heads]
        headers += [f"val {h}" for h in self.heads]
        headers.append("best")
        rows = []
        for rec in self.epochs:
            row = [str(rec.epoch)]
            row += [f"{rec.train_loss[h]:.6f}" for h in self.heads]
            row += [
                f"{rec.val_loss[h]:.6f}" if h in rec.val_loss else "-" for h in self.heads
            ]
            row.append("*" if rec.is_best else "")
            rows.append(row)
        widths = [max(len(h), *(len(r[i]) for r in rows)) if rows else len(h)
                  for i, h in enumerate(headers)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        out = [fmt.format(*headers)]
        out += [fmt.format(*r) for r in rows]
        return "\n".join(out)


@dataclass
class EarlyStopMonitor:
    """Tracks the minimum of one monitored loss and the stop decision.

    ``observe`` returns True once ``patience`` consecutive epochs failed to
    produce a new strict minimum.
    """

    patience: int
    best_loss: float = np.inf
    best_epoch: int = 0
    wait: int = 0

    def observe(self, epoch: int, loss: float) -> bool:
        if loss < self.best_loss:
            self.best_loss = loss
            self.best_epoch = epoch
            self.wait = 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def split_train_val(
    dataset: PreparedDataset, seed: int, val_fraction: float = 0.25
) -> tuple[PreparedDataset, PreparedDataset]:
    """Seeded uniform split; validation gets round(n * fraction) rows."""
    if dataset.labels is None:
        raise PipelineMismatchError("cannot split an unlabeled dataset")
    n = dataset.n_rows
    if n < 4:
        raise ValueError("need at least 4 rows to split")
    n_val = int(round(n * val_fraction))
    n_val = max(1, min(n - 1, n_val))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return dataset.take(train_idx), dataset.take(val_idx)


def predict(params: NetworkParams, dataset: PreparedDataset, batch_size: int = 65536) -> np.ndarray:
    """Pure forward pass in row order; shape (n_rows, n_heads)."""
    chunks = []
    for start in range(0, dataset.n_rows, batch_size):
        chunks.append(forward(params, dataset.take(np.arange(start, min(start + batch_size, dataset.n_rows)))))
    if not chunks:
        return np.zeros((0, len(params.config.heads)))
    return np.concatenate(chunks, axis=0)


def _eval_losses(
    params: NetworkParams, dataset: PreparedDataset, labels: np.ndarray, batch_size: int
) -> dict[str, float]:
    probs = predict(params, dataset, batch_size)
    per_head = bce_loss(probs, labels).per_head
    return {h: float(per_head[k]) for k, h in enumerate(params.config.heads)}


def _run_epoch(
    params: NetworkParams,
    opt: OptimizerState,
    dataset: PreparedDataset,
    labels: np.ndarray,
    batch_size: int,
    rng: np.random.Generator,
    frozen_heads: frozenset[str],
) -> None:
    order = rng.permutation(dataset.n_rows)
    for start in range(0, dataset.n_rows, batch_size):
        idx = order[start : start + batch_size]
        grads = backward(params, dataset.take(idx), labels[idx], frozen_heads=frozen_heads)
        optimizer_step(opt, params, grads)


def train_with_early_stopping(
    dataset: PreparedDataset,
    net_config: NetworkConfig,
    train_config: TrainConfig,
) -> tuple[NetworkParams, TrainingHistory]:
    """Split, train with early stopping, return the best-epoch snapshot.

    Mini-batch order is reshuffled every epoch from the training seed. After
    each epoch train and validation losses are evaluated on frozen
    parameters; a new minimum of the monitored validation loss snapshots the
    parameters. Training stops after ``patience`` consecutive epochs without
    a new minimum, or at ``max_epochs``.

    In ``per_head`` mode each head is monitored on its own validation loss;
    a head whose patience runs out is frozen at its best snapshot (with
    duplicated trunks this freezes its whole trunk copy) while the rest
    keeps training, and the loop ends when every head has stopped.

    A non-finite loss or gradient aborts the loop; the best snapshot seen so
    far is returned with ``history.diverged`` set and a diagnostic message.
    """
    if train_config.monitor_head not in net_config.heads:
        raise ValueError(
            f"monitor head {train_config.monitor_head!r} not among heads {net_config.heads}"
        )
    train_ds, val_ds = split_train_val(dataset, train_config.seed, train_config.val_fraction)
    y_train = train_ds.label_matrix(net_config.heads)
    y_val = val_ds.label_matrix(net_config.heads)

    params = init_network(net_config)
    opt = OptimizerState.create(train_config.optimizer, train_config.learning_rate, params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))

    history = TrainingHistory(heads=net_config.heads, monitor_head=train_config.monitor_head)
    per_head = train_config.monitor_mode == "per_head"
    heads = net_config.heads

    best_snapshot = params.copy()
    monitors = {h: EarlyStopMonitor(train_config.patience) for h in heads}
    snapshots: dict[str, NetworkParams] = {h: params.copy() for h in heads}
    stopped = {h: False for h in heads}

    def frozen_set() -> frozenset[str]:
        return frozenset(h for h, s in stopped.items() if s) if per_head else frozenset()

    for epoch in range(1, train_config.max_epochs + 1):
        t0 = time.perf_counter()
        try:
            _run_epoch(
                params, opt, train_ds, y_train, train_config.batch_size, shuffle_rng,
                frozen_set(),
            )
        except NonFiniteGradientError as exc:
            history.diverged = True
            history.diagnostic = f"epoch {epoch}: {exc}"
            break

        train_loss = _eval_losses(params, train_ds, y_train, train_config.eval_batch_size)
        val_loss = _eval_losses(params, val_ds, y_val, train_config.eval_batch_size)
        record = EpochRecord(
            epoch=epoch,
            train_loss=train_loss,
            val_loss=val_loss,
            wall_time=time.perf_counter() - t0,
        )
        history.epochs.append(record)
        history.stopped_epoch = epoch

        if not all(np.isfinite(v) for v in list(train_loss.values()) + list(val_loss.values())):
            history.diverged = True
            history.diagnostic = f"epoch {epoch}: non-finite loss {val_loss}"
            break

        if per_head:
            for h in heads:
                if stopped[h]:
                    continue
                stop = monitors[h].observe(epoch, val_loss[h])
                if monitors[h].wait == 0:
                    snapshots[h] = params.copy()
                    record.is_best = record.is_best or h == train_config.monitor_head
                elif stop:
                    stopped[h] = True
                    _restore_head_blocks(params, snapshots[h], h)
            if all(stopped.values()):
                break
        else:
            h = train_config.monitor_head
            stop = monitors[h].observe(epoch, val_loss[h])
            if monitors[h].wait == 0:
                best_snapshot = params.copy()
                record.is_best = True
                history.best_epoch = epoch
            elif stop:
                break

    if per_head:
        for h in heads:
            if not stopped[h]:
                _restore_head_blocks(params, snapshots[h], h)
        history.per_head_best = {h: monitors[h].best_epoch for h in heads}
        history.best_epoch = monitors[train_config.monitor_head].best_epoch
        return params, history

    # best_epoch stays 0 only when no epoch ever produced a finite monitored
    # loss; the caller then receives the initial weights plus the diagnostic.
    return best_snapshot, history


def _restore_head_blocks(params: NetworkParams, snapshot: NetworkParams, head: str) -> None:
    """Copy back the blocks owned by one head: its output unit, and its trunk
    copy when trunks are duplicated."""
    prefixes = [f"head.{head}."]
    if params.config.trunk_sharing == "duplicated":
        prefixes.append(f"trunk.{head}.")
    for name in params.blocks:
        if any(name.startswith(p) for p in prefixes):
            params.blocks[name][...] = snapshot.blocks[name]


def retrain_full(
    dataset: PreparedDataset,
    net_config: NetworkConfig,
    train_config: TrainConfig,
    epoch_count: int,
) -> tuple[NetworkParams, TrainingHistory]:
    """Train on 100% of the labeled data for exactly ``epoch_count`` epochs.

    No validation, no stopping; initialization and batch order are seeded
    exactly like the early-stopped run.
    """
    if epoch_count < 1:
        raise ValueError("epoch_count must be >= 1")
    if dataset.labels is None:
        raise PipelineMismatchError("cannot train on an unlabeled dataset")
    y = dataset.label_matrix(net_config.heads)

    params = init_network(net_config)
    opt = OptimizerState.create(train_config.optimizer, train_config.learning_rate, params)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([train_config.seed, 1]))
    history = TrainingHistory(heads=net_config.heads, monitor_head=train_config.monitor_head)

    for epoch in range(1, epoch_count + 1):
        t0 = time.perf_counter()
        try:
            _run_epoch(params, opt, dataset, y, train_config.batch_size, shuffle_rng, frozenset())
        except NonFiniteGradientError as exc:
            history.diverged = True
            history.diagnostic = f"epoch {epoch}: {exc}"
            break
        train_loss = _eval_losses(params, dataset, y, train_config.eval_batch_size)
        history.epochs.append(
            EpochRecord(
                epoch=epoch,
                train_loss=train_loss,
                val_loss={},
                wall_time=time.perf_counter() - t0,
            )
        )
        history.stopped_epoch = epoch
    return params, history
