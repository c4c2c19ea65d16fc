"""Central finite-difference oracle for the analytic gradients.

Embedding rows not looked up by the batch are asserted exactly zero (the
loss is constant in those coordinates), and the derivative check runs on
every remaining parameter.

A central difference is only a valid derivative probe where the loss is
differentiable within the probe radius, so check points are chosen clear
of ReLU kinks: biases are jittered off zero and the batch is redrawn until
every ReLU pre-activation has magnitude above a safety margin (a +-1e-4
parameter nudge moves a pre-activation by far less than that).
"""

from __future__ import annotations

import numpy as np

from adinstall.network import (
    NetworkConfig,
    NetworkParams,
    _forward_cached,
    backward,
    bce_loss,
    forward,
    init_network,
)
from adinstall.prep import PreparedDataset

from conftest import make_batch

KINK_MARGIN = 2e-3


def relative_errors(
    params: NetworkParams, batch: PreparedDataset, h: float = 1e-4
) -> dict[str, float]:
    """Max relative error per block between analytic and numeric gradients."""
    cfg = params.config
    y = batch.labels
    grads = backward(params, batch, y)
    weights = cfg.loss_weights

    def loss() -> float:
        return bce_loss(forward(params, batch), y, weights=weights).total

    worst: dict[str, float] = {}
    for name, arr in params.blocks.items():
        g = grads[name]
        if name.startswith("emb."):
            j = cfg.cat_columns.index(name[4:])
            touched = sorted(set(int(c) for c in batch.cat_codes[:, j]))
            untouched = np.setdiff1d(np.arange(arr.shape[0]), touched)
            assert np.all(g[untouched] == 0.0), f"{name}: unused rows must have zero gradient"
            coords = [(r, c) for r in touched for c in range(arr.shape[1])]
        else:
            coords = list(np.ndindex(arr.shape))
        block_worst = 0.0
        for idx in coords:
            orig = arr[idx]
            arr[idx] = orig + h
            lp = loss()
            arr[idx] = orig - h
            lm = loss()
            arr[idx] = orig
            numeric = (lp - lm) / (2.0 * h)
            rel = abs(numeric - g[idx]) / max(abs(numeric), abs(g[idx]), 1e-6)
            block_worst = max(block_worst, rel)
        worst[name] = block_worst
    return worst


def max_relative_error(params: NetworkParams, batch: PreparedDataset, h: float = 1e-4) -> float:
    return max(relative_errors(params, batch, h).values())


def small_config(
    seed: int,
    heads: tuple[str, ...] = ("is_installed",),
    trunk_sharing: str = "shared",
    vocab_sizes: tuple[int, ...] = (3, 300),
    trunk: tuple[int, ...] = (8,),
) -> NetworkConfig:
    return NetworkConfig(
        cat_columns=tuple(f"c{i}" for i in range(len(vocab_sizes))),
        vocab_sizes=vocab_sizes,
        n_binary=3,
        n_numerical=4,
        binary_width=8,
        numerical_width=8,
        trunk=trunk,
        heads=heads,
        trunk_sharing=trunk_sharing,
        freeze_missing_row=False,  # check the true derivative everywhere
        seed=seed,
    )


def relu_pre_margin(params: NetworkParams, batch: PreparedDataset) -> float:
    """Smallest |pre-activation| over every ReLU in the network."""
    cache = _forward_cached(params, batch)
    pres = [cache.bin_pre, cache.num_pre]
    for group_pres in cache.trunk_pres.values():
        pres.extend(group_pres)
    return min(float(np.abs(p).min()) for p in pres if p.size)


def prepare_check_point(
    cfg: NetworkConfig, batch_seed: int, n_rows: int = 5, attempts: int = 50
) -> tuple[NetworkParams, PreparedDataset]:
    """Random params and batch with every ReLU clear of its kink."""
    params = init_network(cfg)
    rng = np.random.default_rng(batch_seed)
    for _ in range(attempts):
        for name, arr in params.blocks.items():
            if name.endswith(".b") and not name.startswith("head."):
                arr[...] = rng.uniform(0.05, 0.25, arr.shape)
        batch = make_batch(rng, cfg, n_rows)
        if relu_pre_margin(params, batch) >= KINK_MARGIN:
            return params, batch
    raise AssertionError(f"no kink-free check point found for seed {batch_seed}")
