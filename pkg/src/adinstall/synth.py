"""Seeded synthetic impression data for self-contained end-to-end runs.

The generator plants learnable structure: per-token effects on the
categorical columns, linear effects on the binary and numerical columns,
and exact affine dependence between numerical columns so that missing
cells are recoverable from the rest of the row. Label base rates are
calibrated by bisecting the logit intercept, so observed label means land
on the requested rates up to sampling noise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import RawTable
from .schema import FeatureSchema


@dataclass(frozen=True)
class SynthSpec:
    n_rows: int = 10_000
    test_rows: int = 2_000
    seed: int = 0
    base_rate: float = 0.17  # is_installed
    click_rate: float = 0.22  # is_clicked
    cat_vocab_sizes: tuple[int, ...] = (12, 40, 300)
    include_constant_column: bool = True
    n_binary: int = 3
    n_numerical: int = 5  # >= 3: two of them are affine in the first three
    cat_missing_rate: float = 0.05
    numeric_missing_rate: float = 0.10
    test_unseen_rate: float = 0.02
    signal_scale: float = 1.0

    def __post_init__(self):
        if self.n_rows < 100:
            raise ValueError("n_rows must be >= 100")
        if self.test_rows < 1:
            raise ValueError("test_rows must be >= 1")
        if not 0.0 < self.base_rate < 1.0 or not 0.0 < self.click_rate < 1.0:
            raise ValueError("label rates must lie strictly between 0 and 1")
        if self.n_binary < 1 or self.n_numerical < 3:
            raise ValueError("need >= 1 binary and >= 3 numerical columns")
        for rate in (self.cat_missing_rate, self.numeric_missing_rate, self.test_unseen_rate):
            if not 0.0 <= rate < 1.0:
                raise ValueError("rates must lie in [0, 1)")


@dataclass(frozen=True)
class SynthResult:
    train: RawTable
    test: RawTable
    schema: FeatureSchema  # labeled (train) schema


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -40, 40)))


def _calibrate_intercept(scores: np.ndarray, target: float) -> float:
    lo, hi = -30.0, 30.0
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if float(_sigmoid(scores + mid).mean()) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _build_schema(spec: SynthSpec) -> FeatureSchema:
    cols: list[tuple[str, str]] = [("f_0", "row_id"), ("f_1", "ignore")]
    next_id = 2
    n_cat = len(spec.cat_vocab_sizes) + (1 if spec.include_constant_column else 0)
    for _ in range(n_cat):
        cols.append((f"f_{next_id}", "categorical"))
        next_id += 1
    for _ in range(spec.n_binary):
        cols.append((f"f_{next_id}", "binary"))
        next_id += 1
    for _ in range(spec.n_numerical):
        cols.append((f"f_{next_id}", "numerical"))
        next_id += 1
    cols.append(("is_clicked", "label"))
    cols.append(("is_installed", "label"))
    return FeatureSchema(tuple(cols), delimiter="\t", has_header=True)


def generate(spec: SynthSpec) -> SynthResult:
    rng = np.random.default_rng(spec.seed)
    schema = _build_schema(spec)
    n_total = spec.n_rows + spec.test_rows

    # token pools: non-contiguous raw values, plus a disjoint pool of
    # never-trained tokens injected into the test slice
    pools: list[np.ndarray] = []
    unseen_pools: list[np.ndarray] = []
    cat_cols: list[np.ndarray] = []
    score = np.zeros(n_total)
    for size in spec.cat_vocab_sizes:
        pool = np.sort(rng.choice(np.arange(size * 13 + 11), size=size, replace=False))
        extra = np.setdiff1d(np.arange(size * 13 + 11, size * 13 + 11 + 50), pool)[:10]
        pools.append(pool)
        unseen_pools.append(extra)
        token_effect = rng.normal(0.0, 0.8 * spec.signal_scale, size)
        tokens = rng.choice(pool, size=n_total)
        cat_cols.append(tokens)
        score += token_effect[np.searchsorted(pool, tokens)]

    if spec.include_constant_column:
        cat_cols.append(np.full(n_total, 7, dtype=np.int64))

    bin_cols = np.empty((n_total, spec.n_binary), dtype=np.int8)
    for j in range(spec.n_binary):
        p = rng.uniform(0.25, 0.75)
        w = rng.uniform(0.4, 0.9) * (1 if rng.uniform() < 0.5 else -1) * spec.signal_scale
        bin_cols[:, j] = rng.uniform(size=n_total) < p
        score += w * (bin_cols[:, j] - p)

    # numerical block: independent latents first, then exact affine combos,
    # displayed at wildly different scales
    n_base = spec.n_numerical - 2
    latents = rng.normal(0.0, 1.0, size=(n_total, n_base))
    for j in range(n_base):
        w = rng.uniform(0.5, 1.0) * (1 if rng.uniform() < 0.5 else -1) * spec.signal_scale
        score += w * latents[:, j]
    derived_a = 2.0 * latents[:, 0] - latents[:, 1 % n_base] + 3.0
    derived_b = latents[:, 1 % n_base] + 4.0 * latents[:, 2 % n_base] - 1.0
    displays = np.concatenate([latents, derived_a[:, None], derived_b[:, None]], axis=1)
    scales = np.array([10.0 ** rng.uniform(-2, 11) for _ in range(spec.n_numerical)])
    num_cols = displays * scales

    extra = rng.normal(0.0, 1.0, size=n_total)
    install_b = _calibrate_intercept(score[: spec.n_rows], spec.base_rate)
    click_score = 0.6 * score + 0.7 * spec.signal_scale * extra
    click_b = _calibrate_intercept(click_score[: spec.n_rows], spec.click_rate)

    installed = (rng.uniform(size=n_total) < _sigmoid(score + install_b)).astype(np.int8)
    clicked = (rng.uniform(size=n_total) < _sigmoid(click_score + click_b)).astype(np.int8)

    cat_tokens = np.column_stack(cat_cols).astype(np.int64)
    cat_missing = rng.uniform(size=cat_tokens.shape) < spec.cat_missing_rate
    if spec.include_constant_column:
        cat_missing[:, -1] = False
    numeric = num_cols.astype(np.float64)
    numeric[rng.uniform(size=numeric.shape) < spec.numeric_missing_rate] = np.nan

    # swap in unseen tokens on the test slice only
    for j, extra_pool in enumerate(unseen_pools):
        if extra_pool.size == 0:
            continue
        hit = rng.uniform(size=spec.test_rows) < spec.test_unseen_rate
        rows = spec.n_rows + np.flatnonzero(hit)
        cat_tokens[rows, j] = rng.choice(extra_pool, size=rows.size)

    labels = np.column_stack([clicked, installed]).astype(np.int8)
    row_ids = tuple(str(i + 1) for i in range(n_total))

    kept = schema
    cat_names = kept.names_with_role("categorical")
    bin_names = kept.names_with_role("binary")
    num_names = kept.names_with_role("numerical")

    def slice_table(start: int, stop: int, labeled: bool) -> RawTable:
        sl = slice(start, stop)
        return RawTable(
            schema=kept if labeled else kept.without_labels(),
            n_rows=stop - start,
            row_ids=row_ids[sl],
            cat_names=cat_names,
            cat_tokens=cat_tokens[sl].copy(),
            cat_missing=cat_missing[sl].copy(),
            bin_names=bin_names,
            binary=bin_cols[sl].copy(),
            num_names=num_names,
            numeric=numeric[sl].copy(),
            label_names=("is_clicked", "is_installed") if labeled else (),
            labels=labels[sl].copy() if labeled else np.zeros((stop - start, 0), dtype=np.int8),
        )

    train = slice_table(0, spec.n_rows, labeled=True)
    test = slice_table(spec.n_rows, n_total, labeled=False)
    return SynthResult(train=train, test=test, schema=kept)
