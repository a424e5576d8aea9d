"""Weighted 1-vs-all cross-entropy training with Adagrad.

Each training example is a tail query scored against every entity; the
loss is a frequency-weighted softmax cross-entropy, optionally plus a
penalty on the example's embeddings and a smoothness term over timestamp
parameters.  Epochs shuffle with a seeded generator, so a fixed seed and
``threads=1`` give bitwise-reproducible checkpoints.

Validation runs every few epochs on checkpoint-precision (float32)
parameters and the best model by filtered validation MRR is kept, so
re-evaluating the emitted checkpoint reproduces the logged numbers
exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from threadpoolctl import threadpool_limits

from .checkpoint import save_checkpoint
from .data import (Dataset, FilterIndex, build_filter_index,
                   build_frequency_table, entity_weights, vocab_hashes)
from .errors import ConfigError, DatasetError, TrainingDiverged
from .evaluation import RankingReport, evaluate_split
from .models import (Gradients, ModelKind, ModelParams, SparseRows, all_scores,
                     backward, forward_queries, init_params)
from .regularizers import RegKind, RegSpec, SmootherKind, penalty_batch, \
    timestamp_smoother_grad


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of a training run."""

    model: ModelKind
    dim: int
    batch_size: int = 100
    lr: float = 0.1
    epochs: int = 200
    seed: int = 0
    valid_every: int = 5
    w0: float = 0.0
    reg: RegSpec = field(default_factory=RegSpec)
    precision: str = "f32"
    init_scale: float = 1e-3
    adagrad_eps: float = 1e-10
    threads: int = 1

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if self.model.is_complex and self.dim % 2:
            raise ConfigError(f"{self.model.value} needs an even dim, got {self.dim}")
        if self.batch_size < 1:
            raise ConfigError(f"batch size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.valid_every < 1:
            raise ConfigError(f"valid_every must be >= 1, got {self.valid_every}")
        if not 0.0 <= self.w0 <= 1.0:
            raise ConfigError(f"w0 must be in [0, 1], got {self.w0}")
        if self.precision not in ("f32", "f64"):
            raise ConfigError(f"precision must be f32 or f64, got {self.precision!r}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        self.reg.validate_for(self.model)

    @property
    def np_dtype(self):
        return np.float32 if self.precision == "f32" else np.float64


def weighted_cross_entropy(
    scores: np.ndarray, target: int, weight: float = 1.0
) -> tuple[float, np.ndarray]:
    """Weighted softmax cross-entropy of one score vector.

    Returns ``weight * (logsumexp(scores) - scores[target])`` and the
    gradient ``weight * (softmax(scores) - onehot(target))``, computed with
    max subtraction.
    """
    scores = np.asarray(scores)
    if not (0 <= target < scores.shape[-1]):
        raise ConfigError(f"target {target} out of range for {scores.shape[-1]} classes")
    losses, grads = _wce_batch(scores[None, :], np.asarray([target]),
                               np.asarray([weight], dtype=scores.dtype))
    return float(losses[0]), grads[0]


def _wce_batch(scores: np.ndarray, targets: np.ndarray, weights: np.ndarray):
    m = scores.max(axis=1, keepdims=True)
    z = np.exp(scores - m)
    denom = z.sum(axis=1)
    rows = np.arange(len(scores))
    target_scores = scores[rows, targets]
    losses = weights * (np.log(denom) + m[:, 0] - target_scores)
    grads = z * (weights / denom)[:, None]
    grads[rows, targets] -= weights
    return losses, grads


@dataclass
class AdagradState:
    """Accumulated squared gradients, one buffer per parameter table."""

    head: np.ndarray
    tail: np.ndarray
    relations: np.ndarray
    times: np.ndarray | None
    eps: float = 1e-10

    @classmethod
    def for_params(cls, params: ModelParams, eps: float = 1e-10) -> "AdagradState":
        head = np.zeros_like(params.head)
        tail = head if params.kind.shares_entity_table else np.zeros_like(params.tail)
        return cls(
            head=head,
            tail=tail,
            relations=np.zeros_like(params.relations),
            times=None if params.times is None else np.zeros_like(params.times),
            eps=eps,
        )


def _apply_dense(table, acc, grad, lr, eps):
    acc += grad * grad
    table -= lr * grad / (np.sqrt(acc) + eps)


def _apply_sparse(table, acc, rows: SparseRows, lr, eps):
    agg = rows.aggregated()
    ids, g = agg.ids, agg.grads
    acc[ids] += g * g
    table[ids] -= lr * g / (np.sqrt(acc[ids]) + eps)


def adagrad_step(params: ModelParams, grads: Gradients, state: AdagradState,
                 lr: float) -> None:
    """One in-place Adagrad update; rows with no gradient stay untouched."""
    _apply_dense(params.tail, state.tail, grads.tail_dense, lr, state.eps)
    if grads.head is not None:
        _apply_sparse(params.head, state.head, grads.head, lr, state.eps)
    _apply_sparse(params.relations, state.relations, grads.relations, lr, state.eps)
    if grads.times is not None:
        if isinstance(grads.times, SparseRows):
            _apply_sparse(params.times, state.times, grads.times, lr, state.eps)
        else:
            _apply_dense(params.times, state.times, grads.times, lr, state.eps)


@dataclass
class TrainResult:
    params: ModelParams          # best checkpoint (float32 tables)
    best_valid: RankingReport
    best_epoch: int
    log_lines: list[str]
    checkpoint_path: Path | None = None


def fit(
    dataset: Dataset,
    config: TrainConfig,
    out_dir: str | Path | None = None,
    filter_index: FilterIndex | None = None,
    log: Callable[[str], None] | None = None,
) -> TrainResult:
    """Train on the augmented training split, keep the best model by
    filtered validation MRR, and optionally write checkpoint + log."""
    config.validate()
    if not dataset.reciprocal_applied:
        raise DatasetError("training expects a reciprocal-augmented dataset")
    if config.model.is_temporal and not dataset.temporal:
        raise ConfigError(f"{config.model.value} needs a temporal dataset")

    with threadpool_limits(limits=config.threads):
        return _fit_inner(dataset, config, out_dir, filter_index, log)


def _fit_inner(dataset, config, out_dir, filter_index, log):
    dtype = config.np_dtype
    rng = np.random.default_rng(config.seed)
    params = init_params(
        config.model,
        n_entities=dataset.n_entities,
        n_relations=dataset.n_relations,
        dim=config.dim,
        n_timestamps=dataset.n_timestamps,
        rng=rng,
        scale=config.init_scale,
        dtype=dtype,
    )
    state = AdagradState.for_params(params, eps=config.adagrad_eps)
    freq = build_frequency_table(dataset)
    if filter_index is None:
        filter_index = build_filter_index(dataset)

    spec = config.reg
    reg_active = spec.kind is not RegKind.NONE and spec.lam > 0
    smoother_active = (
        spec.smoother is not SmootherKind.NONE and spec.smoother_weight > 0
        and config.model.is_temporal
    )
    chain_length = dataset.n_timestamps
    if dataset.no_time_id is not None:
        chain_length -= 1

    train = dataset.train
    n = len(train)
    temporal = config.model.is_temporal
    best: RankingReport | None = None
    best_params: ModelParams | None = None
    best_epoch = -1
    log_lines: list[str] = []

    for epoch in range(config.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for batch_idx, start in enumerate(range(0, n, config.batch_size)):
            rows = train[perm[start:start + config.batch_size]]
            heads, rels, tails = rows[:, 0], rows[:, 1], rows[:, 2]
            times = rows[:, 3] if temporal else None
            weights = entity_weights(freq, tails, config.w0).astype(dtype)

            cache = forward_queries(params, heads, rels, times)
            scores = all_scores(params, cache)
            losses, d_scores = _wce_batch(scores, tails, weights)
            batch_loss = float(losses.sum())
            grads = backward(params, cache, d_scores)

            if reg_active:
                pen_values, pen = penalty_batch(spec, params, heads, rels,
                                                tails, times)
                lam = spec.lam
                batch_loss += lam * float(pen_values.sum())
                np.add.at(grads.tail_dense, tails, lam * pen.tail)
                if grads.head is not None:
                    grads.head = SparseRows.concat(
                        [grads.head, SparseRows(heads, lam * pen.head)]
                    )
                else:
                    np.add.at(grads.tail_dense, heads, lam * pen.head)
                grads.relations = SparseRows.concat(
                    [grads.relations, SparseRows(rels, lam * pen.rel)]
                )
                if pen.time is not None:
                    grads.times = SparseRows.concat(
                        [grads.times, SparseRows(times, lam * pen.time)]
                    )

            if smoother_active:
                s_value, s_grad = timestamp_smoother_grad(
                    spec.smoother, params.times, chain_length
                )
                batch_loss += spec.smoother_weight * s_value
                dense_t = np.asarray(spec.smoother_weight * s_grad, dtype=dtype)
                if isinstance(grads.times, SparseRows):
                    agg = grads.times.aggregated()
                    np.add.at(dense_t, agg.ids, agg.grads)
                grads.times = dense_t

            if not np.isfinite(batch_loss):
                raise TrainingDiverged(epoch + 1, batch_idx, params.max_abs())
            adagrad_step(params, grads, state, config.lr)
            epoch_loss += batch_loss

        if (epoch + 1) % config.valid_every == 0 or epoch + 1 == config.epochs:
            eval_params = params.astype(np.float32)
            report = evaluate_split(eval_params, dataset.valid, filter_index)
            line = "\t".join([
                str(epoch + 1),
                f"{epoch_loss / n:.6f}",
                f"{report.mrr:.6f}",
                f"{report.hits1:.6f}",
                f"{report.hits3:.6f}",
                f"{report.hits10:.6f}",
            ])
            log_lines.append(line)
            if log is not None:
                log(line)
            if best is None or report.mrr > best.mrr:
                best, best_params, best_epoch = report, eval_params, epoch + 1

    checkpoint_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint_path = save_checkpoint(
            best_params, out_dir / "checkpoint.kgec", vocab_hashes(dataset)
        )
        (out_dir / "train.log").write_text("\n".join(log_lines) + "\n",
                                           encoding="utf-8")
    return TrainResult(
        params=best_params,
        best_valid=best,
        best_epoch=best_epoch,
        log_lines=log_lines,
        checkpoint_path=checkpoint_path,
    )
