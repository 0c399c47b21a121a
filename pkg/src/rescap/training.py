"""Optimizers, gradient clipping and the teacher-forced training loop.

Training is deterministic given (dataset, config): shuffling runs on the
portable xoshiro generator, batches are consecutive chunks of the
shuffled order (split further if records disagree on region count), and
parameter updates happen on a single thread in a fixed tensor order.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .decoder import (
    CaptionModel,
    ModelDims,
    init_model,
    make_variant,
    teacher_forced_batch,
)
from .rng import Xoshiro256StarStar, derive_seed
from .tensor import NumericalError, Tensor

OPTIMIZERS = ("adam", "sgd_momentum")

_SHUFFLE_STREAM = 202


@dataclass
class TrainConfig:
    epochs: int
    learning_rate: float = 1e-3
    batch_size: int = 16
    clip_norm: float | None = 5.0
    optimizer: str = "adam"
    seed: int = 0
    variant: str = "BU+ResTd"
    dims: ModelDims | None = None  # None: desk-scale defaults, vocab from dataset

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError(f"clip_norm must be positive or None, got {self.clip_norm}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    token_accuracy: float
    seconds: float


@dataclass
class TrainLog:
    epochs: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        """Deterministic CSV of the learning curve.

        Wall time stays out of the file on purpose: identical seed and
        config must yield byte-identical logs, and elapsed seconds are an
        observation, not part of the computation. Timings live on the
        in-memory records and in console output.
        """
        lines = ["epoch,loss,token_acc"]
        for e in self.epochs:
            lines.append(f"{e.epoch},{e.loss:.12g},{e.token_accuracy:.12g}")
        return "\n".join(lines) + "\n"


# -- optimizer steps ---------------------------------------------------------------


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Scale all gradients by max_norm/|g| when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    total = 0.0
    for g in grads.values():
        total += float((g * g).sum())
    norm = np.sqrt(total)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def optimizer_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    config: TrainConfig,
    state: dict | None,
) -> dict:
    """Apply one update in place; returns the advanced optimizer state.

    Adam uses beta1=0.9, beta2=0.999, eps=1e-8 with bias correction; SGD
    momentum uses mu=0.9. Tensors without a gradient entry are untouched.
    """
    if state is None:
        state = {"t": 0, "slots": {}}
    state["t"] += 1
    t = state["t"]
    lr = config.learning_rate
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for tensor {name!r}")
        slot = state["slots"].get(name)
        if config.optimizer == "adam":
            if slot is None:
                slot = {"m": np.zeros_like(p.data), "v": np.zeros_like(p.data)}
                state["slots"][name] = slot
            slot["m"] = 0.9 * slot["m"] + 0.1 * g
            slot["v"] = 0.999 * slot["v"] + 0.001 * (g * g)
            m_hat = slot["m"] / (1.0 - 0.9 ** t)
            v_hat = slot["v"] / (1.0 - 0.999 ** t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        else:
            if slot is None:
                slot = {"u": np.zeros_like(p.data)}
                state["slots"][name] = slot
            slot["u"] = 0.9 * slot["u"] + g
            p.data -= lr * slot["u"]
    return state


# -- the epoch loop ----------------------------------------------------------------


def _resolve_dims(dataset, config: TrainConfig) -> ModelDims:
    vocab_size = dataset.vocab.size
    if config.dims is None:
        d = dataset.records[0].record.depth
        return ModelDims(vocab_size=vocab_size, feat_dim=d)
    if config.dims.vocab_size != vocab_size:
        raise ValueError(
            f"vocab mismatch: dataset has {vocab_size} tokens, config says {config.dims.vocab_size}"
        )
    return config.dims


def _batches(order: list[int], examples, batch_size: int):
    """Consecutive chunks of the shuffled order, split by region count."""
    for lo in range(0, len(order), batch_size):
        chunk = order[lo:lo + batch_size]
        by_n: dict[int, list[int]] = {}
        for idx in chunk:
            by_n.setdefault(examples[idx][0].num_regions, []).append(idx)
        for _, group in sorted(by_n.items()):
            yield group


def fit(dataset, config: TrainConfig) -> tuple[CaptionModel, TrainLog]:
    """Train a fresh model of the configured variant on (record, caption) pairs.

    ``dataset`` needs ``vocab`` and ``records``, each record carrying a
    ``record`` (FeatureRecord) and ``captions``; every caption of a scene
    becomes its own training example.
    """
    if not dataset.records:
        raise ValueError("dataset is empty")
    dims = _resolve_dims(dataset, config)
    model = init_model(dims, make_variant(config.variant), seed=derive_seed(config.seed, 1))
    params = model.named_parameters()

    examples = [(sr.record, cap) for sr in dataset.records for cap in sr.captions]
    log = TrainLog()
    opt_state: dict | None = None
    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = list(range(len(examples)))
        Xoshiro256StarStar(derive_seed(config.seed, _SHUFFLE_STREAM, epoch)).shuffle(order)

        loss_sum = 0.0
        tokens = correct = 0
        for group in _batches(order, examples, config.batch_size):
            records = [examples[i][0] for i in group]
            captions = [examples[i][1] for i in group]
            for p in params.values():
                p.zero_grad()
            loss, _, stats = teacher_forced_batch(model, records, captions)
            loss.backward()
            grads = {k: p.grad for k, p in params.items() if p.grad is not None}
            if config.clip_norm is not None:
                grads = clip_gradients(grads, config.clip_norm)
            opt_state = optimizer_step(params, grads, config, opt_state)
            loss_sum += loss.item() * len(group)
            tokens += stats.tokens
            correct += stats.correct
        log.epochs.append(
            EpochStats(
                epoch=epoch,
                loss=loss_sum / len(examples),
                token_accuracy=correct / tokens if tokens else 0.0,
                seconds=time.perf_counter() - start,
            )
        )
    return model, log
