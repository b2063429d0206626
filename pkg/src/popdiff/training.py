"""AdamW optimization with cosine-annealed learning rate and the epoch loop.

Three independent seeded generators (parameter init, shuffling, noise draws)
are derived from one training seed, so data order and noise are separately
reproducible and the whole run is deterministic on a fixed platform.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, fields

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward
from .diffusion import DiffusionConfig, linear_schedule, loss_simple
from .ioutil import atomic_write_text
from .network import NetworkConfig, NetworkParams, init_params
from .schema import Population, encode_population

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "EpochStats",
    "cosine_lr",
    "adamw_step",
    "run_training",
    "save_loss_history",
    "load_loss_history",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 700
    lr_max: float = 3e-4
    lr_min: float = 1e-7
    lr_period: int = 700
    batch_size: int = 256
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("epochs", "lr_period", "batch_size"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ValueError(f"train config: {name} must be an integer >= 1")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("train config: seed must be a non-negative integer")
        if not 0.0 < self.lr_min <= self.lr_max:
            raise ValueError(
                f"train config: need 0 < lr_min <= lr_max, got "
                f"({self.lr_min}, {self.lr_max})"
            )

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"train config: unknown field(s) {sorted(unknown)}")
        return cls(**obj)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def cosine_lr(epoch: int, config: TrainConfig) -> float:
    """Cosine annealing from lr_max (epoch 0) to lr_min (epoch lr_period)."""
    if not 0 <= epoch <= config.lr_period:
        raise ValueError(
            f"epoch {epoch} outside the annealing range [0, {config.lr_period}]"
        )
    span = config.lr_max - config.lr_min
    return config.lr_min + 0.5 * span * (1.0 + math.cos(math.pi * epoch / config.lr_period))


@dataclass
class OptimizerState:
    """Per-parameter Adam moments plus the shared step counter."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01

    @classmethod
    def for_params(cls, params: dict[str, Tensor], **hypers) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(p.data) for name, p in params.items()},
            v={name: np.zeros_like(p.data) for name, p in params.items()},
            **hypers,
        )


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
) -> bool:
    """One decoupled-weight-decay Adam update, in place.

    Returns False (and leaves everything untouched) if any gradient is
    non-finite; the caller decides whether a skipped step is fatal.
    """
    for name in params:
        g = grads[name]
        if not np.isfinite(g.sum()):
            logger.warning("skipping optimizer step %d: non-finite gradient in %s",
                           state.step + 1, name)
            return False
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        if state.weight_decay:
            update = update + state.weight_decay * p.data
        p.data -= lr * update
    return True


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float


def run_training(
    data: Population,
    net_config: NetworkConfig,
    diff_config: DiffusionConfig,
    train_config: TrainConfig,
    *,
    dtype=np.float32,
    optimizer_state: OptimizerState | None = None,
    progress=None,
) -> tuple[NetworkParams, list[EpochStats]]:
    """Train a noise-prediction network on an encoded population.

    Per epoch: seeded shuffle, mini-batches, noise-recovery loss, backward,
    AdamW step at the cosine learning rate for that epoch (held at lr_min
    beyond lr_period).  Two consecutive non-finite losses abort; a single one
    skips the batch.  ``progress(stats)`` is called after each epoch.
    """
    if len(data) == 0:
        raise ValueError("training data is empty")
    x_all = encode_population(data, dtype=dtype)
    n = x_all.shape[0]
    params = init_params(net_config, data.schema, train_config.seed, dtype=dtype)
    schedule = linear_schedule(diff_config)
    state = optimizer_state or OptimizerState.for_params(params.tensors)

    root = np.random.SeedSequence(train_config.seed)
    shuffle_seq, noise_seq, dropout_seq = root.spawn(3)
    shuffle_rng = np.random.default_rng(shuffle_seq)
    noise_rng = np.random.default_rng(noise_seq)
    dropout_rng = np.random.default_rng(dropout_seq) if net_config.dropout > 0 else None

    history: list[EpochStats] = []
    bad_streak = 0
    for epoch in range(train_config.epochs):
        lr = cosine_lr(min(epoch, train_config.lr_period), train_config)
        order = shuffle_rng.permutation(n)
        total_loss = 0.0
        total_count = 0
        for start in range(0, n, train_config.batch_size):
            batch = x_all[order[start : start + train_config.batch_size]]
            try:
                loss, tape = loss_simple(
                    params, batch, noise_rng, schedule, dropout_rng=dropout_rng
                )
            except NonFiniteError as exc:
                bad_streak += 1
                if bad_streak >= 2:
                    raise RuntimeError(
                        f"training aborted at epoch {epoch}: non-finite loss in "
                        f"two consecutive batches ({exc})"
                    ) from exc
                logger.warning("epoch %d: skipping batch with non-finite loss", epoch)
                continue
            bad_streak = 0
            grads = backward(tape, loss)
            named = {name: grads[p] for name, p in params.tensors.items()}
            adamw_step(params.tensors, named, state, lr)
            total_loss += float(loss.data) * batch.shape[0]
            total_count += batch.shape[0]
        if total_count == 0:
            raise RuntimeError(f"training epoch {epoch} produced no usable batches")
        stats = EpochStats(epoch=epoch, mean_loss=total_loss / total_count, lr=lr)
        history.append(stats)
        if progress is not None:
            progress(stats)
        logger.debug("epoch %d: mean loss %.6f, lr %.3e", epoch, stats.mean_loss, lr)
    return params, history


def save_loss_history(history: list[EpochStats], path) -> None:
    buf = io.StringIO(newline="")
    writer = csv.writer(buf)
    writer.writerow(["epoch", "mean_loss", "lr"])
    for s in history:
        writer.writerow([s.epoch, repr(s.mean_loss), repr(s.lr)])
    atomic_write_text(path, buf.getvalue())


def load_loss_history(path) -> list[EpochStats]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochStats(int(r["epoch"]), float(r["mean_loss"]), float(r["lr"]))
            for r in reader
        ]
