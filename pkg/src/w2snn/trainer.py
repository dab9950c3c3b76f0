"""Minibatch local-W2 training of a stochastic network with Adam.

One epoch = refresh the minibatch when due, draw fresh weights for every
input touched by the selected neighbourhoods, evaluate the loss, take one
Adam step, and floor sigma.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import snn
from .errors import ConfigError, NumericalError
from .locality import (Dataset, MinibatchSelection, build_index, eligible, local_w2_loss,
                       select_minibatch, union_rows)
from .rng import seed_from, substream


@dataclass(frozen=True)
class TrainConfig:
    snn: snn.SNNConfig
    learning_rate: float = 0.005
    epoch_max: int = 1000
    epoch_update: int = 20
    n_batch: int = 128
    delta: float = 0.25
    N0: int = 4
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    clip_norm: float | None = None
    snapshot_every: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ConfigError("learning_rate must be non-negative")
        if self.epoch_update < 1:
            raise ConfigError("epoch_update must be >= 1")
        if self.epoch_max < 0:
            raise ConfigError("epoch_max must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigError("clip_norm must be positive when set")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, arrays) -> "AdamState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
              names: list[str] | None = None) -> None:
    """In-place Adam update with bias correction."""
    for k, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            name = names[k] if names else f"#{k}"
            raise NumericalError(f"non-finite gradient in parameter {name}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def optimizer_step(params: snn.SNNParams, pv: snn.ParamValues, state: AdamState,
                   config: TrainConfig) -> None:
    grads = [g.copy() for g in pv.grads()]
    if config.clip_norm is not None:
        clip_global_norm(grads, config.clip_norm)
    adam_step(params.arrays(), grads, state, config.learning_rate, config.beta1, config.beta2,
              config.adam_eps, names=params.names())
    params.clamp_sigma()


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    minibatch_id: int
    wall_ms: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)
    snapshots: dict[int, snn.SNNParams] = field(default_factory=dict)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def minibatch_ids(self) -> np.ndarray:
        return np.array([r.minibatch_id for r in self.records])

    def to_csv(self) -> str:
        lines = ["epoch,loss,minibatch_id,wall_ms"]
        lines += [f"{r.epoch},{r.loss!r},{r.minibatch_id},{r.wall_ms:.3f}" for r in self.records]
        return "\n".join(lines) + "\n"


def init_params(config: TrainConfig, seed: int) -> snn.SNNParams:
    return snn.init(config.snn, substream(seed, 0))


def train(dataset: Dataset, config: TrainConfig, rng: np.random.Generator | int | None = None,
          params: snn.SNNParams | None = None, threads: int = 1):
    """Fit an SNN to ``dataset``; returns ``(params, history)``.

    The master seed is ``config.seed`` unless ``rng`` is given.
    """
    seed = seed_from(rng, config.seed)
    if params is None:
        params = init_params(config, seed)
    else:
        params = params.copy()
    index = build_index(dataset.xs, config.delta)
    pool = eligible(index, config.N0)
    if pool.size == 0:
        raise ConfigError(f"no training point has >= {config.N0} neighbours within delta={config.delta}; "
                          "increase delta or lower N0")
    state = AdamState.zeros_like(params.arrays())
    history = TrainHistory()
    sel: MinibatchSelection | None = None
    for epoch in range(config.epoch_max):
        start = time.perf_counter()
        if epoch % config.epoch_update == 0:
            batch_id = epoch // config.epoch_update
            sel = select_minibatch(pool, config.n_batch, substream(seed, 1, batch_id), config.N0, batch_id)
            rows = union_rows(index, sel)
        pv = params.as_values()
        preds = snn.forward(pv, dataset.xs[rows], substream(seed, 2, epoch))
        loss = local_w2_loss(dataset.ys, preds, sel, index, rows=rows, threads=threads)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        ad.backward(loss)
        optimizer_step(params, pv, state, config)
        history.records.append(EpochRecord(epoch, value, sel.batch_id, 1e3 * (time.perf_counter() - start)))
        if config.snapshot_every and (epoch + 1) % config.snapshot_every == 0:
            history.snapshots[epoch + 1] = params.copy()
    return params, history


def evaluate(params: snn.SNNParams, test_inputs, K: int = 20,
             rng: np.random.Generator | int | None = None) -> list[np.ndarray]:
    """``K`` fresh samples per test input, each input on its own substream."""
    if K < 1:
        raise ValueError("K must be >= 1")
    seed = seed_from(rng, 0)
    X = np.atleast_2d(np.asarray(test_inputs, dtype=np.float64))
    return [snn.forward_ensemble(params, x, K, substream(seed, 3, i)) for i, x in enumerate(X)]


def loss_on(dataset: Dataset, params: snn.SNNParams, config: TrainConfig, seed: int = 0,
            n_batch: int | None = None) -> float:
    """Local W2 loss of ``params`` on a fixed minibatch (no update)."""
    index = build_index(dataset.xs, config.delta)
    sel = select_minibatch(eligible(index, config.N0), n_batch or config.n_batch, substream(seed, 4))
    rows = union_rows(index, sel)
    preds = snn.forward(params, dataset.xs[rows], substream(seed, 5))
    return float(local_w2_loss(dataset.ys, preds, sel, index, rows=rows).data)
