"""Chain of 48 damped linear oscillators and its stochastic surrogate.

State ``y = (x_1..x_48, v_1..v_48)``::

    dx_j/dt = v_j
    dv_j/dt = (x_{j-1} - x_j)/50 + (x_{j+1} - x_j)/50 - c_j v_j

with ``x_0 = x_49 = 0``. Dampings ``c_j = exp(xi_j / 4 - 1.6)`` use ``d``
independent ``xi ~ N(0, sigma^2)``; components ``j >= d`` share ``xi_d``.

The surrogate replaces the right-hand side by an SNN whose weights are drawn
once per trajectory and integrated with RK4; the gradient of the
time-averaged local W2 loss flows back through every RK4 stage.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .. import autodiff as ad
from .. import snn
from ..errors import ConfigError, DimensionError, NumericalError
from ..locality import build_index, eligible, select_minibatch, time_decoupled_loss, uniform_index
from ..ot import squared_w2
from ..rng import seed_from, substream
from ..trainer import AdamState, EpochRecord, TrainConfig, TrainHistory, init_params, optimizer_step

N_OSC = 48
STATE_DIM = 2 * N_OSC
COUPLING = 1.0 / 50.0


@dataclass(frozen=True)
class ODEConfig:
    d: int = 5
    sigma: float = 1.0
    sigma0: float = 0.01
    dt: float = 0.1
    n_slices: int = 30
    n_traj: int = 300
    substeps: int = 5
    conditioning: str = "nominal"
    k_f: int = 64
    states_per_slice: int = 10

    def __post_init__(self):
        if not 1 <= self.d <= N_OSC:
            raise ConfigError(f"d must be in [1, {N_OSC}], got {self.d}")
        if self.n_slices < 1 or self.dt <= 0 or self.substeps < 1 or self.n_traj < 1:
            raise ConfigError("need n_slices >= 1, dt > 0, substeps >= 1, n_traj >= 1")
        if self.sigma < 0 or self.sigma0 < 0:
            raise ConfigError("sigma and sigma0 must be non-negative")
        if self.conditioning not in ("nominal", "initial_state"):
            raise ConfigError(f"conditioning must be 'nominal' or 'initial_state', got {self.conditioning!r}")

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, self.n_slices + 1)


def default_snn_config(widths=(60, 60)) -> snn.SNNConfig:
    return snn.SNNConfig(STATE_DIM, STATE_DIM, tuple(widths), "elu", "normal")


@dataclass
class TrajectoryEnsemble:
    """``states[i, t]`` is trajectory ``i`` at time ``times[t]``."""

    states: np.ndarray
    initial: np.ndarray
    times: np.ndarray
    damping: np.ndarray | None = None
    realization: snn.WeightRealization | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.states.ndim != 3 or self.states.shape[0] != self.initial.shape[0]:
            raise DimensionError(f"states {self.states.shape} vs initial {self.initial.shape}")
        if self.states.shape[1] != len(self.times):
            raise DimensionError("time grid length does not match states")
        if not np.all(np.isfinite(self.states)):
            raise NumericalError("trajectory ensemble has non-finite states")

    @property
    def n_traj(self) -> int:
        return self.states.shape[0]


def oscillator_rhs(state, c) -> np.ndarray:
    """Time derivative of ``state`` (``(..., 96)``) for dampings ``c`` (``(..., 48)``)."""
    state = np.asarray(state, dtype=np.float64)
    x, v = state[..., :N_OSC], state[..., N_OSC:]
    pad = np.zeros(x.shape[:-1] + (1,))
    left = np.concatenate([pad, x[..., :-1]], axis=-1)
    right = np.concatenate([x[..., 1:], pad], axis=-1)
    dv = COUPLING * (left - x) + COUPLING * (right - x) - np.asarray(c) * v
    return np.concatenate([v, dv], axis=-1)


def sample_damping(d: int, sigma: float, rng: np.random.Generator) -> np.ndarray:
    if not 1 <= d <= N_OSC:
        raise ConfigError(f"d must be in [1, {N_OSC}], got {d}")
    xi = sigma * rng.standard_normal(d)
    c = np.empty(N_OSC)
    c[:d - 1] = np.exp(xi[:d - 1] / 4.0 - 1.6)
    c[d - 1:] = np.exp(xi[d - 1] / 4.0 - 1.6)
    return c


def oscillator_energy(state) -> np.ndarray:
    """``sum v^2 + (1/50) sum (x_{j+1} - x_j)^2`` including both walls."""
    state = np.asarray(state, dtype=np.float64)
    x, v = state[..., :N_OSC], state[..., N_OSC:]
    pad = np.zeros(x.shape[:-1] + (1,))
    xp = np.concatenate([pad, x, pad], axis=-1)
    return np.sum(v * v, axis=-1) + COUPLING * np.sum(np.diff(xp, axis=-1) ** 2, axis=-1)


def integrate_rk4(rhs: Callable, y0, dt: float, n_slices: int, substeps: int = 5) -> list:
    """Classical RK4 with step ``dt / substeps``; returns the states at ``t_i = i dt``.

    Works on arrays and on autodiff Values alike.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    h = dt / substeps
    y = y0
    out = []
    for i in range(n_slices):
        for _ in range(substeps):
            k1 = rhs(y)
            k2 = rhs(y + (h / 2) * k1)
            k3 = rhs(y + (h / 2) * k2)
            k4 = rhs(y + h * k3)
            y = y + (h / 6) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        data = y.data if isinstance(y, ad.Value) else np.asarray(y)
        if not np.all(np.isfinite(data)):
            raise NumericalError(f"non-finite state at slice {i + 1}; try gradient clipping (train.clip_norm) "
                                 "or a smaller learning rate")
        out.append(y)
    return out


def gen_ode_truth(config: ODEConfig, rng: np.random.Generator | int = 0) -> TrajectoryEnsemble:
    seed = seed_from(rng, 0)
    y0 = 1.0 + config.sigma0 * substream(seed, 20).standard_normal((config.n_traj, STATE_DIM))
    C = np.stack([sample_damping(config.d, config.sigma, substream(seed, 21, i)) for i in range(config.n_traj)])
    states = integrate_rk4(lambda y: oscillator_rhs(y, C), y0, config.dt, config.n_slices, config.substeps)
    return TrajectoryEnsemble(np.stack(states, axis=1), y0, config.times, damping=C)


def rollout(params: snn.SNNParams | snn.ParamValues, y0, realization: snn.WeightRealization,
            config: ODEConfig) -> list[ad.Value]:
    """Integrate the SNN right-hand side with one frozen realization per trajectory."""
    W = snn.weight_nodes(params, realization)
    rhs = lambda y: snn.forward(params, y, weights=W)
    return integrate_rk4(rhs, ad.constant(y0), config.dt, config.n_slices, config.substeps)


def predict_ensemble(params: snn.SNNParams, y0, config: ODEConfig,
                     realization: snn.WeightRealization | None = None,
                     rng: np.random.Generator | int = 0) -> TrajectoryEnsemble:
    y0 = np.asarray(y0, dtype=np.float64)
    if realization is None:
        realization = snn.sample_realization(params, substream(seed_from(rng), 6), batch=y0.shape[0])
    states = rollout(params, y0, realization, config)
    return TrajectoryEnsemble(np.stack([s.data for s in states], axis=1), y0.copy(), config.times,
                              realization=realization)


def conditioning_index(truth: TrajectoryEnsemble, config: ODEConfig, delta: float):
    if config.conditioning == "nominal":
        return uniform_index(truth.n_traj)
    return build_index(truth.initial, delta)


def train_ode_recon(config: ODEConfig, train_config: TrainConfig,
                    rng: np.random.Generator | int | None = None,
                    truth: TrajectoryEnsemble | None = None, threads: int = 1):
    """Fit the SNN right-hand side; returns ``(params, predicted, history, truth)``."""
    seed = seed_from(rng, train_config.seed)
    if truth is None:
        truth = gen_ode_truth(config, substream(seed, 30))
    params = init_params(train_config, seed)
    index = conditioning_index(truth, config, train_config.delta)
    pool = eligible(index, train_config.N0)
    if pool.size == 0:
        raise ConfigError("no trajectory has enough neighbours; increase delta, lower N0 or use "
                          "conditioning = 'nominal'")
    state = AdamState.zeros_like(params.arrays())
    history = TrainHistory()
    for epoch in range(train_config.epoch_max):
        start = time.perf_counter()
        if epoch % train_config.epoch_update == 0:
            batch_id = epoch // train_config.epoch_update
            sel = select_minibatch(pool, train_config.n_batch, substream(seed, 1, batch_id),
                                   train_config.N0, batch_id)
        pv = params.as_values()
        real = snn.sample_realization(pv, substream(seed, 2, epoch), batch=truth.n_traj)
        preds = rollout(pv, truth.initial, real, config)
        loss = time_decoupled_loss(truth.states, preds, sel, index, threads=threads)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericalError(f"non-finite loss at epoch {epoch}")
        ad.backward(loss)
        optimizer_step(params, pv, state, train_config)
        history.records.append(EpochRecord(epoch, value, sel.batch_id, 1e3 * (time.perf_counter() - start)))
        if train_config.snapshot_every and (epoch + 1) % train_config.snapshot_every == 0:
            history.snapshots[epoch + 1] = params.copy()
    predicted = predict_ensemble(params, truth.initial, config, rng=seed)
    return params, predicted, history, truth


def oscillator_rhs_sampler(d: int, sigma: float):
    """``(y, K, rng) -> (K, 96)`` true derivatives under ``K`` damping draws."""
    def sample(y, K, rng):
        C = np.stack([sample_damping(d, sigma, rng) for _ in range(K)])
        return oscillator_rhs(np.broadcast_to(y, (K, STATE_DIM)), C)
    return sample


def snn_rhs_sampler(params: snn.SNNParams):
    def sample(y, K, rng):
        return snn.forward_ensemble(params, y, K, rng)
    return sample


@dataclass(frozen=True)
class ODEErrors:
    err_y_per_slice: np.ndarray
    err_y: float
    err_f: float


def ode_errors(truth: TrajectoryEnsemble, pred: TrajectoryEnsemble, true_rhs, model_rhs,
               K_f: int = 64, rng: np.random.Generator | int = 0,
               states_per_slice: int = 10) -> ODEErrors:
    """Normalised W2^2 errors in the trajectories and in the learned dynamics.

    ``err_y`` per slice is ``W2^2(truth, pred) / E||y||^2`` over the
    trajectory clouds; ``err_f`` compares ``K_f``-sample derivative clouds at
    states drawn from the truth ensemble, normalised by ``E||f||^2``.
    """
    if truth.states.shape != pred.states.shape:
        raise DimensionError(f"ensembles differ in shape: {truth.states.shape} vs {pred.states.shape}")
    seed = seed_from(rng)
    n_traj, n_slices, _ = truth.states.shape
    per_slice = np.empty(n_slices)
    for t in range(n_slices):
        T, P = truth.states[:, t], pred.states[:, t]
        norm = float(np.mean(np.sum(T * T, axis=1)))
        per_slice[t] = squared_w2(T, P).cost / norm if norm > 1e-12 else 0.0
    pick = substream(seed, 40)
    w2s, norms = [], []
    for t in range(n_slices):
        for k, i in enumerate(pick.choice(n_traj, size=min(states_per_slice, n_traj), replace=False)):
            y = truth.states[i, t]
            F = true_rhs(y, K_f, substream(seed, 41, t, k))
            G = model_rhs(y, K_f, substream(seed, 42, t, k))
            w2s.append(squared_w2(F, G).cost)
            norms.append(float(np.mean(np.sum(F * F, axis=1))))
    fnorm = float(np.mean(norms))
    err_f = float(np.mean(w2s)) / fnorm if fnorm > 1e-12 else 0.0
    return ODEErrors(per_slice, float(per_slice.mean()), err_f)
