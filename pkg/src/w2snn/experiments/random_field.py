"""Sine-of-linear random field with low-dimensional noise.

For input ``x in R^2`` and output component ``j``::

    z_j^k(x) = c[j, k, 0] x_1 + c[j, k, 1] x_2,          k = 0..d0
    y_j      = sin((z_j^0 + sum_{k>=1} z_j^k eps_k) / 16)

with ``eps_k ~ N(0, s_k^2)`` independent and shared by all components, so
for fixed ``x`` the outputs lie on a ``d0``-dimensional manifold.
Coefficients are i.i.d. ``N(0, 1)`` from a dedicated seed; ``coef_law =
"make_regression"`` switches to the ``100 * U(0, 1)`` law used by sklearn's
generator. Training inputs are ``N(0, I_2)``; test inputs are
``U(-1/4, 1/4)^2`` with several truth draws each.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, DimensionError
from ..locality import Dataset
from ..rng import substream

NOISE_LAWS = ("constant", "exponential", "scaled")
COEF_LAWS = ("make_regression", "normal")


@dataclass(frozen=True)
class Example1Config:
    d: int = 10
    d0: int = 3
    noise: str = "constant"
    noise_scale: float = 0.1
    n_train: int = 4000
    coef_seed: int = 0
    coef_law: str = "normal"
    n_test: int = 100
    test_samples: int = 20

    def __post_init__(self):
        if self.d < 1 or self.d0 < 1:
            raise ConfigError("d and d0 must be >= 1")
        if self.noise not in NOISE_LAWS:
            raise ConfigError(f"noise must be one of {NOISE_LAWS}, got {self.noise!r}")
        if self.coef_law not in COEF_LAWS:
            raise ConfigError(f"coef_law must be one of {COEF_LAWS}, got {self.coef_law!r}")
        if not self.noise_scale >= 0:
            raise ConfigError("noise_scale must be non-negative")
        if self.noise == "constant" and self.d0 > self.d:
            raise ConfigError(f"constant-noise configs need d0 <= d (noise lives on a d0-dim manifold "
                              f"in R^d), got d0={self.d0}, d={self.d}")

    def noise_sigmas(self) -> np.ndarray:
        """Standard deviations of ``eps_1..eps_d0``."""
        k = np.arange(1, self.d0 + 1, dtype=np.float64)
        s = self.noise_scale
        if self.noise == "constant":
            return np.full(self.d0, s)
        if self.noise == "exponential":
            return s * np.exp(-k)
        return np.full(self.d0, s * np.sqrt(3.0 / self.d0))


def coefficients(config: Example1Config) -> np.ndarray:
    """Coefficient tensor of shape ``(d, d0 + 1, 2)``."""
    rng = substream(config.coef_seed, 101)
    shape = (config.d, config.d0 + 1, 2)
    if config.coef_law == "make_regression":
        return 100.0 * rng.uniform(size=shape)
    return rng.standard_normal(shape)


def linear_parts(xs: np.ndarray, coef: np.ndarray) -> np.ndarray:
    """``z`` of shape ``(M, d, d0 + 1)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != 2:
        raise DimensionError(f"inputs must be (M, 2), got {xs.shape}")
    return np.einsum("jkl,ml->mjk", coef, xs)


def sample_outputs(xs, coef: np.ndarray, sigmas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One output draw per input row, shape ``(M, d)``."""
    z = linear_parts(xs, coef)
    eps = rng.standard_normal((z.shape[0], len(sigmas))) * sigmas
    arg = z[:, :, 0] + np.einsum("mjk,mk->mj", z[:, :, 1:], eps)
    return np.sin(arg / 16.0)


@dataclass
class Example1Data:
    train: Dataset
    test_x: np.ndarray
    test_y: list[np.ndarray]
    coef: np.ndarray
    config: Example1Config


def gen_example1(config: Example1Config, rng: np.random.Generator | int = 0) -> Example1Data:
    seed = rng if isinstance(rng, (int, np.integer)) else int(rng.integers(0, 2**63 - 1))
    coef = coefficients(config)
    sig = config.noise_sigmas()
    r_x = substream(seed, 10)
    xs = r_x.standard_normal((config.n_train, 2))
    ys = sample_outputs(xs, coef, sig, substream(seed, 11))
    test_x = substream(seed, 12).uniform(-0.25, 0.25, size=(config.n_test, 2))
    test_y = [sample_outputs(np.repeat(x[None], config.test_samples, axis=0), coef, sig, substream(seed, 13, i))
              for i, x in enumerate(test_x)]
    return Example1Data(Dataset(xs, ys), test_x, test_y, coef, config)


@dataclass(frozen=True)
class RelativeErrors:
    mean_err: float
    sd_err: float
    excluded_mean: int
    excluded_sd: int


def relative_errors(truth: list[np.ndarray], pred: list[np.ndarray], floor: float = 1e-12) -> RelativeErrors:
    """Average relative error in mean and in SD over test points and components.

    Ensemble averages stand in for expectations; SDs use ``ddof=1``. Terms
    whose truth mean (or SD) is below ``floor`` in magnitude are dropped and
    counted.
    """
    if len(truth) != len(pred):
        raise DimensionError(f"{len(truth)} truth ensembles vs {len(pred)} predicted")
    mt = np.array([np.mean(t, axis=0) for t in truth])
    mp = np.array([np.mean(p, axis=0) for p in pred])
    st = np.array([np.std(t, axis=0, ddof=1) for t in truth])
    sp = np.array([np.std(p, axis=0, ddof=1) for p in pred])
    if mt.shape != mp.shape:
        raise DimensionError(f"component counts differ: {mt.shape} vs {mp.shape}")
    keep_m = np.abs(mt) >= floor
    keep_s = np.abs(st) >= floor
    mean_err = float(np.mean(np.abs(mp - mt)[keep_m] / np.abs(mt)[keep_m])) if keep_m.any() else float("nan")
    sd_err = float(np.mean(np.abs(sp - st)[keep_s] / np.abs(st)[keep_s])) if keep_s.any() else float("nan")
    return RelativeErrors(mean_err, sd_err, int((~keep_m).sum()), int((~keep_s).sum()))
