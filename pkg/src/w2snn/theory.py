"""Numerical checks of the convergence-rate and robustness results.

* :func:`h_bound` evaluates the sample-size rate function of the
  generalization bound (and the full right-hand side when constants are
  supplied).
* :func:`two_sample_w2_rate` measures how ``E[W2^2(mu_N, mu'_N)]`` decays
  with ``N`` for Gaussian laws with homogeneous or geometrically decaying
  component scales. The two-sample quantity is within constant factors of
  the one-sample one, so slopes and their ordering are what is checked.
* :func:`robustness_slope` perturbs an SNN's ``(a, sigma, b)`` by ``eps``
  along a fixed direction and fits the log-log growth of W2^2 in ``eps``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import snn
from .errors import ConfigError, InconclusiveStudy
from .ot import ensemble_w2, squared_w2
from .rng import ordered_map, seed_from, substream

DEFAULT_N_GRID = (32, 64, 128, 256, 512, 1024)
MAX_N = 1024


@dataclass(frozen=True)
class BoundInputs:
    N: float
    d: int
    ratios: tuple[float, ...] | None = None
    M0: float | None = None
    L: float | None = None
    delta: float | None = None
    C: float | None = None

    def ratio_product(self) -> float:
        if self.ratios is None:
            return 1.0
        r = np.asarray(self.ratios, dtype=np.float64)
        if r.size != self.d:
            raise ConfigError(f"need {self.d} ratios, got {r.size}")
        if np.any(r <= 0) or np.any(r > 1):
            raise ConfigError("ratios sigma_i / sigma_1 must lie in (0, 1]")
        if r[0] != 1.0:
            raise ConfigError(f"the first ratio is sigma_1 / sigma_1 = 1, got {r[0]}")
        return float(np.prod(r))


def h_terms(N: float, d: int, ratio_product: float = 1.0) -> tuple[float, float]:
    """The two terms of the d > 4 branch: ``N^(-1/4)`` and ``(P N)^(-1/d)``."""
    return N ** -0.25, (ratio_product * N) ** (-1.0 / d)


def h_bound(inputs: BoundInputs) -> float:
    """``2 N^(-1/4) log(1+N)^(1/2)`` for d <= 4, else ``2 (N^(-1/4) + (P N)^(-1/d))``."""
    N, d = float(inputs.N), int(inputs.d)
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    if d <= 4:
        return 2.0 * N ** -0.25 * math.sqrt(math.log1p(N))
    t1, t2 = h_terms(N, d, inputs.ratio_product())
    return 2.0 * (t1 + t2)


def full_bound(inputs: BoundInputs) -> float:
    """``4 M0 / sqrt(N) + 8 C M0 h + 8 sqrt(M0) L delta``; all constants required."""
    missing = [k for k in ("M0", "L", "delta", "C") if getattr(inputs, k) is None]
    if missing:
        raise ConfigError(f"full bound needs {', '.join(missing)}")
    h = h_bound(inputs)
    return (4 * inputs.M0 / math.sqrt(inputs.N) + 8 * inputs.C * inputs.M0 * h
            + 8 * math.sqrt(inputs.M0) * inputs.L * inputs.delta)


def crossover_n(d: int, ratio_product: float = 1.0) -> float:
    """``N`` at which ``N^(-1/4) == (P N)^(-1/d)``.

    For d > 4 the second term is the larger one above this point; for d < 4
    the first is.
    """
    if d == 4:
        raise ValueError("terms decay at the same rate when d == 4")
    return math.exp(math.log(ratio_product) / (d / 4.0 - 1.0))


@dataclass(frozen=True)
class SlopeFit:
    x: np.ndarray
    y: np.ndarray
    slope: float
    intercept: float
    residual_rms: float


def fit_loglog(xs, ys) -> SlopeFit:
    """Least-squares line through ``(log x, log y)``."""
    lx = np.log(np.asarray(xs, dtype=np.float64))
    ly = np.log(np.asarray(ys, dtype=np.float64))
    if lx.size < 3:
        raise ValueError(f"need at least 3 points for a slope fit, got {lx.size}")
    if not (np.all(np.isfinite(lx)) and np.all(np.isfinite(ly))):
        raise ValueError("log-log points must be finite (positive inputs)")
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    return SlopeFit(lx, ly, float(slope), float(intercept), float(np.sqrt(np.mean(resid ** 2))))


@dataclass(frozen=True)
class RateStudyConfig:
    d: int
    spec: str = "homogeneous"
    c0: float = 1.0
    n_grid: tuple[int, ...] = DEFAULT_N_GRID
    replicates: int = 20
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        if self.spec not in ("homogeneous", "heterogeneous", "point_mass"):
            raise ConfigError(f"unknown spec {self.spec!r}")
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if len(self.n_grid) < 3 or any(b <= a for a, b in zip(self.n_grid, self.n_grid[1:])):
            raise ConfigError(f"n_grid must be increasing with >= 3 points, got {self.n_grid}")
        if self.n_grid[-1] > MAX_N:
            raise ConfigError(f"N is capped at {MAX_N}")
        if self.replicates < 5:
            raise ConfigError("need at least 5 replicates")

    def sigmas(self) -> np.ndarray:
        i = np.arange(1, self.d + 1, dtype=np.float64)
        if self.spec == "homogeneous":
            return np.ones(self.d)
        if self.spec == "point_mass":
            return np.zeros(self.d)
        return np.exp(-self.c0 * i)


def gaussian_moment_M(sigmas) -> float:
    """``(E ||y||_6^6)^(1/6)`` for ``y ~ N(0, diag(sigmas^2))``."""
    s = np.asarray(sigmas, dtype=np.float64)
    return float((15.0 * np.sum(s ** 6)) ** (1.0 / 6.0))


@dataclass
class RateStudy:
    config: RateStudyConfig
    n_grid: np.ndarray
    mean_costs: np.ndarray
    stderr: np.ndarray
    fit: SlopeFit | None
    moment_M: float
    costs: np.ndarray = field(repr=False, default=None)

    def to_csv(self) -> str:
        rows = ["N,mean_cost,stderr"]
        rows += [f"{n},{m!r},{s!r}" for n, m, s in zip(self.n_grid, self.mean_costs, self.stderr)]
        return "\n".join(rows) + "\n"


def two_sample_w2_rate(config: RateStudyConfig, threads: int = 1) -> RateStudy:
    """Mean two-sample W2^2 per ``N`` and its log-log slope.

    Replicate ``r`` at grid point ``N`` uses the stream ``(seed, N, r)``, so
    studies that differ only in the scale pattern share their draws.
    """
    sig = config.sigmas()
    jobs = [(n, r) for n in config.n_grid for r in range(config.replicates)]

    def one(job):
        n, r = job
        g = substream(config.seed, n, r)
        A = g.standard_normal((n, config.d)) * sig
        B = g.standard_normal((n, config.d)) * sig
        try:
            return squared_w2(A, B).cost
        except Exception as exc:  # keep (N, replicate) context
            raise RuntimeError(f"W2 solve failed at N={n}, replicate={r}: {exc}") from exc

    costs = np.array(ordered_map(one, jobs, threads)).reshape(len(config.n_grid), config.replicates)
    means = costs.mean(axis=1)
    stderr = costs.std(axis=1, ddof=1) / math.sqrt(config.replicates)
    fit = fit_loglog(config.n_grid, means) if np.all(means > 0) else None
    return RateStudy(config, np.array(config.n_grid), means, stderr, fit, gaussian_moment_M(sig), costs)


@dataclass
class HeterogeneityComparison:
    homogeneous: RateStudy
    heterogeneous: RateStudy

    @property
    def slope_hom(self) -> float:
        return self.homogeneous.fit.slope

    @property
    def slope_het(self) -> float:
        return self.heterogeneous.fit.slope

    @property
    def difference(self) -> float:
        return self.slope_het - self.slope_hom

    def indistinguishable(self, z: float = 2.0) -> bool:
        """Slopes equal within ``z`` combined bootstrap-free standard errors."""
        se = slope_stderr(self.homogeneous) + slope_stderr(self.heterogeneous)
        return abs(self.difference) <= z * se + 1e-12


def slope_stderr(study: RateStudy) -> float:
    """Delta-method standard error of the fitted slope from per-N stderr."""
    lx = np.log(study.n_grid)
    w = (lx - lx.mean()) / np.sum((lx - lx.mean()) ** 2)
    rel = study.stderr / study.mean_costs
    return float(np.sqrt(np.sum((w * rel) ** 2)))


def heterogeneity_comparison(d: int, c0: float, n_grid=DEFAULT_N_GRID, replicates: int = 20,
                             seed: int = 0, threads: int = 1) -> HeterogeneityComparison:
    """Rate slopes for ``sigma_i = 1`` versus ``sigma_i = exp(-c0 i)`` on common draws."""
    if d <= 4:
        raise ConfigError("the heterogeneous regime of interest needs d > 4")
    hom = two_sample_w2_rate(RateStudyConfig(d, "homogeneous", c0, n_grid, replicates, seed), threads)
    het = two_sample_w2_rate(RateStudyConfig(d, "heterogeneous", c0, n_grid, replicates, seed), threads)
    return HeterogeneityComparison(hom, het)


def robustness_network(seed: int = 0) -> snn.SNNParams:
    """Default network for the perturbation study: 2 -> 16 -> 16 -> 1, ReLU."""
    cfg = snn.SNNConfig(2, 1, (16, 16), "relu", "normal", init_scale=0.5, sigma_init=0.02)
    return snn.init(cfg, substream(seed, 50))


@dataclass
class RobustnessResult:
    eps_grid: np.ndarray
    signals: np.ndarray
    floor: float
    used: np.ndarray
    fit: SlopeFit | None
    envelope_C: float | None
    advice: str = ""

    @property
    def inconclusive(self) -> bool:
        return self.fit is None

    def within_envelope(self, slack: float = 2.0) -> bool:
        if self.fit is None:
            return False
        e, s = self.eps_grid[self.used], self.signals[self.used]
        return bool(np.all(s <= slack * self.envelope_C * e ** 2))

    def to_csv(self) -> str:
        rows = ["eps,mean_w2,used"]
        rows += [f"{e!r},{s!r},{int(u)}" for e, s, u in zip(self.eps_grid, self.signals, self.used)]
        return "\n".join(rows) + "\n"


def robustness_slope(base: snn.SNNParams, x, eps_grid, direction="generic", direction_seed: int = 0,
                     K: int = 4096, rng: np.random.Generator | int = 0, repeats: int = 10,
                     floor_factor: float = 3.0, coupled: bool = True,
                     strict: bool = False) -> RobustnessResult:
    """Growth of ``W2^2(mu_x(base), mu_x(base + eps * direction))`` in ``eps``.

    ``direction`` is ``"generic"`` (random unit vector from
    ``direction_seed``), ``"bias"`` (output-layer biases only) or an explicit
    unit vector. The floor is the mean W2^2 between two independent
    ``K``-ensembles of the unperturbed network. With ``coupled`` the base and
    perturbed ensembles share their weight noise. Only ``eps`` whose signal
    exceeds ``floor_factor * floor`` enter the fit. ``strict`` raises
    :class:`InconclusiveStudy` instead of returning an unfitted result.
    """
    if base.config.activation != "relu":
        raise ConfigError("the robustness bound assumes ReLU activations")
    eps_grid = np.asarray(eps_grid, dtype=np.float64)
    if np.any(eps_grid < 0) or np.any(np.diff(eps_grid) <= 0):
        raise ConfigError("eps grid must be non-negative and increasing")
    if isinstance(direction, str):
        if direction == "generic":
            direction = snn.random_direction(base, substream(direction_seed, 51))
        elif direction == "bias":
            direction = snn.output_bias_direction(base)
        else:
            raise ConfigError(f"unknown direction {direction!r}")
    direction = np.asarray(direction, dtype=np.float64)
    seed = seed_from(rng)
    x = np.asarray(x, dtype=np.float64)

    floor = float(np.mean([ensemble_w2(snn.forward_ensemble(base, x, K, substream(seed, 60, r)),
                                       snn.forward_ensemble(base, x, K, substream(seed, 61, r)))
                           for r in range(repeats)]))
    signals = np.empty(eps_grid.size)
    for k, eps in enumerate(eps_grid):
        moved = snn.perturb(base, direction, eps)
        vals = []
        for r in range(repeats):
            ref = snn.forward_ensemble(base, x, K, substream(seed, 62, r))
            other = snn.forward_ensemble(moved, x, K, substream(seed, 62 if coupled else 63, r))
            vals.append(ensemble_w2(ref, other))
        signals[k] = np.mean(vals)
    used = (eps_grid > 0) & (signals > floor_factor * floor)
    if used.sum() < 3:
        advice = (f"only {int(used.sum())} eps values clear {floor_factor}x the floor ({floor:.3g}); "
                  "raise K or use larger eps")
        if strict:
            raise InconclusiveStudy(advice)
        return RobustnessResult(eps_grid, signals, floor, used, None, None, advice)
    fit = fit_loglog(eps_grid[used], signals[used])
    envelope = float(np.exp(np.mean(np.log(signals[used]) - 2.0 * np.log(eps_grid[used]))))
    return RobustnessResult(eps_grid, signals, floor, used, fit, envelope)
