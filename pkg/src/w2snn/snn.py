"""Stochastic neural network with per-weight Gaussian laws.

Every weight ``w`` of affine layer ``i`` is ``N(a, sigma^2)``; each forward
pass at an input draws a fresh standard-normal ``eps`` and uses
``w = a + sigma * eps``, so gradients reach ``a`` and ``sigma`` through the
sample. In ``resnet`` mode each hidden layer after the first also receives a
deterministic skip term ``skip @ h_prev`` in its pre-activation.

A :class:`WeightRealization` holds one set of ``eps`` draws (optionally one
per sample along a leading axis) and makes the forward pass a pure function,
which is what the trajectory surrogate needs.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError

SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class SNNConfig:
    input_dim: int
    output_dim: int
    widths: tuple[int, ...] = (40, 40, 40, 40)
    activation: str = "elu"
    forward_mode: str = "normal"
    init_scale: float = 0.01
    sigma_init: float = 0.01
    sigma_floor: float = SIGMA_FLOOR

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1 or self.output_dim < 1:
            raise ConfigError("input_dim and output_dim must be >= 1")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"hidden widths must be >= 1, got {self.widths}")
        if self.activation not in ad.ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ad.ACTIVATIONS}, got {self.activation!r}")
        if self.forward_mode not in ("normal", "resnet"):
            raise ConfigError(f"forward_mode must be 'normal' or 'resnet', got {self.forward_mode!r}")
        if self.forward_mode == "resnet" and len(set(self.widths)) != 1:
            raise ConfigError(f"resnet mode needs equal hidden widths, got {self.widths}")
        if self.init_scale < 0 or self.sigma_init < 0 or self.sigma_floor < 0:
            raise ConfigError("init_scale, sigma_init and sigma_floor must be non-negative")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.widths, self.output_dim)

    @property
    def n_layers(self) -> int:
        """Number of affine maps (hidden layers + output layer)."""
        return len(self.widths) + 1

    def has_skip(self, layer: int) -> bool:
        return self.forward_mode == "resnet" and 1 <= layer < len(self.widths)


@dataclass
class SNNParams:
    """Weight means ``a``, weight stds ``sigma``, biases ``b`` and skip weights."""

    config: SNNConfig
    a: list[np.ndarray]
    sigma: list[np.ndarray]
    b: list[np.ndarray]
    skip: list[np.ndarray | None] = field(default_factory=list)

    def copy(self) -> "SNNParams":
        return SNNParams(self.config, [x.copy() for x in self.a], [x.copy() for x in self.sigma],
                         [x.copy() for x in self.b],
                         [None if s is None else s.copy() for s in self.skip])

    def arrays(self) -> list[np.ndarray]:
        """Trainable arrays in a fixed order: a, sigma, b per layer, then skips."""
        out = []
        for i in range(self.config.n_layers):
            out += [self.a[i], self.sigma[i], self.b[i]]
        out += [s for s in self.skip if s is not None]
        return out

    def names(self) -> list[str]:
        out = []
        for i in range(self.config.n_layers):
            out += [f"a[{i}]", f"sigma[{i}]", f"b[{i}]"]
        out += [f"skip[{i}]" for i, s in enumerate(self.skip) if s is not None]
        return out

    def clamp_sigma(self) -> None:
        for s in self.sigma:
            np.maximum(s, self.config.sigma_floor, out=s)

    def as_values(self) -> "ParamValues":
        return ParamValues(self.config, [ad.Value(x) for x in self.a], [ad.Value(x) for x in self.sigma],
                           [ad.Value(x) for x in self.b],
                           [None if s is None else ad.Value(s) for s in self.skip])

    def flatten(self) -> np.ndarray:
        """Flat ``(a..., sigma..., b...)`` vector; skip weights excluded."""
        return np.concatenate([x.ravel() for x in self.a + self.sigma + self.b])

    def with_flat(self, flat: np.ndarray) -> "SNNParams":
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(x.size for x in self.a + self.sigma + self.b)
        if flat.shape != (expected,):
            raise DimensionError(f"flat vector has shape {flat.shape}, expected ({expected},)")
        out = self.copy()
        pos = 0
        for group in (out.a, out.sigma, out.b):
            for k, x in enumerate(group):
                group[k] = flat[pos:pos + x.size].reshape(x.shape).copy()
                pos += x.size
        return out

    def __eq__(self, other) -> bool:
        if not isinstance(other, SNNParams) or other.config != self.config:
            return False
        mine, theirs = self.arrays(), other.arrays()
        return len(mine) == len(theirs) and all(np.array_equal(x, y) for x, y in zip(mine, theirs))


@dataclass
class ParamValues:
    """The same layout as :class:`SNNParams`, with autodiff leaves."""

    config: SNNConfig
    a: list[ad.Value]
    sigma: list[ad.Value]
    b: list[ad.Value]
    skip: list[ad.Value | None]

    def values(self) -> list[ad.Value]:
        out = []
        for i in range(self.config.n_layers):
            out += [self.a[i], self.sigma[i], self.b[i]]
        out += [s for s in self.skip if s is not None]
        return out

    def grads(self) -> list[np.ndarray]:
        return [v.grad for v in self.values()]


@dataclass(frozen=True)
class WeightRealization:
    """Standard-normal draws per weight; ``batch`` is None or the leading sample count."""

    eps: tuple[np.ndarray, ...]

    @property
    def batch(self) -> int | None:
        first = self.eps[0]
        return first.shape[0] if first.ndim == 3 else None


def init(config: SNNConfig, rng: np.random.Generator) -> SNNParams:
    """``a, b ~ N(0, init_scale^2)``, ``sigma = sigma_init``, skip ``U(+-1/sqrt(fan_in))``."""
    sizes = config.sizes
    a, sigma, b, skip = [], [], [], []
    for i in range(config.n_layers):
        shape = (sizes[i + 1], sizes[i])
        a.append(config.init_scale * rng.standard_normal(shape))
        sigma.append(np.full(shape, float(config.sigma_init)))
        b.append(config.init_scale * rng.standard_normal(sizes[i + 1]))
    for i in range(config.n_layers):
        if config.has_skip(i):
            bound = 1.0 / np.sqrt(sizes[i])
            skip.append(rng.uniform(-bound, bound, size=(sizes[i + 1], sizes[i])))
        else:
            skip.append(None)
    return SNNParams(config, a, sigma, b, skip)


def sample_realization(params: SNNParams | ParamValues, rng: np.random.Generator,
                       batch: int | None = None) -> WeightRealization:
    """Fresh i.i.d. standard normals for every weight (``batch`` copies if given)."""
    lead = () if batch is None else (int(batch),)
    sizes = params.config.sizes
    return WeightRealization(tuple(rng.standard_normal(lead + (sizes[i + 1], sizes[i]))
                                   for i in range(params.config.n_layers)))


def realized_weights(params: SNNParams, realization: WeightRealization) -> list[np.ndarray]:
    return [a + s * e for a, s, e in zip(params.a, params.sigma, realization.eps)]


def _as_values(params: SNNParams | ParamValues) -> ParamValues:
    if isinstance(params, ParamValues):
        return params
    return ParamValues(params.config, [ad.constant(x) for x in params.a],
                       [ad.constant(x) for x in params.sigma], [ad.constant(x) for x in params.b],
                       [None if s is None else ad.constant(s) for s in params.skip])


def forward(params: SNNParams | ParamValues, x, rng: np.random.Generator | None = None,
            realization: WeightRealization | None = None,
            weights: list[ad.Value] | None = None) -> ad.Value:
    """One stochastic pass.

    ``x`` is a single input ``(n,)`` or a batch ``(B, n)``. With no
    ``realization`` a fresh one is drawn from ``rng`` (independent per batch
    row). A realization with a leading axis must match the batch size; one
    without is shared by every row. ``weights`` may pass precomputed
    reparameterized weight nodes (see :func:`weight_nodes`) to reuse them
    across many calls.
    """
    pv = _as_values(params)
    cfg = pv.config
    xv = x if isinstance(x, ad.Value) else ad.constant(x)
    if xv.shape[-1] != cfg.input_dim or xv.data.ndim not in (1, 2):
        raise DimensionError(f"input has shape {xv.shape}, expected (..., {cfg.input_dim})")
    batch = xv.shape[0] if xv.data.ndim == 2 else None
    if weights is None:
        if realization is None:
            if rng is None:
                raise ValueError("fresh mode needs an rng")
            realization = sample_realization(pv, rng, batch)
        weights = weight_nodes(pv, realization)
    h = xv
    for i in range(cfg.n_layers):
        W = weights[i]
        if W.data.ndim == 3 and batch is None:
            raise DimensionError("per-sample realization needs a batched input")
        if W.data.ndim == 3 and W.shape[0] != batch:
            raise DimensionError(f"realization batch {W.shape[0]} != input batch {batch}")
        z = ad.matvec_affine(W, h, pv.b[i])
        if pv.skip[i] is not None:
            z = ad.add(z, ad.matvec_affine(pv.skip[i], h, ad.constant(np.zeros(z.shape[-1]))))
        h = ad.activation(z, cfg.activation) if i < cfg.n_layers - 1 else z
    return h


def weight_nodes(params: SNNParams | ParamValues, realization: WeightRealization) -> list[ad.Value]:
    pv = _as_values(params)
    return [ad.gaussian_weights(pv.a[i], pv.sigma[i], realization.eps[i]) for i in range(pv.config.n_layers)]


def forward_ensemble(params: SNNParams, x, K: int, rng: np.random.Generator) -> np.ndarray:
    """``K`` independent fresh-mode outputs at a single input, shape ``(K, d)``."""
    if K < 1:
        raise ValueError("K must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    X = np.broadcast_to(x, (K, x.size))
    return forward(params, X, rng).data


def perturb(params: SNNParams, direction, eps: float) -> SNNParams:
    """``params + eps * direction`` over the flat ``(a, sigma, b)`` vector.

    ``direction`` should be unit length; sigma is re-floored afterwards.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    direction = np.asarray(direction, dtype=np.float64)
    out = params.with_flat(params.flatten() + eps * direction)
    out.clamp_sigma()
    return out


def random_direction(params: SNNParams, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal(params.flatten().size)
    return v / np.linalg.norm(v)


def output_bias_direction(params: SNNParams, rng: np.random.Generator | None = None) -> np.ndarray:
    """Unit direction touching only the output-layer biases."""
    n = params.flatten().size
    d = params.config.output_dim
    v = np.zeros(n)
    v[n - d:] = 1.0 if rng is None else rng.standard_normal(d)
    return v / np.linalg.norm(v)


def with_config(params: SNNParams, **changes) -> SNNParams:
    out = params.copy()
    out.config = replace(params.config, **changes)
    return out
