"""Expected-Improvement Bayesian optimization and layerwise network tuning."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.optimize
from scipy.special import ndtr
from scipy.stats import qmc

from .errors import InvalidArgumentError
from .gp import GpModel, Kernel, gp_fit, gp_posterior
from .network import NetworkConfig, loss_average, layer_dims
from .online import LayerHyper, param_length
from .rng import derive_seed, substream

log = logging.getLogger(__name__)

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class BoundsBox:
    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise InvalidArgumentError("lower and upper bounds must be vectors of equal length")
        if not np.all(lo < hi):
            bad = int(np.argmin(lo < hi))
            raise InvalidArgumentError(f"bound {bad}: min must be < max")
        if self.names is not None and len(self.names) != lo.shape[0]:
            raise InvalidArgumentError("names must match the bounds dimension")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def from_pairs(cls, pairs, names=None):
        pairs = np.asarray(pairs, dtype=float)
        return cls(pairs[:, 0], pairs[:, 1], None if names is None else tuple(names))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def to_unit(self, x):
        return (np.asarray(x, dtype=float) - self.lower) / self.width

    def from_unit(self, u):
        return self.lower + np.asarray(u, dtype=float) * self.width

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))

    def clip(self, x):
        return np.clip(x, self.lower, self.upper)


def unit_box(m: int) -> BoundsBox:
    return BoundsBox(np.zeros(m), np.ones(m))


def default_length_scale(m: int) -> float:
    """Length scale on the unit cube, growing like sqrt(m) with the dimension."""
    return 0.2 * math.sqrt(m)


@dataclass(frozen=True)
class BoConfig:
    iterations: int = 200
    restarts: int = 5
    xi: float = 0.01
    kernel: Kernel | None = None  # None: Matern 5/2 with default_length_scale(m)
    init_samples: int = 5
    seed: int = 0
    jitter: float = 1e-8
    noise: float = 1e-4
    raw_samples: int = 256
    fd_step: float = 1e-6

    def __post_init__(self):
        if self.iterations < 1:
            raise InvalidArgumentError("iterations must be >= 1")
        if self.restarts < 1:
            raise InvalidArgumentError("restarts must be >= 1")
        if not self.xi >= 0:
            raise InvalidArgumentError("xi must be >= 0")
        if self.init_samples < 1:
            raise InvalidArgumentError("init_samples must be >= 1")
        if self.raw_samples < 0:
            raise InvalidArgumentError("raw_samples must be >= 0")


@dataclass
class BoTrace:
    xs: list = field(default_factory=list)
    fs: list = field(default_factory=list)
    acquisition: list = field(default_factory=list)  # NaN for initial design points
    best_history: list = field(default_factory=list)
    best_x: np.ndarray | None = None
    best_f: float = -np.inf

    def record(self, x, f, acq=np.nan):
        self.xs.append(np.asarray(x, dtype=float).copy())
        self.fs.append(float(f))
        self.acquisition.append(float(acq))
        if self.best_x is None or f > self.best_f:
            self.best_f = float(f)
            self.best_x = self.xs[-1]
        self.best_history.append(self.best_f)

    @property
    def n_evaluations(self) -> int:
        return len(self.fs)

    def to_csv(self, path) -> None:
        m = len(self.xs[0]) if self.xs else 0
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iter"] + [f"x{i + 1}" for i in range(m)] + ["f", "best_f"])
            for i, (x, f, b) in enumerate(zip(self.xs, self.fs, self.best_history)):
                writer.writerow([i] + [repr(float(v)) for v in x] + [repr(f), repr(b)])


def expected_improvement(mu, sigma, f_best, xi=0.0):
    """Expected improvement over ``f_best + xi`` of a N(mu, sigma^2) variable.

    Vectorized over ``mu`` and ``sigma`` (a standard deviation). Zero where
    ``sigma == 0``.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        raise InvalidArgumentError("sigma must be >= 0")
    imp = mu - f_best - xi
    pos = sigma > 0
    safe = np.where(pos, sigma, 1.0)
    with np.errstate(over="ignore"):  # tiny sigma: z^2 overflows and the density term is 0
        z = imp / safe
        ei = imp * ndtr(z) + safe * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
    ei = np.where(pos, np.maximum(ei, 0.0), 0.0)
    return float(ei) if ei.ndim == 0 else ei


def _ei_at(model, u, f_best, xi):
    mu, var = gp_posterior(model, u)
    return expected_improvement(mu, np.sqrt(var), f_best, xi)


def maximize_acquisition(
    model: GpModel,
    bounds: BoundsBox,
    f_best: float,
    xi: float,
    restarts: int,
    seed: int,
    raw_samples: int = 256,
    fd_step: float = 1e-6,
) -> np.ndarray:
    """Maximize EI inside ``bounds`` by multi-start L-BFGS-B.

    Starts are ``restarts`` uniform draws, plus the best of ``raw_samples``
    uniform candidates when ``raw_samples > 0``. Gradients are central
    finite differences. Never fails: if no local search improves on its
    start, the best start is returned.
    """
    if bounds.dim != model.n_dims:
        raise InvalidArgumentError("bounds dimension does not match the model")
    rng = substream(seed, 0)
    m = bounds.dim
    starts = bounds.from_unit(rng.random((restarts, m)))
    if raw_samples > 0:
        cand = bounds.from_unit(rng.random((raw_samples, m)))
        starts = np.vstack([starts, cand[np.argmax(_ei_at(model, cand, f_best, xi))]])
    # EI scales with the output spread; rescale so L-BFGS-B tolerances are meaningful
    scale = 1.0 / model.y_scale
    offsets = np.vstack([np.zeros(m), fd_step * np.eye(m), -fd_step * np.eye(m)])

    def neg_ei_and_grad(x):
        vals = _ei_at(model, x[None, :] + offsets, f_best, xi) * scale
        grad = (vals[1:m + 1] - vals[m + 1:]) / (2.0 * fd_step)
        return -vals[0], -grad

    box = list(zip(bounds.lower, bounds.upper))
    start_vals = _ei_at(model, starts, f_best, xi)
    best_x = starts[int(np.argmax(start_vals))]
    best_v = float(np.max(start_vals))
    for x0 in starts:
        res = scipy.optimize.minimize(
            neg_ei_and_grad, x0, jac=True, method="L-BFGS-B", bounds=box,
            options={"maxiter": 200, "gtol": 1e-10},
        )
        x = bounds.clip(res.x)
        v = float(_ei_at(model, x[None, :], f_best, xi)[0])
        if v > best_v:
            best_x, best_v = x, v
    return bounds.clip(best_x)


def _safe_eval(objective, x):
    try:
        f = float(objective(x))
    except Exception as exc:  # noqa: BLE001 - any objective failure is a bad region
        log.debug("objective failed at %s: %s", x, exc)
        return -np.inf
    if math.isnan(f):
        return -np.inf
    return f


def _gp_targets(fs):
    fs = np.asarray(fs, dtype=float)
    finite = np.isfinite(fs)
    if not np.any(finite):
        return np.zeros_like(fs)
    lo, hi = fs[finite].min(), fs[finite].max()
    spread = hi - lo if hi > lo else 1.0
    return np.where(finite, fs, lo - 3.0 * spread)


def bayes_optimize(objective: Callable[[np.ndarray], float], bounds: BoundsBox, config: BoConfig) -> BoTrace:
    """Maximize ``objective`` over ``bounds`` with a GP surrogate and EI.

    The GP works on inputs mapped to the unit cube. ``config.init_samples``
    Latin-hypercube points are evaluated before the ``config.iterations``
    acquisition-driven evaluations. Objective errors and NaNs count as -inf.
    """
    trace = BoTrace()
    m = bounds.dim
    kernel = config.kernel or Kernel("matern52", default_length_scale(m))
    unit = unit_box(m)
    lhs = qmc.LatinHypercube(d=m, seed=substream(config.seed, 1))
    for u in lhs.random(config.init_samples):
        x = bounds.from_unit(u)
        trace.record(x, _safe_eval(objective, x))

    for i in range(config.iterations):
        us = bounds.to_unit(np.array(trace.xs))
        targets = _gp_targets(trace.fs)
        model = gp_fit(us, targets, kernel, jitter=config.jitter, noise=config.noise)
        f_best = float(np.max(targets))
        u_next = maximize_acquisition(
            model, unit, f_best, config.xi, config.restarts,
            seed=derive_seed(config.seed, 2, i),
            raw_samples=config.raw_samples, fd_step=config.fd_step,
        )
        acq = float(_ei_at(model, u_next[None, :], f_best, config.xi)[0])
        x = bounds.clip(bounds.from_unit(u_next))
        f = _safe_eval(objective, x)
        trace.record(x, f, acq)
        log.debug("iter %d f=%.6g best=%.6g", i, f, trace.best_f)
    return trace


# --- layerwise tuning ---------------------------------------------------------

# [min, max] per group: (A0 and N0, Sigma0, learning rates, EMA weights)
SEARCH_BOUNDS = {
    1: {"an": (-0.3, 0.3), "sigma": (0.001, 0.01), "eta": (0.001, 0.3), "ema": (0.1, 1.0)},
    2: {"an": (-0.1, 0.1), "sigma": (-0.001, 0.001), "eta": (0.001, 0.3), "ema": (0.1, 1.0)},
}
RATE_NAMES = ("eta_a", "eta_n", "eta_sigma", "phi", "rho")


@dataclass(frozen=True)
class LayerSpace:
    """Search space of one layer's hyperparameters.

    ``parameterization="full"`` exposes every entry of ``z0``;
    ``"tied"`` exposes one scalar each for A0, N0 and Sigma0, replicated
    over all entries. The last five coordinates are always the rates.
    """

    dim: int
    bounds: BoundsBox
    parameterization: str = "full"

    def decode(self, x) -> LayerHyper:
        x = np.asarray(x, dtype=float)
        d = self.dim
        if self.parameterization == "tied":
            a0, n0, s0 = x[:3]
            z0 = np.concatenate([np.full(d * d, a0), np.full(d, n0), np.full(d * d, s0)])
        else:
            z0 = x[:param_length(d)]
        return LayerHyper.from_vector(x[-5:], z0)

    def encode(self, hyper: LayerHyper) -> np.ndarray:
        if self.parameterization == "tied":
            d = self.dim
            z = hyper.z0
            head = [z[0], z[d * d], z[d * d + d]]
        else:
            head = list(hyper.z0)
        return np.concatenate([head, hyper.rates])


def layer_space(layer: int, parameterization: str = "tied", table=None) -> LayerSpace:
    """Search space for ``layer`` (1-based) from the grouped ``SEARCH_BOUNDS``."""
    table = SEARCH_BOUNDS if table is None else table
    if layer not in table:
        raise InvalidArgumentError(f"no bounds for layer {layer}")
    if parameterization not in ("full", "tied"):
        raise InvalidArgumentError("parameterization must be 'full' or 'tied'")
    g = table[layer]
    d = layer_dims(layer)[layer - 1]
    if parameterization == "tied" and d > 1:
        pairs = [g["an"], g["an"], g["sigma"]]
        names = ["a0", "n0", "sigma0"]
    else:
        parameterization = "full"
        pairs = [g["an"]] * (d * d + d) + [g["sigma"]] * (d * d)
        names = ([f"a0[{i}]" for i in range(d * d)] + [f"n0[{i}]" for i in range(d)]
                 + [f"sigma0[{i}]" for i in range(d * d)])
    pairs += [g["eta"]] * 3 + [g["ema"]] * 2
    names += list(RATE_NAMES)
    return LayerSpace(d, BoundsBox.from_pairs(pairs, names), parameterization)


@dataclass(frozen=True)
class LossSettings:
    """How the tuning objective evaluates the average forecast loss."""

    stride: int = 64
    first: int = 2
    last: int | None = None
    seed: int = 0
    common_seed: bool = True
    threads: int = 1


@dataclass
class TuneResult:
    layers: list
    traces: list
    spaces: list


def make_objective(series, fixed_layers, space: LayerSpace, horizon: int, n_trajectories: int,
                   settings: LossSettings, layer: int):
    """Negative average loss as a function of one layer's search vector."""
    counter = [0]

    def objective(x):
        hyper = space.decode(x)
        config = NetworkConfig(tuple(fixed_layers) + (hyper,), horizon, n_trajectories)
        seed = settings.seed if settings.common_seed else derive_seed(settings.seed, layer, counter[0])
        counter[0] += 1
        le, lv = loss_average(series, config, seed, stride=settings.stride, first=settings.first,
                              last=settings.last, threads=settings.threads)
        return -(le + lv)

    return objective


def tune_layerwise(
    series,
    n_layers: int,
    bo_config: BoConfig,
    horizon: int,
    n_trajectories: int,
    spaces=None,
    parameterization: str = "tied",
    loss_settings: LossSettings | None = None,
) -> TuneResult:
    """Tune one layer at a time, freezing the layers below at their optima.

    The objective is ``-(loss_mean_avg + loss_var_avg)`` from
    :func:`loss_average` with the given forecast ``horizon`` and trajectory
    count. ``spaces`` optionally overrides the per-layer search spaces.
    """
    if n_layers not in (1, 2):
        raise InvalidArgumentError("layerwise tuning supports 1 or 2 layers")
    settings = loss_settings or LossSettings(seed=bo_config.seed)
    spaces = list(spaces) if spaces is not None else [
        layer_space(k, parameterization) for k in range(1, n_layers + 1)
    ]
    fixed, traces = [], []
    for k in range(1, n_layers + 1):
        space = spaces[k - 1]
        objective = make_objective(series, fixed, space, horizon, n_trajectories, settings, k)
        cfg = BoConfig(**{**bo_config.__dict__, "seed": derive_seed(bo_config.seed, k)})
        trace = bayes_optimize(objective, space.bounds, cfg)
        if trace.best_x is None or not np.isfinite(trace.best_f):
            log.warning("layer %d: no finite objective value found", k)
        fixed.append(space.decode(trace.best_x))
        traces.append(trace)
    return TuneResult(fixed, traces, spaces)
