"""Stacked regression / prediction network and Monte-Carlo forecasting.

Layer 1 regresses the GOU coefficients of the univariate input series, layer
``k`` regresses the coefficient stream emitted by layer ``k - 1``. To forecast,
the top layer's coefficients are frozen and every lower layer is rolled forward
as a GOU process driven by the coefficients of the layer above it.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, ForecastFailedError, InvalidArgumentError
from .online import LayerHyper, param_length, regress_series
from .rng import substream

# Trajectories are simulated in fixed-size blocks so results never depend on
# how many workers share the blocks.
CHUNK_SIZE = 8
DEFAULT_HORIZON = 100
DEFAULT_TRAJECTORIES = 50


def layer_dims(n_layers: int) -> list[int]:
    """Input dimensions ``d_0..d_K`` (``d_0 = 1``, ``d_k = 2 d_{k-1}^2 + d_{k-1}``)."""
    dims = [1]
    for _ in range(n_layers):
        dims.append(param_length(dims[-1]))
    return dims


@dataclass(frozen=True)
class NetworkConfig:
    layers: tuple[LayerHyper, ...]
    horizon: int = DEFAULT_HORIZON
    n_trajectories: int = DEFAULT_TRAJECTORIES
    allow_three_layers: bool = False

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        max_k = 3 if self.allow_three_layers else 2
        if not 1 <= len(layers) <= max_k:
            raise InvalidArgumentError(f"number of layers must be in [1, {max_k}], got {len(layers)}")
        dims = layer_dims(len(layers))
        for k, hyper in enumerate(layers, start=1):
            if hyper.dim != dims[k - 1]:
                raise InvalidArgumentError(
                    f"layer {k} expects input dim {dims[k - 1]} (z0 length {dims[k]}), "
                    f"got z0 length {hyper.z0.shape[0]}"
                )
        if int(self.horizon) != self.horizon or self.horizon < 1:
            raise InvalidArgumentError("horizon must be a positive integer")
        if int(self.n_trajectories) != self.n_trajectories or self.n_trajectories < 1:
            raise InvalidArgumentError("n_trajectories must be a positive integer")

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def dims(self) -> list[int]:
        return layer_dims(self.n_layers)

    def replace(self, **changes) -> "NetworkConfig":
        kw = dict(
            layers=self.layers,
            horizon=self.horizon,
            n_trajectories=self.n_trajectories,
            allow_three_layers=self.allow_three_layers,
        )
        kw.update(changes)
        return NetworkConfig(**kw)


@dataclass
class ForecastResult:
    mean: np.ndarray
    variance: np.ndarray
    trajectories: np.ndarray | None = field(default=None, repr=False)
    n_diverged: int = 0

    @property
    def band95(self):
        half = 1.96 * np.sqrt(self.variance)
        return self.mean - half, self.mean + half

    def to_csv(self, path, start: int = 1) -> None:
        """Write ``t,mean,variance,lo95,hi95`` rows, ``t`` counting from ``start``."""
        lo, hi = self.band95
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "mean", "variance", "lo95", "hi95"])
            for i in range(self.mean.shape[0]):
                writer.writerow([
                    start + i,
                    repr(float(self.mean[i])),
                    repr(float(self.variance[i])),
                    repr(float(lo[i])),
                    repr(float(hi[i])),
                ])


@dataclass
class RegNetOutput:
    """Per-layer coefficient sequences.

    ``zs[k]`` has shape ``(T + 1, d_{k+1})`` and includes the initial ``z0``
    in row 0, so ``zs[k][t]`` is the layer-(k+1) output at time ``t``.
    """

    zs: list[np.ndarray]
    states: list


def _as_series(series) -> np.ndarray:
    y = np.asarray(series, dtype=float)
    if y.ndim == 2 and y.shape[1] == 1:
        y = y[:, 0]
    if y.ndim != 1:
        raise InvalidArgumentError("the network consumes a univariate series")
    if not np.all(np.isfinite(y)):
        raise InvalidArgumentError("series contains non-finite values")
    return y


def regnet_forward(series, config: NetworkConfig) -> RegNetOutput:
    """Run all regression layers over ``series`` (length ``T + 1``)."""
    y = _as_series(series)
    if y.shape[0] < 2:
        raise InvalidArgumentError("series needs at least two points")
    inputs = y[:, None]
    zs, states = [], []
    for k, hyper in enumerate(config.layers, start=1):
        try:
            out, state = regress_series(inputs, hyper)
        except DivergenceError as exc:
            raise exc.located(layer=k) from None
        inputs = np.vstack([hyper.z0[None, :], out])
        zs.append(inputs)
        states.append(state)
    return RegNetOutput(zs, states)


def _unflatten_batch(z, d):
    dd = d * d
    b = z.shape[0]
    return (
        z[:, :dd].reshape(b, d, d),
        z[:, dd:dd + d],
        z[:, dd + d:].reshape(b, d, d),
    )


def _simulate_block(terminal, y_last, noises):
    """Roll a block of trajectories forward.

    ``terminal`` lists the top-of-regression values of layers 1..K,
    ``noises[k]`` has shape ``(B, N, d_k)`` for layers k = 0..K-1.
    Returns the layer-0 paths ``(B, N)``; diverged rows contain non-finite values.
    """
    n_layers = len(terminal)
    b, horizon = noises[0].shape[:2]
    dims = layer_dims(n_layers)
    z = [np.full((b, 1), float(y_last))]
    z += [np.broadcast_to(np.asarray(t, dtype=float), (b, t.shape[0])).copy() for t in terminal]
    paths = np.empty((b, horizon))
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(horizon):
            new = list(z)
            for k in range(n_layers - 1, -1, -1):
                a, n, s = _unflatten_batch(z[k + 1], dims[k])
                drift = (a * z[k][:, None, :]).sum(axis=-1)
                shock = (s * noises[k][:, t, None, :]).sum(axis=-1)
                new[k] = z[k] + drift + n + shock
            z = new
            paths[:, t] = z[0][:, 0]
    return paths


def _block_noise(seed, start, stop, horizon, dims):
    noises = []
    for k in range(len(dims) - 1):
        noises.append(np.stack([
            substream(seed, i, k).standard_normal((horizon, dims[k])) for i in range(start, stop)
        ]))
    return noises


def prednet_simulate(terminal, y_last, horizon: int, noise=None, seed=None, index: int = 0):
    """Simulate one forecast path of length ``horizon``.

    Parameters
    ----------
    terminal : sequence of ndarray
        Flattened coefficients ``Z^(1)_T .. Z^(K)_T``.
    y_last : float
        Last observed value ``Y_T``.
    noise : sequence of ndarray, optional
        ``noise[k]`` of shape ``(horizon, d_k)`` for layers 0..K-1.
    seed : int, optional
        Draw the noise from trajectory stream ``index`` of ``seed`` instead.
    """
    terminal = [np.asarray(t, dtype=float) for t in terminal]
    dims = layer_dims(len(terminal))
    for k, t in enumerate(terminal, start=1):
        if t.shape != (dims[k],):
            raise InvalidArgumentError(f"layer {k} terminal value must have length {dims[k]}")
        if not np.all(np.isfinite(t)):
            raise InvalidArgumentError(f"layer {k} terminal value is not finite")
    if (noise is None) == (seed is None):
        raise InvalidArgumentError("pass exactly one of noise= or seed=")
    if noise is None:
        noises = _block_noise(seed, index, index + 1, horizon, dims)
    else:
        noises = []
        for k in range(len(terminal)):
            w = np.asarray(noise[k], dtype=float)
            if w.shape != (horizon, dims[k]):
                raise InvalidArgumentError(f"noise[{k}] must have shape ({horizon}, {dims[k]})")
            noises.append(w[None])
    path = _simulate_block(terminal, y_last, noises)[0]
    if not np.all(np.isfinite(path)):
        raise DivergenceError("path")
    return path


def simulate_trajectories(terminal, y_last, horizon, n_trajectories, seed, threads=1):
    """All ``n_trajectories`` paths, shape ``(n, horizon)``, in trajectory order."""
    terminal = [np.asarray(t, dtype=float) for t in terminal]
    dims = layer_dims(len(terminal))
    blocks = [(s, min(s + CHUNK_SIZE, n_trajectories)) for s in range(0, n_trajectories, CHUNK_SIZE)]

    def run(block):
        start, stop = block
        return _simulate_block(terminal, y_last, _block_noise(seed, start, stop, horizon, dims))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return np.vstack(parts)


def summarize_paths(paths) -> ForecastResult:
    ok = np.all(np.isfinite(paths), axis=1)
    n_div = int(np.count_nonzero(~ok))
    if 2 * n_div >= paths.shape[0]:
        raise ForecastFailedError(f"{n_div} of {paths.shape[0]} trajectories diverged")
    kept = paths[ok]
    mean = np.mean(kept, axis=0)
    var = np.var(kept, axis=0)
    # identical paths: the rounded mean would leave a ~1e-32 variance behind
    same = np.all(kept == kept[0], axis=0)
    mean[same] = kept[0, same]
    var[same] = 0.0
    return ForecastResult(mean, var, kept, n_div)


def forecast(series, config: NetworkConfig, seed: int, horizon: int | None = None, threads: int = 1):
    """Monte-Carlo forecast of the ``horizon`` steps after the end of ``series``."""
    if config.n_trajectories < 2:
        raise InvalidArgumentError("forecast needs at least two trajectories")
    y = _as_series(series)
    horizon = config.horizon if horizon is None else int(horizon)
    out = regnet_forward(y, config)
    terminal = [z[-1] for z in out.zs]
    paths = simulate_trajectories(terminal, y[-1], horizon, config.n_trajectories, seed, threads)
    return summarize_paths(paths)


def forecast_losses(actual, mean, variance):
    """Root-mean-square losses of the MC mean and of the MC variance."""
    actual = np.asarray(actual, dtype=float)
    sq = (actual - mean) ** 2
    loss_mean = float(np.sqrt(np.mean(sq)))
    loss_var = float(np.sqrt(np.mean((sq - variance) ** 2)))
    return loss_mean, loss_var


@dataclass
class LossResult:
    loss_mean: float
    loss_var: float
    mean: np.ndarray | None
    variance: np.ndarray | None

    @property
    def total(self) -> float:
        return self.loss_mean + self.loss_var


_FAILED = (DivergenceError, ForecastFailedError)


def _loss_at(zs, y, t, config, seed, threads):
    horizon = config.horizon
    terminal = [z[t] for z in zs]
    paths = simulate_trajectories(terminal, y[t], horizon, config.n_trajectories, seed, threads)
    try:
        res = summarize_paths(paths)
    except ForecastFailedError:
        return LossResult(np.inf, np.inf, None, None)
    le, lv = forecast_losses(y[t + 1:t + 1 + horizon], res.mean, res.variance)
    return LossResult(le, lv, res.mean, res.variance)


def loss_single(series, config: NetworkConfig, seed: int, threads: int = 1) -> LossResult:
    """Regress on all but the last ``horizon`` points and score the forecast.

    Diverging regressions or forecasts give infinite losses instead of raising.
    """
    y = _as_series(series)
    T = y.shape[0] - 1 - config.horizon
    if T < 1:
        raise InvalidArgumentError("series too short for the configured horizon")
    try:
        out = regnet_forward(y[:T + 1], config)
    except DivergenceError:
        return LossResult(np.inf, np.inf, None, None)
    return _loss_at(out.zs, y, T, config, seed, threads)


def average_endpoints(T: int, stride: int = 1, first: int = 2, last: int | None = None) -> list[int]:
    last = T if last is None else min(last, T)
    if stride < 1:
        raise InvalidArgumentError("stride must be positive")
    if first > last:
        raise InvalidArgumentError(f"no regression endpoints in [{first}, {last}]")
    return list(range(first, last + 1, stride))


def loss_average(
    series,
    config: NetworkConfig,
    seed: int,
    stride: int = 1,
    first: int = 2,
    last: int | None = None,
    threads: int = 1,
):
    """Average of :func:`loss_single` over regression endpoints.

    The endpoint ``t`` loss regresses on ``series[0..t]`` and scores the next
    ``horizon`` points. Endpoints run from ``first`` to ``last`` (default: the
    last one leaving a full horizon) every ``stride`` steps. Because the
    regression is online, one pass up to the final endpoint serves them all.

    Returns ``(loss_mean_avg, loss_var_avg)``; any failed endpoint makes both
    infinite.
    """
    y = _as_series(series)
    T = y.shape[0] - 1 - config.horizon
    if T < 2:
        raise InvalidArgumentError("series too short: need T >= 2 regression steps")
    ends = average_endpoints(T, stride, first, last)
    try:
        out = regnet_forward(y[:ends[-1] + 1], config)
    except DivergenceError:
        return np.inf, np.inf
    le, lv = [], []
    for t in ends:
        res = _loss_at(out.zs, y, t, config, seed, threads)
        if not np.isfinite(res.total):
            return np.inf, np.inf
        le.append(res.loss_mean)
        lv.append(res.loss_var)
    return float(np.mean(le)), float(np.mean(lv))
