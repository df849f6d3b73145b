"""Rolling-window backtest of the tuned network against a random-walk baseline."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bayesopt import BoConfig, LossSettings, tune_layerwise
from .errors import DataValidationError, InvalidArgumentError, RegPredError
from .network import ForecastResult, NetworkConfig, forecast
from .rng import derive_seed

log = logging.getLogger(__name__)

METRICS = ("pearson_r", "r_squared", "rmse", "mda")


class BacktestError(RegPredError):
    pass


@dataclass(frozen=True)
class PricedSeries:
    dates: np.ndarray  # datetime64[D]
    values: np.ndarray

    def __post_init__(self):
        dates = np.asarray(self.dates, dtype="datetime64[D]")
        values = np.asarray(self.values, dtype=float)
        if dates.shape != values.shape or values.ndim != 1:
            raise InvalidArgumentError("dates and values must be equal-length vectors")
        if np.any(np.diff(dates) <= np.timedelta64(0, "D")):
            raise DataValidationError("dates must be strictly increasing")
        if not np.all(np.isfinite(values)) or np.any(values <= 0):
            raise DataValidationError("values must be finite and positive")
        object.__setattr__(self, "dates", dates)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.shape[0]


def load_csv(path) -> PricedSeries:
    """Read a ``date,value`` file with ISO-8601 dates.

    Calendar gaps are fine; consecutive rows are consecutive steps.
    """
    dates, values = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != ["date", "value"]:
            raise DataValidationError("expected header 'date,value'", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise DataValidationError(f"expected 2 fields, got {len(row)}", line=lineno)
            try:
                day = dt.date.fromisoformat(row[0].strip())
            except ValueError:
                raise DataValidationError(f"bad date {row[0]!r}", line=lineno) from None
            try:
                value = float(row[1])
            except ValueError:
                raise DataValidationError(f"bad value {row[1]!r}", line=lineno) from None
            if not np.isfinite(value) or value <= 0:
                raise DataValidationError(f"value must be positive and finite, got {row[1].strip()}", line=lineno)
            if dates:
                if day == dates[-1]:
                    raise DataValidationError(f"duplicate date {day}", line=lineno)
                if day < dates[-1]:
                    raise DataValidationError(f"date {day} is not after {dates[-1]}", line=lineno)
            dates.append(day)
            values.append(value)
    if not values:
        raise DataValidationError("no data rows")
    return PricedSeries(np.array(dates, dtype="datetime64[D]"), np.array(values))


def write_series_csv(path, series: PricedSeries) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "value"])
        for d, v in zip(series.dates, series.values):
            writer.writerow([str(d), repr(float(v))])


@dataclass(frozen=True)
class SamplePlan:
    n_train: int = 1830
    n_valid: int = 200
    n_test: int = 100
    stride: int = 30

    def __post_init__(self):
        for name in ("n_train", "n_valid", "n_test", "stride"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidArgumentError(f"{name} must be a positive integer, got {v}")

    @property
    def total(self) -> int:
        return self.n_train + self.n_valid + self.n_test


@dataclass(frozen=True)
class SampleWindow:
    start: int
    plan: SamplePlan

    @property
    def train(self) -> range:
        return range(self.start, self.start + self.plan.n_train)

    @property
    def valid(self) -> range:
        s = self.start + self.plan.n_train
        return range(s, s + self.plan.n_valid)

    @property
    def test(self) -> range:
        s = self.start + self.plan.n_train + self.plan.n_valid
        return range(s, s + self.plan.n_test)

    @property
    def stop(self) -> int:
        return self.start + self.plan.total


def make_samples(length, plan: SamplePlan) -> list[SampleWindow]:
    """Windows of ``plan.total`` points every ``plan.stride`` steps."""
    n = len(length) if hasattr(length, "__len__") else int(length)
    if plan.total > n:
        raise InvalidArgumentError(f"plan needs {plan.total} points, series has {n}")
    count = (n - plan.total) // plan.stride + 1
    return [SampleWindow(i * plan.stride, plan) for i in range(count)]


@dataclass(frozen=True)
class MetricsRow:
    pearson_r: float
    r_squared: float
    rmse: float
    mda: float
    r_undefined: bool = False

    def as_dict(self):
        return {m: getattr(self, m) for m in METRICS}


def compute_metrics(actuals, forecast_mean, anchor: float) -> MetricsRow:
    """Pearson R, R^2, RMSE and mean directional accuracy of one forecast.

    Directions are step-over-step changes with both series anchored at the
    last observed value; a step matches when the signs agree (two zero
    changes match, one zero change does not). R is NaN, flagged by
    ``r_undefined``, when either series is constant.
    """
    y = np.asarray(actuals, dtype=float)
    f = np.asarray(forecast_mean, dtype=float)
    if y.shape != f.shape or y.ndim != 1 or y.shape[0] < 2:
        raise InvalidArgumentError("need equal-length vectors of at least two points")
    resid = y - f
    rmse = float(np.sqrt(np.mean(resid ** 2)))
    yc = y - y.mean()
    fc = f - f.mean()
    ss_tot = float(yc @ yc)
    denom = np.sqrt(ss_tot * float(fc @ fc))
    # exact test: the mean of a constant vector can round away from it
    undefined = bool(np.all(y == y[0]) or np.all(f == f[0])) or not denom > 0
    r = np.nan if undefined else float(np.clip((yc @ fc) / denom, -1.0, 1.0))
    r2 = 1.0 - float(resid @ resid) / ss_tot if ss_tot > 0 else np.nan
    dy = np.diff(np.concatenate([[anchor], y]))
    df = np.diff(np.concatenate([[anchor], f]))
    mda = float(np.mean(np.sign(dy) == np.sign(df)))
    return MetricsRow(r, r2, rmse, mda, undefined)


@dataclass
class MetricsReport:
    """Per-sample metric columns plus their mean and (population) std."""

    model: str
    rows: list

    def column(self, metric) -> np.ndarray:
        return np.array([getattr(r, metric) for r in self.rows], dtype=float)

    def mean(self, metric) -> float:
        col = self.column(metric)
        col = col[np.isfinite(col)]
        return float(np.mean(col)) if col.size else np.nan

    def std(self, metric) -> float:
        col = self.column(metric)
        col = col[np.isfinite(col)]
        return float(np.std(col)) if col.size else np.nan


@dataclass
class SampleResult:
    index: int
    window: SampleWindow
    layers: list | None = None
    forecast: ForecastResult | None = None
    metrics: MetricsRow | None = None
    baseline: MetricsRow | None = None
    traces: list = field(default_factory=list)
    error: str | None = None


@dataclass
class BacktestResult:
    samples: list
    regpred: MetricsReport
    baseline: MetricsReport

    @property
    def n_failed(self) -> int:
        return sum(s.error is not None for s in self.samples)

    def metrics_table(self):
        """Rows ``(model, metric, mean, std)``."""
        out = []
        for report in (self.regpred, self.baseline):
            for m in METRICS:
                out.append((report.model, m, report.mean(m), report.std(m)))
        return out

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), self.metrics_table())
        with open(os.path.join(out_dir, "samples.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample", "start", "model"] + list(METRICS) + ["error"])
            for s in self.samples:
                for model, row in (("regpred", s.metrics), ("random_walk", s.baseline)):
                    vals = [repr(getattr(row, m)) for m in METRICS] if row else [""] * len(METRICS)
                    writer.writerow([s.index, s.window.start, model] + vals + [s.error or ""])
        for s in self.samples:
            if s.forecast is not None:
                s.forecast.to_csv(os.path.join(out_dir, f"forecast_{s.index:03d}.csv"),
                                  start=s.window.test.start)
            for k, trace in enumerate(s.traces, start=1):
                trace.to_csv(os.path.join(out_dir, f"trace_{s.index:03d}_layer{k}.csv"))


def write_metrics_csv(path, table) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "metric", "mean", "std"])
        for model, metric, mean, std in table:
            writer.writerow([model, metric, repr(mean), repr(std)])


@dataclass(frozen=True)
class ModelSettings:
    """Network and tuning-objective settings used inside each sample.

    ``horizon`` is the validation-loss horizon; the test forecast always
    covers ``plan.n_test`` steps.
    """

    n_layers: int = 2
    horizon: int = 100
    n_trajectories: int = 50
    parameterization: str = "tied"
    loss_stride: int = 64
    common_seed: bool = True


def _run_sample(values, index, window, settings, bo_config, seed, layers):
    plan = window.plan
    seg = values[window.start:window.stop]
    fit = seg[:plan.n_train + plan.n_valid]
    test = seg[plan.n_train + plan.n_valid:]
    sample_seed = derive_seed(seed, index)
    result = SampleResult(index, window)
    result.baseline = compute_metrics(test, np.full(test.shape, fit[-1]), fit[-1])
    try:
        if layers is None:
            # regression over the training segment, prediction windows inside validation
            loss = LossSettings(
                stride=settings.loss_stride,
                first=plan.n_train - 1,
                last=fit.shape[0] - 1 - settings.horizon,
                seed=derive_seed(sample_seed, 1),
                common_seed=settings.common_seed,
            )
            bo = BoConfig(**{**bo_config.__dict__, "seed": derive_seed(sample_seed, 0)})
            tuned = tune_layerwise(fit, settings.n_layers, bo, settings.horizon,
                                   settings.n_trajectories, parameterization=settings.parameterization,
                                   loss_settings=loss)
            layers = tuned.layers
            result.traces = tuned.traces
        result.layers = list(layers)
        config = NetworkConfig(tuple(layers), plan.n_test, settings.n_trajectories)
        result.forecast = forecast(fit, config, derive_seed(sample_seed, 2))
        result.metrics = compute_metrics(test, result.forecast.mean, fit[-1])
    except RegPredError as exc:
        log.warning("sample %d failed: %s", index, exc)
        result.error = str(exc)
    return result


def run_backtest(
    series,
    plan: SamplePlan,
    settings: ModelSettings,
    bo_config: BoConfig,
    seed: int,
    layers=None,
    threads: int = 1,
) -> BacktestResult:
    """Tune, forecast and score every sample window.

    Each sample is tuned on its train+valid segment (unless fixed ``layers``
    are given) and forecast over its test segment. Failed samples are kept
    in ``samples`` with an ``error`` and left out of the aggregates; more
    than half failing raises :class:`BacktestError`.
    """
    values = series.values if isinstance(series, PricedSeries) else np.asarray(series, dtype=float)
    if plan.n_valid < settings.horizon:
        raise InvalidArgumentError(
            f"validation window ({plan.n_valid}) shorter than the loss horizon ({settings.horizon})"
        )
    windows = make_samples(values.shape[0], plan)

    def run(item):
        i, w = item
        return _run_sample(values, i, w, settings, bo_config, seed, layers)

    items = list(enumerate(windows))
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(run, items))
    else:
        samples = [run(it) for it in items]
    failed = sum(s.error is not None for s in samples)
    if 2 * failed > len(samples):
        raise BacktestError(f"{failed} of {len(samples)} samples failed")
    ok = [s for s in samples if s.error is None]
    return BacktestResult(
        samples,
        MetricsReport("regpred", [s.metrics for s in ok]),
        MetricsReport("random_walk", [s.baseline for s in ok]),
    )
