"""Online regression and Monte-Carlo prediction of generalized OU processes,
with layerwise Bayesian hyperparameter tuning and a rolling backtest harness."""

from .backtest import (
    MetricsReport,
    ModelSettings,
    PricedSeries,
    SamplePlan,
    compute_metrics,
    load_csv,
    make_samples,
    run_backtest,
)
from .bayesopt import (
    BoConfig,
    BoTrace,
    BoundsBox,
    bayes_optimize,
    expected_improvement,
    maximize_acquisition,
    tune_layerwise,
)
from .errors import (
    DataValidationError,
    DivergenceError,
    ForecastFailedError,
    InvalidArgumentError,
    NotPositiveDefiniteError,
    NumericOverflowError,
    RankDeficiencyError,
    RegPredError,
)
from .gp import GpModel, Kernel, gp_fit, gp_posterior, kernel_eval
from .network import (
    ForecastResult,
    NetworkConfig,
    forecast,
    layer_dims,
    loss_average,
    loss_single,
    prednet_simulate,
    regnet_forward,
)
from .online import LayerHyper, LayerState, regcell_step, regress_series
from .ou import GouParams, OlsFit, named_params, ols_fit, simulate_gou, simulate_named

__version__ = "0.1.0"
