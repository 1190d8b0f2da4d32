"""Simulation and local risk-minimization hedging engine for OU stochastic
volatility models with subordinator-driven variance."""

from .subordinator import (
    Family,
    SubordinatorSpec,
    JumpPath,
    QuadratureError,
    levy_density,
    laplace_exponent,
    exp_moment,
    exp_moment_bound,
    sample_path,
)
from .model import (
    BnsParams,
    MeasureKind,
    BindingConstraint,
    KappaCertificate,
    SimulatedPath,
    PathBatch,
    ou_decay_integral,
    validate_assumptions,
    ou_step,
    integrated_variance_step,
    simulate_path,
    simulate_batch,
    terminal_sample,
    terminal_batch,
    uniform_grid,
    sc_condition_report,
)
from .measure import (
    DensityPath,
    DensityBatch,
    mpr,
    step_integrals,
    density_path,
    density_batch,
    exp_martingale_y,
    y_terminal_batch,
    check_exp_martingale_condition,
)
from .hedging import (
    OptionKind,
    OptionSpec,
    HedgeMethod,
    HedgeEstimate,
    EstimatorMode,
    BacktestReport,
    RegressionHedge,
    bs_put_delta_oracle,
    bs_put_value_oracle,
    lrm_put_t0,
    lrm_put_nested,
    lrm_put_regression,
    lrm_call_t0,
    lrm_call_nested,
    backtest,
    pooled_corr_ci,
)
from .config import ConfigError, ExperimentConfig, RunManifest
from .rng import substream

__version__ = "0.1.0"

__all__ = [
    "Family", "SubordinatorSpec", "JumpPath", "QuadratureError",
    "levy_density", "laplace_exponent", "exp_moment", "exp_moment_bound", "sample_path",
    "BnsParams", "MeasureKind", "BindingConstraint", "KappaCertificate",
    "SimulatedPath", "PathBatch", "ou_decay_integral", "validate_assumptions",
    "ou_step", "integrated_variance_step", "simulate_path", "simulate_batch",
    "terminal_sample", "terminal_batch", "uniform_grid", "sc_condition_report",
    "DensityPath", "DensityBatch", "mpr", "step_integrals", "density_path",
    "density_batch", "exp_martingale_y", "y_terminal_batch",
    "check_exp_martingale_condition",
    "OptionKind", "OptionSpec", "HedgeMethod", "HedgeEstimate", "EstimatorMode",
    "BacktestReport", "RegressionHedge", "bs_put_delta_oracle", "bs_put_value_oracle",
    "lrm_put_t0", "lrm_put_nested", "lrm_put_regression", "lrm_call_t0",
    "lrm_call_nested", "backtest", "pooled_corr_ci",
    "ConfigError", "ExperimentConfig", "RunManifest", "substream",
    "__version__",
]
