"""Quadratic-criterion hedge ratios and hedging backtests.

The hedge ratio of a put struck at K is the conditional expectation
xi_t = -(1/S_t) E*[1_{S_T < K} S_T | state], taken under the martingale
measure; calls follow by parity (xi_call = 1 + xi_put). Because the price is
continuous and the volatility state is Markov, the conditional expectation
restarts the martingale dynamics from (S_t, sig2_{t-}) over the remaining
horizon. Estimators:

* terminal / nested: fresh gridless restarts, optionally Rao-Blackwellized
  (the inner expectation given the jump path is a Gaussian closed form);
* regression: least-squares projection on polynomial features of
  (log S, sig2), the fast path for backtests;
* oracle: deterministic-variance closed form, exact when there are no jumps.

The backtest runs under the physical measure and audits the decomposition
structure: the hedging cost increments should be mean-zero and uncorrelated
with the martingale part of the price.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from scipy.stats import norm

from .model import (
    BnsParams,
    MeasureKind,
    PathBatch,
    jump_int_var_batch,
    ou_decay_integral,
    simulate_batch,
    uniform_grid,
    validate_assumptions,
)
from .subordinator import Family

_CHUNK = 1 << 17
_Z99 = 2.5758293035489004  # two-sided 99% normal quantile


class OptionKind(str, Enum):
    PUT = "put"
    CALL = "call"


@dataclass(frozen=True)
class OptionSpec:
    kind: OptionKind
    strike: float

    def __post_init__(self):
        object.__setattr__(self, "kind", OptionKind(self.kind))
        if not self.strike > 0.0:
            raise ValueError("strike must be positive")

    def payoff(self, s_terminal: np.ndarray) -> np.ndarray:
        if self.kind is OptionKind.PUT:
            return np.maximum(self.strike - s_terminal, 0.0)
        return np.maximum(s_terminal - self.strike, 0.0)


class HedgeMethod(str, Enum):
    TERMINAL = "terminal"
    NESTED = "nested"
    REGRESSION = "regression"
    PARITY = "parity"


class EstimatorMode(str, Enum):
    SAMPLED = "sampled"
    RAO_BLACKWELL = "rao_blackwell"


@dataclass(frozen=True)
class HedgeEstimate:
    xi: float
    stderr: float
    method: HedgeMethod
    n_outer: int
    n_inner: int
    t: float


def bs_put_delta_oracle(s0: float, strike: float, total_var: float) -> float:
    """Exact hedge ratio when the variance over the remaining horizon is deterministic.

    With no jumps, S_T is lognormal with log-variance ``total_var`` under the
    martingale measure and the ratio is -Phi(-d1).
    """
    if total_var <= 0.0:
        raise ValueError("total_var must be positive")
    d1 = (np.log(s0 / strike) + 0.5 * total_var) / np.sqrt(total_var)
    return float(-norm.cdf(-d1))


def bs_put_value_oracle(s0: float, strike: float, total_var: float) -> float:
    """Lognormal put value (zero rates) with deterministic total variance."""
    if total_var <= 0.0:
        raise ValueError("total_var must be positive")
    sqv = np.sqrt(total_var)
    d1 = (np.log(s0 / strike) + 0.5 * total_var) / sqv
    return float(strike * norm.cdf(-(d1 - sqv)) - s0 * norm.cdf(-d1))


def _put_target_samples(params: BnsParams, strike: float, s_state: float, sq_state: float,
                        tau: float, n: int, rng: np.random.Generator,
                        mode: EstimatorMode) -> np.ndarray:
    """Samples whose mean estimates E*[1_{S_T < K} S_T | S_t, sig2_{t-}].

    Restarts the martingale dynamics over the remaining horizon tau. In
    Rao-Blackwellized mode each jump path contributes its exact conditional
    expectation s * Phi((log(K/s) - v/2) / sqrt(v)); in sampled mode one
    Gaussian completes the draw.
    """
    tail = replace(params, s0=s_state, sigma0_sq=sq_state, maturity=tau)
    base = sq_state * ou_decay_integral(params.lam, tau)
    out = np.empty(n)
    done = 0
    while done < n:
        size = min(_CHUNK, n - done)
        w, _ = jump_int_var_batch(tail, tau, size, rng)
        v = base + w
        if mode is EstimatorMode.RAO_BLACKWELL:
            vals = s_state * norm.cdf((np.log(strike / s_state) - 0.5 * v) / np.sqrt(v))
        else:
            g = rng.standard_normal(size)
            s_T = s_state * np.exp(-0.5 * v + np.sqrt(v) * g)
            vals = np.where(s_T < strike, s_T, 0.0)
        out[done:done + size] = vals
        done += size
    return out


def _require_feasible(params: BnsParams) -> None:
    if not validate_assumptions(params).feasible:
        raise ValueError("model parameters violate the integrability assumptions")


def lrm_put_t0(params: BnsParams, strike: float, n: int, rng: np.random.Generator,
               mode: EstimatorMode = EstimatorMode.SAMPLED) -> HedgeEstimate:
    """Time-0 put hedge ratio from gridless terminal sampling."""
    _require_feasible(params)
    if strike <= 0.0:
        raise ValueError("strike must be positive")
    if n < 1000:
        raise ValueError("n must be at least 1000")
    vals = _put_target_samples(params, strike, params.s0, params.sigma0_sq,
                               params.maturity, n, rng, EstimatorMode(mode))
    xi = -vals.mean() / params.s0
    stderr = vals.std(ddof=1) / (params.s0 * np.sqrt(n))
    return HedgeEstimate(float(xi), float(stderr), HedgeMethod.TERMINAL, n, 0, 0.0)


def lrm_put_nested(params: BnsParams, strike: float, t: float,
                   state: Tuple[float, float], n_inner: int, rng: np.random.Generator,
                   mode: EstimatorMode = EstimatorMode.SAMPLED) -> HedgeEstimate:
    """Put hedge ratio at time t from state (S_t, sig2_{t-}), by inner restart."""
    if not 0.0 <= t < params.maturity:
        raise ValueError("t must lie in [0, maturity)")
    s_state, sq_state = state
    if s_state <= 0.0 or sq_state <= 0.0:
        raise ValueError("state components must be positive")
    if strike <= 0.0:
        raise ValueError("strike must be positive")
    vals = _put_target_samples(params, strike, s_state, sq_state,
                               params.maturity - t, n_inner, rng, EstimatorMode(mode))
    xi = -vals.mean() / s_state
    stderr = vals.std(ddof=1) / (s_state * np.sqrt(n_inner))
    return HedgeEstimate(float(xi), float(stderr), HedgeMethod.NESTED, 1, n_inner, t)


def lrm_call_t0(params: BnsParams, strike: float, n: int, rng: np.random.Generator,
                mode: EstimatorMode = EstimatorMode.SAMPLED) -> HedgeEstimate:
    """Time-0 call hedge ratio by parity: exactly 1 + the put ratio."""
    put = lrm_put_t0(params, strike, n, rng, mode)
    return HedgeEstimate(1.0 + put.xi, put.stderr, HedgeMethod.PARITY,
                         put.n_outer, put.n_inner, put.t)


def lrm_call_nested(params: BnsParams, strike: float, t: float,
                    state: Tuple[float, float], n_inner: int, rng: np.random.Generator,
                    mode: EstimatorMode = EstimatorMode.SAMPLED) -> HedgeEstimate:
    """Call hedge ratio at time t by parity with the nested put estimate."""
    put = lrm_put_nested(params, strike, t, state, n_inner, rng, mode)
    return HedgeEstimate(1.0 + put.xi, put.stderr, HedgeMethod.PARITY,
                         put.n_outer, put.n_inner, put.t)


def _poly_exponents(degree: int) -> List[Tuple[int, int]]:
    exps = [(0, 0)]
    for d in range(1, degree + 1):
        for j in range(d + 1):
            exps.append((d - j, j))
    return exps


def _poly_eval(coef: np.ndarray, exps: List[Tuple[int, int]],
               x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x, dtype=float)
    for c, (p, q) in zip(coef, exps):
        out += c * x ** p * y ** q
    return out


def _poly_features(x: np.ndarray, y: np.ndarray, degree: int) -> np.ndarray:
    """Total-degree monomials in two standardized variables, constant first."""
    return np.column_stack([x ** p * y ** q for p, q in _poly_exponents(degree)])


def _antiderivative_x(coef: np.ndarray, exps: List[Tuple[int, int]]):
    """Coefficients/exponents of the x-antiderivative of a polynomial."""
    new_exps = [(p + 1, q) for p, q in exps]
    new_coef = np.array([c / (p + 1) for c, (p, q) in zip(coef, exps)])
    return new_coef, new_exps


@dataclass
class _TimeFit:
    mean_x: float
    scale_x: float
    mean_y: float
    scale_y: float
    degree: int
    coef_num: np.ndarray          # fitted E[1_{S_T<K} S_T | state]
    coef_anti: np.ndarray         # x-antiderivative of coef_num, times scale_x
    exps_anti: List[Tuple[int, int]]
    coef_level: np.ndarray        # sig2-only level A(y) of the value surface


class RegressionHedge:
    """Per-grid-time polynomial estimator of the hedge ratio and option value.

    The ratio numerator g = E*[1_{S_T < K} S_T | log S, sig2] is fitted by
    least squares on martingale-measure paths and the ratio is -g/S clamped
    to the provable put range [-1, 0]. The value surface is reconstructed
    from the identity dV/d(log S) = -g: V(x, y) = A(y) - int g dx, with the
    level A(y) fitted on a sig2-only basis. Deriving both surfaces from one
    fit keeps the value's price slope consistent with the hedge ratio, so
    backtest cost increments carry no first-order delta mismatch.
    """

    def __init__(self, params: BnsParams, strike: float, grid: np.ndarray,
                 degree: int, fits: List[_TimeFit], reduced: bool):
        self.params = params
        self.strike = strike
        self.grid = grid
        self.degree = degree
        self.fits = fits
        self.reduced = reduced

    @classmethod
    def fit(cls, params: BnsParams, strike: float, batch: PathBatch,
            degree: int) -> "RegressionHedge":
        if not 1 <= degree <= 6:
            raise ValueError("basis_degree must be in [1, 6]")
        if batch.measure is not MeasureKind.MMM:
            raise ValueError("regression must be trained on martingale-measure paths")
        s_T = np.exp(batch.log_s[:, -1])
        target_num = np.where(s_T < strike, s_T, 0.0)
        payoff = np.maximum(strike - s_T, 0.0)
        m = batch.grid.size - 1
        fits: List[_TimeFit] = []
        reduced = False
        for k in range(m + 1):
            # The time-0 cross-section is a point mass; an intercept-only fit
            # (the plain mean) is the correct regression there, not a failure.
            deg_k = 0 if k == 0 else degree
            fit, fell_back = _fit_time(batch.log_s[:, k], batch.sigma_sq_left[:, k],
                                       batch.sigma_sq_right[:, k], target_num,
                                       payoff, deg_k)
            reduced = reduced or (fell_back and k > 0)
            fits.append(fit)
        return cls(params, strike, batch.grid, degree, fits, reduced)

    def xi(self, k: int, log_s: np.ndarray, sigma_sq_left: np.ndarray) -> np.ndarray:
        fit = self.fits[k]
        x = (log_s - fit.mean_x) / fit.scale_x
        y = (sigma_sq_left - fit.mean_y) / fit.scale_y
        raw = _poly_eval(fit.coef_num, fit.exps, x, y)
        return np.clip(-raw / np.exp(log_s), -1.0, 0.0)

    def value(self, k: int, log_s: np.ndarray, sigma_sq: np.ndarray) -> np.ndarray:
        fit = self.fits[k]
        x = (log_s - fit.mean_x) / fit.scale_x
        y = (sigma_sq - fit.mean_y) / fit.scale_y
        level = _poly_eval(fit.coef_level, [(0, q) for q in range(fit.coef_level.size)], x, y)
        raw = level - _poly_eval(fit.coef_anti, fit.exps_anti, x, y)
        # Saturate into the provable range [(K - S)^+, K]; at the envelopes the
        # value slope matches the clamped ratio (-1 deep in the money, 0 far
        # out), which keeps cost increments free of delta mismatch there.
        return np.clip(raw, np.maximum(self.strike - np.exp(log_s), 0.0), self.strike)


def _fit_time(x, y_left, y_right, target_num, payoff, degree) -> Tuple[_TimeFit, bool]:
    mean_x, scale_x = float(x.mean()), float(x.std()) or 1.0
    mean_y, scale_y = float(y_left.mean()), float(y_left.std())
    # Degenerate sig2 cross-sections (no jumps yet, or the no-jumps family)
    # support only log-price terms; fitting on the populated manifold is the
    # correct regression there, not a rank failure.
    y_degenerate = scale_y < 1e-14 * max(1.0, abs(mean_y))
    scale_y = scale_y if not y_degenerate else 1.0
    xs = (x - mean_x) / scale_x
    ys_left = (y_left - mean_y) / scale_y

    def exps_for(deg: int) -> List[Tuple[int, int]]:
        exps = _poly_exponents(deg)
        return [(p, q) for p, q in exps if q == 0] if y_degenerate else exps

    fell_back = False
    while True:
        exps = exps_for(degree)
        design = np.column_stack([xs ** p * ys_left ** q for p, q in exps])
        coef_num, _, rank, _ = np.linalg.lstsq(design, target_num, rcond=None)
        if rank == design.shape[1] or degree == 0:
            break
        degree -= 1
        fell_back = True
    coef_anti, exps_anti = _antiderivative_x(coef_num, exps)
    coef_anti = coef_anti * scale_x

    # Level in sig2 alone: the value's log-price dependence is fully carried
    # by the antiderivative term, by the slope identity.
    ys_right = (y_right - mean_y) / scale_y
    anti_at_state = _poly_eval(coef_anti, exps_anti, xs, ys_right)
    level_deg = 0 if y_degenerate else degree
    level_design = np.column_stack([ys_right ** q for q in range(level_deg + 1)])
    coef_level, _, _, _ = np.linalg.lstsq(level_design, payoff + anti_at_state, rcond=None)
    return _TimeFit(mean_x, scale_x, mean_y, scale_y, degree, exps,
                    coef_num, coef_anti, exps_anti, coef_level), fell_back


@dataclass(frozen=True)
class RegressionEstimates:
    """Hedge-ratio estimates on the training paths, plus the fitted surfaces."""

    grid: np.ndarray
    xi: np.ndarray
    model: RegressionHedge
    reduced_degree: bool


def lrm_put_regression(params: BnsParams, strike: float, grid: np.ndarray, n_paths: int,
                       basis_degree: int, rng: np.random.Generator) -> RegressionEstimates:
    """Fit the regression estimator and return per-(path, time) put ratios."""
    _require_feasible(params)
    if n_paths < 10_000:
        raise ValueError("n_paths must be at least 10000")
    batch = simulate_batch(params, MeasureKind.MMM, grid, n_paths, rng)
    model = RegressionHedge.fit(params, strike, batch, basis_degree)
    m = batch.grid.size - 1
    xi = np.empty((n_paths, m))
    for k in range(m):
        xi[:, k] = model.xi(k, batch.log_s[:, k], batch.sigma_sq_left[:, k])
    return RegressionEstimates(batch.grid, xi, model, model.reduced)


def pooled_corr_ci(dc: np.ndarray, dm: np.ndarray, z: float = _Z99):
    """Pooled correlation of per-step increments with a path-clustered CI.

    Increments within a path share states and fitted surfaces, so the CI uses
    the influence function of the correlation summed within each path.
    """
    c = dc - dc.mean()
    m = dm - dm.mean()
    s_c = np.sqrt((c * c).mean())
    s_m = np.sqrt((m * m).mean())
    rho = float((c * m).mean() / (s_c * s_m))
    infl = (c * m) / (s_c * s_m) - 0.5 * rho * ((c * c) / (s_c * s_c) + (m * m) / (s_m * s_m))
    per_path = infl.sum(axis=1)
    half = z * np.sqrt((per_path ** 2).sum()) / infl.size
    return rho, rho - half, rho + half


@dataclass(frozen=True)
class BacktestReport:
    """Discretized hedging run under the physical measure.

    Per-path arrays: the hedge-ratio trajectory, cumulative trading gain,
    estimated option value, strategy value (terminal injection subtracted, so
    the last column is identically zero), and the per-step cost and
    price-martingale increments. Aggregates summarize the terminal hedge
    error, the cost-drift test, and the pooled cost/martingale correlation
    with its 99% path-clustered confidence interval.
    """

    option: OptionSpec
    grid: np.ndarray
    hedge_method: str
    n_paths: int
    xi: np.ndarray
    gain: np.ndarray
    value_estimate: np.ndarray
    strategy_value: np.ndarray
    cost_increments: np.ndarray
    m_increments: np.ndarray
    hedge_error: np.ndarray
    hedge_error_mean: float
    hedge_error_std: float
    hedge_error_max_abs: float
    cost_drift_mean: float
    cost_drift_ci: Tuple[float, float]
    orthogonality_corr: float
    orthogonality_ci: Tuple[float, float]


def _nested_surfaces(params, strike, batch, k, n_inner, rng, mode):
    """Per-path (xi, value) at grid index k by independent inner restarts."""
    tau = params.maturity - batch.grid[k]
    n = batch.n_paths
    s = np.exp(batch.log_s[:, k])[:, None]
    sq = batch.sigma_sq_left[:, k]
    w, _ = jump_int_var_batch(params, tau, n * n_inner, rng)
    v = sq[:, None] * ou_decay_integral(params.lam, tau) + w.reshape(n, n_inner)
    sqv = np.sqrt(v)
    if EstimatorMode(mode) is EstimatorMode.RAO_BLACKWELL:
        xi = -norm.cdf((np.log(strike / s) - 0.5 * v) / sqv).mean(axis=1)
        d1 = (np.log(s / strike) + 0.5 * v) / sqv
        value = (strike * norm.cdf(-(d1 - sqv)) - s * norm.cdf(-d1)).mean(axis=1)
    else:
        g = rng.standard_normal((n, n_inner))
        s_T = s * np.exp(-0.5 * v + sqv * g)
        xi = -np.where(s_T < strike, s_T, 0.0).mean(axis=1) / s[:, 0]
        value = np.maximum(strike - s_T, 0.0).mean(axis=1)
    return xi, value


def backtest(params: BnsParams, option: OptionSpec, grid: np.ndarray, n_paths: int,
             hedge_method: str, rng: np.random.Generator, n_train: Optional[int] = None,
             basis_degree: int = 2, n_inner: int = 256,
             mode: EstimatorMode = EstimatorMode.RAO_BLACKWELL) -> BacktestReport:
    """Run a discretized hedging backtest under the physical measure.

    ``hedge_method`` is one of ``regression`` (least-squares surfaces trained
    on a separate martingale-measure sample), ``nested`` (fresh inner restarts
    at every (path, time); expensive), or ``oracle`` (deterministic-variance
    closed form, only valid without jumps). The trading gain uses the
    left-point (predictable) hedge ratio; option-value estimates condition on
    the post-jump state. Cost increments are value changes net of trading
    gains, with the payoff injected exactly at maturity.
    """
    _require_feasible(params)
    grid = np.asarray(grid, dtype=float)
    m = grid.size - 1
    strike = option.strike
    is_call = OptionKind(option.kind) is OptionKind.CALL

    if hedge_method == "regression":
        n_train = n_train if n_train is not None else max(n_paths, 10_000)
        train = simulate_batch(params, MeasureKind.MMM, grid, n_train, rng)
        surface = RegressionHedge.fit(params, strike, train, basis_degree)
    elif hedge_method == "oracle":
        if params.subordinator.family is not Family.NO_JUMPS:
            raise ValueError("oracle hedging is exact only for the no-jumps family")
        surface = None
    elif hedge_method == "nested":
        surface = None
    else:
        raise ValueError(f"unknown hedge_method {hedge_method!r}")

    batch = simulate_batch(params, MeasureKind.PHYSICAL, grid, n_paths, rng)
    s = np.exp(batch.log_s)
    s_T = s[:, -1]

    xi_put = np.empty((n_paths, m))
    value_put = np.empty((n_paths, m + 1))
    for k in range(m):
        if hedge_method == "regression":
            xi_put[:, k] = surface.xi(k, batch.log_s[:, k], batch.sigma_sq_left[:, k])
            value_put[:, k] = surface.value(k, batch.log_s[:, k], batch.sigma_sq_right[:, k])
        elif hedge_method == "oracle":
            tau = params.maturity - grid[k]
            v_left = batch.sigma_sq_left[:, k] * ou_decay_integral(params.lam, tau)
            v_right = batch.sigma_sq_right[:, k] * ou_decay_integral(params.lam, tau)
            d1 = (batch.log_s[:, k] - np.log(strike) + 0.5 * v_left) / np.sqrt(v_left)
            xi_put[:, k] = -norm.cdf(-d1)
            sqv = np.sqrt(v_right)
            d1v = (batch.log_s[:, k] - np.log(strike) + 0.5 * v_right) / sqv
            value_put[:, k] = strike * norm.cdf(-(d1v - sqv)) - s[:, k] * norm.cdf(-d1v)
        else:
            xi_put[:, k], value_put[:, k] = _nested_surfaces(
                params, strike, batch, k, n_inner, rng, mode)
    value_put[:, -1] = np.maximum(strike - s_T, 0.0)

    if is_call:
        xi = 1.0 + xi_put
        value = value_put + s - strike
    else:
        xi = xi_put
        value = value_put

    ds = np.diff(s, axis=1)
    gain = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(xi * ds, axis=1)], axis=1)
    dc = np.diff(value, axis=1) - xi * ds
    deltas = np.diff(grid)
    dm = ds - s[:, :-1] * (params.mu * deltas + (params.beta + 0.5) * batch.int_var_step)

    payoff = option.payoff(s_T)
    strategy_value = value.copy()
    strategy_value[:, -1] -= payoff

    hedge_error = dc.sum(axis=1)
    drift_mean = float(hedge_error.mean())
    drift_half = _Z99 * float(hedge_error.std(ddof=1)) / np.sqrt(n_paths)
    rho, lo, hi = pooled_corr_ci(dc, dm)

    return BacktestReport(
        option=option, grid=grid, hedge_method=hedge_method, n_paths=n_paths,
        xi=xi, gain=gain, value_estimate=value, strategy_value=strategy_value,
        cost_increments=dc, m_increments=dm, hedge_error=hedge_error,
        hedge_error_mean=drift_mean,
        hedge_error_std=float(hedge_error.std(ddof=1)),
        hedge_error_max_abs=float(np.abs(hedge_error).max()),
        cost_drift_mean=drift_mean,
        cost_drift_ci=(drift_mean - drift_half, drift_mean + drift_half),
        orthogonality_corr=rho, orthogonality_ci=(lo, hi),
    )


def backtest_default_grid(params: BnsParams, option: OptionSpec, n_paths: int,
                          hedge_method: str, rng: np.random.Generator,
                          grid_steps: int = 64, **kwargs) -> BacktestReport:
    return backtest(params, option, uniform_grid(params.maturity, grid_steps),
                    n_paths, hedge_method, rng, **kwargs)
