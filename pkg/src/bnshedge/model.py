"""Price/volatility model: exact simulation of the OU-driven system.

Squared volatility solves d(sig2_t) = -lam * sig2_t dt + dJ_t with J a
subordinator time-changed by lam, so between jumps it decays exponentially
and every integral used by the engine has a closed form per jump-free piece.
Log price increments are conditionally Gaussian given the jump path, which the
engine exploits to draw N(0, int sig2) directly: no Euler bias anywhere, and
the law at grid points is exact (up to the IG-OU subgrid timing of jumps).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from .subordinator import (
    Family,
    FlatJumps,
    JumpPath,
    SubordinatorSpec,
    exp_moment_bound,
    sample_jumps_batch,
    DEFAULT_IG_SUBGRID,
)


class MeasureKind(str, Enum):
    PHYSICAL = "physical"
    MMM = "mmm"


_MIN_SIGMA0_SQ = 1e-12


@dataclass(frozen=True)
class BnsParams:
    """Full model parameterization.

    Parameters
    ----------
    s0:
        Initial asset price, positive.
    mu:
        Price drift per unit time.
    beta:
        Volatility risk premium coefficient (multiplies sig2 in the log drift).
    lam:
        OU mean-reversion rate, positive.
    sigma0_sq:
        Initial squared volatility, positive.
    maturity:
        Time horizon in years, positive.
    subordinator:
        Jump family of the driving subordinator.

    The price is continuous (no direct jump feedback into the price path).
    """

    s0: float
    mu: float
    beta: float
    lam: float
    sigma0_sq: float
    maturity: float
    subordinator: SubordinatorSpec

    def __post_init__(self):
        if not self.s0 > 0.0:
            raise ValueError("s0 must be positive")
        if not self.lam > 0.0:
            raise ValueError("lam must be positive")
        if not self.sigma0_sq >= _MIN_SIGMA0_SQ:
            # The market price of risk carries mu/sigma, which degenerates
            # as sigma -> 0; near-zero initial variance is rejected outright.
            raise ValueError(f"sigma0_sq must be >= {_MIN_SIGMA0_SQ}")
        if not self.maturity > 0.0:
            raise ValueError("maturity must be positive")


def ou_decay_integral(lam: float, t) -> np.ndarray | float:
    """Integral of e^{-lam*s} over [0, t], i.e. (1 - e^{-lam*t}) / lam.

    A second-order series is used for lam*t < 1e-8 to avoid cancellation.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0):
        raise ValueError("t must be nonnegative")
    lt = lam * t_arr
    series = t_arr * (1.0 - 0.5 * lt)
    closed = (1.0 - np.exp(-lt)) / lam
    out = np.where(lt < 1e-8, series, closed)
    return out if isinstance(t, np.ndarray) else float(out)


class BindingConstraint(str, Enum):
    DRIFT_BOUND = "drift_bound"
    SQUARE_BOUND = "square_bound"
    EXP_MOMENT = "exp_moment"


@dataclass(frozen=True)
class KappaCertificate:
    """Feasibility certificate for the model's integrability assumptions.

    ``kappa_min`` is the larger of the drift bound [2(beta+1/2)^+ + 1] B(T)
    (strict) and the square bound (beta+1/2)^2 B(T) (weak); ``kappa_max`` is
    half the family's exponential-moment boundary. Feasible iff
    kappa_min < kappa_max. ``binding_constraint`` names the lower bound that
    attains kappa_min when feasible, and the exponential-moment cap when not.
    ``boundary`` flags certificates within 1e-12 of the feasibility edge.
    """

    feasible: bool
    kappa_min: float
    kappa_max: float
    binding_constraint: BindingConstraint
    boundary: bool

    @property
    def kappa_interval(self) -> Optional[Tuple[float, float]]:
        return (self.kappa_min, self.kappa_max) if self.feasible else None


def validate_assumptions(params: BnsParams) -> KappaCertificate:
    """Check the exponential-moment assumptions and return the kappa range."""
    b_t = ou_decay_integral(params.lam, params.maturity)
    bp = params.beta + 0.5
    drift_bound = (2.0 * max(bp, 0.0) + 1.0) * b_t
    square_bound = bp * bp * b_t
    kappa_min = max(drift_bound, square_bound)
    kappa_max = 0.5 * exp_moment_bound(params.subordinator)

    feasible = kappa_min < kappa_max
    if not feasible:
        binding = BindingConstraint.EXP_MOMENT
    elif drift_bound >= square_bound:
        binding = BindingConstraint.DRIFT_BOUND
    else:
        binding = BindingConstraint.SQUARE_BOUND
    boundary = (np.isfinite(kappa_max)
                and abs(kappa_min - kappa_max) <= 1e-12 * max(1.0, kappa_min))
    return KappaCertificate(feasible, kappa_min, kappa_max, binding, boundary)


def _check_step_jumps(delta: float, step_jumps: Sequence[Tuple[float, float]]) -> None:
    prev = 0.0
    for offset, size in step_jumps:
        if not (prev < offset <= delta):
            raise ValueError("jump offsets must be strictly increasing in (0, delta]")
        if not size > 0.0:
            raise ValueError("jump sizes must be positive")
        prev = offset


def ou_step(sigma_sq_s: float, lam: float, delta: float,
            step_jumps: Sequence[Tuple[float, float]] = ()) -> float:
    """Exact squared-volatility value after a step of length delta.

    ``step_jumps`` are (offset, size) pairs with offsets strictly increasing
    in (0, delta].
    """
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    _check_step_jumps(delta, step_jumps)
    out = sigma_sq_s * np.exp(-lam * delta)
    for offset, size in step_jumps:
        out += size * np.exp(-lam * (delta - offset))
    return float(out)


def integrated_variance_step(sigma_sq_s: float, lam: float, delta: float,
                             step_jumps: Sequence[Tuple[float, float]] = ()) -> float:
    """Exact integral of squared volatility over a step of length delta."""
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    _check_step_jumps(delta, step_jumps)
    out = sigma_sq_s * ou_decay_integral(lam, delta)
    for offset, size in step_jumps:
        out += size * ou_decay_integral(lam, delta - offset)
    return float(out)


@dataclass(frozen=True)
class PathBatch:
    """Vectorized simulation output: n paths on a common grid.

    Arrays are indexed [path, grid point] (length m+1 axes) or [path, step]
    (length m axes). ``sigma_sq_left`` holds left limits: a jump landing
    exactly on a grid point enters ``sigma_sq_right`` only.
    """

    measure: MeasureKind
    grid: np.ndarray
    sigma_sq_left: np.ndarray
    sigma_sq_right: np.ndarray
    int_var_step: np.ndarray
    gauss_step: np.ndarray
    log_s: np.ndarray
    jumps: FlatJumps

    @property
    def n_paths(self) -> int:
        return self.log_s.shape[0]

    @property
    def s(self) -> np.ndarray:
        return np.exp(self.log_s)


@dataclass(frozen=True)
class SimulatedPath:
    """Single-path view of :class:`PathBatch` (1-d arrays, own jump path)."""

    measure: MeasureKind
    grid: np.ndarray
    sigma_sq_left: np.ndarray
    sigma_sq_right: np.ndarray
    int_var_step: np.ndarray
    gauss_step: np.ndarray
    log_s: np.ndarray
    jumps: JumpPath


def _check_grid(grid: np.ndarray, maturity: float) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ValueError("grid must be a 1-d array with at least two points")
    if grid[0] != 0.0 or not np.isclose(grid[-1], maturity, rtol=0.0, atol=1e-12):
        raise ValueError("grid must start at 0 and end at the maturity")
    if np.any(np.diff(grid) <= 0.0):
        raise ValueError("grid must be strictly increasing")
    return grid


def uniform_grid(maturity: float, steps: int) -> np.ndarray:
    if steps < 1:
        raise ValueError("steps must be >= 1")
    return np.linspace(0.0, maturity, steps + 1)


def scatter_jump_contributions(jumps: FlatJumps, grid: np.ndarray, lam: float):
    """Aggregate per-(path, step) jump effects for the recursion.

    Returns (to_right, to_left, to_intvar), each (n, m): the decayed jump mass
    arriving at each step's right endpoint (inclusive / exclusive of jumps at
    the endpoint itself) and the jumps' contribution to the step's integrated
    variance.
    """
    n, m = jumps.n_paths, grid.size - 1
    shape = (n, m)
    if jumps.times.size == 0:
        z = np.zeros(shape)
        return z, z.copy(), z.copy()
    step = np.searchsorted(grid, jumps.times, side="left") - 1
    step = np.clip(step, 0, m - 1)
    dt_end = grid[step + 1] - jumps.times
    flat = jumps.path_index * m + step
    to_right = np.bincount(flat, weights=jumps.sizes * np.exp(-lam * dt_end),
                           minlength=n * m).reshape(shape)
    interior = jumps.sizes * np.exp(-lam * dt_end) * (dt_end > 0.0)
    to_left = np.bincount(flat, weights=interior, minlength=n * m).reshape(shape)
    to_intvar = np.bincount(flat, weights=jumps.sizes * ou_decay_integral(lam, dt_end),
                            minlength=n * m).reshape(shape)
    return to_right, to_left, to_intvar


@dataclass(frozen=True)
class VolatilityBatch:
    """Jumps plus the exact volatility state of n paths, before any Gaussians."""

    grid: np.ndarray
    jumps: FlatJumps
    sigma_sq_left: np.ndarray
    sigma_sq_right: np.ndarray
    int_var_step: np.ndarray


def volatility_batch(params: BnsParams, grid: np.ndarray, n: int,
                     rng: np.random.Generator, ig_subgrid: int = DEFAULT_IG_SUBGRID) -> VolatilityBatch:
    """Sample jumps and roll the exact volatility recursion over the grid.

    The jump law does not depend on the pricing measure, so this is the
    common front half of both physical and martingale simulations.
    """
    grid = _check_grid(grid, params.maturity)
    m = grid.size - 1
    lam = params.lam

    flat_h = sample_jumps_batch(params.subordinator, lam * params.maturity, n, rng, ig_subgrid)
    jumps = flat_h.scaled(1.0 / lam)
    # Guard against 1-ulp overshoot of the horizon from the time rescale.
    jumps = FlatJumps(jumps.n_paths, params.maturity, jumps.path_index,
                      np.minimum(jumps.times, params.maturity), jumps.sizes, jumps.counts)
    to_right, to_left, to_intvar = scatter_jump_contributions(jumps, grid, lam)

    deltas = np.diff(grid)
    decay = np.exp(-lam * deltas)
    b_step = ou_decay_integral(lam, deltas)

    sq_right = np.empty((n, m + 1))
    sq_left = np.empty((n, m + 1))
    int_var = np.empty((n, m))
    sq_right[:, 0] = params.sigma0_sq
    sq_left[:, 0] = params.sigma0_sq
    for k in range(m):
        base = sq_right[:, k] * decay[k]
        sq_left[:, k + 1] = base + to_left[:, k]
        sq_right[:, k + 1] = base + to_right[:, k]
        int_var[:, k] = sq_right[:, k] * b_step[k] + to_intvar[:, k]

    return VolatilityBatch(grid, jumps, sq_left, sq_right, int_var)


def log_price_from_gauss(params: BnsParams, measure: MeasureKind,
                         vol: VolatilityBatch, gauss: np.ndarray) -> np.ndarray:
    """Assemble log S on the grid from volatility state and Gaussian steps.

    Only the deterministic drift differs between measures: mu*dt +
    beta*int_sig2 under the physical measure versus -int_sig2/2 under the
    martingale measure.
    """
    deltas = np.diff(vol.grid)
    if MeasureKind(measure) is MeasureKind.PHYSICAL:
        dlog = params.mu * deltas + params.beta * vol.int_var_step + gauss
    else:
        dlog = -0.5 * vol.int_var_step + gauss
    n = gauss.shape[0]
    log_s = np.empty((n, gauss.shape[1] + 1))
    log_s[:, 0] = np.log(params.s0)
    np.cumsum(dlog, axis=1, out=log_s[:, 1:])
    log_s[:, 1:] += np.log(params.s0)
    return log_s


def simulate_batch(params: BnsParams, measure: MeasureKind, grid: np.ndarray, n: int,
                   rng: np.random.Generator, ig_subgrid: int = DEFAULT_IG_SUBGRID) -> PathBatch:
    """Simulate n paths of (sig2, int sig2, log S) on the grid, exactly."""
    measure = MeasureKind(measure)
    vol = volatility_batch(params, grid, n, rng, ig_subgrid)
    gauss = rng.standard_normal((n, vol.int_var_step.shape[1])) * np.sqrt(vol.int_var_step)
    log_s = log_price_from_gauss(params, measure, vol, gauss)
    return PathBatch(measure, vol.grid, vol.sigma_sq_left, vol.sigma_sq_right,
                     vol.int_var_step, gauss, log_s, vol.jumps)


def simulate_path(params: BnsParams, measure: MeasureKind, grid: np.ndarray,
                  rng: np.random.Generator, ig_subgrid: int = DEFAULT_IG_SUBGRID) -> SimulatedPath:
    """Simulate a single path; see :func:`simulate_batch`."""
    batch = simulate_batch(params, measure, grid, 1, rng, ig_subgrid)
    return SimulatedPath(batch.measure, batch.grid, batch.sigma_sq_left[0],
                         batch.sigma_sq_right[0], batch.int_var_step[0],
                         batch.gauss_step[0], batch.log_s[0], batch.jumps.path(0))


@dataclass(frozen=True)
class TerminalBatch:
    """Gridless terminal draws: everything a time-0 functional of the path needs."""

    s_terminal: np.ndarray
    int_var_total: np.ndarray
    jump_total: np.ndarray
    gauss_total: np.ndarray


def jump_int_var_batch(params: BnsParams, horizon: float, n: int, rng: np.random.Generator,
                       ig_subgrid: int = DEFAULT_IG_SUBGRID):
    """Jump-only part of int_0^horizon sig2, i.e. sum_i x_i * B(horizon - u_i).

    Returns (weighted sums, terminal jump mass), each shape (n,). The IG-OU
    subgrid part is reduced against the decay weights directly, avoiding
    materializing per-jump arrays.
    """
    lam = params.lam
    spec = params.subordinator
    if spec.family is Family.NO_JUMPS:
        return np.zeros(n), np.zeros(n)

    a, b = spec.a, spec.b
    if spec.family is Family.GAMMA_OU:
        counts = rng.poisson(a * lam * horizon, size=n)
        total = int(counts.sum())
        pidx = np.repeat(np.arange(n, dtype=np.int64), counts)
        times_h = rng.uniform(0.0, lam * horizon, size=total)
        sizes = rng.exponential(scale=1.0 / b, size=total)
        weights = ou_decay_integral(lam, np.maximum(horizon - times_h / lam, 0.0))
        int_var = np.bincount(pidx, weights=sizes * weights, minlength=n)
        jump_total = np.bincount(pidx, weights=sizes, minlength=n)
        return int_var, jump_total

    cp_counts = rng.poisson(0.5 * a * b * lam * horizon, size=n)
    cp_total = int(cp_counts.sum())
    cp_pidx = np.repeat(np.arange(n, dtype=np.int64), cp_counts)
    cp_times_h = rng.uniform(0.0, lam * horizon, size=cp_total)
    cp_sizes = rng.standard_normal(cp_total) ** 2 / (b * b)
    cp_weights = ou_decay_integral(lam, np.maximum(horizon - cp_times_h / lam, 0.0))

    h = horizon / ig_subgrid
    delta = 0.5 * a * (lam * h)
    incs = rng.wald(delta / b, delta * delta, size=(n, ig_subgrid))
    sub_weights = ou_decay_integral(lam, horizon - (np.arange(ig_subgrid) + 1.0) * h)
    int_var = (np.bincount(cp_pidx, weights=cp_sizes * cp_weights, minlength=n)
               + incs @ sub_weights)
    jump_total = np.bincount(cp_pidx, weights=cp_sizes, minlength=n) + incs.sum(axis=1)
    return int_var, jump_total


def terminal_int_var_batch(params: BnsParams, n: int, rng: np.random.Generator,
                           ig_subgrid: int = DEFAULT_IG_SUBGRID):
    """Draw (total integrated variance, terminal jump mass) for n paths.

    Uses the identity int_0^T sig2 = sigma0_sq * B(T) + sum_i x_i * B(T - u_i)
    so no time grid is needed.
    """
    base = params.sigma0_sq * ou_decay_integral(params.lam, params.maturity)
    w, jump_total = jump_int_var_batch(params, params.maturity, n, rng, ig_subgrid)
    return base + w, jump_total


def terminal_batch(params: BnsParams, measure: MeasureKind, n: int,
                   rng: np.random.Generator, ig_subgrid: int = DEFAULT_IG_SUBGRID) -> TerminalBatch:
    """Draw n exact (S_T, int sig2) samples without a grid."""
    measure = MeasureKind(measure)
    int_var, jump_total = terminal_int_var_batch(params, n, rng, ig_subgrid)
    gauss = rng.standard_normal(n) * np.sqrt(int_var)
    if measure is MeasureKind.PHYSICAL:
        log_s = np.log(params.s0) + params.mu * params.maturity + params.beta * int_var + gauss
    else:
        log_s = np.log(params.s0) - 0.5 * int_var + gauss
    return TerminalBatch(np.exp(log_s), int_var, jump_total, gauss)


def terminal_sample(params: BnsParams, measure: MeasureKind,
                    rng: np.random.Generator) -> Tuple[float, float]:
    """Single-shot exact draw of (S_T, total integrated variance)."""
    batch = terminal_batch(params, measure, 1, rng)
    return float(batch.s_terminal[0]), float(batch.int_var_total[0])


@dataclass(frozen=True)
class ScConditionReport:
    """Pathwise mean-variance trade-off diagnostics."""

    k_terminal_mean: float
    k_terminal_max: float
    lambda_finite: bool


def sc_condition_report(params: BnsParams, n_paths: int, rng: np.random.Generator,
                        grid_steps: int = 64) -> ScConditionReport:
    """Simulate K_T = int u_t^2 dt pathwise and report its moments.

    ``lambda_finite`` asserts the volatility stayed strictly positive on every
    simulated path, so the risk-price kernel never degenerates.
    """
    cert = validate_assumptions(params)
    if not cert.feasible:
        raise ValueError("model parameters violate the integrability assumptions")
    from .measure import measure_integrals_batch

    grid = uniform_grid(params.maturity, grid_steps)
    batch = simulate_batch(params, MeasureKind.PHYSICAL, grid, n_paths, rng)
    int_u_sq, _ = measure_integrals_batch(params, batch)
    k_terminal = int_u_sq.sum(axis=1)
    lambda_finite = bool(np.all(batch.sigma_sq_right > 0.0) and np.all(batch.sigma_sq_left > 0.0))
    return ScConditionReport(float(k_terminal.mean()), float(k_terminal.max()), lambda_finite)
