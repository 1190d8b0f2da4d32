"""Market price of risk, martingale-measure density, exponential martingales.

The density of the minimal martingale measure is the stochastic exponential
Z_t = exp(-1/2 int u^2 ds - int u dW) with u = mu/sigma + (beta+1/2) sigma.
Conditionally on the jump path, (int sigma dW, int u dW) over a step is a
bivariate Gaussian whose covariance entries all have closed forms, so (S, Z)
are simulated jointly and exactly via a per-step 2x2 Cholesky factor.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import numpy as np

from .model import (
    BnsParams,
    MeasureKind,
    SimulatedPath,
    VolatilityBatch,
    _check_step_jumps,
    log_price_from_gauss,
    ou_decay_integral,
    validate_assumptions,
    volatility_batch,
)
from .subordinator import Family, exp_moment, exp_moment_bound


def mpr(params: BnsParams, sigma_sq: float) -> float:
    """Market price of risk u = mu/sigma + (beta + 1/2) sigma."""
    if sigma_sq <= 0.0:
        raise ValueError("mpr requires sigma_sq > 0 (degenerate volatility)")
    sigma = np.sqrt(sigma_sq)
    return float(params.mu / sigma + (params.beta + 0.5) * sigma)


class StepIntegrals(NamedTuple):
    int_var: float
    int_u_sq: float
    int_cross: float


def step_integrals(sigma_sq_s: float, lam: float, mu: float, beta: float, delta: float,
                   step_jumps: Sequence[Tuple[float, float]] = ()) -> StepIntegrals:
    """Exact (int sig2, int u^2, int sig*u) over one step.

    Piecewise closed forms between consecutive jumps: on a jump-free piece of
    length d starting at value c, int sig2 = c*B(d) and
    int sig^{-2} = (e^{lam*d} - 1) / (lam*c). Then
    int u^2 = mu^2 int sig^{-2} + 2 mu (beta+1/2) delta + (beta+1/2)^2 int sig2
    and int sig*u = mu*delta + (beta+1/2) int sig2.
    """
    if delta < 0.0:
        raise ValueError("delta must be nonnegative")
    _check_step_jumps(delta, step_jumps)
    bp = beta + 0.5
    int_var = 0.0
    int_inv = 0.0
    value = sigma_sq_s
    prev = 0.0
    for offset, size in list(step_jumps) + [(delta, 0.0)]:
        piece = offset - prev
        if piece > 0.0:
            int_var += value * ou_decay_integral(lam, piece)
            int_inv += np.expm1(lam * piece) / (lam * value)
            value *= np.exp(-lam * piece)
        value += size
        prev = offset
    int_u_sq = mu * mu * int_inv + 2.0 * mu * bp * delta + bp * bp * int_var
    int_cross = mu * delta + bp * int_var
    return StepIntegrals(float(int_var), float(int_u_sq), float(int_cross))


def _int_inv_batch(lam: float, vol: VolatilityBatch) -> np.ndarray:
    """Per-(path, step) integral of 1/sig2, vectorized over all jumps.

    Each jump closes a jump-free piece; one final piece per cell runs from the
    last jump (or the step start) to the step end. Piece integrals use the
    value at the piece's *end*: (1 - e^{-lam*l}) / (lam * sig2_end), which for
    the final piece is the step's left-limit value.
    """
    grid = vol.grid
    n, m = vol.int_var_step.shape
    deltas = np.diff(grid)
    jumps = vol.jumps

    # Final pieces, assuming no jumps; corrected below where jumps exist.
    final_len = np.broadcast_to(deltas, (n, m)).copy()

    int_inv = np.zeros((n, m))
    if jumps.times.size:
        step = np.clip(np.searchsorted(grid, jumps.times, side="left") - 1, 0, m - 1)
        cell = jumps.path_index * m + step
        offsets = jumps.times - grid[step]

        # sig2 just before each jump: e^{-lam*o_i} (c0 + sum_{j<i} e^{lam*o_j} x_j),
        # with the prefix sum computed group-locally (cells are contiguous).
        w = np.exp(lam * offsets) * jumps.sizes
        cs = np.cumsum(w)
        first = np.empty(cell.size, dtype=bool)
        first[0] = True
        np.not_equal(cell[1:], cell[:-1], out=first[1:])
        starts = np.flatnonzero(first)
        group_id = np.cumsum(first) - 1
        base = np.where(starts > 0, cs[starts - 1], 0.0)
        prefix_excl = (cs - w) - base[group_id]
        c0 = vol.sigma_sq_right[jumps.path_index, step]
        pre_jump = np.exp(-lam * offsets) * (c0 + prefix_excl)

        prev_offset = np.empty_like(offsets)
        prev_offset[0] = 0.0
        prev_offset[1:] = np.where(first[1:], 0.0, offsets[:-1])
        piece_len = offsets - prev_offset
        piece_int = -np.expm1(-lam * piece_len) / (lam * pre_jump)
        int_inv += np.bincount(cell, weights=piece_int, minlength=n * m).reshape(n, m)

        last_idx = np.append(starts[1:] - 1, cell.size - 1)
        final_len.reshape(-1)[cell[last_idx]] = deltas[step[last_idx]] - offsets[last_idx]

    int_inv += -np.expm1(-lam * final_len) / (lam * vol.sigma_sq_left[:, 1:])
    return int_inv


def measure_integrals_batch(params: BnsParams, vol: VolatilityBatch) -> Tuple[np.ndarray, np.ndarray]:
    """Exact per-step (int u^2, int sig*u) for a batch of volatility paths."""
    bp = params.beta + 0.5
    mu = params.mu
    deltas = np.diff(vol.grid)
    int_var = vol.int_var_step
    int_cross = mu * deltas + bp * int_var
    if mu == 0.0:
        int_u_sq = bp * bp * int_var
    else:
        int_inv = _int_inv_batch(params.lam, vol)
        int_u_sq = mu * mu * int_inv + 2.0 * mu * bp * deltas + bp * bp * int_var
    return int_u_sq, int_cross


@dataclass(frozen=True)
class DensityBatch:
    """Jointly simulated (S, Z) under the physical measure.

    ``g_sigma`` and ``g_u`` are the per-step draws of (int sig dW, int u dW)
    with their exact 2x2 covariance. ``clamp_count`` counts steps whose
    residual variance went materially negative by rounding and was clamped.
    """

    grid: np.ndarray
    int_var_step: np.ndarray
    u_sq_step: np.ndarray
    cross_step: np.ndarray
    g_sigma: np.ndarray
    g_u: np.ndarray
    z: np.ndarray
    log_s: np.ndarray
    clamp_count: int

    @property
    def n_paths(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class DensityPath:
    """Single-path view of :class:`DensityBatch`."""

    grid: np.ndarray
    int_var_step: np.ndarray
    u_sq_step: np.ndarray
    cross_step: np.ndarray
    g_sigma: np.ndarray
    g_u: np.ndarray
    z: np.ndarray
    log_s: np.ndarray
    clamp_count: int


def density_batch(params: BnsParams, grid: np.ndarray, n: int, rng: np.random.Generator,
                  require_feasible: bool = True, _cross_sign: float = 1.0) -> DensityBatch:
    """Simulate n joint (S, Z) paths under the physical measure.

    ``_cross_sign`` is a test-only fault-injection hook: -1 flips the sign of
    the 2*mu*(beta+1/2)*dt cross term in the density's compensator exponent
    (emulating a sign bug in the risk-price expansion) while the Gaussian
    draws keep the true law.
    """
    if require_feasible and not validate_assumptions(params).feasible:
        raise ValueError("model parameters violate the integrability assumptions")
    vol = volatility_batch(params, grid, n, rng)
    u_sq, cross = measure_integrals_batch(params, vol)
    int_var = vol.int_var_step
    m = int_var.shape[1]

    z1 = rng.standard_normal((n, m))
    z2 = rng.standard_normal((n, m))
    g_sigma = np.sqrt(int_var) * z1
    resid = u_sq - cross * cross / int_var
    clamp_count = int(np.count_nonzero(resid < -1e-12 * np.maximum(u_sq, 1e-300)))
    resid = np.maximum(resid, 0.0)
    g_u = cross / np.sqrt(int_var) * z1 + np.sqrt(resid) * z2

    log_s = log_price_from_gauss(params, MeasureKind.PHYSICAL, vol, g_sigma)

    bp = params.beta + 0.5
    deltas = np.diff(grid)
    u_sq_comp = u_sq + (_cross_sign - 1.0) * 2.0 * params.mu * bp * deltas
    z = np.empty((n, m + 1))
    z[:, 0] = 1.0
    np.cumsum(-0.5 * u_sq_comp - g_u, axis=1, out=z[:, 1:])
    np.exp(z[:, 1:], out=z[:, 1:])
    return DensityBatch(vol.grid, int_var, u_sq, cross, g_sigma, g_u, z, log_s, clamp_count)


def density_path(params: BnsParams, grid: np.ndarray, rng: np.random.Generator) -> DensityPath:
    """Simulate a single joint (S, Z) path; see :func:`density_batch`."""
    b = density_batch(params, grid, 1, rng)
    return DensityPath(b.grid, b.int_var_step[0], b.u_sq_step[0], b.cross_step[0],
                       b.g_sigma[0], b.g_u[0], b.z[0], b.log_s[0], b.clamp_count)


def _jump_compensator_rate(params: BnsParams, b: float) -> float:
    """int (e^{b x} - 1) nu(dx) for the time-changed jump measure nu = lam * nu_H."""
    if b == 0.0 or params.subordinator.family is Family.NO_JUMPS:
        return 0.0
    res = exp_moment(params.subordinator, b)
    if not res.finite:
        raise ValueError(
            f"exponential moment of the jump measure diverges at exponent {b:g} "
            f"(boundary {exp_moment_bound(params.subordinator):g})")
    return params.lam * res.value


def check_exp_martingale_condition(a: float, b: float, params: BnsParams,
                                   squared: bool = False) -> None:
    """Raise unless (a, b) admit the exponential (square-)martingale property.

    The plain condition needs int_1^inf e^{(2b + a^2 B(T)/2) x} nu(dx) < inf;
    the squared version needs the exponent 4b + 2 a^2 B(T).
    """
    if b < 0.0:
        raise ValueError("b must be nonnegative")
    b_t = ou_decay_integral(params.lam, params.maturity)
    exponent = (4.0 * b + 2.0 * a * a * b_t) if squared else (2.0 * b + 0.5 * a * a * b_t)
    if exponent <= 0.0 or params.subordinator.family is Family.NO_JUMPS:
        return
    bound = exp_moment_bound(params.subordinator)
    if exponent >= bound:
        which = "square-integrability" if squared else "martingale"
        raise ValueError(
            f"{which} condition fails: int_1^inf e^{{{exponent:g} x}} nu(dx) diverges "
            f"(family boundary {bound:g})")


def exp_martingale_y(a: float, b: float, params: BnsParams, path: SimulatedPath) -> float:
    """Terminal value of the exponential martingale built from a physical path.

    Y_T = exp(-a^2/2 int sig2 + a int sig dW + b J_T - T int (e^{bx}-1) nu(dx)),
    where the last two terms combine the compensated jump integral with its
    exponential compensator.
    """
    check_exp_martingale_condition(a, b, params)
    if MeasureKind(path.measure) is not MeasureKind.PHYSICAL:
        raise ValueError("exponential martingale is defined from a physical-measure path")
    total_var = float(path.int_var_step.sum())
    total_gauss = float(path.gauss_step.sum())
    comp = _jump_compensator_rate(params, b) * params.maturity
    return float(np.exp(-0.5 * a * a * total_var + a * total_gauss
                        + b * path.jumps.terminal - comp))


def y_terminal_batch(a: float, b: float, params: BnsParams, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Sample n terminal values of the exponential martingale (gridless)."""
    check_exp_martingale_condition(a, b, params)
    from .model import terminal_batch

    t = terminal_batch(params, MeasureKind.PHYSICAL, n, rng)
    comp = _jump_compensator_rate(params, b) * params.maturity
    return np.exp(-0.5 * a * a * t.int_var_total + a * t.gauss_total
                  + b * t.jump_total - comp)
