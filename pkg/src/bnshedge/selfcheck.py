"""Built-in diagnostics: every checkable model property as a pass/fail table.

The default matrix covers both jump families plus the no-jumps oracle case.
Statistical checks use three-standard-error gates on seeded substreams, so a
default run is deterministic.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np

from . import measure as measure_mod
from .config import ExperimentConfig
from .hedging import EstimatorMode, bs_put_delta_oracle, lrm_call_t0, lrm_put_t0
from .model import (
    BnsParams,
    MeasureKind,
    integrated_variance_step,
    ou_decay_integral,
    ou_step,
    terminal_batch,
    uniform_grid,
    validate_assumptions,
)
from .rng import TAG_SELFCHECK, substream
from .subordinator import (
    Family,
    SubordinatorSpec,
    exp_moment,
    laplace_exponent,
    sample_jumps_batch,
)

INJECT_MPR_CROSS_SIGN = "mpr-cross-sign"


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _default_models():
    gamma = BnsParams(s0=100.0, mu=0.03, beta=0.0, lam=1.0, sigma0_sq=0.04,
                      maturity=1.0, subordinator=SubordinatorSpec.gamma_ou(1.0, 8.0))
    ig = replace(gamma, subordinator=SubordinatorSpec.ig_ou(1.0, 3.5))
    nojumps = replace(gamma, mu=0.0, subordinator=SubordinatorSpec.no_jumps())
    return [("gamma_ou", gamma), ("ig_ou", ig), ("no_jumps", nojumps)]


def _param_label(params: BnsParams) -> str:
    return params.subordinator.family.value


def _remark_threshold_ok(family: Family, a: float, b: float, beta: float, b_t: float) -> bool:
    bracket = max(2.0 * max(beta + 0.5, 0.0) + 1.0, (beta + 0.5) ** 2)
    if family is Family.GAMMA_OU:
        return b > 2.0 * bracket * b_t
    return 0.5 * b * b > 2.0 * bracket * b_t


def _check_validator_grid() -> CheckResult:
    betas = np.linspace(-1.5, 2.0, 10)
    shapes = np.linspace(0.5, 9.5, 10) + 0.0371
    b_t = ou_decay_integral(1.0, 1.0)
    mismatches = 0
    for family in (Family.GAMMA_OU, Family.IG_OU):
        for beta in betas:
            for b in shapes:
                params = BnsParams(100.0, 0.0, float(beta), 1.0, 0.04, 1.0,
                                   SubordinatorSpec(family, 1.0, float(b)))
                got = validate_assumptions(params).feasible
                want = _remark_threshold_ok(family, 1.0, float(b), float(beta), b_t)
                mismatches += got != want
    return CheckResult("validator_matches_closed_form", mismatches == 0,
                       f"{mismatches} mismatches on 200 grid points")


def _check_exp_moment_boundary() -> CheckResult:
    eps = 1e-9
    gamma = SubordinatorSpec.gamma_ou(1.0, 10.0)
    ig = SubordinatorSpec.ig_ou(1.0, 2.0)
    ok = (exp_moment(gamma, 10.0 - eps).finite and not exp_moment(gamma, 10.0).finite
          and not exp_moment(gamma, 10.0 + eps).finite
          and exp_moment(ig, 2.0 - eps).finite and not exp_moment(ig, 2.0).finite
          and not exp_moment(ig, 2.0 + eps).finite)
    return CheckResult("exp_moment_boundary", ok, "strict boundaries at b and b^2/2")


def _check_step_identity(rng: np.random.Generator) -> CheckResult:
    worst = 0.0
    for _ in range(500):
        sq = rng.uniform(1e-3, 0.5)
        lam = rng.uniform(0.1, 5.0)
        delta = rng.uniform(1e-3, 1.0)
        n_j = rng.integers(0, 4)
        offsets = np.sort(rng.uniform(0.0, delta, size=n_j))
        jumps = [(float(o), float(rng.uniform(1e-4, 0.3))) for o in offsets if o > 0.0]
        end = ou_step(sq, lam, delta, jumps)
        iv = integrated_variance_step(sq, lam, delta, jumps)
        total_jump = sum(x for _, x in jumps)
        resid = abs(end - sq + lam * iv - total_jump) / max(1.0, abs(sq))
        worst = max(worst, resid)
    return CheckResult("step_identity", worst < 1e-12, f"max residual {worst:.2e}")


def _check_sampler_laplace(label: str, spec: SubordinatorSpec,
                           rng: np.random.Generator, n: int = 40_000) -> CheckResult:
    flat = sample_jumps_batch(spec, 1.0, n, rng)
    j1 = flat.terminal_per_path()
    worst = 0.0
    for u in (0.5, 1.0, 2.0):
        vals = np.exp(-u * j1)
        mean = vals.mean()
        se = vals.std(ddof=1) / np.sqrt(n)
        target = np.exp(laplace_exponent(spec, u))
        worst = max(worst, abs(mean - target) / se)
    return CheckResult(f"sampler_laplace[{label}]", worst <= 3.0,
                       f"max |z| = {worst:.2f} over u in {{0.5, 1, 2}}")


def _z_gate(name: str, mean: float, target: float, se: float) -> CheckResult:
    z = abs(mean - target) / se
    return CheckResult(name, z <= 3.0, f"mean {mean:.5g}, target {target:.5g}, z = {z:.2f}")


def _check_price_martingale(label: str, params: BnsParams, rng) -> CheckResult:
    t = terminal_batch(params, MeasureKind.MMM, 100_000, rng)
    se = t.s_terminal.std(ddof=1) / np.sqrt(t.s_terminal.size)
    return _z_gate(f"martingale_price_mmm[{label}]", float(t.s_terminal.mean()), params.s0, se)


def _density(params: BnsParams, n: int, rng, inject_bug: Optional[str]):
    sign = -1.0 if inject_bug == INJECT_MPR_CROSS_SIGN else 1.0
    grid = uniform_grid(params.maturity, 32)
    return measure_mod.density_batch(params, grid, n, rng, _cross_sign=sign)


def _check_density_martingale(label, params, rng, inject_bug) -> CheckResult:
    d = _density(params, 30_000, rng, inject_bug)
    z_T = d.z[:, -1]
    return _z_gate(f"martingale_density[{label}]", float(z_T.mean()), 1.0,
                   float(z_T.std(ddof=1)) / np.sqrt(z_T.size))


def _check_radon_nikodym(label, params, rng, inject_bug) -> CheckResult:
    d = _density(params, 30_000, rng, inject_bug)
    vals = d.z[:, -1] * np.exp(d.log_s[:, -1])
    return _z_gate(f"radon_nikodym[{label}]", float(vals.mean()), params.s0,
                   float(vals.std(ddof=1)) / np.sqrt(vals.size))


def _check_z_square_stable(label, params, rng, inject_bug) -> CheckResult:
    d = _density(params, 40_000, rng, inject_bug)
    z_sq = d.z[:, -1] ** 2
    half = z_sq[:20_000].mean()
    full = z_sq.mean()
    ratio = half / full
    max_to_sum = z_sq.max() / z_sq.sum()
    ok = 0.8 <= ratio <= 1.2 and max_to_sum < 0.05
    return CheckResult(f"z_square_stable[{label}]", bool(ok),
                       f"half/full ratio {ratio:.3f}, max-to-sum {max_to_sum:.2e}")


def _y_pairs(params: BnsParams):
    if params.subordinator.family is Family.NO_JUMPS:
        return [(1.0, 0.0), (2.0, 0.0), (0.5, 0.0)]
    return [(1.0, 0.5), (2.0, 1.0), (0.0, 2.0)]


def _check_y_martingale(label, params, rng) -> CheckResult:
    worst = 0.0
    for a, b in _y_pairs(params):
        y = measure_mod.y_terminal_batch(a, b, params, 100_000, rng)
        z = abs(y.mean() - 1.0) / (y.std(ddof=1) / np.sqrt(y.size))
        worst = max(worst, z)
    return CheckResult(f"y_martingale[{label}]", worst <= 3.0,
                       f"max |z| = {worst:.2f} over 3 (a, b) pairs")


def _check_bs_oracle(params: BnsParams, rng) -> CheckResult:
    est = lrm_put_t0(params, params.s0, 200_000, rng)
    oracle = bs_put_delta_oracle(
        params.s0, params.s0,
        params.sigma0_sq * ou_decay_integral(params.lam, params.maturity))
    z = abs(est.xi - oracle) / est.stderr
    return CheckResult("bs_oracle_hedge[no_jumps]", z <= 3.0,
                       f"xi {est.xi:.5f}, oracle {oracle:.5f}, z = {z:.2f}")


def _check_parity(label, params, rng) -> CheckResult:
    seed_state = rng.bit_generator.state
    put = lrm_put_t0(params, params.s0, 50_000, rng)
    rng.bit_generator.state = seed_state
    call = lrm_call_t0(params, params.s0, 50_000, rng)
    exact = call.xi == 1.0 + put.xi and call.stderr == put.stderr
    t = terminal_batch(params, MeasureKind.MMM, 50_000, rng)
    comp = np.where(t.s_terminal >= params.s0, t.s_terminal, 0.0) / params.s0
    z = abs(comp.mean() - call.xi) / np.hypot(comp.std(ddof=1) / np.sqrt(comp.size), call.stderr)
    return CheckResult(f"put_call_parity[{label}]", exact and z <= 3.0,
                       f"parity exact: {exact}, complement z = {z:.2f}")


def _check_beta_invariance(label, params, rng) -> CheckResult:
    state = rng.bit_generator.state
    estimates = []
    for beta in (-0.5, 0.0, 1.0):
        rng.bit_generator.state = state
        estimates.append(lrm_put_t0(replace(params, beta=beta), params.s0, 20_000, rng).xi)
    ok = estimates[0] == estimates[1] == estimates[2]
    return CheckResult(f"beta_invariance[{label}]", ok,
                       f"xi = {estimates[0]:.6f} across beta in {{-1/2, 0, 1}}")


def run_selfcheck(config: Optional[ExperimentConfig] = None, seed: int = 0,
                  inject_bug: Optional[str] = None) -> List[CheckResult]:
    """Run the diagnostics matrix; returns one result per check.

    With a config, the matrix runs against its model (plus the built-in
    no-jumps oracle case); otherwise a default three-family matrix is used.
    ``inject_bug`` enables test-only fault injection (see
    :data:`INJECT_MPR_CROSS_SIGN`), which a correct build must turn into
    visible failures.
    """
    if config is not None:
        seed = config.run.seed
        models = [(_param_label(config.model), config.model)]
        if config.model.subordinator.family is not Family.NO_JUMPS:
            models.append(_default_models()[2])
    else:
        models = _default_models()

    results: List[CheckResult] = []
    counter = 0

    def rng_next() -> np.random.Generator:
        nonlocal counter
        counter += 1
        return substream(seed, TAG_SELFCHECK, counter)

    results.append(_check_validator_grid())
    results.append(_check_exp_moment_boundary())
    results.append(_check_step_identity(rng_next()))

    for label, params in models:
        cert = validate_assumptions(params)
        if not cert.feasible:
            results.append(CheckResult(f"feasibility[{label}]", False,
                                       "model parameters are infeasible"))
            continue
        family = params.subordinator.family
        if family is not Family.NO_JUMPS:
            results.append(_check_sampler_laplace(label, params.subordinator, rng_next()))
        results.append(_check_price_martingale(label, params, rng_next()))
        results.append(_check_density_martingale(label, params, rng_next(), inject_bug))
        results.append(_check_radon_nikodym(label, params, rng_next(), inject_bug))
        results.append(_check_z_square_stable(label, params, rng_next(), inject_bug))
        results.append(_check_y_martingale(label, params, rng_next()))
        results.append(_check_parity(label, params, rng_next()))
        if family is Family.NO_JUMPS:
            results.append(_check_bs_oracle(params, rng_next()))
        else:
            sweep_ok = all(validate_assumptions(replace(params, beta=b)).feasible
                           for b in (-0.5, 0.0, 1.0))
            if sweep_ok:
                results.append(_check_beta_invariance(label, params, rng_next()))
    return results


def all_passed(results: List[CheckResult]) -> bool:
    return all(r.passed for r in results)
