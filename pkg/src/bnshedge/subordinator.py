"""Driving Levy subordinators for the OU volatility process.

Two jump families are supported, named after the stationary law they induce
for the squared volatility: ``gamma_ou`` (Levy density a*b*exp(-b*x), compound
Poisson) and ``ig_ou`` (Levy density a/(2*sqrt(2*pi)) * x^{-3/2} (1+b^2 x)
exp(-b^2 x/2), infinite activity). ``no_jumps`` is the degenerate family used
for closed-form oracles.

All samplers draw the exact terminal law. The IG-OU infinite-activity part is
realized as exact inverse-Gaussian increments on an internal subgrid, so only
jump *timing* carries an O(h) bias there.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.integrate import quad

_SQRT_2PI = np.sqrt(2.0 * np.pi)


class Family(str, Enum):
    GAMMA_OU = "gamma_ou"
    IG_OU = "ig_ou"
    NO_JUMPS = "no_jumps"


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual estimate {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class SubordinatorSpec:
    """Parameterization of the driving subordinator's jump measure.

    Parameters
    ----------
    family:
        One of :class:`Family`. For ``no_jumps`` the shape parameters must be
        absent.
    a:
        Positive shape parameter (jump intensity scale).
    b:
        Positive rate/scale parameter (controls the exponential tail).
    """

    family: Family
    a: Optional[float] = None
    b: Optional[float] = None

    def __post_init__(self):
        family = Family(self.family)
        object.__setattr__(self, "family", family)
        if family is Family.NO_JUMPS:
            if self.a is not None or self.b is not None:
                raise ValueError("no_jumps family takes no shape parameters")
            return
        if self.a is None or self.b is None:
            raise ValueError(f"{family.value} requires parameters a and b")
        if not (self.a > 0.0 and self.b > 0.0):
            raise ValueError(f"{family.value} requires a > 0 and b > 0")

    @classmethod
    def gamma_ou(cls, a: float, b: float) -> "SubordinatorSpec":
        return cls(Family.GAMMA_OU, float(a), float(b))

    @classmethod
    def ig_ou(cls, a: float, b: float) -> "SubordinatorSpec":
        return cls(Family.IG_OU, float(a), float(b))

    @classmethod
    def no_jumps(cls) -> "SubordinatorSpec":
        return cls(Family.NO_JUMPS)


@dataclass(frozen=True)
class JumpPath:
    """Realized jumps of a subordinator over [0, horizon].

    ``times`` are strictly increasing in (0, horizon]; ``sizes`` are the
    positive jump magnitudes. The terminal value of the path is
    ``sizes.sum()``.
    """

    horizon: float
    times: np.ndarray
    sizes: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        sizes = np.asarray(self.sizes, dtype=float)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "sizes", sizes)
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if times.shape != sizes.shape or times.ndim != 1:
            raise ValueError("times and sizes must be 1-d arrays of equal length")
        if times.size:
            if times[0] <= 0.0 or times[-1] > self.horizon:
                raise ValueError("jump times must lie in (0, horizon]")
            if np.any(np.diff(times) <= 0.0):
                raise ValueError("jump times must be strictly increasing")
            if np.any(sizes <= 0.0) or not np.all(np.isfinite(sizes)):
                raise ValueError("jump sizes must be positive and finite")

    @property
    def n_jumps(self) -> int:
        return int(self.times.size)

    @property
    def terminal(self) -> float:
        return float(self.sizes.sum())

    def scaled(self, time_factor: float) -> "JumpPath":
        """Rescale the time axis (sizes unchanged)."""
        return JumpPath(self.horizon * time_factor, self.times * time_factor, self.sizes)


@dataclass(frozen=True)
class FlatJumps:
    """Jumps of ``n_paths`` independent subordinator paths, flattened.

    Entries are sorted by (path_index, time). Used by the vectorized engines;
    :meth:`path` extracts a single :class:`JumpPath`.
    """

    n_paths: int
    horizon: float
    path_index: np.ndarray
    times: np.ndarray
    sizes: np.ndarray
    counts: np.ndarray = field(repr=False)

    def path(self, i: int) -> JumpPath:
        sel = self.path_index == i
        t, x = self.times[sel], self.sizes[sel]
        t, x = _merge_ties(t, x)
        return JumpPath(self.horizon, t, x)

    def scaled(self, time_factor: float) -> "FlatJumps":
        return FlatJumps(self.n_paths, self.horizon * time_factor,
                         self.path_index, self.times * time_factor, self.sizes, self.counts)

    def terminal_per_path(self) -> np.ndarray:
        return np.bincount(self.path_index, weights=self.sizes, minlength=self.n_paths)


def _merge_ties(times: np.ndarray, sizes: np.ndarray):
    # Identical jump times (possible when compound-Poisson and subgrid jumps
    # collide) merge exactly: the OU solution is additive in jump sizes.
    if times.size < 2 or np.all(np.diff(times) > 0.0):
        return times, sizes
    uniq, inverse = np.unique(times, return_inverse=True)
    merged = np.bincount(inverse, weights=sizes)
    return uniq, merged


def _require_jump_family(spec: SubordinatorSpec) -> None:
    if spec.family is Family.NO_JUMPS:
        raise ValueError("operation requires a jump family (no_jumps unsupported)")


def levy_density(spec: SubordinatorSpec, x) -> np.ndarray | float:
    """Density of the subordinator's Levy measure at x > 0."""
    _require_jump_family(spec)
    x_arr = np.asarray(x, dtype=float)
    if np.any(x_arr <= 0.0):
        raise ValueError("levy_density requires x > 0")
    a, b = spec.a, spec.b
    if spec.family is Family.GAMMA_OU:
        out = a * b * np.exp(-b * x_arr)
    else:
        out = a / (2.0 * _SQRT_2PI) * x_arr ** -1.5 * (1.0 + b * b * x_arr) * np.exp(-0.5 * b * b * x_arr)
    return out if isinstance(x, np.ndarray) else float(out)


_QUAD_ABS_TOL = 1e-10
_QUAD_REL_TOL = 1e-8


def _quad_split(integrand, what: str) -> float:
    """Adaptive quadrature of ``integrand`` over (0, inf), split at x = 1.

    The split isolates the integrable endpoint singularity at 0 from the
    exponential tail, which QUADPACK otherwise balances poorly.
    """
    near, err_near = quad(integrand, 0.0, 1.0, epsabs=_QUAD_ABS_TOL, epsrel=_QUAD_REL_TOL, limit=200)
    far, err_far = quad(integrand, 1.0, np.inf, epsabs=_QUAD_ABS_TOL, epsrel=_QUAD_REL_TOL, limit=200)
    residual = err_near + err_far
    scale = max(1.0, abs(near) + abs(far))
    if not np.isfinite(near + far) or residual > 1e-6 * scale:
        raise QuadratureError(f"quadrature for {what} did not converge", residual)
    return near + far


def laplace_exponent(spec: SubordinatorSpec, u: float) -> float:
    """Laplace exponent phi(u) = int (e^{-u x} - 1) nu(dx), so E e^{-u H_t} = e^{t phi(u)}."""
    if u < 0.0:
        raise ValueError("laplace_exponent requires u >= 0")
    if u == 0.0 or spec.family is Family.NO_JUMPS:
        return 0.0
    a, b = spec.a, spec.b
    if spec.family is Family.GAMMA_OU:
        return -a * u / (b + u)

    def integrand(x: float) -> float:
        # e^{-ux} - 1 times the IG-OU density, with the exponentials combined
        # so the tail never overflows.
        c = a / (2.0 * _SQRT_2PI) * x ** -1.5 * (1.0 + b * b * x)
        return c * (np.exp(-(u + 0.5 * b * b) * x) - np.exp(-0.5 * b * b * x))

    return _quad_split(integrand, f"laplace exponent u={u:g}")


@dataclass(frozen=True)
class ExpMomentResult:
    finite: bool
    value: float


def exp_moment_bound(spec: SubordinatorSpec) -> float:
    """Supremum of exponents kappa with int_1^inf e^{kappa x} nu(dx) < inf."""
    if spec.family is Family.NO_JUMPS:
        return np.inf
    if spec.family is Family.GAMMA_OU:
        return spec.b
    return 0.5 * spec.b * spec.b


def exp_moment(spec: SubordinatorSpec, kappa: float) -> ExpMomentResult:
    """Evaluate int_0^inf (e^{kappa x} - 1) nu(dx), flagging divergence.

    Finiteness is strict at the family boundary: the integral diverges at
    kappa = b (Gamma-OU) and kappa = b^2/2 (IG-OU).
    """
    if kappa <= 0.0:
        raise ValueError("exp_moment requires kappa > 0")
    if spec.family is Family.NO_JUMPS:
        return ExpMomentResult(True, 0.0)
    if kappa >= exp_moment_bound(spec):
        return ExpMomentResult(False, np.inf)
    a, b = spec.a, spec.b
    if spec.family is Family.GAMMA_OU:
        return ExpMomentResult(True, a * kappa / (b - kappa))

    def integrand(x: float) -> float:
        c = a / (2.0 * _SQRT_2PI) * x ** -1.5 * (1.0 + b * b * x)
        return c * (np.exp((kappa - 0.5 * b * b) * x) - np.exp(-0.5 * b * b * x))

    return ExpMomentResult(True, _quad_split(integrand, f"exponential moment kappa={kappa:g}"))


DEFAULT_IG_SUBGRID = 256


def sample_jumps_batch(spec: SubordinatorSpec, horizon: float, n: int,
                       rng: np.random.Generator, ig_subgrid: int = DEFAULT_IG_SUBGRID) -> FlatJumps:
    """Sample the jumps of ``n`` independent subordinator paths over [0, horizon].

    Gamma-OU is exact: Poisson(a * horizon) jumps placed uniformly with
    Exponential(b) sizes. IG-OU combines an exact compound-Poisson part
    (rate a*b/2, sizes v^2/b^2 with v standard normal) with exact
    inverse-Gaussian increments on ``ig_subgrid`` internal subintervals, each
    recorded as one jump at its subinterval's right endpoint.

    Draw order is fixed (counts, times, sizes, then subgrid increments), so a
    given generator state yields identical jumps regardless of downstream use.
    """
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if n <= 0:
        raise ValueError("n must be positive")
    if spec.family is Family.NO_JUMPS:
        empty = np.empty(0)
        return FlatJumps(n, horizon, np.empty(0, dtype=np.int64), empty, empty,
                         np.zeros(n, dtype=np.int64))

    a, b = spec.a, spec.b
    if spec.family is Family.GAMMA_OU:
        counts = rng.poisson(a * horizon, size=n)
        total = int(counts.sum())
        pidx = np.repeat(np.arange(n, dtype=np.int64), counts)
        times = rng.uniform(0.0, horizon, size=total)
        sizes = rng.exponential(scale=1.0 / b, size=total)
    else:
        cp_counts = rng.poisson(0.5 * a * b * horizon, size=n)
        cp_total = int(cp_counts.sum())
        cp_pidx = np.repeat(np.arange(n, dtype=np.int64), cp_counts)
        cp_times = rng.uniform(0.0, horizon, size=cp_total)
        cp_sizes = rng.standard_normal(cp_total) ** 2 / (b * b)

        h = horizon / ig_subgrid
        delta = 0.5 * a * h
        incs = rng.wald(delta / b, delta * delta, size=(n, ig_subgrid))
        sub_times = np.tile((np.arange(ig_subgrid) + 1.0) * h, n)
        sub_pidx = np.repeat(np.arange(n, dtype=np.int64), ig_subgrid)

        pidx = np.concatenate([cp_pidx, sub_pidx])
        times = np.concatenate([cp_times, sub_times])
        sizes = np.concatenate([cp_sizes, incs.ravel()])
        counts = cp_counts + ig_subgrid

    order = np.lexsort((times, pidx))
    times = np.clip(times[order], np.finfo(float).tiny, horizon)
    return FlatJumps(n, horizon, pidx[order], times, sizes[order], counts)


def sample_path(spec: SubordinatorSpec, horizon: float, rng: np.random.Generator,
                ig_subgrid: int = DEFAULT_IG_SUBGRID) -> JumpPath:
    """Sample one subordinator path; see :func:`sample_jumps_batch`."""
    return sample_jumps_batch(spec, horizon, 1, rng, ig_subgrid).path(0)
