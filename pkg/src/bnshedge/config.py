"""Strict experiment configuration: JSON in, validated dataclasses out.

Unknown fields are rejected with full field paths so hedging runs stay
auditable; model parameters have no silent defaults, run parameters have
documented ones (seed is always required). Configs round-trip losslessly
through :meth:`ExperimentConfig.to_dict`.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional

from .hedging import EstimatorMode, OptionKind, OptionSpec
from .model import BnsParams, MeasureKind
from .subordinator import Family, SubordinatorSpec


class ConfigError(ValueError):
    """Configuration parse/validation failure; message carries the field path."""


def _mapping(obj: Any, path: str) -> Dict[str, Any]:
    if not isinstance(obj, dict):
        raise ConfigError(f"{path}: expected an object")
    return obj


def _no_extras(d: Dict[str, Any], allowed, path: str) -> None:
    extras = set(d) - set(allowed)
    if extras:
        name = sorted(extras)[0]
        raise ConfigError(f"{path}.{name}: unknown field")


def _get(d: Dict[str, Any], key: str, path: str, required: bool = True, default=None):
    if key not in d:
        if required:
            raise ConfigError(f"{path}.{key}: required field is missing")
        return default
    return d[key]


def _as_float(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number")
    return float(value)


def _as_int(value: Any, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer")
    return value


def _as_str(value: Any, path: str) -> str:
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


def _parse_subordinator(obj: Any, path: str) -> SubordinatorSpec:
    d = _mapping(obj, path)
    family = _as_str(_get(d, "family", path), f"{path}.family")
    try:
        fam = Family(family)
    except ValueError:
        raise ConfigError(f"{path}.family: unknown family {family!r}") from None
    if fam is Family.NO_JUMPS:
        _no_extras(d, {"family"}, path)
        return SubordinatorSpec.no_jumps()
    _no_extras(d, {"family", "a", "b"}, path)
    a = _as_float(_get(d, "a", path), f"{path}.a")
    b = _as_float(_get(d, "b", path), f"{path}.b")
    try:
        return SubordinatorSpec(fam, a, b)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_model(obj: Any, path: str) -> BnsParams:
    d = _mapping(obj, path)
    _no_extras(d, {"s0", "mu", "beta", "lambda", "sigma0_sq", "maturity", "subordinator"}, path)
    try:
        return BnsParams(
            s0=_as_float(_get(d, "s0", path), f"{path}.s0"),
            mu=_as_float(_get(d, "mu", path), f"{path}.mu"),
            beta=_as_float(_get(d, "beta", path), f"{path}.beta"),
            lam=_as_float(_get(d, "lambda", path), f"{path}.lambda"),
            sigma0_sq=_as_float(_get(d, "sigma0_sq", path), f"{path}.sigma0_sq"),
            maturity=_as_float(_get(d, "maturity", path), f"{path}.maturity"),
            subordinator=_parse_subordinator(_get(d, "subordinator", path), f"{path}.subordinator"),
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_option(obj: Any, path: str) -> OptionSpec:
    d = _mapping(obj, path)
    _no_extras(d, {"kind", "strike"}, path)
    kind = _as_str(_get(d, "kind", path), f"{path}.kind")
    try:
        return OptionSpec(OptionKind(kind), _as_float(_get(d, "strike", path), f"{path}.strike"))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


_METHODS = ("terminal", "nested", "regression", "oracle")
_MODES = tuple(m.value for m in EstimatorMode)


@dataclass(frozen=True)
class RunSettings:
    """Run parameters. Defaults: n_paths=100000, n_inner=1000, grid_steps=64,
    method='terminal', measure='mmm', basis_degree=2, mode='sampled',
    report_paths=0. The seed has no default."""

    seed: int
    n_paths: int = 100_000
    n_inner: int = 1000
    grid_steps: int = 64
    method: str = "terminal"
    measure: MeasureKind = MeasureKind.MMM
    basis_degree: int = 2
    mode: EstimatorMode = EstimatorMode.SAMPLED
    n_train: Optional[int] = None
    report_paths: int = 0


def _parse_run(obj: Any, path: str) -> RunSettings:
    d = _mapping(obj, path)
    allowed = {"seed", "n_paths", "n_inner", "grid_steps", "method", "measure",
               "basis_degree", "mode", "n_train", "report_paths"}
    _no_extras(d, allowed, path)
    seed = _as_int(_get(d, "seed", path), f"{path}.seed")
    if seed < 0:
        raise ConfigError(f"{path}.seed: must be nonnegative")
    defaults = RunSettings(seed=seed)

    def opt_int(key: str, minimum: int) -> int:
        if key not in d:
            return getattr(defaults, key)
        value = _as_int(d[key], f"{path}.{key}")
        if value < minimum:
            raise ConfigError(f"{path}.{key}: must be >= {minimum}")
        return value

    method = _as_str(d.get("method", defaults.method), f"{path}.method")
    if method not in _METHODS:
        raise ConfigError(f"{path}.method: expected one of {', '.join(_METHODS)}")
    measure = _as_str(d.get("measure", defaults.measure.value), f"{path}.measure")
    try:
        measure_kind = MeasureKind(measure)
    except ValueError:
        raise ConfigError(f"{path}.measure: expected 'physical' or 'mmm'") from None
    mode = _as_str(d.get("mode", defaults.mode.value), f"{path}.mode")
    if mode not in _MODES:
        raise ConfigError(f"{path}.mode: expected one of {', '.join(_MODES)}")
    n_train = None
    if d.get("n_train") is not None:
        n_train = _as_int(d["n_train"], f"{path}.n_train")
        if n_train < 2:
            raise ConfigError(f"{path}.n_train: must be >= 2")
    return RunSettings(
        seed=seed,
        n_paths=opt_int("n_paths", 2),
        n_inner=opt_int("n_inner", 2),
        grid_steps=opt_int("grid_steps", 1),
        method=method,
        measure=measure_kind,
        basis_degree=opt_int("basis_degree", 1),
        mode=EstimatorMode(mode),
        n_train=n_train,
        report_paths=opt_int("report_paths", 0),
    )


@dataclass(frozen=True)
class OutputSettings:
    format: str = "csv"
    path: Optional[str] = None


def _parse_output(obj: Any, path: str) -> OutputSettings:
    d = _mapping(obj, path)
    _no_extras(d, {"format", "path"}, path)
    fmt = _as_str(d.get("format", "csv"), f"{path}.format")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"{path}.format: expected 'csv' or 'json'")
    out_path = d.get("path")
    if out_path is not None:
        out_path = _as_str(out_path, f"{path}.path")
    return OutputSettings(format=fmt, path=out_path)


@dataclass(frozen=True)
class ExperimentConfig:
    model: BnsParams
    run: RunSettings
    option: Optional[OptionSpec] = None
    output: OutputSettings = field(default_factory=OutputSettings)

    @classmethod
    def from_dict(cls, obj: Any) -> "ExperimentConfig":
        d = _mapping(obj, "config")
        _no_extras(d, {"model", "option", "run", "output"}, "config")
        model = _parse_model(_get(d, "model", "config"), "config.model")
        run = _parse_run(_get(d, "run", "config"), "config.run")
        option = None
        if "option" in d:
            option = _parse_option(d["option"], "config.option")
        output = OutputSettings()
        if "output" in d:
            output = _parse_output(d["output"], "config.output")
        return cls(model=model, run=run, option=option, output=output)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config: invalid JSON ({exc})") from None
        return cls.from_dict(obj)

    def to_dict(self) -> Dict[str, Any]:
        sub: Dict[str, Any] = {"family": self.model.subordinator.family.value}
        if self.model.subordinator.family is not Family.NO_JUMPS:
            sub["a"] = self.model.subordinator.a
            sub["b"] = self.model.subordinator.b
        out: Dict[str, Any] = {
            "model": {
                "s0": self.model.s0,
                "mu": self.model.mu,
                "beta": self.model.beta,
                "lambda": self.model.lam,
                "sigma0_sq": self.model.sigma0_sq,
                "maturity": self.model.maturity,
                "subordinator": sub,
            },
            "run": {
                "seed": self.run.seed,
                "n_paths": self.run.n_paths,
                "n_inner": self.run.n_inner,
                "grid_steps": self.run.grid_steps,
                "method": self.run.method,
                "measure": self.run.measure.value,
                "basis_degree": self.run.basis_degree,
                "mode": self.run.mode.value,
                "n_train": self.run.n_train,
                "report_paths": self.run.report_paths,
            },
            "output": {"format": self.output.format, "path": self.output.path},
        }
        if self.option is not None:
            out["option"] = {"kind": self.option.kind.value, "strike": self.option.strike}
        return out

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_seed(self, seed: int) -> "ExperimentConfig":
        run = RunSettings(**{**asdict(self.run), "seed": seed})
        return ExperimentConfig(self.model, run, self.option, self.output)


@dataclass
class RunManifest:
    """Provenance record written next to backtest outputs.

    The result files themselves are byte-stable for a fixed (config, seed,
    engine version); the manifest additionally records wall time, which is
    not.
    """

    config_hash: str
    engine_version: str
    seed: int
    wall_time_s: float
    checks: Dict[str, bool]

    def to_json(self) -> str:
        return json.dumps(
            {"config_hash": self.config_hash, "engine_version": self.engine_version,
             "seed": self.seed, "wall_time_s": self.wall_time_s, "checks": self.checks},
            sort_keys=True, indent=2) + "\n"
