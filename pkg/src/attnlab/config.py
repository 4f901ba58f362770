"""Experiment configuration: TOML loading, validation, and model building."""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ._expr import compile_log_density
from .densities import (CustomDensity, DensityModel, ExpBilinearDensity,
                        UniformDensity, VonMisesFisherDensity)
from .errors import ConfigError
from .limits import DEFAULT_HI, DEFAULT_LO
from .rope import CorrelatedTokenModel, RopeConfig, geometric_frequencies
from .sphere import normalize

EXPERIMENTS = ("heatmap", "profile", "critical", "supercritical", "field",
               "suboutput", "residual", "rope", "predict")


class ExprDensity(CustomDensity):
    """Custom density defined by a config expression; picklable for worker pools."""

    def __init__(self, expr: str, envelope_bound: float, d: int,
                 normalization=None, normalization_stderr=None):
        super().__init__(compile_log_density(expr, d), envelope_bound, d,
                         normalization=normalization,
                         normalization_stderr=normalization_stderr,
                         label=expr)
        self.expr = expr

    def __reduce__(self):
        return (ExprDensity, (self.expr, self.envelope_bound, self.d,
                              self.normalization, self.normalization_stderr))


@dataclass
class ExperimentConfig:
    """Resolved experiment description; ``describe()`` feeds the CSV headers."""

    experiment: str
    d: int
    trials: int
    master_seed: int
    workers: int
    output_dir: str
    n: int | None = None
    beta_gamma: float = 1.0
    beta_exponent: float | None = None
    density: dict = field(default_factory=lambda: {"variant": "uniform"})
    query: object = None            # vector, or "grid(R)" for the field run
    value_matrix: object = "identity"
    lo: float = DEFAULT_LO
    hi: float = DEFAULT_HI
    n_grid: list | None = None
    beta_grid: list | None = None
    extras: dict = field(default_factory=dict)
    rope_frequencies: list | None = None
    correlation: dict | None = None

    def beta_for(self, n: int) -> float:
        if self.beta_exponent is None:
            raise ConfigError("this experiment needs a [beta_schedule] block")
        return self.beta_gamma * float(n) ** self.beta_exponent

    def query_vector(self) -> np.ndarray:
        if isinstance(self.query, str):
            raise ConfigError(f"experiment {self.experiment!r} needs an explicit query vector")
        if self.query is None:
            q = np.zeros(self.d)
            q[0] = 1.0
            return q
        return normalize(np.asarray(self.query, dtype=float))

    def value_matrix_array(self) -> np.ndarray:
        if isinstance(self.value_matrix, str):
            if self.value_matrix != "identity":
                raise ConfigError(f"unknown value_matrix {self.value_matrix!r}")
            return np.eye(self.d)
        V = np.asarray(self.value_matrix, dtype=float)
        if V.shape != (self.d, self.d):
            raise ConfigError(f"value_matrix shape {V.shape} does not match d={self.d}")
        return V

    def describe(self) -> dict:
        # worker count and output paths are execution details, not part of
        # the experiment identity: outputs must not depend on them
        out = {
            "experiment": self.experiment, "d": self.d, "trials": self.trials,
            "master_seed": self.master_seed,
            "n": self.n, "beta_gamma": self.beta_gamma,
            "beta_exponent": self.beta_exponent, "density": self.density,
            "query": (self.query if isinstance(self.query, str)
                      else (list(map(float, self.query)) if self.query is not None else None)),
            "value_matrix": (self.value_matrix if isinstance(self.value_matrix, str)
                             else [list(map(float, r)) for r in self.value_matrix]),
            "regime_thresholds": {"lo": self.lo, "hi": self.hi},
            "n_grid": self.n_grid, "beta_grid": self.beta_grid,
            "extras": self.extras,
            "rope_frequencies": self.rope_frequencies,
            "correlation": (None if self.correlation is None
                            else {k: v for k, v in self.correlation.items()}),
        }
        return out


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _log_grid(spec: dict, name: str) -> list:
    if "values" in spec:
        vals = [float(v) for v in spec["values"]]
        _require(len(vals) >= 1 and all(v >= 0 for v in vals),
                 f"grid.{name} values must be nonnegative")
        return vals
    for key in ("min", "max", "points"):
        _require(key in spec, f"grid.{name} needs '{key}' (or an explicit 'values' list)")
    lo, hi, pts = float(spec["min"]), float(spec["max"]), int(spec["points"])
    _require(0 < lo < hi and pts >= 2, f"grid.{name} must satisfy 0 < min < max, points >= 2")
    return list(np.geomspace(lo, hi, pts))


def parse_config(data: dict, overrides: dict | None = None) -> ExperimentConfig:
    data = dict(data)
    if overrides:
        data.update({k: v for k, v in overrides.items() if v is not None})

    _require("experiment" in data, "missing 'experiment'")
    experiment = data["experiment"]
    _require(experiment in EXPERIMENTS, f"unknown experiment {experiment!r}; choose from {EXPERIMENTS}")
    _require("d" in data, "missing 'd'")
    d = int(data["d"])
    _require(d >= 2, "need d >= 2")
    trials = int(data.get("trials", 1))
    _require(trials >= 1, "need trials >= 1")
    master_seed = int(data.get("master_seed", 0))
    workers = int(data.get("workers", 1))
    _require(workers >= 1, "need workers >= 1")

    n = data.get("n")
    if n is not None:
        n = int(n)
        _require(n >= 1, "need n >= 1")

    beta_gamma, beta_exponent = 1.0, None
    if "beta_schedule" in data:
        sched = data["beta_schedule"]
        _require(isinstance(sched, dict), "[beta_schedule] must be a table")
        beta_gamma = float(sched.get("gamma", 1.0))
        _require(beta_gamma > 0, "beta_schedule.gamma must be > 0")
        _require("exponent" in sched, "beta_schedule needs 'exponent'")
        beta_exponent = float(sched["exponent"])

    density = data.get("density", {"variant": "uniform"})
    _require(isinstance(density, dict) and "variant" in density,
             "[density] must be a table with a 'variant'")

    n_grid = beta_grid = None
    if "grid" in data:
        grid = data["grid"]
        if "n" in grid:
            n_grid = [int(round(v)) for v in _log_grid(grid["n"], "n")]
        if "beta" in grid:
            beta_grid = _log_grid(grid["beta"], "beta")

    thresholds = data.get("regime_thresholds", {})
    lo = float(thresholds.get("lo", DEFAULT_LO))
    hi = float(thresholds.get("hi", DEFAULT_HI))
    _require(lo < hi, "regime_thresholds must satisfy lo < hi")

    rope_frequencies = None
    if "rope" in data:
        block = data["rope"]
        if "frequencies" in block:
            rope_frequencies = [float(v) for v in block["frequencies"]]
        elif block.get("preset") == "geometric":
            _require("base" in block and "pairs" in block,
                     "geometric rope preset needs 'base' and 'pairs'")
            rope_frequencies = list(geometric_frequencies(float(block["base"]), int(block["pairs"])))
        else:
            raise ConfigError("[rope] needs 'frequencies' or preset = 'geometric'")
        _require(2 * len(rope_frequencies) <= d, "rope rotated dimension 2L must be <= d")

    correlation = None
    if "correlation" in data:
        block = dict(data["correlation"])
        _require("m" in block and "weights" in block, "[correlation] needs 'm' and 'weights'")
        block["m"] = int(block["m"])
        block["weights"] = [float(w) for w in block["weights"]]
        _require(len(block["weights"]) == block["m"] + 1,
                 "correlation.weights must have m + 1 entries")
        block.setdefault("base", {"variant": "uniform"})
        correlation = block

    extras = {k: data[k] for k in ("profile", "field", "residual", "critical", "sampler")
              if k in data}

    cfg = ExperimentConfig(
        experiment=experiment, d=d, trials=trials, master_seed=master_seed,
        workers=workers, output_dir=str(data.get("output_dir", "out")),
        n=n, beta_gamma=beta_gamma, beta_exponent=beta_exponent,
        density=density, query=data.get("query"),
        value_matrix=data.get("value_matrix", "identity"),
        lo=lo, hi=hi, n_grid=n_grid, beta_grid=beta_grid, extras=extras,
        rope_frequencies=rope_frequencies, correlation=correlation,
    )
    _validate_experiment_needs(cfg)
    return cfg


def _validate_experiment_needs(cfg: ExperimentConfig) -> None:
    exp = cfg.experiment
    if exp == "heatmap":
        _require(cfg.n_grid is not None and cfg.beta_grid is not None,
                 "heatmap needs [grid.n] and [grid.beta]")
    elif exp == "predict":
        _require(cfg.n_grid is not None and (cfg.beta_grid is not None
                                             or cfg.beta_exponent is not None),
                 "predict needs [grid.n] and either [grid.beta] or [beta_schedule]")
    elif exp == "field":
        _require(cfg.d == 3, "the output-field experiment is defined for d = 3 only")
        _require(isinstance(cfg.query, str) and cfg.query.startswith("grid("),
                 "field needs query = 'grid(resolution)'")
        _require(cfg.n is not None, "field needs 'n'")
    else:
        _require(cfg.n is not None, f"{exp} needs 'n'")
        _require(cfg.beta_exponent is not None, f"{exp} needs a [beta_schedule]")
    if exp == "rope":
        _require(cfg.rope_frequencies is not None, "rope experiment needs a [rope] block")
        _require(cfg.correlation is not None, "rope experiment needs a [correlation] block")


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
    return parse_config(data, overrides)


def build_density(spec: dict, d: int, seed: int = 0) -> DensityModel:
    """Instantiate the density block of a config."""
    variant = spec["variant"]
    if variant == "uniform":
        return UniformDensity(d)
    if variant == "vmf":
        _require("mean" in spec and "concentration" in spec,
                 "vmf density needs 'mean' and 'concentration'")
        mean = np.asarray(spec["mean"], dtype=float)
        _require(mean.size == d, f"vmf mean has dimension {mean.size}, expected {d}")
        return VonMisesFisherDensity(mean, float(spec["concentration"]))
    if variant == "exp_bilinear":
        _require(d == 3, "exp_bilinear is defined on S^2 (d = 3)")
        return ExpBilinearDensity()
    if variant == "custom":
        _require("log_expr" in spec and "envelope" in spec,
                 "custom density needs 'log_expr' and 'envelope'")
        model = ExprDensity(str(spec["log_expr"]), float(spec["envelope"]), d)
        samples = int(spec.get("normalization_samples", 10**6))
        from .densities import estimate_normalization
        value, stderr = estimate_normalization(model, samples, np.random.default_rng(seed))
        return ExprDensity(model.expr, model.envelope_bound, d,
                           normalization=value, normalization_stderr=stderr)
    raise ConfigError(f"unknown density variant {variant!r}")


def build_correlation(block: dict, d: int) -> CorrelatedTokenModel:
    base = build_density(block.get("base", {"variant": "uniform"}), d)
    return CorrelatedTokenModel(dependence_range=block["m"],
                                mixer=np.asarray(block["weights"], dtype=float),
                                base=base)


def build_rope(cfg: ExperimentConfig) -> RopeConfig:
    if cfg.rope_frequencies is None:
        raise ConfigError("no [rope] block present")
    return RopeConfig(frequencies=np.asarray(cfg.rope_frequencies, dtype=float))


def parse_grid_query(query: str) -> int:
    _require(query.startswith("grid(") and query.endswith(")"),
             f"bad query spec {query!r}; expected 'grid(resolution)'")
    try:
        res = int(query[5:-1])
    except ValueError as exc:
        raise ConfigError(f"bad grid resolution in {query!r}") from exc
    _require(res >= 2, "grid resolution must be >= 2")
    return res
