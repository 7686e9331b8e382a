"""JSON experiment configuration. Unknown keys are rejected."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

METHODS = (
    "random", "confidence", "margin", "entropy", "coreset", "maxherding", "uherding",
    "weighted_kmeans", "alfamix_uherding", "badge_medoids",
)
INITIAL_STRATEGIES = ("maxherding", "random", "random_per_class")


class ConfigError(ValueError):
    pass


@dataclass
class DataSpec:
    kind: str = "halfmoons"
    n: int = 400
    noise: float = 0.1
    centers: list | None = None
    per_center: int = 50
    std: float = 1.0
    seed: int | None = None
    features: str | None = None
    labels: str | None = None

    def validate(self, where: str, base: Path | None = None) -> None:
        if self.kind not in ("halfmoons", "blobs", "files"):
            raise ConfigError(f"{where}.kind must be halfmoons, blobs or files")
        if self.kind == "files":
            if not self.features or not self.labels:
                raise ConfigError(f"{where}: kind 'files' needs both 'features' and 'labels'")
            for key in ("features", "labels"):
                p = _resolve(getattr(self, key), base)
                if not p.exists():
                    raise ConfigError(f"{where}.{key}: file {p} does not exist")
                setattr(self, key, str(p))
        if self.kind == "blobs" and not self.centers:
            raise ConfigError(f"{where}: kind 'blobs' needs 'centers'")


@dataclass
class ScheduleSpec:
    budgets: list = field(default_factory=lambda: [2] + [4] * 9)
    seed: int = 0


@dataclass
class InitialSpec:
    strategy: str = "maxherding"


@dataclass
class KernelSpec:
    family: str = "gaussian"
    sigma_init: float | None = None
    normalize: bool = False
    adapt_radius: bool | None = None


@dataclass
class UncertaintySpec:
    measure: str = "margin"
    tau_grid_min: float = 0.01
    tau_grid_max: float = 100.0
    tau_grid_count: int = 21
    ece_bins: int = 15
    val_fraction: float = 0.1
    calibrate: bool | None = None
    model_source: str = "train"


@dataclass
class CoverageSpec:
    eval_set: str = "pool"
    lazy: bool = False


@dataclass
class ModelSpec:
    poly_degree: int = 5
    l2: float = 1e-3
    lr: float = 0.5
    max_epochs: int = 5000
    tol: float = 1e-6


@dataclass
class WeightedKMeansParams:
    keep: int | None = None
    keep_fraction: float = 0.1


@dataclass
class AlfaMixParams:
    alpha: float = 0.2
    use_grid: bool = False


@dataclass
class MethodParams:
    weighted_kmeans: WeightedKMeansParams = field(default_factory=WeightedKMeansParams)
    alfamix_uherding: AlfaMixParams = field(default_factory=AlfaMixParams)


@dataclass
class ExperimentConfig:
    method: str = "uherding"
    data: DataSpec = field(default_factory=DataSpec)
    test: DataSpec = field(default_factory=lambda: DataSpec(n=1000))
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    initial: InitialSpec = field(default_factory=InitialSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    uncertainty: UncertaintySpec = field(default_factory=UncertaintySpec)
    coverage: CoverageSpec = field(default_factory=CoverageSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    method_params: MethodParams = field(default_factory=MethodParams)
    output: str | None = None

    def validate(self, base: Path | None = None) -> "ExperimentConfig":
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}, got {self.method!r}")
        self.data.validate("data", base)
        self.test.validate("test", base)
        if not self.schedule.budgets or any(int(b) < 1 for b in self.schedule.budgets):
            raise ConfigError("schedule.budgets must be a non-empty list of positive integers")
        if self.initial.strategy not in INITIAL_STRATEGIES:
            raise ConfigError(f"initial.strategy must be one of {INITIAL_STRATEGIES}")
        if self.kernel.family != "gaussian":
            raise ConfigError("kernel.family must be 'gaussian'")
        if self.kernel.sigma_init is not None and not self.kernel.sigma_init > 0:
            raise ConfigError("kernel.sigma_init must be positive")
        u = self.uncertainty
        if u.measure not in ("margin", "entropy", "confidence", "constant"):
            raise ConfigError("uncertainty.measure must be margin, entropy, confidence or constant")
        if not 0 < u.tau_grid_min <= u.tau_grid_max or u.tau_grid_count < 1:
            raise ConfigError("invalid temperature grid")
        if u.ece_bins < 1:
            raise ConfigError("uncertainty.ece_bins must be >= 1")
        if not 0 < u.val_fraction < 1:
            raise ConfigError("uncertainty.val_fraction must lie in (0, 1)")
        if u.model_source not in ("full", "train"):
            raise ConfigError("uncertainty.model_source must be 'full' or 'train'")
        if self.coverage.eval_set not in ("pool", "unlabeled"):
            raise ConfigError("coverage.eval_set must be 'pool' or 'unlabeled'")
        m = self.model
        if m.poly_degree < 1 or m.l2 < 0 or m.lr <= 0 or m.max_epochs < 0 or m.tol <= 0:
            raise ConfigError("invalid model hyperparameters")
        a = self.method_params.alfamix_uherding.alpha
        if not 0 <= a < 1:
            raise ConfigError("method_params.alfamix_uherding.alpha must lie in [0, 1)")
        return self


def _resolve(path: str, base: Path | None) -> Path:
    p = Path(path)
    return p if p.is_absolute() or base is None else base / p


def _build(cls, data: Any, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be a JSON object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where or 'config'}: {', '.join(unknown)}")
    kwargs = {}
    for key, value in data.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{where}.{key}" if where else key)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_from_dict(data: dict, base: Path | None = None) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "").validate(base)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, path.parent)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)
