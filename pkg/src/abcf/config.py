"""Validated run configuration shared by the benchmark harness and the CLI."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .baselines import DEFAULT_RIDGE_LAMBDAS
from .posterior import VARIANCE_METHODS

DEFAULT_QUANTILES = (0.025, 0.05, 0.95, 0.975)
METHOD_NAMES = ("rf", "reject", "loclinear", "ridge", "exact")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ModelSpec(_Strict):
    kind: Literal["normal", "zellner"] = "normal"
    n: int | None = Field(None, ge=2)
    noise_dims: int = Field(50, ge=0)
    # extra U[0,1] columns appended after simulation, for robustness checks
    extra_noise: int = Field(0, ge=0)

    @property
    def sample_size(self) -> int:
        if self.n is not None:
            return self.n
        return 10 if self.kind == "normal" else 100

    @property
    def param_names(self) -> tuple[str, ...]:
        return ("theta1", "theta2") if self.kind == "normal" else ("beta1", "beta2", "sigma2")


class SizeSpec(_Strict):
    train: int = Field(10_000, ge=2)
    test: int = Field(100, ge=1)


class ForestSpec(_Strict):
    trees: int = Field(500, ge=1)
    mtry: int | None = Field(None, ge=1)
    min_node_size: int = Field(5, ge=1)


class MethodSpec(_Strict):
    name: Literal["rf", "reject", "loclinear", "ridge", "exact"]
    tolerance: float | None = Field(None, gt=0.0, le=1.0)
    heteroscedastic: bool = True
    lambdas: tuple[float, ...] = DEFAULT_RIDGE_LAMBDAS

    @model_validator(mode="after")
    def _tolerance_matches_method(self):
        needs = self.name in ("reject", "loclinear", "ridge")
        if needs and self.tolerance is None:
            raise ValueError(f"method {self.name!r} needs a tolerance")
        if not needs and self.tolerance is not None:
            raise ValueError(f"method {self.name!r} takes no tolerance")
        return self

    @property
    def tolerance_label(self) -> str:
        return "NA" if self.tolerance is None else repr(self.tolerance)


def _default_methods() -> tuple[MethodSpec, ...]:
    return (
        MethodSpec(name="rf"),
        MethodSpec(name="reject", tolerance=0.01),
        MethodSpec(name="loclinear", tolerance=0.1),
        MethodSpec(name="ridge", tolerance=0.1),
    )


class RunConfig(_Strict):
    model: ModelSpec = ModelSpec()
    sizes: SizeSpec = SizeSpec()
    forest: ForestSpec = ForestSpec()
    methods: tuple[MethodSpec, ...] = Field(default_factory=_default_methods)
    targets: tuple[str, ...] | None = None
    transforms: dict[str, Literal["none", "log", "logit"]] | None = None
    bounds: dict[str, tuple[float, float]] = {}
    quantiles: tuple[float, ...] = DEFAULT_QUANTILES
    variance_methods: tuple[Literal["oob", "residual-forest", "cdf"], ...] = ("oob",)
    covariances: tuple[tuple[str, str], ...] | None = None
    truth: Literal["oracle", "raw"] = "oracle"
    seed: int = Field(0, ge=0)
    output_dir: str = "out"

    @field_validator("quantiles")
    @classmethod
    def _check_quantiles(cls, v):
        if not v or any(not 0.0 < a < 1.0 for a in v):
            raise ValueError("quantiles must lie in (0, 1)")
        if len(set(v)) != len(v):
            raise ValueError("quantiles must be distinct")
        return tuple(sorted(v))

    @field_validator("variance_methods")
    @classmethod
    def _check_variance_methods(cls, v):
        if not v or len(set(v)) != len(v):
            raise ValueError(f"variance_methods must be a non-empty subset of {VARIANCE_METHODS}")
        return v

    @model_validator(mode="after")
    def _check_names(self):
        params = self.model.param_names
        for name in self.targets or ():
            if name not in params:
                raise ValueError(f"unknown target {name!r}; model has {params}")
        for name in (self.transforms or {}):
            if name not in params:
                raise ValueError(f"transform given for unknown parameter {name!r}")
        for pair in self.covariances or ():
            for name in pair:
                if name not in params:
                    raise ValueError(f"covariance names unknown parameter {name!r}")
        return self

    def resolved(self) -> "RunConfig":
        """Copy with model-dependent defaults filled in."""
        zellner = self.model.kind == "zellner"
        update = {"model": self.model.model_copy(update={"n": self.model.sample_size})}
        if self.targets is None:
            update["targets"] = self.model.param_names
        if self.transforms is None:
            update["transforms"] = {"sigma2": "log"} if zellner else {"theta2": "log"}
        if self.covariances is None:
            update["covariances"] = (("beta1", "beta2"),) if zellner else ()
        return self.model_copy(update=update)

    def dump(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"

    def write_resolved(self, directory) -> Path:
        path = Path(directory) / "config.resolved.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.resolved().dump())
        return path


def load_config(path) -> RunConfig:
    return RunConfig.model_validate_json(Path(path).read_text())
