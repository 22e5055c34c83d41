from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from smident.errors import ConfigError
from smident.lti_sim import ContinuousTF, settling_time
from smident.polytope_lp import LPTolerances
from smident.sm_bounds import InflationConfig, ZeroTolerance


class ExperimentConfig(BaseModel):
    """Benchmark parameters; defaults reproduce the third-order benchmark experiment."""

    model_config = ConfigDict(extra="forbid")

    # system and data
    tf_num: list[float] = Field(default_factory=lambda: [160.0])
    tf_den: list[float] = Field(default_factory=lambda: [1.0, 10.8, 24.0, 160.0])
    data_path: Optional[str] = None
    ts: float = Field(default=0.1, gt=0)
    n_id: int = Field(default=1500, gt=0)
    n_val: int = Field(default=1500, gt=0)
    input_levels: list[float] = Field(default_factory=lambda: [-1.0, 0.0, 1.0])
    input_hold: float = Field(default=10.0, gt=0)
    dbar0: float = Field(default=0.1, ge=0)
    warmup: Optional[int] = Field(default=None, ge=0)
    seed: int = 2024

    # estimation
    o_init: int = Field(default=5, ge=1)
    alpha: float = 1.3
    gamma: float = 1.2
    p_max: int = Field(default=180, ge=2)
    dbar_grid: Optional[list[float]] = None
    dbar_grid_points: int = Field(default=40, ge=2)
    dbar_grid_low: float = Field(default=0.1, gt=0)
    dbar_grid_high: float = Field(default=2.0, gt=0)
    dbar_refine_step: float = Field(default=1e-3, gt=0)
    min_tail_fraction: float = Field(default=0.2, gt=0, lt=1)
    zero_tol_abs: float = Field(default=1e-8, gt=0)
    zero_tol_rel: float = Field(default=1e-6, gt=0)
    dbar: Optional[float] = Field(default=None, ge=0)
    order: Optional[int] = Field(default=None, ge=1)

    # sets and solvers
    omega_box: float = Field(default=1e15, gt=0)
    lp_feas_tol: float = Field(default=1e-9, gt=0)
    lp_opt_tol: float = Field(default=1e-7, gt=0)
    lp_working_box: float = Field(default=1e3, gt=0)
    nonempty_step: float = Field(default=1.05, gt=1)
    nonempty_cap: float = Field(default=10.0, gt=1)
    enforce_containment: bool = True
    nlp_tol: float = Field(default=1e-6, gt=0)
    nlp_max_iter: int = Field(default=200, ge=1)
    sem_segment_length: Optional[int] = Field(default=None, ge=1)
    method2_horizon: Optional[int] = Field(default=None, ge=1)

    # reporting and runtime
    report_horizons: list[int] = Field(default_factory=lambda: [1, 10, 35, 115])
    n_jobs: int = -1
    output_dir: str = "results"

    @model_validator(mode="after")
    def _check(self) -> ExperimentConfig:
        if not self.alpha > 1.0 or not self.gamma > 1.0:
            raise ValueError(f"alpha and gamma must exceed 1 (got alpha={self.alpha}, gamma={self.gamma})")
        if self.dbar_grid is not None:
            grid = self.dbar_grid
            if not grid or grid[0] < 0 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise ValueError("dbar_grid must be nonempty, nonnegative and strictly ascending")
        if self.dbar_grid_low >= self.dbar_grid_high:
            raise ValueError("dbar_grid_low must be below dbar_grid_high")
        if not self.input_levels:
            raise ValueError("input_levels must not be empty")
        if any(p < 1 for p in self.report_horizons):
            raise ValueError("report_horizons must be >= 1")
        need = self.o_init + self.p_max + 1
        if self.n_id < need:
            raise ValueError(f"n_id={self.n_id} is too short for o_init={self.o_init} and p_max={self.p_max} (need {need})")
        if self.n_val < need:
            raise ValueError(f"n_val={self.n_val} is too short for o_init={self.o_init} and p_max={self.p_max} (need {need})")
        return self

    def transfer_function(self) -> ContinuousTF:
        return ContinuousTF(tuple(self.tf_num), tuple(self.tf_den))

    def warmup_samples(self) -> int:
        if self.warmup is not None:
            return self.warmup
        return int(math.ceil(2.0 * settling_time(self.transfer_function()) / self.ts))

    def inflation(self) -> InflationConfig:
        return InflationConfig(alpha=self.alpha, gamma=self.gamma)

    def lp_tolerances(self) -> LPTolerances:
        return LPTolerances(feasibility=self.lp_feas_tol, optimality=self.lp_opt_tol, working_box=self.lp_working_box)

    def zero_tolerance(self) -> ZeroTolerance:
        return ZeroTolerance(abs_tol=self.zero_tol_abs, rel_tol=self.zero_tol_rel)

    @property
    def output_path(self) -> Path:
        return Path(self.output_dir)


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_overrides(pairs: list[str] | None) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    for pair in pairs or []:
        key, sep, raw = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override '{pair}' is not of the form key=value")
        overrides[key.strip()] = _parse_value(raw.strip())
    return overrides


def load_config(path: Path | str | None = None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    data: dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"Config file not found at {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
    data.update(overrides or {})
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc


def save_config(config: ExperimentConfig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(config.model_dump(), indent=2, sort_keys=True) + "\n")
    return path
