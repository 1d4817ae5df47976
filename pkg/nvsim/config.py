from __future__ import annotations

import json
import os
from typing import Any, Dict, Literal, Mapping, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from nvsim.dynamics import OpticalRates, RelaxationParams
from nvsim.errors import ConfigError, InvalidParameterError
from nvsim.hamiltonian import NVParameters
from nvsim.settings import get_settings

Vector = Tuple[float, float, float]

NV_KEYS = ("d_gs", "e_strain", "p_quad", "a_par", "a_perp", "g_s", "g_i", "b_field", "nv_axis")
RELAXATION_KEYS = ("t1", "t2_star", "t2_echo", "echo_exponent")
OPTICAL_KEYS = (
    "pump_rate",
    "radiative_rate",
    "isc_ms1",
    "isc_ms0",
    "singlet_rate",
    "singlet_branch_ms0",
    "collection_efficiency",
)


class RunConfig(BaseModel):
    """
    Flat run configuration (JSON or YAML file, then command-line flags).
    Unset physics keys fall back to the NVParameters / RelaxationParams / OpticalRates defaults.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # spin Hamiltonian (Hz, tesla)
    d_gs: Optional[float] = None
    e_strain: Optional[float] = None
    p_quad: Optional[float] = None
    a_par: Optional[float] = None
    a_perp: Optional[float] = None
    g_s: Optional[float] = None
    g_i: Optional[float] = None
    b_field: Optional[Vector] = None
    nv_axis: Optional[Vector] = None
    hyperfine: bool = True

    # relaxation (s)
    t1: Optional[float] = None
    t2_star: Optional[float] = None
    t2_echo: Optional[float] = None
    echo_exponent: Optional[float] = None

    # optical rates (1/s)
    pump_rate: Optional[float] = None
    radiative_rate: Optional[float] = None
    isc_ms1: Optional[float] = None
    isc_ms0: Optional[float] = None
    singlet_rate: Optional[float] = None
    singlet_branch_ms0: Optional[float] = None
    collection_efficiency: Optional[float] = None

    # drive and spectra
    rabi: Optional[float] = None
    mode: Literal["rwa", "full"] = "rwa"
    linewidth: float = 1e6
    contrast: float = 0.1

    # run
    shots: int = 1000
    seed: Optional[int] = None
    format: Literal["csv", "json"] = "csv"
    output: Optional[str] = None
    workers: int = 1

    @field_validator("shots")
    @classmethod
    def _shots(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"shots must be >= 1, got {v!r}")
        return v

    @field_validator("workers")
    @classmethod
    def _workers(cls, v: int) -> int:
        if v < 1:
            raise ValueError(f"workers must be >= 1, got {v!r}")
        return v

    @property
    def effective_seed(self) -> int:
        return get_settings().seed if self.seed is None else self.seed

    @property
    def effective_rabi(self) -> float:
        return get_settings().default_rabi if self.rabi is None else self.rabi

    def _pick(self, keys: Tuple[str, ...]) -> Dict[str, Any]:
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}

    def nv_parameters(self) -> NVParameters:
        try:
            params = NVParameters(**self._pick(NV_KEYS))
        except ValidationError as e:
            raise InvalidParameterError(_first_error(e)) from e
        return params if self.hyperfine else params.without_hyperfine()

    def optical_rates(self) -> OpticalRates:
        try:
            return OpticalRates(**self._pick(OPTICAL_KEYS))
        except ValidationError as e:
            raise InvalidParameterError(_first_error(e)) from e

    def relaxation(self) -> RelaxationParams:
        try:
            return RelaxationParams(optical=self.optical_rates(), **self._pick(RELAXATION_KEYS))
        except ValidationError as e:
            raise InvalidParameterError(_first_error(e)) from e

    def summary(self) -> Dict[str, Any]:
        """Effective values, as written into output summaries (output path excluded)."""
        out = self.model_dump(exclude={"output"}, exclude_none=True)
        out["seed"] = self.effective_seed
        out["rabi"] = self.effective_rabi
        return out


def _first_error(e: ValidationError) -> str:
    err = e.errors()[0]
    where = ".".join(str(p) for p in err.get("loc", ()))
    return f"{where}: {err['msg']}" if where else err["msg"]


def read_config_file(path: str) -> Dict[str, Any]:
    """JSON or YAML mapping of RunConfig keys."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path!r}: {e.strerror or e}") from e
    ext = os.path.splitext(path)[1].lower()
    try:
        data = yaml.safe_load(text) if ext in (".yml", ".yaml") else json.loads(text)
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"malformed config {path!r}: {e}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"config {path!r} must hold a mapping of keys, got {type(data).__name__}")
    return data


def load_run_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Defaults < environment (seed, rabi) < config file < flags. Flags left at None do not override."""
    values: Dict[str, Any] = read_config_file(path) if path else {}
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_first_error(e)}") from e
