from pathlib import Path
from typing import Any, Optional

import numpy as np
import pydantic
from pydantic import Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from src.core.exceptions import ConfigInvalid


class SuiteConfig(BaseSettings):
    """
    Configuration of a verification run.

    Every CLI flag maps to a field; environment variables with the GINV_ prefix override
    the defaults (GINV_SEED=7, GINV_M_VALUES=[1,2]). The defaults are the 1D reference
    configuration: A1 on [-8, 8] with 257 points, scales 0..6, M in {1, 2, 3}.
    """
    # Geometry
    group: str = Field(default="A1", description="Root system preset or path of a root file")
    dim: Optional[int] = Field(default=None, ge=1, description="Ambient dimension, needed for TRIVIAL")
    n: int = Field(default=257, ge=3, description="Grid points per axis, odd")
    box: float = Field(default=8.0, gt=0, description="Box half width")
    max_order: int = Field(default=1024, ge=1, description="Cap on the generated group order")

    # Scales and reproducing formula
    k_min: int = Field(default=0, description="Coarsest scale")
    k_max: int = Field(default=6, description="Finest scale")
    m_values: list[int] = Field(default_factory=lambda: [1, 2, 3], description="Orders M of the Calderon system")
    tol: float = Field(default=1e-6, gt=0, description="Neumann inversion tolerance")
    max_terms: int = Field(default=200, ge=1, description="Neumann term cap")

    # Sampling
    seed: int = Field(default=42, description="Seed of every sampled estimate")
    sample_budget: int = Field(default=100_000, ge=1, description="Sampled pairs/triples per estimate")

    # Pass ceilings
    equivalence_ceiling: float = Field(default=10.0, gt=0)
    rm_ratio_ceiling: float = Field(default=0.8, gt=0)
    reproduce_ceiling: float = Field(default=0.05, gt=0)
    bmo_fraction: float = Field(default=0.1, gt=0)
    cz_constant_ceiling: Optional[float] = Field(default=None, gt=0)
    weak11_ceiling: float = Field(default=10.0, gt=0)
    paraproduct_ratio_ceiling: float = Field(default=10.0, gt=0)
    smoothing_spread: float = Field(default=4.0, gt=0)

    # Output
    out: Optional[Path] = Field(default=None, description="JSON report path")
    csv: Optional[Path] = Field(default=None, description="CSV metric table path")
    parallel: bool = Field(default=False, description="Run the sub-suites of 'all' concurrently")
    timing: bool = Field(default=False, description="Keep the wall time in the JSON output")

    model_config = SettingsConfigDict(
        env_prefix="GINV_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    @field_validator("n")
    @classmethod
    def _odd(cls, value: int) -> int:
        if value % 2 == 0:
            raise ValueError("n must be odd so that the origin is a grid point")
        return value

    @field_validator("m_values")
    @classmethod
    def _positive_orders(cls, value: list[int]) -> list[int]:
        if not value:
            raise ValueError("at least one M is required")
        if min(value) < 1:
            raise ValueError("M values must be positive")
        return sorted(set(value))

    @model_validator(mode="after")
    def _scale_window(self) -> "SuiteConfig":
        if self.k_min > self.k_max:
            raise ValueError(f"k_min={self.k_min} exceeds k_max={self.k_max}")
        spacing = 2.0 * self.box / self.n
        coarsest = int(np.ceil(1.0 - np.log2(self.box) - 1e-12))
        finest = int(np.ceil(np.log2(2.0 / spacing) - 1e-12))
        if self.k_min < coarsest or self.k_max > finest:
            raise ValueError(f"scales [{self.k_min}, {self.k_max}] leave the resolvable window [{coarsest}, {finest}]")
        if 2 * max(self.m_values) > self.k_max - self.k_min:
            raise ValueError(f"M={max(self.m_values)} needs k_max - k_min >= {2 * max(self.m_values)}")
        return self


def load_suite_config(**overrides: Any) -> SuiteConfig:
    """
    Build a SuiteConfig from environment, .env and explicit overrides (None values are
    dropped so unset CLI flags fall through to the environment).

    Raises:
        ConfigInvalid: validation failed; payload["errors"] lists "field: message" entries.
    """
    values = {key: value for key, value in overrides.items() if value is not None}
    try:
        return SuiteConfig(**values)
    except pydantic.ValidationError as e:
        errors = [
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
            for err in e.errors()
        ]
        raise ConfigInvalid(f"Invalid suite configuration: {'; '.join(errors)}", {"errors": errors}) from e
