"""Typed configuration models for the simulator.

The models are pydantic models so a JSON configuration file maps one-to-one
onto :class:`SimulationConfig`: unknown keys are rejected and every field is
validated on load. CLI flags are applied as overrides on top of the file.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .exceptions import CellFreeBudgetError, CellFreeConfigurationError

SPEED_OF_LIGHT = 299_792_458.0  # m/s
DEFAULT_CARRIER_HZ = 2.0e9
DEFAULT_WAVELENGTH = SPEED_OF_LIGHT / DEFAULT_CARRIER_HZ
DEFAULT_SNR_GRID_DB = [float(x) for x in range(-10, 51, 5)]
DEFAULT_BUDGET = 1.0e9  # MN * drops * trials

Scheme = Literal["conjugate", "joint", "mmse"]
LosExponent = Literal["crossings", "literal"]
SnrReference = Literal["received", "transmit"]


class BlockageEnvironment(BaseModel):
    """Blockage statistics of the deployment area.

    ``alpha`` is the built-up fraction, ``mu`` the blockage density in
    blockages per km² and ``gamma`` the average blockage altitude in meters.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = Field(0.5, ge=0.0, le=1.0)
    mu: float = Field(300.0, ge=0.0)
    gamma: float = Field(20.0, gt=0.0)


DEFAULT_ENVIRONMENT = BlockageEnvironment(alpha=0.5, mu=300.0, gamma=20.0)


class SimulationConfig(BaseModel):
    """Full parameter set of one experiment run.

    Defaults are the desk-scale setting (M=256, K=16, 200 trials); use
    :meth:`full_scale` for the M=1024, K=64 deployment.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Geometry
    n_aps: int = Field(256, ge=1)
    n_antennas: int = Field(1, ge=1)
    n_users: int = Field(16, ge=1)
    area_side: float = Field(1.0, gt=0.0)  # km
    ap_height: float = Field(10.0, gt=0.0)  # m
    ue_height: float = Field(1.5, gt=0.0)  # m
    antenna_spacing: float | None = Field(None, gt=0.0)  # m, None -> half wavelength
    wavelength: float = Field(DEFAULT_WAVELENGTH, gt=0.0)  # m

    # Blockage environment
    alpha: float = Field(0.5, ge=0.0, le=1.0)
    mu: float = Field(300.0, ge=0.0)  # per km²
    gamma: float = Field(20.0, gt=0.0)  # m
    los_exponent: LosExponent = "crossings"

    # Channel
    d0: float = Field(1.0, gt=0.0)  # m
    eta: float = Field(3.76, gt=2.0)
    ap_gain: float = Field(1.0, gt=0.0)
    ue_gain: float = Field(1.0, gt=0.0)
    los_mode: Literal["per_drop", "per_trial"] = "per_drop"

    # Powers
    noise_power: float = Field(1.0, gt=0.0)
    pilot_mode: Literal["per_link", "global"] = "per_link"
    pilot_snr_db: float = 20.0
    snr_reference: SnrReference = "received"
    snr_db: list[float] = Field(default_factory=lambda: list(DEFAULT_SNR_GRID_DB))
    rate_snr_db: float = 30.0
    cdf_snr_db: float = 50.0
    regularizer: float | None = Field(None, gt=0.0)

    # Run control
    schemes: list[Scheme] = Field(
        default_factory=lambda: ["conjugate", "joint", "mmse"]
    )
    trials: int = Field(200, ge=1)
    drops: int = Field(10, ge=1)
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    budget: float = Field(DEFAULT_BUDGET, gt=0.0)
    out: str | None = None

    @model_validator(mode="after")
    def _check_heights(self) -> SimulationConfig:
        if self.ap_height <= self.ue_height:
            raise ValueError(
                f"ap_height ({self.ap_height} m) must exceed ue_height ({self.ue_height} m)"
            )
        if not self.snr_db:
            raise ValueError("snr_db must contain at least one grid point")
        return self

    @classmethod
    def from_file(cls, path: str | Path, **overrides: Any) -> SimulationConfig:
        """Load a JSON configuration file and apply ``overrides`` on top."""
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise CellFreeConfigurationError(f"{path} must hold a JSON object")
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.build(**data)

    @classmethod
    def build(cls, **values: Any) -> SimulationConfig:
        """Validate ``values``, re-raising pydantic errors as configuration errors."""
        try:
            return cls.model_validate(values)
        except ValidationError as e:
            raise CellFreeConfigurationError(f"invalid configuration: {e}") from e

    def with_overrides(self, **overrides: Any) -> SimulationConfig:
        """Return a validated copy with non-None ``overrides`` applied."""
        data = self.model_dump()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return self.build(**data)

    def full_scale(self) -> SimulationConfig:
        """Return the full-scale (M=1024, K=64, 1000 trials) variant."""
        return self.with_overrides(n_aps=1024, n_users=64, trials=1000)

    @property
    def environment(self) -> BlockageEnvironment:
        return BlockageEnvironment(alpha=self.alpha, mu=self.mu, gamma=self.gamma)

    @property
    def spacing(self) -> float:
        """Antenna spacing in meters (half wavelength unless configured)."""
        return self.antenna_spacing if self.antenna_spacing is not None else self.wavelength / 2

    def config_hash(self) -> str:
        """Return a short content hash of the run-defining fields."""
        payload = self.model_dump(exclude={"out", "workers"})
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]

    def estimated_cost(self, n_aps: int | None = None, n_antennas: int | None = None) -> float:
        """Return MN * drops * trials for the given (or configured) AP layout."""
        m = self.n_aps if n_aps is None else n_aps
        n = self.n_antennas if n_antennas is None else n_antennas
        return float(m * n) * self.drops * self.trials

    def check_budget(self, n_aps: int | None = None, n_antennas: int | None = None) -> None:
        """Refuse runs whose MN * drops * trials exceeds ``budget``."""
        cost = self.estimated_cost(n_aps, n_antennas)
        if cost > self.budget:
            raise CellFreeBudgetError(
                f"estimated cost {cost:.3g} (MN*drops*trials) exceeds budget {self.budget:.3g}",
                estimated_cost=cost,
                budget=self.budget,
            )
