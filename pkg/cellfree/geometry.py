"""Network layouts and deterministic per-link quantities.

Horizontal positions are in km, heights and 3D distances in meters. All
per-link arrays are indexed ``[m, k]`` (AP first, UE second).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any

import numpy as np
from scipy import special

from ._validation import (
    _validate_non_negative_number,
    _validate_positive_integer,
    _validate_positive_number,
)
from .config import DEFAULT_ENVIRONMENT, DEFAULT_WAVELENGTH, BlockageEnvironment
from .exceptions import CellFreeConfigurationError, CellFreeGeometryError
from .streams import SeedLike, as_generator

if TYPE_CHECKING:
    from .config import LosExponent, SimulationConfig

logger = logging.getLogger(__name__)

# Height gaps below this use the closed-form limit of omega
NEAR_EQUAL_HEIGHT_M = 1e-6


def erf(z: float | np.ndarray) -> float | np.ndarray:
    """Error function erf(z) = 2/sqrt(pi) * integral_0^z exp(-t²) dt."""
    out = special.erf(np.asarray(z, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def blockage_omega(
    ap_height: float | np.ndarray,
    ue_height: float | np.ndarray,
    gamma: float,
) -> np.ndarray:
    """Probability that a single blockage crossing the link obstructs it.

    Heights must satisfy ``ap_height > ue_height``; gaps below
    ``NEAR_EQUAL_HEIGHT_M`` use the limit exp(-ℓ'²/(2γ²)).
    """
    hi = np.asarray(ap_height, dtype=float)
    lo = np.asarray(ue_height, dtype=float)
    gap = hi - lo
    scale = gamma * np.sqrt(2.0)
    limit = np.exp(-(lo**2) / (2.0 * gamma**2))
    safe_gap = np.where(gap < NEAR_EQUAL_HEIGHT_M, 1.0, gap)
    omega = (
        np.sqrt(np.pi / 2.0)
        * gamma
        / safe_gap
        * (special.erf(hi / scale) - special.erf(lo / scale))
    )
    return np.where(gap < NEAR_EQUAL_HEIGHT_M, limit, omega)


def los_probability(
    d_km: float | np.ndarray,
    ap_height: float | np.ndarray,
    ue_height: float | np.ndarray,
    env: BlockageEnvironment = DEFAULT_ENVIRONMENT,
    exponent: LosExponent = "crossings",
) -> float | np.ndarray:
    """Return the LoS probability (1 - ω)^n of a link with horizontal length ``d_km``.

    ``exponent="crossings"`` uses n = sqrt(α μ) d (expected blockage crossings);
    ``"literal"`` uses n = sqrt(α μ d).
    """
    d = np.asarray(d_km, dtype=float)
    hi = np.asarray(ap_height, dtype=float)
    lo = np.asarray(ue_height, dtype=float)
    if np.any(d < 0):
        raise CellFreeConfigurationError("d_km must be non-negative")
    if np.any(hi <= lo) or np.any(lo <= 0):
        raise CellFreeGeometryError(
            "LoS probability needs ap_height > ue_height > 0"
        )

    omega = blockage_omega(hi, lo, env.gamma)
    if exponent == "crossings":
        n = np.sqrt(env.alpha * env.mu) * d
    elif exponent == "literal":
        n = np.sqrt(env.alpha * env.mu * d)
    else:
        raise CellFreeConfigurationError(f"unknown LoS exponent convention: {exponent}")

    # 0**0 is 1, which is the d=0 and alpha*mu=0 case
    p = np.clip(np.power(1.0 - omega, n), 0.0, 1.0)
    return float(p) if np.ndim(p) == 0 else p


@dataclass(frozen=True, eq=False)
class NetworkGeometry:
    """AP and UE placement plus array and environment parameters.

    AP arrays have length M, UE arrays length K; ``ap_xy``/``ue_xy`` are
    (M, 2)/(K, 2) in km, orientations are broadside angles in radians.
    """

    ap_xy: np.ndarray
    ap_height: np.ndarray
    ap_orientation: np.ndarray
    ap_gain: np.ndarray
    ue_xy: np.ndarray
    ue_height: np.ndarray
    ue_gain: np.ndarray
    n_antennas: int = 1
    antenna_spacing: float = DEFAULT_WAVELENGTH / 2
    wavelength: float = DEFAULT_WAVELENGTH
    area_side: float = 1.0
    env: BlockageEnvironment = field(default_factory=lambda: DEFAULT_ENVIRONMENT)
    los_exponent: LosExponent = "crossings"

    def __post_init__(self) -> None:
        _validate_positive_integer(self.n_antennas, "n_antennas")
        _validate_positive_number(self.antenna_spacing, "antenna_spacing")
        _validate_positive_number(self.wavelength, "wavelength")
        _validate_positive_number(self.area_side, "area_side")

        m = self.ap_xy.shape[0]
        k = self.ue_xy.shape[0]
        if self.ap_xy.shape != (m, 2) or self.ue_xy.shape != (k, 2):
            raise CellFreeConfigurationError("positions must be (count, 2) arrays")
        for name, arr, size in (
            ("ap_height", self.ap_height, m),
            ("ap_orientation", self.ap_orientation, m),
            ("ap_gain", self.ap_gain, m),
            ("ue_height", self.ue_height, k),
            ("ue_gain", self.ue_gain, k),
        ):
            if arr.shape != (size,):
                raise CellFreeConfigurationError(f"{name} must have shape ({size},)")

        for name, xy in (("ap_xy", self.ap_xy), ("ue_xy", self.ue_xy)):
            if np.any(xy < 0) or np.any(xy > self.area_side):
                raise CellFreeConfigurationError(
                    f"{name} must lie inside [0, {self.area_side}]²"
                )

    @property
    def n_aps(self) -> int:
        return int(self.ap_xy.shape[0])

    @property
    def n_users(self) -> int:
        return int(self.ue_xy.shape[0])

    def subset_users(self, users: list[int] | np.ndarray) -> NetworkGeometry:
        """Return the same deployment restricted to the UEs in ``users``."""
        idx = np.asarray(users, dtype=int)
        return NetworkGeometry(
            ap_xy=self.ap_xy,
            ap_height=self.ap_height,
            ap_orientation=self.ap_orientation,
            ap_gain=self.ap_gain,
            ue_xy=self.ue_xy[idx],
            ue_height=self.ue_height[idx],
            ue_gain=self.ue_gain[idx],
            n_antennas=self.n_antennas,
            antenna_spacing=self.antenna_spacing,
            wavelength=self.wavelength,
            area_side=self.area_side,
            env=self.env,
            los_exponent=self.los_exponent,
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "area_side": self.area_side,
            "n_antennas": self.n_antennas,
            "antenna_spacing": self.antenna_spacing,
            "wavelength": self.wavelength,
            "los_exponent": self.los_exponent,
            "environment": self.env.model_dump(),
            "aps": [
                {
                    "x": float(x),
                    "y": float(y),
                    "height": float(h),
                    "orientation": float(phi),
                    "gain": float(g),
                }
                for (x, y), h, phi, g in zip(
                    self.ap_xy,
                    self.ap_height,
                    self.ap_orientation,
                    self.ap_gain,
                    strict=True,
                )
            ],
            "ues": [
                {"x": float(x), "y": float(y), "height": float(h), "gain": float(g)}
                for (x, y), h, g in zip(
                    self.ue_xy, self.ue_height, self.ue_gain, strict=True
                )
            ],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> NetworkGeometry:
        try:
            aps = data["aps"]
            ues = data["ues"]
            return cls(
                ap_xy=np.array([[a["x"], a["y"]] for a in aps], dtype=float).reshape(-1, 2),
                ap_height=np.array([a["height"] for a in aps], dtype=float),
                ap_orientation=np.array([a.get("orientation", 0.0) for a in aps], dtype=float),
                ap_gain=np.array([a.get("gain", 1.0) for a in aps], dtype=float),
                ue_xy=np.array([[u["x"], u["y"]] for u in ues], dtype=float).reshape(-1, 2),
                ue_height=np.array([u["height"] for u in ues], dtype=float),
                ue_gain=np.array([u.get("gain", 1.0) for u in ues], dtype=float),
                n_antennas=int(data.get("n_antennas", 1)),
                antenna_spacing=float(data.get("antenna_spacing", DEFAULT_WAVELENGTH / 2)),
                wavelength=float(data.get("wavelength", DEFAULT_WAVELENGTH)),
                area_side=float(data.get("area_side", 1.0)),
                env=BlockageEnvironment(**data.get("environment", {})),
                los_exponent=data.get("los_exponent", "crossings"),
            )
        except (KeyError, TypeError) as e:
            raise CellFreeConfigurationError(f"malformed geometry document: {e}") from e

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> NetworkGeometry:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True, eq=False)
class LinkSet:
    """Per-link metrics, every array of shape (M, K).

    ``los_gain`` is a_mk = G_m G_k (ℓ'_k ℓ_m / (4π x_mk))², the per-antenna
    LoS power.
    """

    geometry: NetworkGeometry
    d_km: np.ndarray
    x_m: np.ndarray
    theta: np.ndarray
    beta: np.ndarray
    p_los: np.ndarray
    los_gain: np.ndarray
    d0: float = 1.0
    eta: float = 3.76

    @property
    def n_aps(self) -> int:
        return self.geometry.n_aps

    @property
    def n_users(self) -> int:
        return self.geometry.n_users

    @property
    def n_antennas(self) -> int:
        return self.geometry.n_antennas


def place_uniform(
    n_aps: int,
    n_users: int,
    area_side: float = 1.0,
    heights: tuple[float, float] = (10.0, 1.5),
    seed: SeedLike = None,
    *,
    n_antennas: int = 1,
    antenna_spacing: float | None = None,
    wavelength: float = DEFAULT_WAVELENGTH,
    env: BlockageEnvironment = DEFAULT_ENVIRONMENT,
    ap_gain: float = 1.0,
    ue_gain: float = 1.0,
    los_exponent: LosExponent = "crossings",
) -> NetworkGeometry:
    """Drop APs and UEs i.i.d. uniformly on the square [0, area_side]².

    Each AP gets an independent uniform broadside orientation on [0, 2π).
    """
    n_aps = _validate_positive_integer(n_aps, "n_aps")
    n_users = _validate_positive_integer(n_users, "n_users")
    area_side = _validate_positive_number(area_side, "area_side")
    ap_h, ue_h = heights
    _validate_positive_number(ap_h, "ap_height")
    _validate_positive_number(ue_h, "ue_height")

    rng = as_generator(seed)
    logger.debug(
        "Placing %d APs and %d UEs on a %.3g km square", n_aps, n_users, area_side
    )
    ap_xy = rng.uniform(0.0, area_side, size=(n_aps, 2))
    orientation = rng.uniform(0.0, 2.0 * np.pi, size=n_aps)
    ue_xy = rng.uniform(0.0, area_side, size=(n_users, 2))

    return NetworkGeometry(
        ap_xy=ap_xy,
        ap_height=np.full(n_aps, float(ap_h)),
        ap_orientation=orientation,
        ap_gain=np.full(n_aps, float(ap_gain)),
        ue_xy=ue_xy,
        ue_height=np.full(n_users, float(ue_h)),
        ue_gain=np.full(n_users, float(ue_gain)),
        n_antennas=n_antennas,
        antenna_spacing=wavelength / 2 if antenna_spacing is None else antenna_spacing,
        wavelength=wavelength,
        area_side=area_side,
        env=env,
        los_exponent=los_exponent,
    )


def place_from_config(
    config: SimulationConfig,
    seed: SeedLike = None,
    *,
    n_aps: int | None = None,
    n_antennas: int | None = None,
    n_users: int | None = None,
) -> NetworkGeometry:
    """:func:`place_uniform` with every parameter taken from ``config``."""
    return place_uniform(
        config.n_aps if n_aps is None else n_aps,
        config.n_users if n_users is None else n_users,
        config.area_side,
        (config.ap_height, config.ue_height),
        seed,
        n_antennas=config.n_antennas if n_antennas is None else n_antennas,
        antenna_spacing=config.spacing,
        wavelength=config.wavelength,
        env=config.environment,
        ap_gain=config.ap_gain,
        ue_gain=config.ue_gain,
        los_exponent=config.los_exponent,
    )


def wrap_angle(angle: np.ndarray) -> np.ndarray:
    """Wrap angles to [-π, π)."""
    return (np.asarray(angle) + np.pi) % (2.0 * np.pi) - np.pi


def link_metrics(geom: NetworkGeometry, d0: float = 1.0, eta: float = 3.76) -> LinkSet:
    """Compute distances, AoA, pathloss and LoS probability of every (AP, UE) link."""
    d0 = _validate_positive_number(d0, "d0")
    eta = _validate_non_negative_number(eta, "eta")
    if eta <= 2:
        raise CellFreeConfigurationError(f"eta must exceed 2, got: {eta}")

    gap = geom.ap_height[:, None] - geom.ue_height[None, :]
    if np.any(gap <= 0):
        m, k = np.argwhere(gap <= 0)[0]
        raise CellFreeGeometryError(
            f"AP {m} (height {geom.ap_height[m]} m) is not above UE {k} "
            f"(height {geom.ue_height[k]} m)"
        )

    offset = geom.ue_xy[None, :, :] - geom.ap_xy[:, None, :]
    d_km = np.hypot(offset[..., 0], offset[..., 1])
    d_m = d_km * 1000.0
    x_m = np.sqrt(d_m**2 + gap**2)

    with np.errstate(divide="ignore"):
        beta = np.minimum(1.0, np.power(d_m / d0, -eta))

    bearing = np.arctan2(offset[..., 1], offset[..., 0])
    theta = wrap_angle(bearing - geom.ap_orientation[:, None])

    p_los = np.asarray(
        los_probability(
            d_km,
            geom.ap_height[:, None],
            geom.ue_height[None, :],
            geom.env,
            geom.los_exponent,
        )
    )
    los_gain = (
        geom.ap_gain[:, None]
        * geom.ue_gain[None, :]
        * (geom.ue_height[None, :] * geom.ap_height[:, None] / (4.0 * np.pi * x_m)) ** 2
    )
    logger.debug(
        "Computed link metrics for %d x %d links (mean P_los %.3f)",
        geom.n_aps,
        geom.n_users,
        float(p_los.mean()),
    )
    return LinkSet(
        geometry=geom,
        d_km=d_km,
        x_m=x_m,
        theta=theta,
        beta=beta,
        p_los=p_los,
        los_gain=los_gain,
        d0=d0,
        eta=eta,
    )
