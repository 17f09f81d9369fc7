"""Channel realizations: deterministic LoS steering part plus Rayleigh NLoS part.

Per-link vectors use the natural shape (M, K, N). The stacked channel matrix
H is (MN, K) and AP-major: ``H[m * N + i, k]`` is antenna ``i`` of AP ``m``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Literal

import numpy as np

from ._validation import _validate_positive_integer, _validate_positive_number
from .exceptions import CellFreeConfigurationError
from .streams import SeedLike, as_generator, complex_normal, substream

if TYPE_CHECKING:
    from .geometry import LinkSet

logger = logging.getLogger(__name__)

# Substream keys below a drop index
GEOMETRY_STREAM = 0
LOS_STREAM = 1
TRIAL_STREAM = 2

DUMP_DTYPE = np.dtype("<c16")


def steering_vector(
    theta: float | np.ndarray, n_antennas: int, spacing: float, wavelength: float
) -> np.ndarray:
    """Uniform linear array response, entry i = exp(ι 2π (d/λ) i sin θ).

    ``theta`` may be an array; the antenna axis is appended last.
    """
    n_antennas = _validate_positive_integer(n_antennas, "n_antennas")
    _validate_positive_number(wavelength, "wavelength")
    idx = np.arange(n_antennas)
    sin_theta = np.asarray(np.sin(theta), dtype=float)[..., None]
    phase = 2.0 * np.pi * (spacing / wavelength) * sin_theta * idx
    return np.exp(1j * phase)


def stack(per_link: np.ndarray) -> np.ndarray:
    """Stack an (M, K, N) per-link array into the AP-major (MN, K) matrix."""
    m, k, n = per_link.shape[-3:]
    lead = per_link.shape[:-3]
    return np.swapaxes(per_link, -1, -2).reshape(*lead, m * n, k)


def unstack(matrix: np.ndarray, n_antennas: int) -> np.ndarray:
    """Inverse of :func:`stack`: (MN, K) back to (M, K, N)."""
    rows, k = matrix.shape[-2:]
    m = rows // n_antennas
    lead = matrix.shape[:-2]
    return np.swapaxes(matrix.reshape(*lead, m, n_antennas, k), -1, -2)


def los_components(linkset: LinkSet) -> np.ndarray:
    """All LoS vectors h̄_mk, shape (M, K, N)."""
    geom = linkset.geometry
    a = steering_vector(
        linkset.theta, geom.n_antennas, geom.antenna_spacing, geom.wavelength
    )
    scale = np.sqrt(linkset.los_gain) * np.exp(
        2j * np.pi * linkset.x_m / geom.wavelength
    )
    return a * scale[..., None]


def los_channel(linkset: LinkSet, m: int, k: int) -> np.ndarray:
    """LoS vector of a single link (AP ``m``, UE ``k``)."""
    geom = linkset.geometry
    a = steering_vector(
        linkset.theta[m, k], geom.n_antennas, geom.antenna_spacing, geom.wavelength
    )
    amplitude = np.sqrt(linkset.los_gain[m, k])
    return a * amplitude * np.exp(2j * np.pi * linkset.x_m[m, k] / geom.wavelength)


def draw_los_indicators(p_los: LinkSet | np.ndarray, seed: SeedLike = None) -> np.ndarray:
    """Independent Bernoulli(P_mk) LoS indicators as an int8 (M, K) matrix."""
    p = p_los.p_los if hasattr(p_los, "p_los") else np.asarray(p_los, dtype=float)
    if np.any(p < 0) or np.any(p > 1):
        raise CellFreeConfigurationError("LoS probabilities must lie in [0, 1]")
    rng = as_generator(seed)
    return (rng.random(p.shape) < p).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """One channel draw.

    ``los_part`` holds the unmasked stacked LoS vectors and ``nlos_part`` the
    unit-variance Rayleigh vectors, so ``H = δ ⊙ los_part + √β ⊙ nlos_part``.
    """

    delta: np.ndarray
    H: np.ndarray
    los_part: np.ndarray
    nlos_part: np.ndarray
    n_antennas: int

    @property
    def n_aps(self) -> int:
        return int(self.delta.shape[0])

    @property
    def n_users(self) -> int:
        return int(self.delta.shape[1])

    def per_link(self) -> np.ndarray:
        """H as per-link vectors, shape (M, K, N)."""
        return unstack(self.H, self.n_antennas)

    def block(self, m: int, k: int) -> np.ndarray:
        n = self.n_antennas
        return self.H[m * n : (m + 1) * n, k]

    def dump(self, path: str | Path) -> Path:
        """Write H row-major as little-endian complex128 (interleaved re/im)."""
        path = Path(path)
        np.ascontiguousarray(self.H, dtype=DUMP_DTYPE).tofile(path)
        logger.debug("Dumped %s channel matrix to %s", self.H.shape, path)
        return path


def load_channel_matrix(path: str | Path, n_rows: int, n_users: int) -> np.ndarray:
    """Read a matrix written by :meth:`ChannelRealization.dump`."""
    data = np.fromfile(Path(path), dtype=DUMP_DTYPE)
    if data.size != n_rows * n_users:
        raise CellFreeConfigurationError(
            f"{path} holds {data.size} entries, expected {n_rows * n_users}"
        )
    return data.reshape(n_rows, n_users).astype(np.complex128)


def draw_channel(
    linkset: LinkSet,
    delta: np.ndarray,
    seed: SeedLike = None,
    los: np.ndarray | None = None,
) -> ChannelRealization:
    """Draw H with per-link blocks δ_mk h̄_mk + √β_mk ḣ_mk, ḣ_mk ~ CN(0, I_N)."""
    delta = np.asarray(delta)
    shape = (linkset.n_aps, linkset.n_users)
    if delta.shape != shape:
        raise CellFreeConfigurationError(
            f"delta must have shape {shape}, got {delta.shape}"
        )
    if los is None:
        los = los_components(linkset)
    rng = as_generator(seed)
    nlos = complex_normal(rng, (*shape, linkset.n_antennas))
    per_link = delta[..., None] * los + np.sqrt(linkset.beta)[..., None] * nlos
    return ChannelRealization(
        delta=delta,
        H=stack(per_link),
        los_part=stack(los),
        nlos_part=stack(nlos),
        n_antennas=linkset.n_antennas,
    )


def sample_channels(
    linkset: LinkSet,
    delta: np.ndarray,
    rng: np.random.Generator,
    trials: int,
    los: np.ndarray | None = None,
) -> np.ndarray:
    """Draw ``trials`` per-link channels at once, shape (T, M, K, N).

    ``delta`` is (M, K) for a fixed LoS state or (T, M, K) for one per trial.
    """
    if los is None:
        los = los_components(linkset)
    shape = (trials, linkset.n_aps, linkset.n_users, linkset.n_antennas)
    nlos = complex_normal(rng, shape)
    return np.asarray(delta)[..., None] * los + np.sqrt(linkset.beta)[..., None] * nlos


class TrialSampler:
    """Deterministic per-trial channel draws for one geometry drop.

    Trial ``t`` of drop ``d`` always uses the substream ``(seed, d, TRIAL, t)``,
    so the draws do not depend on which worker runs them. With
    ``los_mode="per_drop"`` the LoS indicators are drawn once from
    ``(seed, d, LOS)``; with ``"per_trial"`` each trial draws its own.
    """

    def __init__(
        self,
        linkset: LinkSet,
        seed: int,
        drop: int = 0,
        los_mode: Literal["per_drop", "per_trial"] = "per_drop",
    ) -> None:
        if los_mode not in ("per_drop", "per_trial"):
            raise CellFreeConfigurationError(f"unknown los_mode: {los_mode}")
        self.linkset = linkset
        self.seed = seed
        self.drop = drop
        self.los_mode = los_mode
        self.los = los_components(linkset)
        self.drop_delta = draw_los_indicators(
            linkset, substream(seed, drop, LOS_STREAM)
        )

    def trial_rng(self, trial: int) -> np.random.Generator:
        return substream(self.seed, self.drop, TRIAL_STREAM, trial)

    def trial(self, trial: int) -> tuple[np.random.Generator, ChannelRealization]:
        """Return the trial's generator (positioned after the channel draw) and H."""
        rng = self.trial_rng(trial)
        if self.los_mode == "per_trial":
            delta = draw_los_indicators(self.linkset, rng)
        else:
            delta = self.drop_delta
        return rng, draw_channel(self.linkset, delta, rng, los=self.los)
