"""Orthogonal-pilot training and per-link LMMSE channel estimation.

The estimator is genie-aided: the covariances of each link are conditioned on
its true LoS indicator δ_mk. Matrices are batched with shape
(M, K, N, N) and vectors with shape (M, K, N).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Literal

import numpy as np

from ._validation import _validate_positive_number
from .channel import ChannelRealization, los_components, stack
from .exceptions import CellFreeConfigurationError, CellFreeContractError
from .streams import SeedLike, as_generator, complex_normal

if TYPE_CHECKING:
    from .geometry import LinkSet

logger = logging.getLogger(__name__)

PilotMode = Literal["per_link", "global"]

# Hermitian / eigenvalue tolerances of psd_sqrt, relative to the matrix scale
HERMITIAN_TOL = 1e-10
NEGATIVE_EIG_TOL = 1e-10


def _hermitian_part(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def _eye_like(n: int) -> np.ndarray:
    return np.eye(n, dtype=complex)


@dataclass(frozen=True)
class PilotConfig:
    """Pilot transmission settings.

    ``pilot_snr`` is linear. In ``per_link`` mode every link gets the power
    that makes its received pilot SNR E_p tr(Σ_hh)/(N N0) equal ``pilot_snr``;
    in ``global`` mode every UE sends E_p = pilot_snr · N0.
    """

    pilot_snr: float = 100.0
    noise_power: float = 1.0
    mode: PilotMode = "per_link"

    def __post_init__(self) -> None:
        _validate_positive_number(self.pilot_snr, "pilot_snr")
        _validate_positive_number(self.noise_power, "noise_power")
        if self.mode not in ("per_link", "global"):
            raise CellFreeConfigurationError(f"unknown pilot mode: {self.mode}")

    @classmethod
    def from_db(
        cls, pilot_snr_db: float, noise_power: float = 1.0, mode: PilotMode = "per_link"
    ) -> PilotConfig:
        return cls(10.0 ** (pilot_snr_db / 10.0), noise_power, mode)

    def pilot_power(self, linkset: LinkSet, delta: np.ndarray) -> np.ndarray:
        """Per-link pilot power E_p,mk, shape (M, K)."""
        shape = (linkset.n_aps, linkset.n_users)
        if self.mode == "global":
            return np.full(shape, self.pilot_snr * self.noise_power)
        per_antenna = np.asarray(delta) * linkset.los_gain + linkset.beta
        return self.pilot_snr * self.noise_power / per_antenna


def orthonormal_pilots(n_users: int) -> np.ndarray:
    """K orthonormal pilots of length K (rows of the identity)."""
    return np.eye(n_users, dtype=complex)


def _check_orthonormal(pilots: np.ndarray) -> None:
    gram = pilots @ pilots.conj().T
    if not np.allclose(gram, np.eye(pilots.shape[0]), atol=1e-10):
        raise CellFreeConfigurationError("pilot sequences must be orthonormal")


def pilot_receive(
    channel: ChannelRealization | np.ndarray,
    pilots: np.ndarray,
    pilot_power: float | np.ndarray,
    noise_power: float,
    seed: SeedLike = None,
) -> np.ndarray:
    """Received pilot blocks y_m[n] = Σ_k √E_p h_mk ψ_k[n] + √N0 w_m[n].

    ``channel`` is a realization or per-link (M, K, N) array. ``pilots`` is
    (K, τ) with orthonormal rows; the result is (M, N, τ).
    """
    h = channel.per_link() if isinstance(channel, ChannelRealization) else channel
    pilots = np.asarray(pilots, dtype=complex)
    _check_orthonormal(pilots)
    if pilots.shape[0] != h.shape[1]:
        raise CellFreeConfigurationError(
            f"{pilots.shape[0]} pilots for {h.shape[1]} users"
        )
    noise_power = float(noise_power)
    if noise_power < 0:
        raise CellFreeConfigurationError("noise_power must be non-negative")

    amplitude = np.sqrt(np.broadcast_to(pilot_power, h.shape[:2]))
    y = np.einsum("mkn,kt->mnt", amplitude[..., None] * h, pilots)
    if noise_power > 0:
        rng = as_generator(seed)
        y = y + np.sqrt(noise_power) * complex_normal(rng, y.shape)
    return y


def despread(y: np.ndarray, pilots: np.ndarray, k: int | None = None) -> np.ndarray:
    """Correlate received blocks with the pilots: y'_mk = Σ_n y_m[n] ψ_k*[n].

    Returns (M, K, N), or (M, N) for a single user ``k``.
    """
    pilots = np.asarray(pilots, dtype=complex)
    if k is not None:
        return y @ pilots[k].conj()
    return np.einsum("mnt,kt->mkn", y, pilots.conj())


@dataclass(frozen=True, eq=False)
class LinkCovariances:
    """Σ_hh, Σ_yy and Σ_hy of every link, each (M, K, N, N)."""

    sigma_hh: np.ndarray
    sigma_yy: np.ndarray
    sigma_hy: np.ndarray
    pilot_power: np.ndarray
    noise_power: float


def link_covariances(
    linkset: LinkSet,
    delta: np.ndarray | int,
    pilot_power: float | np.ndarray,
    noise_power: float,
    los: np.ndarray | None = None,
) -> LinkCovariances:
    """Second-moment matrices of every link given its LoS indicator.

    Σ_hh = δ h̄ h̄ᴴ + β I, Σ_yy = E_p Σ_hh + N0 I, Σ_hy = √E_p Σ_hh.
    """
    noise_power = _validate_positive_number(noise_power, "noise_power")
    if los is None:
        los = los_components(linkset)
    n = linkset.n_antennas
    shape = (linkset.n_aps, linkset.n_users)
    delta = np.broadcast_to(np.asarray(delta, dtype=float), shape)
    ep = np.broadcast_to(np.asarray(pilot_power, dtype=float), shape)

    eye = _eye_like(n)
    outer = los[..., :, None] * los[..., None, :].conj()
    sigma_hh = delta[..., None, None] * outer + linkset.beta[..., None, None] * eye
    sigma_yy = ep[..., None, None] * sigma_hh + noise_power * eye
    sigma_hy = np.sqrt(ep)[..., None, None] * sigma_hh
    return LinkCovariances(sigma_hh, sigma_yy, sigma_hy, np.asarray(ep), noise_power)


def lmmse_gain(covariances: LinkCovariances) -> np.ndarray:
    """Estimator matrices W = √E_p Σ_hh Σ_yy⁻¹, shape (..., N, N)."""
    # Σ_yy⁻¹ Σ_hh; its conjugate transpose is Σ_hh Σ_yy⁻¹
    solved = np.linalg.solve(covariances.sigma_yy, covariances.sigma_hh)
    amplitude = np.sqrt(covariances.pilot_power)[..., None, None]
    return amplitude * np.conj(np.swapaxes(solved, -1, -2))


def lmmse_estimate(
    y_prime: np.ndarray, covariances: LinkCovariances
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """LMMSE estimate ĥ = √E_p Σ_hh Σ_yy⁻¹ y' with its covariances.

    Returns ``(hhat, C, Cbar)`` where C = E_p Σ_hh Σ_yy⁻¹ Σ_hh is the
    estimate covariance and Cbar = Σ_hh - C the error covariance.
    """
    sigma_hh = covariances.sigma_hh
    amplitude = np.sqrt(covariances.pilot_power)[..., None, None]
    gain = lmmse_gain(covariances)
    hhat = np.einsum("...ij,...j->...i", gain, y_prime)
    c = _hermitian_part(amplitude * gain @ sigma_hh)
    cbar = _hermitian_part(sigma_hh - c)
    return hhat, c, cbar


@dataclass(frozen=True, eq=False)
class EstimationError:
    """Estimation error e = h - ĥ and its empirical second moments.

    The empirical moments average over the leading (trial) axis and are only
    filled when more than one sample is given.
    """

    error: np.ndarray
    error_covariance: np.ndarray | None
    cross_covariance: np.ndarray | None


def error_decomposition(h: np.ndarray, hhat: np.ndarray) -> EstimationError:
    """Split h = ĥ + e and measure E[e eᴴ] and E[ĥ eᴴ] over axis 0."""
    error = h - hhat
    if error.ndim < 2 or error.shape[0] < 2:
        return EstimationError(error, None, None)
    count = error.shape[0]
    error_cov = np.einsum("t...i,t...j->...ij", error, error.conj()) / count
    cross = np.einsum("t...i,t...j->...ij", hhat, error.conj()) / count
    return EstimationError(error, error_cov, cross)


def psd_sqrt(a: np.ndarray) -> np.ndarray:
    """Hermitian PSD square root via eigendecomposition.

    Eigenvalues down to -1e-10 (relative) are clipped to zero; more negative
    ones, or a non-Hermitian input, raise :class:`CellFreeContractError`.
    """
    a = np.asarray(a)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise CellFreeContractError("psd_sqrt needs square matrices")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    skew = np.max(np.abs(a - np.conj(np.swapaxes(a, -1, -2)))) if a.size else 0.0
    if skew > HERMITIAN_TOL * scale:
        raise CellFreeContractError(f"psd_sqrt input is not Hermitian (skew {skew:.3g})")

    w, v = np.linalg.eigh(_hermitian_part(a))
    if np.any(w < -NEGATIVE_EIG_TOL * scale):
        raise CellFreeContractError(
            f"psd_sqrt input has a negative eigenvalue ({float(w.min()):.3g})"
        )
    root = np.sqrt(np.clip(w, 0.0, None))
    return _hermitian_part((v * root[..., None, :]) @ np.conj(np.swapaxes(v, -1, -2)))


@dataclass(frozen=True, eq=False)
class ChannelEstimate:
    """Per-link LMMSE estimates of one realization.

    ``hhat`` is (M, K, N); ``sigma_hh``, ``C`` and ``Cbar`` are (M, K, N, N).
    """

    hhat: np.ndarray
    sigma_hh: np.ndarray
    C: np.ndarray
    Cbar: np.ndarray
    pilot_power: np.ndarray
    noise_power: float

    @property
    def Hhat(self) -> np.ndarray:
        """Stacked (MN, K) estimated channel."""
        return stack(self.hhat)

    @property
    def error_power(self) -> np.ndarray:
        """tr(C̄_mk) per link, shape (M, K)."""
        return np.real(np.trace(self.Cbar, axis1=-2, axis2=-1))


def estimate_channel(
    channel: ChannelRealization,
    linkset: LinkSet,
    pilot: PilotConfig,
    seed: SeedLike = None,
    los: np.ndarray | None = None,
) -> ChannelEstimate:
    """Run pilot training over ``channel`` and return the LMMSE estimates."""
    if los is None:
        los = los_components(linkset)
    pilot_power = pilot.pilot_power(linkset, channel.delta)
    pilots = orthonormal_pilots(linkset.n_users)
    y = pilot_receive(channel, pilots, pilot_power, pilot.noise_power, seed)
    y_prime = despread(y, pilots)
    cov = link_covariances(linkset, channel.delta, pilot_power, pilot.noise_power, los)
    hhat, c, cbar = lmmse_estimate(y_prime, cov)
    return ChannelEstimate(
        hhat=hhat,
        sigma_hh=cov.sigma_hh,
        C=c,
        Cbar=cbar,
        pilot_power=pilot_power,
        noise_power=pilot.noise_power,
    )
