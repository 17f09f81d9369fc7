"""Uplink data phase and receivers.

Three receivers are provided: distributed conjugate beamforming (per-AP
matched filtering summed at the CPU), joint ML detection over the stacked
received vector, and centralized (regularized) MMSE combining. Each combiner
returns a :class:`CombinerOutput` whose gains reconstruct the combined signal
exactly: ``r = gains @ s + noise``.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import linalg

from ._validation import _validate_positive_array, _validate_positive_number
from .channel import unstack
from .exceptions import (
    CellFreeComplexityError,
    CellFreeConfigurationError,
    CellFreeDetectionError,
)
from .streams import SeedLike, as_generator, complex_normal

logger = logging.getLogger(__name__)

SIR_CAP_DB = 200.0
SIR_CAP = 10.0 ** (SIR_CAP_DB / 10.0)
JOINT_MAX_USERS = 4
JOINT_MAX_CANDIDATES = 10**6

MmseRoute = Literal["gram", "system", "inverse"]


def _qam16() -> np.ndarray:
    levels = np.array([-3.0, -1.0, 1.0, 3.0])
    points = (levels[None, :] + 1j * levels[::-1, None]).ravel()
    return points / np.sqrt(10.0)


# Unit average energy; tie-breaking picks the lowest index
CONSTELLATIONS: dict[str, np.ndarray] = {
    "bpsk": np.array([1.0 + 0j, -1.0 + 0j]),
    "qpsk": np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / np.sqrt(2.0),
    "16qam": _qam16(),
}


def constellation(name: str) -> np.ndarray:
    """Return a copy of the named constellation (bpsk, qpsk or 16qam)."""
    try:
        return CONSTELLATIONS[name.lower()].copy()
    except KeyError as e:
        raise CellFreeConfigurationError(
            f"unknown constellation {name!r}; choose from {sorted(CONSTELLATIONS)}"
        ) from e


@dataclass(frozen=True, eq=False)
class DataPhaseConfig:
    """Per-UE symbol powers E_s,k, noise power and the symbol alphabet."""

    symbol_powers: np.ndarray
    noise_power: float = 1.0
    alphabet: np.ndarray = CONSTELLATIONS["qpsk"]

    def __post_init__(self) -> None:
        _validate_positive_array(self.symbol_powers, "symbol_powers")
        _validate_positive_number(self.noise_power, "noise_power")
        energy = float(np.mean(np.abs(self.alphabet) ** 2))
        if not np.isclose(energy, 1.0, atol=1e-9):
            raise CellFreeConfigurationError(
                f"constellation must have unit average energy, got {energy:.6g}"
            )

    @property
    def n_users(self) -> int:
        return int(np.size(self.symbol_powers))

    def draw_symbols(self, seed: SeedLike = None, n_symbols: int | None = None) -> np.ndarray:
        """Draw uniform alphabet indices, shape (K,) or (K, n_symbols)."""
        rng = as_generator(seed)
        shape = (self.n_users,) if n_symbols is None else (self.n_users, n_symbols)
        return rng.integers(0, self.alphabet.size, size=shape)

    def transmit(self, indices: np.ndarray) -> np.ndarray:
        """Map alphabet indices to transmitted symbols √E_s,k · s."""
        amplitude = np.sqrt(np.asarray(self.symbol_powers, dtype=float))
        symbols = self.alphabet[indices]
        return amplitude.reshape(-1, *([1] * (symbols.ndim - 1))) * symbols


def uplink_receive(
    H: np.ndarray, s: np.ndarray, noise_power: float, seed: SeedLike = None
) -> np.ndarray:
    """Stacked received vector y = H s + √N0 w."""
    if H.shape[1] != s.shape[0]:
        raise CellFreeConfigurationError(
            f"H has {H.shape[1]} columns but s has {s.shape[0]} entries"
        )
    y = H @ s
    if noise_power > 0:
        y = y + np.sqrt(noise_power) * complex_normal(as_generator(seed), y.shape)
    return y


@dataclass(frozen=True, eq=False)
class CombinerOutput:
    """Combined streams and effective gains.

    ``gains[..., k, l]`` is the gain of UE l's symbol on stream k. Under
    estimated CSI ``known_gains`` is the part predicted from the estimate and
    ``error_gains = gains - known_gains``. Leading axes index trials when the
    output is built from samples.
    """

    gains: np.ndarray
    noise_variance: np.ndarray | None = None
    combined: np.ndarray | None = None
    known_gains: np.ndarray | None = None
    error_gains: np.ndarray | None = None
    per_ap: np.ndarray | None = None
    scheme: str = ""


def _channel_gains(
    combiner: np.ndarray, csi: np.ndarray, channel: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    known = combiner.conj().T @ csi
    if channel is None:
        return known, None, None
    gains = combiner.conj().T @ channel
    return gains, known, gains - known


def conjugate_combine(
    csi: np.ndarray,
    y: np.ndarray,
    n_antennas: int,
    *,
    channel: np.ndarray | None = None,
    noise_power: float | None = None,
) -> CombinerOutput:
    """Per-AP matched filtering r_mk = ĥ_mkᴴ y_m, summed to r_k = Σ_m r_mk.

    ``csi`` is the channel used for combining (true H or Ĥ, stacked MN × K).
    When the true ``channel`` is given as well, gains are ĥ_kᴴ h_l and the
    estimated-CSI split ĥ_kᴴ ĥ_l / ĥ_kᴴ e_l is reported.
    """
    per_link = unstack(csi, n_antennas)
    y_blocks = y.reshape(per_link.shape[0], n_antennas, *y.shape[1:])
    per_ap = np.einsum("mkn,mn...->mk...", per_link.conj(), y_blocks)
    combined = per_ap.sum(axis=0)
    gains, known, error = _channel_gains(csi, csi, channel)
    noise_var = None
    if noise_power is not None:
        noise_var = noise_power * np.sum(np.abs(csi) ** 2, axis=0)
    return CombinerOutput(
        gains=gains,
        noise_variance=noise_var,
        combined=combined,
        known_gains=known,
        error_gains=error,
        per_ap=per_ap,
        scheme="conjugate",
    )


def mmse_combiner(
    csi: np.ndarray,
    regularizer: float,
    symbol_powers: np.ndarray | None = None,
    route: MmseRoute = "gram",
) -> np.ndarray:
    """MMSE combining matrix V = (H D Hᴴ + ψ I)⁻¹ H with D = diag(E_s).

    ``route="gram"`` solves the K × K system H̃ᴴH̃ + ψI with H̃ = H D^{1/2} by
    Cholesky; ``"system"`` factorizes the MN × MN matrix; ``"inverse"`` forms
    its explicit inverse.
    """
    regularizer = _validate_positive_number(regularizer, "regularizer")
    rows, k = csi.shape
    powers = np.ones(k) if symbol_powers is None else np.asarray(symbol_powers, float)
    _validate_positive_array(powers, "symbol_powers")

    if route == "gram":
        scaled = csi * np.sqrt(powers)[None, :]
        gram = scaled.conj().T @ scaled + regularizer * np.eye(k)
        factor = linalg.cho_factor(gram, lower=True)
        return scaled @ linalg.cho_solve(factor, np.diag(1.0 / np.sqrt(powers)))

    system = (csi * powers[None, :]) @ csi.conj().T + regularizer * np.eye(rows)
    if route == "system":
        return linalg.cho_solve(linalg.cho_factor(system, lower=True), csi)
    if route == "inverse":
        return np.linalg.inv(system) @ csi
    raise CellFreeConfigurationError(f"unknown MMSE route: {route}")


def mmse_combine(
    csi: np.ndarray,
    y: np.ndarray,
    regularizer: float,
    *,
    symbol_powers: np.ndarray | None = None,
    channel: np.ndarray | None = None,
    noise_power: float | None = None,
    route: MmseRoute = "gram",
) -> CombinerOutput:
    """Centralized MMSE combining r = Vᴴ y.

    With accurate CSI pass ``regularizer=N0``; under estimated CSI ``csi`` is
    Ĥ, ``channel`` the true H and ``regularizer`` the tuned ψ.
    """
    v = mmse_combiner(csi, regularizer, symbol_powers, route)
    gains, known, error = _channel_gains(v, csi, channel)
    noise_var = None
    if noise_power is not None:
        noise_var = noise_power * np.sum(np.abs(v) ** 2, axis=0)
    return CombinerOutput(
        gains=gains,
        noise_variance=noise_var,
        combined=v.conj().T @ y,
        known_gains=known,
        error_gains=error,
        scheme="mmse",
    )


def _decision_metric(r: np.ndarray, gain: np.ndarray, alphabet: np.ndarray) -> np.ndarray:
    r = np.asarray(r)
    gain = np.asarray(gain)
    return np.abs(r[..., None] - gain[..., None] * alphabet) ** 2


def stream_hard_detect(
    r: complex | np.ndarray,
    gain: complex | np.ndarray,
    alphabet: np.ndarray,
    return_index: bool = False,
) -> np.ndarray:
    """argmin over the alphabet of |r - gain·s|; ties go to the lowest index."""
    if np.any(np.asarray(gain) == 0):
        raise CellFreeDetectionError("cannot detect a stream with zero effective gain")
    idx = np.argmin(_decision_metric(r, gain, alphabet), axis=-1)
    return idx if return_index else alphabet[idx]


def stream_soft_probs(
    r: complex | np.ndarray,
    gain: complex | np.ndarray,
    interference_noise_power: float | np.ndarray,
    alphabet: np.ndarray,
) -> np.ndarray:
    """Normalized Gaussian symbol likelihoods ∝ exp(-|r - gain·s|² / σ²)."""
    power = np.asarray(interference_noise_power, dtype=float)
    if np.any(power <= 0):
        raise CellFreeConfigurationError("interference_noise_power must be positive")
    log_like = -_decision_metric(r, gain, alphabet) / power[..., None]
    log_like -= log_like.max(axis=-1, keepdims=True)
    weights = np.exp(log_like)
    return weights / weights.sum(axis=-1, keepdims=True)


def candidate_vectors(alphabet: np.ndarray, n_users: int) -> np.ndarray:
    """All |S|^K symbol vectors in lexicographic index order, shape (|S|^K, K)."""
    idx = np.array(list(itertools.product(range(alphabet.size), repeat=n_users)))
    return alphabet[idx]


def _check_joint_guard(alphabet: np.ndarray, n_users: int, max_users: int) -> None:
    candidates = float(alphabet.size) ** n_users
    if n_users > max_users or candidates > JOINT_MAX_CANDIDATES:
        raise CellFreeComplexityError(
            f"exhaustive joint detection over |S|^K = {alphabet.size}^{n_users} "
            f"candidates exceeds the guard (K <= {max_users}, "
            f"<= {JOINT_MAX_CANDIDATES:.0e} candidates)"
        )


def _joint_metric(
    y: np.ndarray, csi: np.ndarray, alphabet: np.ndarray, symbol_powers: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray]:
    k = csi.shape[1]
    candidates = candidate_vectors(alphabet, k)
    powers = np.ones(k) if symbol_powers is None else np.asarray(symbol_powers, float)
    images = csi @ (candidates * np.sqrt(powers)[None, :]).T  # (MN, C)
    y2 = y.reshape(y.shape[0], -1)
    metric = (
        np.sum(np.abs(y2) ** 2, axis=0)[None, :]
        - 2.0 * np.real(images.conj().T @ y2)
        + np.sum(np.abs(images) ** 2, axis=0)[:, None]
    )
    metric = np.maximum(metric, 0.0)
    return candidates, metric.reshape(candidates.shape[0], *y.shape[1:])


def joint_hard_detect(
    y: np.ndarray,
    csi: np.ndarray,
    alphabet: np.ndarray,
    *,
    symbol_powers: np.ndarray | None = None,
    max_users: int = JOINT_MAX_USERS,
) -> np.ndarray:
    """Exhaustive ML search argmin_s ‖y - H s‖² over S^K.

    ``y`` may carry extra trailing axes (one column per channel use); the
    result then has shape (K, ...).
    """
    _check_joint_guard(alphabet, csi.shape[1], max_users)
    candidates, metric = _joint_metric(y, csi, alphabet, symbol_powers)
    best = np.argmin(metric, axis=0)
    return np.moveaxis(candidates[best], -1, 0)


def joint_soft_probs(
    y: np.ndarray,
    csi: np.ndarray,
    alphabet: np.ndarray,
    noise_power: float,
    *,
    symbol_powers: np.ndarray | None = None,
    max_users: int = JOINT_MAX_USERS,
) -> tuple[np.ndarray, np.ndarray]:
    """Normalized vector likelihoods ∝ exp(-‖y - H s‖² / N0).

    Returns ``(candidates, probabilities)`` with candidates in the order of
    :func:`candidate_vectors`.
    """
    noise_power = _validate_positive_number(noise_power, "noise_power")
    _check_joint_guard(alphabet, csi.shape[1], max_users)
    candidates, metric = _joint_metric(y, csi, alphabet, symbol_powers)
    log_like = -metric / noise_power
    log_like -= log_like.max(axis=0, keepdims=True)
    weights = np.exp(log_like)
    return candidates, weights / weights.sum(axis=0, keepdims=True)


@dataclass(frozen=True, eq=False)
class SinrSamples:
    """Per-stream SIR and SINR (linear), capped at ``SIR_CAP``."""

    sir: np.ndarray
    sinr: np.ndarray

    @property
    def sir_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.sir)

    @property
    def sinr_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.sinr)


def _capped_ratio(signal: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denominator > 0, signal / denominator, SIR_CAP)
    return np.minimum(np.nan_to_num(ratio, nan=0.0, posinf=SIR_CAP), SIR_CAP)


def sinr_samples(output: CombinerOutput, symbol_powers: np.ndarray | float) -> SinrSamples:
    """SIR and SINR of every stream from the effective gains.

    Under estimated CSI the desired signal is the known part of the own gain
    and the own-stream error term counts as interference.
    """
    gains = output.gains
    k = gains.shape[-1]
    powers = np.broadcast_to(np.asarray(symbol_powers, dtype=float), (k,))
    own_mask = np.eye(k, dtype=bool)

    desired_gain = output.known_gains if output.known_gains is not None else gains
    signal = np.abs(np.diagonal(desired_gain, axis1=-2, axis2=-1)) ** 2 * powers
    cross = np.where(own_mask, 0.0, np.abs(gains) ** 2) @ powers
    if output.error_gains is not None:
        cross = cross + np.abs(np.diagonal(output.error_gains, axis1=-2, axis2=-1)) ** 2 * powers

    noise = 0.0 if output.noise_variance is None else output.noise_variance
    return SinrSamples(
        sir=_capped_ratio(signal, cross),
        sinr=_capped_ratio(signal, cross + noise),
    )


def symbol_error_rate(detected: np.ndarray, sent: np.ndarray) -> float:
    """Fraction of symbols where ``detected`` differs from ``sent``."""
    detected = np.asarray(detected)
    sent = np.asarray(sent)
    if detected.shape != sent.shape:
        raise CellFreeConfigurationError(
            f"shape mismatch: {detected.shape} vs {sent.shape}"
        )
    return float(np.mean(~np.isclose(detected, sent, atol=1e-12)))
