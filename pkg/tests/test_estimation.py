"""Tests for pilot training and LMMSE channel estimation."""

import numpy as np
import pytest

from cellfree.channel import (
    draw_channel,
    draw_los_indicators,
    los_components,
    sample_channels,
)
from cellfree.estimation import (
    PilotConfig,
    despread,
    error_decomposition,
    estimate_channel,
    link_covariances,
    lmmse_estimate,
    lmmse_gain,
    orthonormal_pilots,
    pilot_receive,
    psd_sqrt,
)
from cellfree.exceptions import CellFreeConfigurationError, CellFreeContractError
from cellfree.streams import complex_normal


def test_pilot_config_modes(small_links) -> None:
    delta = np.ones((small_links.n_aps, small_links.n_users), dtype=int)
    per_link = PilotConfig.from_db(20.0).pilot_power(small_links, delta)
    received = per_link * (small_links.los_gain + small_links.beta)
    np.testing.assert_allclose(received, 100.0)

    flat = PilotConfig(pilot_snr=100.0, mode="global").pilot_power(small_links, delta)
    np.testing.assert_allclose(flat, 100.0)

    with pytest.raises(CellFreeConfigurationError):
        PilotConfig(pilot_snr=0.0)
    with pytest.raises(CellFreeConfigurationError):
        PilotConfig(mode="sometimes")


def test_noiseless_despread_recovers_scaled_channel(small_links) -> None:
    delta = draw_los_indicators(small_links, 0)
    realization = draw_channel(small_links, delta, 1)
    pilots = orthonormal_pilots(small_links.n_users)
    y = pilot_receive(realization, pilots, 4.0, 0.0)
    np.testing.assert_allclose(despread(y, pilots), 2.0 * realization.per_link())
    np.testing.assert_allclose(despread(y, pilots, k=1), 2.0 * realization.per_link()[:, 1])


def test_pilot_receive_rejects_bad_pilots(small_links) -> None:
    realization = draw_channel(small_links, draw_los_indicators(small_links, 0), 1)
    with pytest.raises(CellFreeConfigurationError):
        pilot_receive(realization, 2 * np.eye(small_links.n_users), 1.0, 1.0)
    with pytest.raises(CellFreeConfigurationError):
        pilot_receive(realization, np.eye(small_links.n_users + 1), 1.0, 1.0)


def test_covariances_are_consistent(small_links) -> None:
    cov = link_covariances(small_links, 1, 10.0, 1.0)
    los = los_components(small_links)
    n = small_links.n_antennas
    expected = np.einsum("mki,mkj->mkij", los, los.conj()) + small_links.beta[..., None, None] * np.eye(n)
    np.testing.assert_allclose(cov.sigma_hh, expected)
    np.testing.assert_allclose(cov.sigma_yy, 10.0 * expected + np.eye(n))
    np.testing.assert_allclose(cov.sigma_hy, np.sqrt(10.0) * expected)


def test_lmmse_covariances_split_the_prior(small_links) -> None:
    cov = link_covariances(small_links, 1, 50.0, 1.0)
    y_prime = np.zeros((small_links.n_aps, small_links.n_users, small_links.n_antennas), complex)
    hhat, c, cbar = lmmse_estimate(y_prime, cov)
    np.testing.assert_allclose(hhat, 0.0)
    np.testing.assert_allclose(c + cbar, cov.sigma_hh, atol=1e-12)
    assert np.all(np.linalg.eigvalsh(cbar) > -1e-12)
    assert np.all(np.linalg.eigvalsh(c) > -1e-12)


def test_high_pilot_snr_gives_accurate_estimates(small_links) -> None:
    delta = draw_los_indicators(small_links, 2)
    realization = draw_channel(small_links, delta, 3)
    estimate = estimate_channel(realization, small_links, PilotConfig.from_db(60.0), 4)
    error = np.linalg.norm(estimate.Hhat - realization.H) / np.linalg.norm(realization.H)
    assert error < 1e-2
    assert estimate.error_power.shape == (small_links.n_aps, small_links.n_users)


def test_lmmse_orthogonality(two_ap_links) -> None:
    pilot = PilotConfig.from_db(10.0)
    delta = draw_los_indicators(two_ap_links, 5)
    rng = np.random.default_rng(6)
    h = sample_channels(two_ap_links, delta, rng, 200_000)
    ep = pilot.pilot_power(two_ap_links, delta)
    cov = link_covariances(two_ap_links, delta, ep, pilot.noise_power)
    y_prime = np.sqrt(ep)[..., None] * h + complex_normal(rng, h.shape)
    hhat = np.einsum("mkij,tmkj->tmki", lmmse_gain(cov), y_prime)

    split = error_decomposition(h, hhat)
    cross = np.abs(split.cross_covariance).max(axis=(-2, -1))
    own = np.mean(np.sum(np.abs(hhat) ** 2, axis=-1), axis=0)
    err = np.real(np.trace(split.error_covariance, axis1=-2, axis2=-1))
    assert np.all(cross < 0.02 * np.sqrt(own * err))


def test_error_decomposition_single_sample() -> None:
    split = error_decomposition(np.ones((1, 3)), np.zeros((1, 3)))
    assert split.error_covariance is None
    np.testing.assert_array_equal(split.error, np.ones((1, 3)))


def test_psd_sqrt() -> None:
    a = np.array([[4.0, 2.0], [2.0, 3.0]], dtype=complex)
    root = psd_sqrt(a)
    np.testing.assert_allclose(root @ root, a, atol=1e-12)
    np.testing.assert_allclose(root, root.conj().T)

    nearly = np.diag([1.0, -1e-12])
    np.testing.assert_allclose(psd_sqrt(nearly), np.diag([1.0, 0.0]))

    with pytest.raises(CellFreeContractError):
        psd_sqrt(np.array([[1.0, 2.0], [0.0, 1.0]]))
    with pytest.raises(CellFreeContractError):
        psd_sqrt(np.diag([1.0, -0.5]))
    with pytest.raises(CellFreeContractError):
        psd_sqrt(np.ones(3))


def test_estimate_covariance_is_dominated_by_the_prior(small_links) -> None:
    delta = draw_los_indicators(small_links, 7)
    traces = []
    for pilot_snr_db in (0.0, 10.0, 20.0):
        pilot = PilotConfig.from_db(pilot_snr_db)
        cov = link_covariances(small_links, delta, pilot.pilot_power(small_links, delta), 1.0)
        y_prime = np.zeros((small_links.n_aps, small_links.n_users, small_links.n_antennas), complex)
        _, c, cbar = lmmse_estimate(y_prime, cov)
        scale = np.linalg.eigvalsh(cov.sigma_hh).max(axis=-1, keepdims=True)
        assert np.all(np.linalg.eigvalsh(cov.sigma_hh - c) >= -1e-9 * scale)
        traces.append(np.real(np.trace(cbar, axis1=-2, axis2=-1)))
    # error power shrinks on every link as the pilot SNR grows
    assert np.all(np.diff(np.stack(traces), axis=0) < 0)
