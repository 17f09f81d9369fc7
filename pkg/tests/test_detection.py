"""Tests for the data phase, the three receivers and SINR bookkeeping."""

import numpy as np
import pytest

from cellfree.detection import (
    CONSTELLATIONS,
    SIR_CAP_DB,
    CombinerOutput,
    DataPhaseConfig,
    candidate_vectors,
    conjugate_combine,
    constellation,
    joint_hard_detect,
    joint_soft_probs,
    mmse_combine,
    mmse_combiner,
    sinr_samples,
    stream_hard_detect,
    stream_soft_probs,
    symbol_error_rate,
    uplink_receive,
)
from cellfree.exceptions import (
    CellFreeComplexityError,
    CellFreeConfigurationError,
    CellFreeDetectionError,
)
from cellfree.streams import complex_normal


def _channel(rng: np.random.Generator, rows: int, users: int) -> np.ndarray:
    return complex_normal(rng, (rows, users))


@pytest.mark.parametrize("name", sorted(CONSTELLATIONS))
def test_constellations_have_unit_energy(name: str) -> None:
    points = constellation(name)
    assert np.mean(np.abs(points) ** 2) == pytest.approx(1.0)
    assert len(np.unique(points)) == points.size


def test_unknown_constellation() -> None:
    with pytest.raises(CellFreeConfigurationError):
        constellation("8psk")


def test_data_phase_config(rng: np.random.Generator) -> None:
    config = DataPhaseConfig(symbol_powers=np.array([1.0, 4.0]))
    idx = config.draw_symbols(rng, n_symbols=5)
    assert idx.shape == (2, 5)
    sent = config.transmit(idx)
    np.testing.assert_allclose(np.abs(sent[1]), 2.0)
    with pytest.raises(CellFreeConfigurationError):
        DataPhaseConfig(symbol_powers=np.ones(2), alphabet=np.array([2.0 + 0j]))
    with pytest.raises(CellFreeConfigurationError):
        DataPhaseConfig(symbol_powers=np.array([1.0, 0.0]))


def test_uplink_receive(rng: np.random.Generator) -> None:
    h = _channel(rng, 4, 2)
    s = np.array([1.0 + 0j, -1.0 + 0j])
    np.testing.assert_allclose(uplink_receive(h, s, 0.0), h @ s)
    with pytest.raises(CellFreeConfigurationError):
        uplink_receive(h, np.ones(3), 1.0)


def test_conjugate_combine_reconstructs_signal(rng: np.random.Generator) -> None:
    h = _channel(rng, 6, 3)
    s = CONSTELLATIONS["qpsk"][[0, 2, 3]]
    out = conjugate_combine(h, h @ s, n_antennas=2, noise_power=1.0)
    np.testing.assert_allclose(out.combined, out.gains @ s)
    np.testing.assert_allclose(out.per_ap.sum(axis=0), out.combined)
    assert out.per_ap.shape == (3, 3)
    np.testing.assert_allclose(out.noise_variance, np.sum(np.abs(h) ** 2, axis=0))
    assert out.known_gains is None


def test_conjugate_combine_splits_estimation_error(rng: np.random.Generator) -> None:
    h = _channel(rng, 4, 2)
    hhat = h + 0.1 * _channel(rng, 4, 2)
    out = conjugate_combine(hhat, h @ np.ones(2), n_antennas=2, channel=h)
    np.testing.assert_allclose(out.gains, hhat.conj().T @ h)
    np.testing.assert_allclose(out.known_gains + out.error_gains, out.gains)


def test_mmse_single_user_gain(rng: np.random.Generator) -> None:
    h = _channel(rng, 4, 1)
    out = mmse_combine(h, h[:, 0], 0.5, noise_power=0.5)
    norm2 = float(np.sum(np.abs(h) ** 2))
    assert out.gains[0, 0].real == pytest.approx(norm2 / (norm2 + 0.5))
    assert abs(out.gains[0, 0].imag) < 1e-12


def test_mmse_routes_agree(rng: np.random.Generator) -> None:
    h = _channel(rng, 8, 3)
    powers = np.array([1.0, 2.0, 0.5])
    gram = mmse_combiner(h, 0.3, powers, route="gram")
    np.testing.assert_allclose(mmse_combiner(h, 0.3, powers, route="system"), gram, atol=1e-10)
    np.testing.assert_allclose(mmse_combiner(h, 0.3, powers, route="inverse"), gram, atol=1e-10)
    with pytest.raises(CellFreeConfigurationError):
        mmse_combiner(h, 0.3, powers, route="qr")
    with pytest.raises(CellFreeConfigurationError):
        mmse_combiner(h, 0.0)


def test_mmse_gains_approach_identity_at_high_snr(rng: np.random.Generator) -> None:
    h = _channel(rng, 8, 3)
    out = mmse_combine(h, h @ np.ones(3), 1e-8)
    np.testing.assert_allclose(out.gains, np.eye(3), atol=1e-6)


def test_stream_hard_detect() -> None:
    qpsk = CONSTELLATIONS["qpsk"]
    gain = 0.5 * np.exp(0.3j)
    received = gain * qpsk + 0.01
    np.testing.assert_allclose(stream_hard_detect(received, gain, qpsk), qpsk)
    np.testing.assert_array_equal(
        stream_hard_detect(received, gain, qpsk, return_index=True), np.arange(4)
    )
    # equidistant from both points; lowest index wins
    assert stream_hard_detect(0.0 + 0j, 1.0, CONSTELLATIONS["bpsk"]) == 1.0
    with pytest.raises(CellFreeDetectionError):
        stream_hard_detect(1.0 + 0j, 0.0, qpsk)


def test_stream_soft_probs() -> None:
    qpsk = CONSTELLATIONS["qpsk"]
    probs = stream_soft_probs(np.array([qpsk[2], 0.0]), 1.0, 0.1, qpsk)
    np.testing.assert_allclose(probs.sum(axis=-1), 1.0)
    assert np.argmax(probs[0]) == 2
    np.testing.assert_allclose(probs[1], 0.25)
    with pytest.raises(CellFreeConfigurationError):
        stream_soft_probs(0.0, 1.0, 0.0, qpsk)


def test_candidate_vectors_order() -> None:
    bpsk = CONSTELLATIONS["bpsk"]
    candidates = candidate_vectors(bpsk, 2)
    np.testing.assert_array_equal(candidates, [[1, 1], [1, -1], [-1, 1], [-1, -1]])


def test_joint_detection_noiseless(rng: np.random.Generator) -> None:
    qpsk = CONSTELLATIONS["qpsk"]
    h = _channel(rng, 6, 3)
    idx = rng.integers(0, 4, size=(3, 7))
    s = qpsk[idx]
    detected = joint_hard_detect(h @ s, h, qpsk)
    assert detected.shape == (3, 7)
    np.testing.assert_allclose(detected, s)
    assert symbol_error_rate(detected, s) == 0.0

    candidates, probs = joint_soft_probs(h @ s[:, 0], h, qpsk, 0.01)
    assert candidates.shape == (64, 3)
    assert probs.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(candidates[np.argmax(probs)], s[:, 0])


def test_joint_detection_guard(rng: np.random.Generator) -> None:
    h = _channel(rng, 6, 5)
    with pytest.raises(CellFreeComplexityError):
        joint_hard_detect(np.zeros(6, complex), h, CONSTELLATIONS["bpsk"])
    with pytest.raises(CellFreeComplexityError):
        joint_soft_probs(np.zeros(6, complex), h, CONSTELLATIONS["bpsk"], 1.0)


def test_sinr_samples_cap_and_values() -> None:
    capped = sinr_samples(CombinerOutput(gains=np.eye(2, dtype=complex)), 1.0)
    np.testing.assert_allclose(capped.sir_db, SIR_CAP_DB)

    gains = np.array([[2.0, 1.0], [0.5, 1.0]], dtype=complex)
    out = CombinerOutput(gains=gains, noise_variance=np.array([1.0, 0.75]))
    samples = sinr_samples(out, np.array([1.0, 2.0]))
    np.testing.assert_allclose(samples.sir, [4.0 / 2.0, 2.0 / 0.25])
    np.testing.assert_allclose(samples.sinr, [4.0 / 3.0, 2.0 / 1.0])


def test_sinr_samples_count_own_error_as_interference() -> None:
    known = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=complex)
    error = np.array([[0.5, 0.0], [0.0, 0.0]], dtype=complex)
    out = CombinerOutput(gains=known + error, known_gains=known, error_gains=error)
    samples = sinr_samples(out, 1.0)
    assert samples.sir[0] == pytest.approx(4.0)
    assert samples.sir_db[1] == pytest.approx(SIR_CAP_DB)


def test_symbol_error_rate() -> None:
    assert symbol_error_rate(np.array([1, 2, 3, 4]), np.array([1, 2, 0, 0])) == 0.5
    with pytest.raises(CellFreeConfigurationError):
        symbol_error_rate(np.ones(2), np.ones(3))
