"""Tests for steering vectors, channel draws and per-trial substreams."""

import numpy as np
import pytest

from cellfree.channel import (
    ChannelRealization,
    TrialSampler,
    draw_channel,
    draw_los_indicators,
    load_channel_matrix,
    los_channel,
    los_components,
    sample_channels,
    stack,
    steering_vector,
    unstack,
)
from cellfree.exceptions import CellFreeConfigurationError
from cellfree.streams import substream


@pytest.mark.parametrize("n_antennas", [1, 2, 4, 8])
def test_steering_vector_norm(n_antennas: int) -> None:
    theta = np.linspace(-np.pi, np.pi, 7)
    a = steering_vector(theta, n_antennas, 0.075, 0.15)
    assert a.shape == (7, n_antennas)
    np.testing.assert_allclose(np.sum(np.abs(a) ** 2, axis=-1), n_antennas)
    np.testing.assert_allclose(a[:, 0], 1.0)


def test_steering_vector_broadside_is_all_ones() -> None:
    np.testing.assert_allclose(steering_vector(0.0, 4, 0.075, 0.15), np.ones(4))


def test_steering_vector_validates_arguments() -> None:
    with pytest.raises(CellFreeConfigurationError):
        steering_vector(0.1, 0, 0.075, 0.15)
    with pytest.raises(CellFreeConfigurationError):
        steering_vector(0.1, 2, 0.075, 0.0)


def test_stack_is_ap_major(rng: np.random.Generator) -> None:
    per_link = rng.standard_normal((3, 2, 4)) + 0j
    h = stack(per_link)
    assert h.shape == (12, 2)
    assert h[1 * 4 + 2, 1] == per_link[1, 1, 2]
    np.testing.assert_array_equal(unstack(h, 4), per_link)


def test_los_components_match_single_link(small_links) -> None:
    los = los_components(small_links)
    assert los.shape == (small_links.n_aps, small_links.n_users, small_links.n_antennas)
    np.testing.assert_allclose(los[2, 1], los_channel(small_links, 2, 1))
    np.testing.assert_allclose(
        np.sum(np.abs(los) ** 2, axis=-1), small_links.n_antennas * small_links.los_gain
    )


def test_draw_los_indicators(small_links) -> None:
    delta = draw_los_indicators(small_links, 3)
    assert delta.shape == (small_links.n_aps, small_links.n_users)
    assert set(np.unique(delta)) <= {0, 1}
    np.testing.assert_array_equal(delta, draw_los_indicators(small_links.p_los, 3))
    with pytest.raises(CellFreeConfigurationError):
        draw_los_indicators(np.array([[1.5]]))


def test_draw_los_indicators_certain_links(clear_sky_links) -> None:
    delta = draw_los_indicators(clear_sky_links, 0)
    assert np.all(delta == 1)


def test_draw_channel_decomposition(small_links) -> None:
    delta = draw_los_indicators(small_links, 1)
    realization = draw_channel(small_links, delta, 2)
    n = small_links.n_antennas
    assert realization.H.shape == (small_links.n_aps * n, small_links.n_users)
    mask = np.repeat(delta, n, axis=0)
    scale = np.sqrt(np.repeat(small_links.beta, n, axis=0))
    np.testing.assert_allclose(
        realization.H, mask * realization.los_part + scale * realization.nlos_part
    )
    np.testing.assert_allclose(realization.block(1, 2), realization.per_link()[1, 2])


def test_draw_channel_without_los_is_rayleigh(small_links) -> None:
    delta = np.zeros((small_links.n_aps, small_links.n_users), dtype=int)
    draws = sample_channels(small_links, delta, np.random.default_rng(0), 4000)
    power = np.mean(np.abs(draws) ** 2, axis=(0, 3))
    np.testing.assert_allclose(power, small_links.beta, rtol=0.1)


def test_draw_channel_rejects_wrong_delta_shape(small_links) -> None:
    with pytest.raises(CellFreeConfigurationError):
        draw_channel(small_links, np.zeros((1, 1)), 0)


def test_dump_and_load_round_trip(tmp_path, small_links) -> None:
    delta = draw_los_indicators(small_links, 4)
    realization = draw_channel(small_links, delta, 5)
    path = realization.dump(tmp_path / "h.bin")
    assert path.stat().st_size == realization.H.size * 16
    loaded = load_channel_matrix(path, *realization.H.shape)
    np.testing.assert_array_equal(loaded, realization.H)
    with pytest.raises(CellFreeConfigurationError):
        load_channel_matrix(path, 1, 1)


def test_trial_sampler_is_order_independent(small_links) -> None:
    sampler = TrialSampler(small_links, seed=17, drop=2)
    _, forward = sampler.trial(3)
    for t in range(5):
        sampler.trial(t)
    _, again = TrialSampler(small_links, seed=17, drop=2).trial(3)
    np.testing.assert_array_equal(forward.H, again.H)
    assert isinstance(forward, ChannelRealization)


def test_trial_sampler_los_modes(small_links) -> None:
    per_drop = TrialSampler(small_links, seed=1, drop=0, los_mode="per_drop")
    np.testing.assert_array_equal(per_drop.trial(0)[1].delta, per_drop.trial(1)[1].delta)

    per_trial = TrialSampler(small_links, seed=1, drop=0, los_mode="per_trial")
    deltas = [per_trial.trial(t)[1].delta for t in range(20)]
    assert any(not np.array_equal(deltas[0], d) for d in deltas[1:]) or np.all(
        (small_links.p_los == 0) | (small_links.p_los == 1)
    )
    with pytest.raises(CellFreeConfigurationError):
        TrialSampler(small_links, seed=1, los_mode="sometimes")


def test_substreams_are_distinct() -> None:
    a = substream(3, 0, 1).random(4)
    b = substream(3, 0, 2).random(4)
    c = substream(3, 0, 1).random(4)
    assert not np.allclose(a, b)
    np.testing.assert_array_equal(a, c)
