"""Tests for the experiment runners and their result tables."""

import json

import numpy as np
import pytest

from cellfree.config import SimulationConfig
from cellfree.exceptions import CellFreeBudgetError, CellFreeConfigurationError
from cellfree.experiments import (
    CDF_GRID_DB,
    ExperimentResult,
    _los_count_drop,
    ap_configs_for,
    drop_linkset,
    git_blob_digest,
    map_drops,
    mean_channel_gain,
    run_experiment,
    symbol_powers,
    write_results,
)


def _result(**overrides) -> ExperimentResult:
    values = {
        "experiment": "demo",
        "x_name": "snr_db",
        "x": np.array([0.0, 10.0]),
        "series": {"rate": np.array([1.0, 1.0 / 3.0])},
        "errors": {"rate": np.array([0.0, 0.25])},
        "config_hash": "abc",
        "seed": 3,
    }
    values.update(overrides)
    return ExperimentResult(**values)


def test_result_csv_format() -> None:
    text = _result().to_csv()
    assert text == "snr_db,rate,rate_se\n0,1,0\n10,0.3333333333,0.25\n"
    assert "\r" not in text


def test_result_validation() -> None:
    with pytest.raises(CellFreeConfigurationError):
        _result(series={"rate": np.ones(3)}, errors={"rate": np.zeros(3)})
    with pytest.raises(CellFreeConfigurationError):
        _result(errors={})
    with pytest.raises(CellFreeConfigurationError):
        _result(errors={"rate": np.array([0.0, -1.0])})


def test_result_write(tmp_path) -> None:
    csv_path, json_path = _result().write(tmp_path / "out")
    assert csv_path.name == "demo.csv"
    sidecar = json.loads(json_path.read_text())
    assert sidecar["digest"] == git_blob_digest(csv_path.read_bytes())
    assert sidecar["series"] == ["rate"]
    assert sidecar["seed"] == 3


def test_git_blob_digest() -> None:
    # git hash-object of an empty file
    assert git_blob_digest(b"") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391"


def test_write_results_stamps_config(tmp_path, tiny_config) -> None:
    paths = write_results([_result()], tmp_path, tiny_config)
    sidecar = json.loads(paths[1].read_text())
    assert sidecar["metadata"]["config"]["n_aps"] == tiny_config.n_aps


def test_ap_configs_for() -> None:
    assert ap_configs_for([0, 256, 1024]) == [(0, 0), (256, 4), (1024, 1)]
    with pytest.raises(CellFreeConfigurationError):
        ap_configs_for([300])


def test_los_pmf_is_deterministic(tmp_path, tiny_config) -> None:
    first = run_experiment("pmf-los", tiny_config, m_list=[8, 16])
    second = run_experiment("pmf-los", tiny_config, m_list=[8, 16])
    assert [r.experiment for r in first] == ["pmf-los-m8", "pmf-los-m16"]
    for a, b in zip(first, second, strict=True):
        assert a.to_csv() == b.to_csv()
        assert a.series["pmf"].sum() == pytest.approx(1.0)
        assert len(a.x) == a.metadata["n_aps"] + 1


def test_los_pmf_without_blockages_is_a_point_mass(tiny_config) -> None:
    config = tiny_config.with_overrides(mu=0.0)
    (result,) = run_experiment("pmf-los", config, m_list=[8])
    assert result.series["pmf"][8] == 1.0
    assert result.metadata["p_covered"] == 1.0


def test_map_drops_ignores_worker_count(tiny_config) -> None:
    serial = map_drops(_los_count_drop, tiny_config, drops=6, n_aps=32)
    parallel = map_drops(
        _los_count_drop, tiny_config.with_overrides(workers=2), drops=6, n_aps=32
    )
    assert serial == parallel


def test_rates_series(tiny_config) -> None:
    (result,) = run_experiment("rates", tiny_config)
    assert result.x_name == "snr_db"
    for name in ("conjugate_accurate_empirical", "joint_estimated_lower", "conjugate_accurate_upper"):
        assert name in result.series
    assert all(not name.startswith("mmse") for name in result.series)
    for scheme in ("conjugate", "joint"):
        for csi in ("accurate", "estimated"):
            upper = result.series[f"{scheme}_{csi}_upper"]
            assert np.all(result.series[f"{scheme}_{csi}_lower"] <= upper + 1e-9)
            assert upper[1] > upper[0]
    np.testing.assert_array_equal(result.errors["conjugate_accurate_upper"], 0.0)


def test_compare_includes_mmse(tiny_config) -> None:
    (result,) = run_experiment("compare", tiny_config)
    assert "mmse_estimated_empirical" in result.series
    assert np.all(result.errors["mmse_accurate_empirical"] > 0)


def test_cdf_tables(tiny_config) -> None:
    (result,) = run_experiment("cdf", tiny_config)
    np.testing.assert_array_equal(result.x, CDF_GRID_DB)
    assert set(result.series) == {
        "conjugate_accurate_sir",
        "conjugate_estimated_sir",
        "mmse_accurate_sinr",
        "mmse_estimated_sinr",
    }
    for cdf in result.series.values():
        assert np.all(np.diff(cdf) >= 0)
        assert 0.0 <= cdf[0] and cdf[-1] <= 1.0
    assert 0.0 <= result.metadata["no_los_fraction"] <= 1.0


def test_sweeps(tiny_config) -> None:
    (per_k,) = run_experiment("sweep-k", tiny_config, k_list=[1, 2])
    np.testing.assert_array_equal(per_k.x, [1.0, 2.0])

    (layouts,) = run_experiment("sweep-ap", tiny_config.with_overrides(schemes=["conjugate"]), m_list=[0, 512])
    assert layouts.series["conjugate_accurate_empirical"][0] == 0.0
    assert layouts.series["conjugate_accurate_empirical"][1] > 0.0
    assert layouts.metadata["n_antennas"] == [0, 2]

    (psi,) = run_experiment("sweep-psi", tiny_config, factors=[0.1, 1.0, 10.0])
    assert psi.metadata["best_factor"] in (0.1, 1.0, 10.0)


def test_geometry_table(tiny_config) -> None:
    (result,) = run_experiment("geometry", tiny_config)
    assert len(result.x) == tiny_config.n_users
    assert len(result.metadata["geometry"]["aps"]) == tiny_config.n_aps
    assert np.all(result.series["max_p_los"] <= 1.0)


def test_budget_guard(tiny_config) -> None:
    config = tiny_config.with_overrides(budget=10.0)
    with pytest.raises(CellFreeBudgetError):
        run_experiment("rates", config)


def test_unknown_experiment(tiny_config) -> None:
    with pytest.raises(CellFreeConfigurationError):
        run_experiment("downlink", tiny_config)


@pytest.mark.slow
def test_validation_suite_passes() -> None:
    config = SimulationConfig(trials=20000, drops=3, seed=2)
    (result,) = run_experiment("validate", config)
    assert result.metadata["passed"], result.metadata["summary"]
    assert result.metadata["critical_z"] > 3.0


def test_symbol_powers_reference(tiny_config) -> None:
    linkset = drop_linkset(tiny_config, 0)
    transmit = symbol_powers(tiny_config, 20.0, linkset, "transmit")
    received = symbol_powers(tiny_config, 20.0, linkset)
    np.testing.assert_allclose(transmit, np.full(tiny_config.n_users, 100.0))
    np.testing.assert_allclose(received * mean_channel_gain(linkset), transmit)

    (rates,) = run_experiment("rates", tiny_config)
    assert rates.metadata["snr_reference"] == "received"
    (layouts,) = run_experiment("sweep-ap", tiny_config.with_overrides(schemes=["conjugate"]), m_list=[512])
    assert layouts.metadata["snr_reference"] == "transmit"


@pytest.mark.slow
def test_los_coverage_grows_with_ap_count() -> None:
    config = SimulationConfig(drops=1000, trials=1, seed=7)
    sparse, dense = run_experiment("pmf-los", config, m_list=[128, 1024])
    assert sparse.metadata["p_covered"] == pytest.approx(0.40, abs=0.08)
    assert dense.metadata["p_covered"] > 0.95


@pytest.mark.slow
def test_rate_bounds_bracket_empirical_rates() -> None:
    config = SimulationConfig(
        n_aps=128,
        n_users=8,
        trials=500,
        drops=2,
        seed=3,
        snr_db=[-10.0, 0.0, 10.0, 20.0, 30.0, 40.0, 50.0],
        los_mode="per_trial",
    )
    (result,) = run_experiment("compare", config)
    for scheme in ("conjugate", "joint", "mmse"):
        for csi in ("accurate", "estimated"):
            name = f"{scheme}_{csi}"
            empirical = result.series[f"{name}_empirical"]
            tolerance = 4 * (result.errors[f"{name}_empirical"] + result.errors[f"{name}_lower"]) + 1e-9
            assert np.all(result.series[f"{name}_lower"] <= empirical + tolerance), name
            assert np.all(empirical <= result.series[f"{name}_upper"] + tolerance), name


@pytest.mark.slow
def test_conjugate_rate_saturates_at_high_snr() -> None:
    config = SimulationConfig().full_scale().with_overrides(
        snr_db=[40.0, 50.0], trials=30, drops=2, seed=1
    )
    (result,) = run_experiment("compare", config)
    conj = result.series["conjugate_accurate_empirical"]
    joint = result.series["joint_accurate_empirical"]
    mmse = result.series["mmse_accurate_empirical"]
    assert conj[1] / conj[0] < 1.05
    np.testing.assert_allclose(mmse, joint, rtol=0.1)
    assert np.all(joint > conj)
    assert np.all(mmse > conj)


@pytest.mark.slow
def test_conjugate_sir_captures_los_users() -> None:
    config = SimulationConfig(n_aps=128, n_users=8, trials=20, drops=25, seed=4)
    (result,) = run_experiment("cdf", config)
    at_zero_db = int(np.flatnonzero(CDF_GRID_DB == 0.0)[0])
    cdf = result.series["conjugate_accurate_sir"]
    assert cdf[at_zero_db] == pytest.approx(result.metadata["no_los_fraction"], abs=0.1)


@pytest.mark.slow
def test_dense_single_antenna_aps_win() -> None:
    config = SimulationConfig().full_scale().with_overrides(
        schemes=["mmse"], trials=20, drops=8, seed=2
    )
    (result,) = run_experiment("sweep-ap", config, m_list=[1024, 128])
    rates = result.series["mmse_accurate_empirical"]
    assert 2.0 <= rates[0] / rates[1] <= 4.0
