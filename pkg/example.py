#!/usr/bin/env python3
"""Simple cellfree library example.
=================================

This example demonstrates the basic usage of the cellfree package:
- Placing APs and UEs and computing link metrics
- Drawing one channel realization and estimating it from pilots
- Closed-form moments and rate bounds for the three receivers
- Error handling for configuration and budget errors

For full experiments with CSV output use the ``cellfree`` command.

Environment Variables (optional):
export CELLFREE_SEED=<seed for the drop>
export CELLFREE_APS=<number of APs>
"""

import logging
import os
import sys

import numpy as np

from cellfree import (
    CellFreeBudgetError,
    CellFreeConfigurationError,
    PilotConfig,
    SimulationConfig,
    draw_channel,
    draw_los_indicators,
    est_csi_moments,
    estimate_channel,
    g_moments,
    link_metrics,
    place_from_config,
    rate_report,
    sample_grams,
)
from cellfree.experiments import symbol_powers

# Keep library warnings (short Monte-Carlo runs) out of the example output
logging.getLogger("cellfree").setLevel(logging.ERROR)


def safe_call(func, *args, **kwargs):
    """Safe call wrapper with the error handling used by the CLI.

    Returns (success: bool, result: Any, error_message: str)
    """
    try:
        return True, func(*args, **kwargs), None
    except CellFreeBudgetError as e:
        return False, None, f"Refused by the budget guard: {e}"
    except CellFreeConfigurationError as e:
        return False, None, f"Configuration issue: {e}"


def build_config() -> SimulationConfig | None:
    """Small deployment, overridable from the environment."""
    success, config, error_msg = safe_call(
        SimulationConfig.build,
        n_aps=int(os.getenv("CELLFREE_APS", "64")),
        n_users=4,
        n_antennas=2,
        area_side=0.25,
        trials=200,
        seed=int(os.getenv("CELLFREE_SEED", "7")),
    )
    if not success:
        print(f"❌ {error_msg}")
        return None
    return config


def display_drop(config: SimulationConfig):
    """Show one drop: LoS probabilities, one channel and its estimate."""
    linkset = link_metrics(place_from_config(config, config.seed), config.d0, config.eta)
    print(f"📡 {linkset.n_aps} APs x {linkset.n_antennas} antennas, {linkset.n_users} UEs")
    print(f"   Expected LoS links per UE: {np.round(linkset.p_los.sum(axis=0), 2)}")

    delta = draw_los_indicators(linkset, config.seed)
    realization = draw_channel(linkset, delta, config.seed)
    pilot = PilotConfig.from_db(config.pilot_snr_db)
    estimate = estimate_channel(realization, linkset, pilot, config.seed)
    error = np.linalg.norm(estimate.Hhat - realization.H) / np.linalg.norm(realization.H)
    print(f"   Drawn LoS links per UE:    {delta.sum(axis=0)}")
    print(f"   Relative estimation error: {error:.3%}")
    return linkset, pilot


def display_rates(config: SimulationConfig, linkset, pilot: PilotConfig):
    """Sum-rate bounds of every receiver at the configured rate SNR."""
    samples = sample_grams(linkset, config.trials, config.seed, pilot=pilot)
    powers = symbol_powers(config, config.rate_snr_db, linkset)
    moments = {
        "accurate": g_moments(linkset),
        "estimated": est_csi_moments(linkset, pilot),
    }

    print(f"\n📈 Sum rates at {config.rate_snr_db:g} dB (bit/s/Hz)")
    for scheme in config.schemes:
        for csi, moment in moments.items():
            success, report, error_msg = safe_call(
                rate_report, scheme, moment, samples, powers
            )
            if not success:
                print(f"   {scheme:<10} {csi:<10} ❌ {error_msg}")
                continue
            sums = report.sum_rates()
            print(
                f"   {scheme:<10} {csi:<10} lower {sums['lower']:7.3f}"
                f"  empirical {sums['empirical']:7.3f}  upper {sums['upper']:7.3f}"
            )


def main():
    """Main example demonstrating basic cellfree usage."""
    config = build_config()
    if not config:
        sys.exit(1)

    linkset, pilot = display_drop(config)
    display_rates(config, linkset, pilot)


if __name__ == "__main__":
    try:
        main()
    except KeyboardInterrupt:
        print("\n🚪 Exiting example. Goodbye! 👋")
