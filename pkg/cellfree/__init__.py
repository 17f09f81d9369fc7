"""Link-level simulator and rate-bound calculator for cell-free massive MIMO uplinks."""

from .analytics import (
    EstCsiMoments,
    GMoments,
    RateBoundReport,
    conj_rate_bounds,
    empirical_rate,
    est_csi_moments,
    g_moments,
    gkk_moments,
    gkl_moments,
    joint_rate_bounds,
    mmse_rate_bounds,
    rate_report,
    sample_grams,
    zk_variance,
)
from .channel import (
    ChannelRealization,
    TrialSampler,
    draw_channel,
    draw_los_indicators,
    los_channel,
    steering_vector,
)
from .config import BlockageEnvironment, SimulationConfig
from .detection import (
    CombinerOutput,
    DataPhaseConfig,
    conjugate_combine,
    joint_hard_detect,
    joint_soft_probs,
    mmse_combine,
    mmse_combiner,
    sinr_samples,
    stream_hard_detect,
    stream_soft_probs,
    uplink_receive,
)
from .estimation import (
    ChannelEstimate,
    PilotConfig,
    despread,
    estimate_channel,
    lmmse_estimate,
    pilot_receive,
    psd_sqrt,
)
from .exceptions import (
    CellFreeBudgetError,
    CellFreeComplexityError,
    CellFreeConfigurationError,
    CellFreeContractError,
    CellFreeDetectionError,
    CellFreeGeometryError,
)
from .experiments import ExperimentResult, run_experiment
from .geometry import (
    LinkSet,
    NetworkGeometry,
    link_metrics,
    los_probability,
    place_from_config,
    place_uniform,
)

__all__ = [
    "BlockageEnvironment",
    "CellFreeBudgetError",
    "CellFreeComplexityError",
    "CellFreeConfigurationError",
    "CellFreeContractError",
    "CellFreeDetectionError",
    "CellFreeGeometryError",
    "ChannelEstimate",
    "ChannelRealization",
    "CombinerOutput",
    "DataPhaseConfig",
    "EstCsiMoments",
    "ExperimentResult",
    "GMoments",
    "LinkSet",
    "NetworkGeometry",
    "PilotConfig",
    "RateBoundReport",
    "SimulationConfig",
    "TrialSampler",
    "conj_rate_bounds",
    "conjugate_combine",
    "despread",
    "draw_channel",
    "draw_los_indicators",
    "empirical_rate",
    "est_csi_moments",
    "estimate_channel",
    "g_moments",
    "gkk_moments",
    "gkl_moments",
    "joint_hard_detect",
    "joint_rate_bounds",
    "joint_soft_probs",
    "link_metrics",
    "lmmse_estimate",
    "los_channel",
    "los_probability",
    "mmse_combine",
    "mmse_combiner",
    "mmse_rate_bounds",
    "pilot_receive",
    "place_from_config",
    "place_uniform",
    "psd_sqrt",
    "rate_report",
    "run_experiment",
    "sample_grams",
    "sinr_samples",
    "steering_vector",
    "stream_hard_detect",
    "stream_soft_probs",
    "uplink_receive",
    "zk_variance",
]
