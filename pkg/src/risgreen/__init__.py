"""Network power minimization and user admission control for multi-RIS downlinks."""

from .admission import (
    AdmissionOutcome,
    AdmissionParams,
    admission_control,
    alternate_slack_steps,
    run_algorithm2,
    unified_entry,
)
from .beamform import solve_beamforming
from .harness import ExperimentSpec, run_experiment
from .netmodel import (
    BeamformingSolution,
    ChannelRealization,
    ConfigError,
    PowerBreakdown,
    RisConfiguration,
    SystemConfig,
    effective_channel,
    energy_efficiency,
    generate_channels,
    network_power,
    sinr,
)
from .ris_select import DcParams, minimize_network_power
from .zf import ZfParams, zf_minimize_power

__all__ = [
    "AdmissionOutcome",
    "AdmissionParams",
    "BeamformingSolution",
    "ChannelRealization",
    "ConfigError",
    "DcParams",
    "ExperimentSpec",
    "PowerBreakdown",
    "RisConfiguration",
    "SystemConfig",
    "ZfParams",
    "admission_control",
    "alternate_slack_steps",
    "effective_channel",
    "energy_efficiency",
    "generate_channels",
    "minimize_network_power",
    "network_power",
    "run_algorithm2",
    "run_experiment",
    "sinr",
    "solve_beamforming",
    "unified_entry",
    "zf_minimize_power",
]
