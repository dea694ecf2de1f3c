"""Discrete-event simulator and scripted adversaries."""

from .attacks import (
    REPLAY_CELLS,
    EavesdropResult,
    LinkageReport,
    RelayOutcome,
    attribute_tracks,
    linkage_scenario,
    random_relay_scenario,
    relay_scenario,
    run_eavesdrop_experiment,
    run_linkage_analysis,
    run_relay_attack,
)
from .channel import ChannelModel
from .engine import Capture, EventLog, SimResult, run
from .scenario import AdversaryConfig, Scenario, ScenarioError, bundled_names, load_bundled

__all__ = [
    "AdversaryConfig", "Capture", "ChannelModel", "EavesdropResult", "EventLog", "LinkageReport",
    "REPLAY_CELLS", "RelayOutcome", "Scenario", "ScenarioError", "SimResult", "attribute_tracks",
    "bundled_names", "linkage_scenario", "load_bundled", "random_relay_scenario", "relay_scenario",
    "run", "run_eavesdrop_experiment", "run_linkage_analysis", "run_relay_attack",
]
