"""Deterministic traffic oracle: scenario sampling, point-queue simulation,
and dataset generation."""

from ._backend import backend_name, compiled_available, kernel
from .dataset import generate_dataset
from .scenarios import SamplerRanges, sample_scenario, scenario_seeds
from .simulate import (ConservationReport, EventLog, OracleResult, SimConfig,
                       VehicleRecord, simulate_scenario, verify_conservation)

__all__ = [
    "SamplerRanges", "sample_scenario", "scenario_seeds",
    "SimConfig", "EventLog", "OracleResult", "VehicleRecord",
    "simulate_scenario", "verify_conservation", "ConservationReport",
    "generate_dataset", "backend_name", "compiled_available", "kernel",
]
