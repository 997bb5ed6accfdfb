"""Randomized scenario generation for the corridor oracle.

Every scenario is a deterministic function of its integer seed: one shared
cycle length, per-intersection offsets and green splits, heavily
through-biased major-street turning, and per-approach demand with a smooth
within-hour profile on the corridor entries.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..domain import (CorridorGeometry, DrivingBehavior, LOST_TIME_S, Scenario,
                      SignalPlan, TurningRatios)

_HARD_CYCLE = (120.0, 240.0)
_HARD_DEMAND = (50.0, 1200.0)
_HARD_GREEN = (0.15, 0.60)
_MIN_SIDE_FRACTION = 0.05  # floor for the non-major-through groups


@dataclass
class SamplerRanges:
    cycle_s: Tuple[float, float] = _HARD_CYCLE
    demand_major_veh_h: Tuple[float, float] = _HARD_DEMAND
    demand_minor_veh_h: Tuple[float, float] = (50.0, 400.0)
    max_green_fraction: Tuple[float, float] = _HARD_GREEN
    link_length_m: Tuple[float, float] = (600.0, 2000.0)
    major_through_ratio: Tuple[float, float] = (0.86, 0.98)
    minor_through_ratio: Tuple[float, float] = (0.30, 0.60)
    free_flow_speed_mps: Tuple[float, float] = (12.0, 18.0)
    saturation_headway_s: Tuple[float, float] = (1.8, 2.4)
    startup_lost_time_s: Tuple[float, float] = (1.0, 3.0)
    speed_factor: Tuple[float, float] = (0.8, 1.2)
    profile_amplitude: Tuple[float, float] = (0.0, 0.5)
    k: int = 8
    w: int = 10
    interval_s: int = 300

    def validate(self) -> None:
        def check(name, lo_hi, hard=None):
            lo, hi = lo_hi
            if not lo < hi:
                raise ValueError(f"sampler ranges: {name} range [{lo}, {hi}] is empty")
            if hard is not None and (lo < hard[0] or hi > hard[1]):
                raise ValueError(f"sampler ranges: {name} must stay within {hard}")

        check("cycle_s", self.cycle_s, _HARD_CYCLE)
        check("demand_major_veh_h", self.demand_major_veh_h, _HARD_DEMAND)
        check("demand_minor_veh_h", self.demand_minor_veh_h, _HARD_DEMAND)
        check("max_green_fraction", self.max_green_fraction, _HARD_GREEN)
        check("link_length_m", self.link_length_m)
        check("major_through_ratio", self.major_through_ratio)
        check("minor_through_ratio", self.minor_through_ratio)
        check("free_flow_speed_mps", self.free_flow_speed_mps)
        check("saturation_headway_s", self.saturation_headway_s)
        check("startup_lost_time_s", self.startup_lost_time_s)
        check("speed_factor", self.speed_factor, (0.8, 1.2))
        check("profile_amplitude", self.profile_amplitude, (0.0, 0.95))
        if self.k < 2 or self.w < 1 or self.interval_s < 1:
            raise ValueError("sampler ranges: k >= 2, w >= 1, interval_s >= 1 required")


def _split_ratio(rng, through_range) -> Tuple[float, float, float]:
    thr = rng.uniform(*through_range)
    left = (1.0 - thr) * rng.uniform(0.3, 0.7)
    return left, thr, 1.0 - thr - left


def sample_scenario(seed: int, ranges: SamplerRanges = SamplerRanges()) -> Scenario:
    """Deterministic scenario draw for one seed."""
    ranges.validate()
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([0x5EED, int(seed)])))
    k, w = ranges.k, ranges.w

    cycle = rng.uniform(*ranges.cycle_s)
    offsets = rng.uniform(0.0, cycle, size=k)
    f_major_through = rng.uniform(*ranges.max_green_fraction)
    budget = 1.0 - 4 * LOST_TIME_S / cycle - f_major_through
    fractions = np.zeros((k, 4))
    fractions[:, 0] = f_major_through
    for i in range(k):
        weights = rng.uniform(0.5, 1.5, size=3)
        props = weights / weights.sum()
        fractions[i, 1:] = _MIN_SIDE_FRACTION + props * (budget - 3 * _MIN_SIDE_FRACTION)

    geometry = CorridorGeometry(
        k=k,
        link_length_m=rng.uniform(*ranges.link_length_m, size=k - 1),
        lanes_per_movement=2,
        detector_setback_m=500.0,
        entry_link_m=600.0,
    )
    behavior = DrivingBehavior(
        free_flow_speed_mps=rng.uniform(*ranges.free_flow_speed_mps),
        saturation_headway_s=rng.uniform(*ranges.saturation_headway_s),
        startup_lost_time_s=rng.uniform(*ranges.startup_lost_time_s),
        speed_factor=rng.uniform(*ranges.speed_factor),
    )

    ratios = np.zeros((k, 4, 3))
    for i in range(k):
        ratios[i, 0] = _split_ratio(rng, ranges.major_through_ratio)
        ratios[i, 1] = _split_ratio(rng, ranges.major_through_ratio)
        ratios[i, 2] = _split_ratio(rng, ranges.minor_through_ratio)
        ratios[i, 3] = _split_ratio(rng, ranges.minor_through_ratio)

    demand = np.zeros((2 + 2 * k, w))
    steps = np.arange(w)
    for row in (0, 1):
        base = rng.uniform(*ranges.demand_major_veh_h)
        amp = rng.uniform(*ranges.profile_amplitude)
        waves = int(rng.integers(1, 3))
        phase = rng.uniform(0.0, 2 * np.pi)
        demand[row] = base * (1.0 + amp * np.sin(2 * np.pi * waves * steps / w + phase))
    for row in range(2, 2 + 2 * k):
        demand[row] = rng.uniform(*ranges.demand_minor_veh_h)

    scenario = Scenario(
        geometry=geometry,
        signals=SignalPlan(np.full(k, cycle), offsets, fractions),
        behavior=behavior,
        turning=TurningRatios(ratios),
        demand_veh_h=demand,
        seed=int(seed),
        w=w,
        interval_s=ranges.interval_s,
    )
    scenario.validate()
    return scenario


def scenario_seeds(dataset_seed: int, n: int) -> np.ndarray:
    """Well-mixed per-scenario seeds for a dataset."""
    ss = np.random.SeedSequence(int(dataset_seed))
    return ss.generate_state(max(n, 1), dtype=np.uint64)[:n].astype(np.int64) & 0x7FFFFFFF
