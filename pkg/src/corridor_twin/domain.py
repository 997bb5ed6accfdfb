"""Data model of a corridor scenario and its conversion into graph samples.

A scenario fixes geometry, signal plans, driving behavior, turning ratios
and boundary demand for one simulated hour.  The oracle measures it; the
builders here turn scenario plus measurements into the static and dynamic
graph samples consumed by the surrogate, apply the arterial mask, and label
scenarios for the robustness subgroups.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .graphnn import EASTBOUND, WESTBOUND, GraphTopology

NUM_PHASES = 8
PHASE_NAMES = (
    "major_through_eb", "major_through_wb", "major_left_eb", "major_left_wb",
    "minor_through_nb", "minor_through_sb", "minor_left_nb", "minor_left_sb",
)
MAJOR_PHASES = (0, 1, 2, 3)
# signal groups: phases released together (one ring, four sequential groups)
PHASE_GROUPS = ((0, 1), (2, 3), (4, 5), (6, 7))
GROUP_NAMES = ("major_through", "major_left", "minor_through", "minor_left")
LOST_TIME_S = 4.0  # fixed clearance charged per phase group
MASK_SENTINEL = -1.0

# approaches, in the order demand rows are stored: the two corridor entries
# first, then (NB, SB) per intersection
APPROACH_EB, APPROACH_WB, APPROACH_NB, APPROACH_SB = range(4)
APPROACH_NAMES = ("eb", "wb", "nb", "sb")

R_STATIC_COLUMNS = (
    "link_length_m", "lanes", "free_flow_speed", "saturation_headway",
    "left_ratio", "through_ratio", "right_ratio",
    "upstream_cycle", "upstream_offset", "downstream_cycle", "downstream_offset",
    "downstream_major_maxgreen", "startup_lost_time", "speed_factor",
    "demand_level_upstream", "mean_density", "direction_flag",
    "detector_setback", "interval_s",
)
NODE_SERIES_ROWS = PHASE_NAMES + ("cycle_length", "offset", "maxgreen_major_through",
                                  "maxgreen_major_left", "maxgreen_minor_through",
                                  "maxgreen_minor_left")


class ContractError(ValueError):
    """A domain invariant was violated."""


@dataclass
class CorridorGeometry:
    k: int = 8
    link_length_m: np.ndarray = field(default_factory=lambda: np.full(7, 1600.0))
    lanes_per_movement: int = 2
    detector_setback_m: float = 500.0
    entry_link_m: float = 600.0

    def validate(self) -> None:
        self.link_length_m = np.asarray(self.link_length_m, dtype=np.float64)
        if self.k < 2:
            raise ContractError("geometry: need at least 2 intersections")
        if self.link_length_m.shape != (self.k - 1,):
            raise ContractError(f"geometry: expected {self.k - 1} link lengths")
        if (self.link_length_m <= 0).any() or self.entry_link_m <= 0:
            raise ContractError("geometry: link lengths must be positive")
        if self.lanes_per_movement < 1:
            raise ContractError("geometry: lanes_per_movement must be >= 1")
        shortest = min(float(self.link_length_m.min()), self.entry_link_m)
        if self.detector_setback_m > shortest:
            raise ContractError("geometry: detector setback exceeds a link length")


@dataclass
class SignalPlan:
    """Fixed-time plans for all intersections: shared phase order, one ring.

    ``green_fractions[i]`` holds the cycle share of the four phase groups
    (major through, major left, minor through, minor left) at intersection i.
    """

    cycle_length_s: np.ndarray
    offset_s: np.ndarray
    green_fractions: np.ndarray  # [k, 4]

    def validate(self, k: int) -> None:
        self.cycle_length_s = np.asarray(self.cycle_length_s, dtype=np.float64)
        self.offset_s = np.asarray(self.offset_s, dtype=np.float64)
        self.green_fractions = np.asarray(self.green_fractions, dtype=np.float64)
        if self.cycle_length_s.shape != (k,) or self.offset_s.shape != (k,):
            raise ContractError("signal plan: per-intersection arrays have wrong length")
        if self.green_fractions.shape != (k, 4):
            raise ContractError("signal plan: green_fractions must be [k, 4]")
        if ((self.cycle_length_s < 120.0) | (self.cycle_length_s > 240.0)).any():
            raise ContractError("signal plan: cycle length outside [120, 240] s")
        if ((self.offset_s < 0) | (self.offset_s >= self.cycle_length_s)).any():
            raise ContractError("signal plan: offsets must lie in [0, cycle)")
        if (self.green_fractions <= 0).any() or (self.green_fractions >= 1).any():
            raise ContractError("signal plan: green fractions must lie in (0, 1)")
        budget = self.green_fractions.sum(axis=1) + 4 * LOST_TIME_S / self.cycle_length_s
        if (budget > 1.0 + 1e-9).any():
            worst = int(budget.argmax())
            raise ContractError(
                f"signal plan: ring oversubscribed at intersection {worst}: "
                f"greens plus lost time fill {budget[worst]:.3f} of the cycle")

    def group_windows(self, i: int) -> np.ndarray:
        """[4, 2] start/end of each group's green inside the cycle, after
        the fixed per-group clearance."""
        c = float(self.cycle_length_s[i])
        out = np.zeros((4, 2))
        t = 0.0
        for g in range(4):
            t += LOST_TIME_S
            dur = float(self.green_fractions[i, g]) * c
            out[g] = (t, t + dur)
            t += dur
        return out


@dataclass
class DrivingBehavior:
    free_flow_speed_mps: float = 15.0
    saturation_headway_s: float = 2.0
    startup_lost_time_s: float = 2.0
    speed_factor: float = 1.0

    def validate(self) -> None:
        for name in ("free_flow_speed_mps", "saturation_headway_s", "startup_lost_time_s"):
            if getattr(self, name) <= 0:
                raise ContractError(f"behavior: {name} must be positive")
        if not 0.8 <= self.speed_factor <= 1.2:
            raise ContractError("behavior: speed_factor must lie in [0.8, 1.2]")

    @property
    def effective_speed(self) -> float:
        return self.free_flow_speed_mps * self.speed_factor


@dataclass
class TurningRatios:
    """ratios[i, approach, (left, through, right)] per intersection."""

    ratios: np.ndarray

    def validate(self, k: int) -> None:
        self.ratios = np.asarray(self.ratios, dtype=np.float64)
        if self.ratios.shape != (k, 4, 3):
            raise ContractError("turning ratios must be [k, 4, 3]")
        if (self.ratios < 0).any():
            raise ContractError("turning ratios must be non-negative")
        if np.abs(self.ratios.sum(axis=2) - 1.0).max() > 1e-9:
            raise ContractError("turning ratios must sum to 1 per approach")


@dataclass
class Scenario:
    geometry: CorridorGeometry
    signals: SignalPlan
    behavior: DrivingBehavior
    turning: TurningRatios
    demand_veh_h: np.ndarray  # [2 + 2k, w]; rows: EB entry, WB entry, (NB, SB) per node
    seed: int = 0
    w: int = 10
    interval_s: int = 300

    def validate(self) -> None:
        self.geometry.validate()
        k = self.geometry.k
        self.signals.validate(k)
        self.behavior.validate()
        self.turning.validate(k)
        self.demand_veh_h = np.asarray(self.demand_veh_h, dtype=np.float64)
        if self.demand_veh_h.shape != (2 + 2 * k, self.w):
            raise ContractError(f"demand must be [{2 + 2 * k}, {self.w}]")
        if (self.demand_veh_h < 0).any():
            raise ContractError("demand must be non-negative")
        if self.w < 1 or self.interval_s < 1:
            raise ContractError("w and interval_s must be positive")

    @property
    def k(self) -> int:
        return self.geometry.k

    def approach_row(self, approach: int, node: int) -> int:
        """Row of ``demand_veh_h`` for an external approach."""
        if approach == APPROACH_EB:
            return 0
        if approach == APPROACH_WB:
            return 1
        return 2 + 2 * node + (0 if approach == APPROACH_NB else 1)

    def max_green_share(self) -> float:
        """Corridor-level share of cycle given to the major through group."""
        return float(self.signals.green_fractions[:, 0].mean())

    def corridor_cycle_s(self) -> float:
        return float(self.signals.cycle_length_s[0])

    def freeflow_travel_time_s(self) -> float:
        dist = self.geometry.entry_link_m + float(self.geometry.link_length_m.sum())
        return dist / self.behavior.effective_speed

    def to_dict(self) -> dict:
        return {
            "geometry": {
                "k": self.geometry.k,
                "link_length_m": self.geometry.link_length_m.tolist(),
                "lanes_per_movement": self.geometry.lanes_per_movement,
                "detector_setback_m": self.geometry.detector_setback_m,
                "entry_link_m": self.geometry.entry_link_m,
            },
            "signals": {
                "cycle_length_s": self.signals.cycle_length_s.tolist(),
                "offset_s": self.signals.offset_s.tolist(),
                "green_fractions": self.signals.green_fractions.tolist(),
            },
            "behavior": {
                "free_flow_speed_mps": self.behavior.free_flow_speed_mps,
                "saturation_headway_s": self.behavior.saturation_headway_s,
                "startup_lost_time_s": self.behavior.startup_lost_time_s,
                "speed_factor": self.behavior.speed_factor,
            },
            "turning": self.turning.ratios.tolist(),
            "demand_veh_h": self.demand_veh_h.tolist(),
            "seed": self.seed,
            "w": self.w,
            "interval_s": self.interval_s,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        geo = d["geometry"]
        sig = d["signals"]
        beh = d["behavior"]
        sc = cls(
            geometry=CorridorGeometry(
                k=int(geo["k"]),
                link_length_m=np.asarray(geo["link_length_m"]),
                lanes_per_movement=int(geo["lanes_per_movement"]),
                detector_setback_m=float(geo["detector_setback_m"]),
                entry_link_m=float(geo["entry_link_m"]),
            ),
            signals=SignalPlan(
                cycle_length_s=np.asarray(sig["cycle_length_s"]),
                offset_s=np.asarray(sig["offset_s"]),
                green_fractions=np.asarray(sig["green_fractions"]),
            ),
            behavior=DrivingBehavior(**beh),
            turning=TurningRatios(np.asarray(d["turning"])),
            demand_veh_h=np.asarray(d["demand_veh_h"]),
            seed=int(d["seed"]),
            w=int(d["w"]),
            interval_s=int(d["interval_s"]),
        )
        sc.validate()
        return sc


@dataclass
class StaticGraphSample:
    topology: GraphTopology
    node_features: np.ndarray  # [k, p] totals; masked entries carry the sentinel
    mask: np.ndarray           # [k, p] True where imputation is required
    edge_features: np.ndarray  # [E, 19]

    def validate(self) -> None:
        k = self.topology.num_nodes
        if self.node_features.shape != (k, NUM_PHASES) or self.mask.shape != (k, NUM_PHASES):
            raise ContractError("static sample: node feature/mask shapes wrong")
        if self.edge_features.shape != (self.topology.num_edges, len(R_STATIC_COLUMNS)):
            raise ContractError("static sample: edge feature shape wrong")
        if not np.array_equal(self.mask, arterial_mask(k)):
            raise ContractError("static sample: mask must cover exactly the internal "
                                "major-street phases")
        if (self.node_features[self.mask] != MASK_SENTINEL).any():
            raise ContractError("static sample: masked entries must carry the sentinel")
        if (self.node_features[~self.mask] < 0).any():
            raise ContractError("static sample: unmasked volumes must be non-negative")


@dataclass
class DynamicGraphSample:
    topology: GraphTopology
    node_tensor: np.ndarray    # [k, 14, w]
    edge_features: np.ndarray  # [E, 19 + w]

    @property
    def node_series(self) -> np.ndarray:
        """Alias view of the per-phase volume rows."""
        return self.node_tensor[:, :NUM_PHASES, :]

    def validate(self) -> None:
        k = self.topology.num_nodes
        w = self.node_tensor.shape[2]
        if self.node_tensor.shape != (k, len(NODE_SERIES_ROWS), w):
            raise ContractError("dynamic sample: node tensor must be [k, 14, w]")
        if self.edge_features.shape != (self.topology.num_edges, len(R_STATIC_COLUMNS) + w):
            raise ContractError("dynamic sample: edge features must be [E, 19 + w]")
        const_rows = self.node_tensor[:, NUM_PHASES:, :]
        if np.abs(const_rows - const_rows[:, :, :1]).max() > 0:
            raise ContractError("dynamic sample: signal rows must be constant over time")


@dataclass
class TargetBundle:
    imputed_volumes: np.ndarray  # [k, p] vehicles
    travel_time_eb: np.ndarray   # [w] seconds
    travel_time_wb: np.ndarray   # [w]
    queue_length: np.ndarray     # [k, p, w] vehicles (per-interval maximum)
    waiting_time: np.ndarray     # [k, p, w] seconds (per-interval mean)

    def validate(self, scenario: Optional[Scenario] = None) -> None:
        for name in ("imputed_volumes", "travel_time_eb", "travel_time_wb",
                     "queue_length", "waiting_time"):
            if (getattr(self, name) < 0).any():
                raise ContractError(f"targets: {name} must be non-negative")
        if scenario is not None:
            bound = scenario.freeflow_travel_time_s() - 1e-9
            if (self.travel_time_eb < bound).any() or (self.travel_time_wb < bound).any():
                raise ContractError("targets: travel time below the free-flow bound")


def arterial_mask(k: int) -> np.ndarray:
    """Masked positions are a pure function of the topology: the four
    major-street phases at every internal intersection."""
    mask = np.zeros((k, NUM_PHASES), dtype=bool)
    for i in range(1, k - 1):
        mask[i, list(MAJOR_PHASES)] = True
    return mask


def edge_link_lengths(geometry: CorridorGeometry, topo: GraphTopology) -> np.ndarray:
    """Physical length of the road segment behind each graph edge."""
    lengths = np.empty(topo.num_edges)
    for e, (u, v) in enumerate(topo.edges):
        lengths[e] = geometry.entry_link_m if u == v else geometry.link_length_m[min(u, v)]
    return lengths


def _edge_demand_level(scenario: Scenario, u: int, v: int, direction: int) -> float:
    if u == v:  # boundary entry stub
        row = 0 if direction == EASTBOUND else 1
        return float(scenario.demand_veh_h[row].mean())
    nb = scenario.demand_veh_h[scenario.approach_row(APPROACH_NB, u)].mean()
    sb = scenario.demand_veh_h[scenario.approach_row(APPROACH_SB, u)].mean()
    return float((nb + sb) / 2.0)


def build_edge_static_features(scenario: Scenario, topo: GraphTopology,
                               mean_density: np.ndarray) -> np.ndarray:
    """The 19-column static edge feature table."""
    mean_density = np.asarray(mean_density, dtype=np.float64)
    if mean_density.shape != (topo.num_edges,):
        raise ContractError(f"expected {topo.num_edges} mean densities")
    sig = scenario.signals
    beh = scenario.behavior
    lengths = edge_link_lengths(scenario.geometry, topo)
    out = np.zeros((topo.num_edges, len(R_STATIC_COLUMNS)))
    for e, (u, v) in enumerate(topo.edges):
        d = topo.directions[e]
        approach = APPROACH_EB if d == EASTBOUND else APPROACH_WB
        lft, thr, rgt = scenario.turning.ratios[v, approach]
        out[e] = (
            lengths[e], scenario.geometry.lanes_per_movement,
            beh.free_flow_speed_mps, beh.saturation_headway_s,
            lft, thr, rgt,
            sig.cycle_length_s[u], sig.offset_s[u],
            sig.cycle_length_s[v], sig.offset_s[v],
            sig.green_fractions[v, 0],
            beh.startup_lost_time_s, beh.speed_factor,
            _edge_demand_level(scenario, u, v, d),
            mean_density[e], float(d),
            scenario.geometry.detector_setback_m, scenario.interval_s,
        )
    return out


def build_static_graph(scenario: Scenario, detector_totals: np.ndarray,
                       mean_density: np.ndarray) -> StaticGraphSample:
    """Static sample: detector totals with the arterial phases masked out.

    ``detector_totals`` must cover every (intersection, phase); missing
    records are represented as NaN and rejected here by name.
    """
    k = scenario.k
    totals = np.asarray(detector_totals, dtype=np.float64)
    if totals.shape != (k, NUM_PHASES):
        raise ContractError(f"detector totals must be [{k}, {NUM_PHASES}]")
    bad = np.argwhere(np.isnan(totals))
    if bad.size:
        i, p = bad[0]
        raise ContractError(f"missing detector record at intersection {i}, "
                            f"phase {PHASE_NAMES[p]}")
    topo = GraphTopology.corridor(k)
    mask = arterial_mask(k)
    node_features = totals.copy()
    node_features[mask] = MASK_SENTINEL
    sample = StaticGraphSample(
        topology=topo,
        node_features=node_features,
        mask=mask,
        edge_features=build_edge_static_features(scenario, topo, mean_density),
    )
    sample.validate()
    return sample


def assemble_node_tensor(scenario: Scenario, imputed: np.ndarray) -> np.ndarray:
    """[k, 14, w]: imputed totals spread uniformly over intervals, then the
    constant signal-plan rows."""
    k, w = scenario.k, scenario.w
    imputed = np.asarray(imputed, dtype=np.float64)
    if imputed.shape != (k, NUM_PHASES):
        raise ContractError(f"imputed volumes must be [{k}, {NUM_PHASES}]")
    if (imputed == MASK_SENTINEL).any():
        raise ContractError("imputed volumes still contain the mask sentinel")
    xc = np.zeros((k, len(NODE_SERIES_ROWS), w))
    xc[:, :NUM_PHASES, :] = (imputed / w)[:, :, None]
    xc[:, NUM_PHASES + 0, :] = scenario.signals.cycle_length_s[:, None]
    xc[:, NUM_PHASES + 1, :] = scenario.signals.offset_s[:, None]
    for g in range(4):
        xc[:, NUM_PHASES + 2 + g, :] = scenario.signals.green_fractions[:, g][:, None]
    return xc


def build_dynamic_graph(static_sample: StaticGraphSample, imputed: np.ndarray,
                        scenario: Scenario, density_series: np.ndarray) -> DynamicGraphSample:
    """Dynamic sample: node tensor from the imputed volumes plus signal
    rows, edge features extended with the per-interval density series."""
    density_series = np.asarray(density_series, dtype=np.float64)
    E = static_sample.topology.num_edges
    if density_series.shape != (E, scenario.w):
        raise ContractError(f"density series must be [{E}, {scenario.w}]")
    sample = DynamicGraphSample(
        topology=static_sample.topology,
        node_tensor=assemble_node_tensor(scenario, imputed),
        edge_features=np.concatenate([static_sample.edge_features, density_series], axis=1),
    )
    sample.validate()
    return sample


def aggregate_to_intervals(times: Sequence[float], interval_s: float, w: int,
                           values: Optional[Sequence[float]] = None,
                           reducer: str = "count", origin: float = 0.0,
                           empty_value: float = 0.0) -> np.ndarray:
    """Aggregate timestamped events into ``w`` uniform intervals.

    Events on an interval boundary belong to the later interval.  Events
    outside [origin, origin + w * interval_s) are an error.
    """
    times = np.asarray(times, dtype=np.float64)
    horizon = origin + w * interval_s
    if times.size and (times.min() < origin or times.max() >= horizon):
        raise ContractError(f"events outside horizon [{origin}, {horizon})")
    idx = np.floor((times - origin) / interval_s).astype(np.int64)
    if reducer == "count":
        return np.bincount(idx, minlength=w).astype(np.float64)
    if values is None:
        raise ContractError(f"reducer {reducer!r} needs values")
    values = np.asarray(values, dtype=np.float64)
    out = np.full(w, empty_value)
    if reducer == "sum":
        out = np.zeros(w)
        np.add.at(out, idx, values)
        return out
    if reducer == "mean":
        sums = np.zeros(w)
        np.add.at(sums, idx, values)
        counts = np.bincount(idx, minlength=w)
        nz = counts > 0
        out[nz] = sums[nz] / counts[nz]
        return out
    if reducer == "max":
        for j in range(w):
            sel = idx == j
            if sel.any():
                out[j] = values[sel].max()
        return out
    raise ContractError(f"unknown reducer {reducer!r}")


# --- robustness subgroups ---------------------------------------------------

SUBGROUP_DIMENSIONS = ("cycle_length", "traffic_volume", "max_green_share")
SUBGROUP_LEVELS = ("low", "medium", "high")
_CYCLE_BOUNDS = (160.0, 200.0)
_VOLUME_BOUNDS = (700.0, 900.0)
_GREEN_BOUNDS = (0.25, 0.50)


def _bucket(value: float, bounds: Tuple[float, float]) -> str:
    if value < bounds[0]:
        return "low"
    if value < bounds[1]:
        return "medium"
    return "high"


def subgroup_labels(cycle_s: float, completed_volume: float,
                    max_green_share: float) -> Dict[str, str]:
    """Three independent 3-way labels; lower bound inclusive, upper
    exclusive, top bucket closed below."""
    return {
        "cycle_length": _bucket(cycle_s, _CYCLE_BOUNDS),
        "traffic_volume": _bucket(completed_volume, _VOLUME_BOUNDS),
        "max_green_share": _bucket(max_green_share, _GREEN_BOUNDS),
    }


def partition_subgroups(summaries: Sequence[dict]) -> Dict[str, Dict[str, List[int]]]:
    """Index lists per dimension and level.  ``summaries`` carry the keys
    cycle_s, completed_volume and max_green_share per scenario."""
    out: Dict[str, Dict[str, List[int]]] = {
        dim: {lvl: [] for lvl in SUBGROUP_LEVELS} for dim in SUBGROUP_DIMENSIONS}
    for idx, s in enumerate(summaries):
        labels = subgroup_labels(s["cycle_s"], s["completed_volume"], s["max_green_share"])
        for dim, lvl in labels.items():
            out[dim][lvl].append(idx)
    return out
