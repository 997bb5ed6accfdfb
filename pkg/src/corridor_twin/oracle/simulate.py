"""Deterministic point-queue corridor simulation around the step kernel.

The driver owns everything probabilistic: Poisson arrival streams (one
warm-up stream and one measured-window stream per approach, so window
counts are monotone in demand) and per-vehicle turn draws.  The kernel then
runs a purely deterministic time-stepped loop.  Afterwards the driver turns
the raw event arrays into detector totals, link densities, and the four
ground-truth measures of effectiveness.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import domain
from ..domain import (ContractError, Scenario, TargetBundle, aggregate_to_intervals)
from ..graphnn import GraphTopology
from . import _backend
from ._simcore_py import (EB, WB, NB, SB, TURN_LEFT, TURN_THROUGH, TURN_RIGHT,
                          EXIT_NONE, EXIT_EAST, EXIT_WEST, EXIT_TURNED)

_THROUGH_PHASE = (0, 1, 4, 5)
_LEFT_PHASE = (2, 3, 6, 7)
_ARRIVAL_CHUNK = 256


@dataclass
class SimConfig:
    time_step_s: int = 1
    warmup_s: int = 600

    def validate(self, scenario: Scenario) -> None:
        if self.time_step_s < 1 or self.warmup_s < 0:
            raise ContractError("sim config: time step must be >= 1 s, warmup >= 0")
        if scenario.interval_s % self.time_step_s != 0:
            raise ContractError("sim config: time step must divide interval_s")
        if self.warmup_s % self.time_step_s != 0:
            raise ContractError("sim config: time step must divide warmup_s")

    def horizon_s(self, scenario: Scenario) -> int:
        return self.warmup_s + scenario.w * scenario.interval_s


@dataclass
class EventLog:
    """Raw simulation record: external arrival table, per-hop link entries,
    stopline departures, and the exit/in-network split at the horizon."""

    horizon_s: float
    warmup_s: float
    interval_s: int
    w: int
    k: int
    appr_ptr: np.ndarray        # [A+1] vehicle id slices per approach
    n_warmup: np.ndarray        # [A] leading warm-up vehicles per approach
    entry_net_t: np.ndarray     # [V] network entry times
    first_stop_arr: np.ndarray  # [V] first stopline arrival times
    first_mov: np.ndarray       # [V] movement at the first stopline
    first_edge: np.ndarray      # [V] entry stub edge (-1 for minor approaches)
    dep_veh: np.ndarray
    dep_mov: np.ndarray
    dep_t: np.ndarray
    dep_wait: np.ndarray
    hop_veh: np.ndarray
    hop_edge: np.ndarray
    hop_mov: np.ndarray
    hop_entry: np.ndarray
    hop_dep: np.ndarray         # -1 while still on the link at the horizon
    exit_t: np.ndarray          # [V]; -1 while in network
    exit_code: np.ndarray       # [V]
    exited_ids: np.ndarray      # explicit id lists, checked against entries
    in_network_ids: np.ndarray

    @property
    def num_vehicles(self) -> int:
        return self.entry_net_t.shape[0]

    def approach_slice(self, a: int) -> slice:
        return slice(int(self.appr_ptr[a]), int(self.appr_ptr[a + 1]))

    def to_csv_rows(self):
        """(time_s, event_kind, intersection, movement, vehicle_id) rows."""
        rows = []
        for v in range(self.num_vehicles):
            rows.append((float(self.entry_net_t[v]), "enter",
                         int(self.first_mov[v]) // 8, int(self.first_mov[v]), v))
        for j in range(self.dep_veh.shape[0]):
            m = int(self.dep_mov[j])
            rows.append((float(self.dep_t[j]), "depart", m // 8, m, int(self.dep_veh[j])))
        for v in self.exited_ids:
            rows.append((float(self.exit_t[v]), "exit", -1, -1, int(v)))
        rows.sort(key=lambda r: (r[0], r[1], r[4]))
        return rows


@dataclass
class ConservationReport:
    ok: bool
    total_entered: int
    total_exited: int
    total_in_network: int
    per_approach: List[Dict[str, int]]
    message: str = ""


@dataclass
class VehicleRecord:
    vehicle_id: int
    origin_approach: int
    entry_time: float
    stopline_events: List[Tuple[int, float, float]]  # (movement, departure, wait)
    exit_time: Optional[float]
    corridor_through: bool


@dataclass
class OracleResult:
    scenario: Scenario
    config: SimConfig
    detector_totals: np.ndarray   # [k, 8]
    density_series: np.ndarray    # [2k, w] veh/km
    mean_edge_density: np.ndarray  # [2k]
    targets: TargetBundle
    completed_eb: int
    completed_wb: int
    event_log: EventLog

    @property
    def vehicle_records(self) -> List[VehicleRecord]:
        log = self.event_log
        per_veh: List[List[Tuple[int, float, float]]] = [[] for _ in range(log.num_vehicles)]
        for j in range(log.dep_veh.shape[0]):
            per_veh[int(log.dep_veh[j])].append(
                (int(log.dep_mov[j]), float(log.dep_t[j]), float(log.dep_wait[j])))
        approaches = np.empty(log.num_vehicles, dtype=np.int64)
        for a in range(log.appr_ptr.shape[0] - 1):
            approaches[log.approach_slice(a)] = a
        out = []
        for v in range(log.num_vehicles):
            code = int(log.exit_code[v])
            through = (approaches[v] == 0 and code == EXIT_EAST) or \
                      (approaches[v] == 1 and code == EXIT_WEST)
            out.append(VehicleRecord(
                vehicle_id=v,
                origin_approach=int(approaches[v]),
                entry_time=float(log.entry_net_t[v]),
                stopline_events=per_veh[v],
                exit_time=float(log.exit_t[v]) if code != EXIT_NONE else None,
                corridor_through=bool(through),
            ))
        return out


def approach_table(k: int) -> List[Tuple[int, int, int]]:
    """(kind, node, entry stub edge or -1) per external approach, in demand
    row order: corridor entries first, then NB/SB per intersection."""
    rows = [(EB, 0, 0), (WB, k - 1, k)]
    for i in range(k):
        rows.append((NB, i, -1))
        rows.append((SB, i, -1))
    return rows


def _first_phase(kind: int, turn: int) -> int:
    return _LEFT_PHASE[kind] if turn == TURN_LEFT else _THROUGH_PHASE[kind]


def _inhomogeneous_arrivals(rng, rates_per_s: np.ndarray, seg_bounds: np.ndarray
                            ) -> np.ndarray:
    """Arrival times of a piecewise-constant Poisson process via inversion
    of the cumulative intensity; unit exponentials come from ``rng``."""
    seg_len = np.diff(seg_bounds)
    seg_mass = rates_per_s * seg_len
    total = seg_mass.sum()
    if total <= 0.0:
        return np.empty(0)
    cum = np.concatenate([[0.0], np.cumsum(seg_mass)])
    draws = np.empty(0)
    acc = 0.0
    while acc < total:
        chunk = rng.standard_exponential(_ARRIVAL_CHUNK)
        draws = np.concatenate([draws, chunk])
        acc += chunk.sum()
    s = np.cumsum(draws)
    s = s[s < total]
    seg = np.searchsorted(cum, s, side="right") - 1
    return seg_bounds[seg] + (s - cum[seg]) / rates_per_s[seg]


def build_vehicle_table(scenario: Scenario, config: SimConfig):
    """External arrivals and per-vehicle turn draws for the kernel."""
    k, w = scenario.k, scenario.w
    horizon = float(config.horizon_s(scenario))
    warmup = float(config.warmup_s)
    v_eff = scenario.behavior.effective_speed
    stub_travel = scenario.geometry.entry_link_m / v_eff
    turn_cdf = np.cumsum(scenario.turning.ratios, axis=2)[:, :, :2].copy()

    table = approach_table(k)
    per_appr = []
    n_warm = np.zeros(len(table), dtype=np.int64)
    for a, (kind, node, edge) in enumerate(table):
        row = scenario.demand_veh_h[a] / 3600.0
        rng_warm = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([0xA11, scenario.seed, a, 0])))
        rng_meas = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([0xA11, scenario.seed, a, 1])))
        warm = _inhomogeneous_arrivals(rng_warm, np.array([row[0]]),
                                       np.array([0.0, warmup])) if warmup > 0 else np.empty(0)
        bounds = warmup + scenario.interval_s * np.arange(w + 1, dtype=np.float64)
        meas = _inhomogeneous_arrivals(rng_meas, row, bounds)
        entries = np.concatenate([warm, meas])
        n_warm[a] = warm.size
        rng_turn = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence([0xA11, scenario.seed, a, 2])))
        uniforms = rng_turn.random((entries.size, k))
        per_appr.append((entries, uniforms, kind, node, edge))

    V = sum(p[0].size for p in per_appr)
    appr_ptr = np.zeros(len(table) + 1, dtype=np.int64)
    entry_net_t = np.empty(V)
    stopline_arr = np.empty(V)
    first_mov = np.empty(V, dtype=np.int64)
    first_turn = np.empty(V, dtype=np.int64)
    first_edge = np.empty(V, dtype=np.int64)
    turn_uniforms = np.empty((V, k))
    pos = 0
    for a, (entries, uniforms, kind, node, edge) in enumerate(per_appr):
        n = entries.size
        sl = slice(pos, pos + n)
        entry_net_t[sl] = entries
        stopline_arr[sl] = entries + stub_travel
        turn_uniforms[sl] = uniforms
        first_edge[sl] = edge
        if n:
            u0 = uniforms[:, 0]
            turns = np.where(u0 < turn_cdf[node, kind, 0], TURN_LEFT,
                             np.where(u0 < turn_cdf[node, kind, 1],
                                      TURN_THROUGH, TURN_RIGHT))
            first_turn[sl] = turns
            phases = np.where(turns == TURN_LEFT, _LEFT_PHASE[kind], _THROUGH_PHASE[kind])
            first_mov[sl] = node * 8 + phases
        pos += n
        appr_ptr[a + 1] = pos
    return {
        "appr_ptr": appr_ptr, "n_warmup": n_warm,
        "entry_net_t": entry_net_t, "stopline_arr": stopline_arr,
        "first_mov": first_mov, "first_turn": first_turn, "first_edge": first_edge,
        "turn_uniforms": turn_uniforms, "turn_cdf": turn_cdf,
    }


def _edge_tau(scenario: Scenario, topo: GraphTopology) -> np.ndarray:
    lengths = domain.edge_link_lengths(scenario.geometry, topo)
    return lengths / scenario.behavior.effective_speed


def simulate_scenario(scenario: Scenario, config: SimConfig = SimConfig(),
                      kernel=None) -> OracleResult:
    """Simulate one scenario and assemble its ground-truth measures."""
    scenario.validate()
    config.validate(scenario)
    kernel = kernel if kernel is not None else _backend.kernel()
    k, w = scenario.k, scenario.w
    dt = float(config.time_step_s)
    horizon = float(config.horizon_s(scenario))
    warmup = float(config.warmup_s)
    n_steps = int(round(horizon / dt))
    topo = GraphTopology.corridor(k)
    tau_edge = _edge_tau(scenario, topo)
    sat_rate = scenario.geometry.lanes_per_movement / scenario.behavior.saturation_headway_s

    table = build_vehicle_table(scenario, config)
    V = table["entry_net_t"].shape[0]
    cap = V * k + 8

    wstart = np.zeros((k, 4))
    wend = np.zeros((k, 4))
    for i in range(k):
        wins = scenario.signals.group_windows(i)
        wstart[i] = wins[:, 0]
        wend[i] = wins[:, 1]

    qmax = np.zeros((8 * k, w))
    dep_veh = np.empty(cap, dtype=np.int64)
    dep_mov = np.empty(cap, dtype=np.int64)
    dep_t = np.empty(cap)
    dep_wait = np.empty(cap)
    hop_veh = np.empty(cap, dtype=np.int64)
    hop_edge = np.empty(cap, dtype=np.int64)
    hop_mov = np.empty(cap, dtype=np.int64)
    hop_entry = np.empty(cap)
    hop_dep = np.empty(cap)
    exit_t = np.full(V, -1.0)
    exit_code = np.zeros(V, dtype=np.int64)

    n_dep, n_hop = kernel.run(
        n_steps, dt, warmup, float(scenario.interval_s), w, k,
        scenario.signals.cycle_length_s, scenario.signals.offset_s,
        wstart, wend, scenario.behavior.startup_lost_time_s, sat_rate,
        table["appr_ptr"], table["stopline_arr"].copy(), table["entry_net_t"],
        table["first_edge"], table["first_mov"].copy(), table["first_turn"].copy(),
        table["turn_uniforms"], table["turn_cdf"], tau_edge,
        qmax, dep_veh, dep_mov, dep_t, dep_wait,
        hop_veh, hop_edge, hop_mov, hop_entry, hop_dep,
        exit_t, exit_code)

    log = EventLog(
        horizon_s=horizon, warmup_s=warmup, interval_s=scenario.interval_s, w=w, k=k,
        appr_ptr=table["appr_ptr"], n_warmup=table["n_warmup"],
        entry_net_t=table["entry_net_t"], first_stop_arr=table["stopline_arr"],
        first_mov=table["first_mov"], first_edge=table["first_edge"],
        dep_veh=dep_veh[:n_dep], dep_mov=dep_mov[:n_dep],
        dep_t=dep_t[:n_dep], dep_wait=dep_wait[:n_dep],
        hop_veh=hop_veh[:n_hop], hop_edge=hop_edge[:n_hop], hop_mov=hop_mov[:n_hop],
        hop_entry=hop_entry[:n_hop], hop_dep=hop_dep[:n_hop],
        exit_t=exit_t, exit_code=exit_code,
        exited_ids=np.flatnonzero(exit_code != EXIT_NONE),
        in_network_ids=np.flatnonzero(exit_code == EXIT_NONE),
    )
    return _assemble_result(scenario, config, topo, log, qmax)


def _assemble_result(scenario: Scenario, config: SimConfig, topo: GraphTopology,
                     log: EventLog, qmax: np.ndarray) -> OracleResult:
    k, w = scenario.k, scenario.w
    warmup, horizon = log.warmup_s, log.horizon_s
    interval = float(scenario.interval_s)
    v_eff = scenario.behavior.effective_speed
    setback = scenario.geometry.detector_setback_m
    lengths = domain.edge_link_lengths(scenario.geometry, topo)

    # detector totals: external approaches count their measured-stream
    # vehicles; internal approaches count detector crossings in the window
    totals = np.zeros((k, domain.NUM_PHASES))
    n_appr = log.appr_ptr.shape[0] - 1
    for a in range(n_appr):
        sl = log.approach_slice(a)
        movs = log.first_mov[sl][int(log.n_warmup[a]):]
        np.add.at(totals.reshape(-1), movs, 1.0)
    internal = (log.hop_edge != 0) & (log.hop_edge != k)
    crossing = log.hop_entry[internal] + (lengths[log.hop_edge[internal]] - setback) / v_eff
    in_window = (crossing >= warmup) & (crossing < horizon)
    np.add.at(totals.reshape(-1), log.hop_mov[internal][in_window], 1.0)

    # per-interval link occupancy -> density (vehicles per km)
    occ = np.zeros((2 * k, w))
    t0 = log.hop_entry
    t1 = np.where(log.hop_dep >= 0.0, log.hop_dep, horizon)
    edges = log.hop_edge
    # externals that never reached their first stopline occupy the stubs
    major_ext = np.concatenate([np.arange(log.appr_ptr[0], log.appr_ptr[1]),
                                np.arange(log.appr_ptr[1], log.appr_ptr[2])])
    unjoined = major_ext[log.first_stop_arr[major_ext] > (log.horizon_s - 1.0)]
    if unjoined.size:
        t0 = np.concatenate([t0, log.entry_net_t[unjoined]])
        t1 = np.concatenate([t1, np.full(unjoined.size, horizon)])
        edges = np.concatenate([edges, log.first_edge[unjoined]])
    for j in range(w):
        lo = warmup + j * interval
        hi = lo + interval
        overlap = np.clip(np.minimum(t1, hi) - np.maximum(t0, lo), 0.0, None)
        np.add.at(occ[:, j], edges, overlap)
    density = occ / (interval * lengths[:, None] / 1000.0)

    # waiting time: mean over vehicles departing the stopline per interval
    waiting = np.zeros((8 * k, w))
    in_win = (log.dep_t >= warmup) & (log.dep_t < horizon)
    jdx = np.floor((log.dep_t[in_win] - warmup) / interval).astype(np.int64)
    flat = log.dep_mov[in_win] * w + jdx
    sums = np.bincount(flat, weights=log.dep_wait[in_win], minlength=8 * k * w)
    counts = np.bincount(flat, minlength=8 * k * w)
    nz = counts > 0
    waiting.reshape(-1)[nz] = sums[nz] / counts[nz]

    # corridor travel times by entry interval, measured stream only
    probe = scenario.freeflow_travel_time_s()
    tts = []
    completions = []
    for a, code in ((0, EXIT_EAST), (1, EXIT_WEST)):
        sl = log.approach_slice(a)
        ids = np.arange(sl.start, sl.stop)[int(log.n_warmup[a]):]
        done = ids[log.exit_code[ids] == code]
        completions.append(int(done.size))
        series = np.full(w, probe)
        if done.size:
            entry = log.entry_net_t[done]
            tt = log.exit_t[done] - entry
            jj = np.floor((entry - warmup) / interval).astype(np.int64)
            s = np.bincount(jj, weights=tt, minlength=w)
            c = np.bincount(jj, minlength=w)
            nz = c > 0
            series[nz] = s[nz] / c[nz]
        tts.append(series)

    targets = TargetBundle(
        imputed_volumes=totals,
        travel_time_eb=tts[0],
        travel_time_wb=tts[1],
        queue_length=qmax.reshape(k, domain.NUM_PHASES, w),
        waiting_time=waiting.reshape(k, domain.NUM_PHASES, w),
    )
    targets.validate(scenario)
    return OracleResult(
        scenario=scenario, config=config,
        detector_totals=totals,
        density_series=density,
        mean_edge_density=density.mean(axis=1),
        targets=targets,
        completed_eb=completions[0], completed_wb=completions[1],
        event_log=log,
    )


def verify_conservation(event_log: EventLog) -> ConservationReport:
    """Exact integer bookkeeping: per approach, the entered vehicles must be
    exactly the disjoint union of exited and still-in-network vehicles."""
    log = event_log
    exited = set(int(v) for v in log.exited_ids)
    inside = set(int(v) for v in log.in_network_ids)
    per_approach = []
    ok = True
    message = ""
    if exited & inside:
        ok = False
        message = f"vehicles both exited and in network: {sorted(exited & inside)[:5]}"
    for a in range(log.appr_ptr.shape[0] - 1):
        sl = log.approach_slice(a)
        entered_ids = set(range(sl.start, sl.stop))
        ex = exited & entered_ids
        inn = inside & entered_ids
        row = {"approach": a, "entered": len(entered_ids),
               "exited": len(ex), "in_network": len(inn)}
        per_approach.append(row)
        if len(ex) + len(inn) != len(entered_ids) or (ex | inn) != entered_ids:
            ok = False
            if not message:
                missing = sorted(entered_ids - (ex | inn))[:5]
                message = f"approach {a}: unaccounted vehicles {missing}"
    return ConservationReport(
        ok=ok,
        total_entered=log.num_vehicles,
        total_exited=len(exited),
        total_in_network=len(inside),
        per_approach=per_approach,
        message=message,
    )
