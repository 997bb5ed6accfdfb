"""Dataset generation: sample scenarios, simulate, serialize one JSON line
per scenario, and write a manifest with subgroup counts."""

from __future__ import annotations

import multiprocessing as mp
from dataclasses import asdict
from typing import List, Optional

import numpy as np

from .. import domain, serialize
from ..domain import Scenario
from .scenarios import SamplerRanges, sample_scenario, scenario_seeds
from .simulate import OracleResult, SimConfig, simulate_scenario

SCHEMA_VERSION = 1

_worker_state: dict = {}


def build_record(result: OracleResult) -> dict:
    """One dataset line from a simulated scenario."""
    scenario = result.scenario
    static = domain.build_static_graph(scenario, result.detector_totals,
                                       result.mean_edge_density)
    targets = result.targets
    return {
        "scenario": scenario.to_dict(),
        "static_graph": {
            "num_nodes": static.topology.num_nodes,
            "edges": [list(e) for e in static.topology.edges],
            "directions": list(static.topology.directions),
            "node_features": serialize.encode_array(static.node_features),
            "mask": serialize.encode_array(static.mask.astype(np.float64)),
            "edge_features": serialize.encode_array(static.edge_features),
        },
        "dynamic_inputs": {
            "density_series": serialize.encode_array(result.density_series),
        },
        "targets": {
            "imputed_volumes": serialize.encode_array(targets.imputed_volumes),
            "travel_time_eb": serialize.encode_array(targets.travel_time_eb),
            "travel_time_wb": serialize.encode_array(targets.travel_time_wb),
            "queue_length": serialize.encode_array(targets.queue_length),
            "waiting_time": serialize.encode_array(targets.waiting_time),
        },
        "summary": {
            "cycle_s": scenario.corridor_cycle_s(),
            "completed_eb": result.completed_eb,
            "completed_wb": result.completed_wb,
            "completed_volume": result.completed_eb + result.completed_wb,
            "max_green_share": scenario.max_green_share(),
            "freeflow_tt_s": scenario.freeflow_travel_time_s(),
        },
    }


def simulate_seed(seed: int, ranges: SamplerRanges, config: SimConfig) -> dict:
    return build_record(simulate_scenario(sample_scenario(seed, ranges), config))


def _worker_init(ranges, config):
    _worker_state["ranges"] = ranges
    _worker_state["config"] = config


def _worker_run(seed: int) -> str:
    rec = simulate_seed(seed, _worker_state["ranges"], _worker_state["config"])
    return serialize.dumps(rec)


def generate_dataset(n: int, seed: int, path: str,
                     ranges: Optional[SamplerRanges] = None,
                     config: Optional[SimConfig] = None,
                     parallelism: int = 1) -> dict:
    """Write ``n`` simulated scenarios to ``path`` (JSON lines) plus a
    manifest at ``path + '.manifest.json'``; returns the manifest.

    Output is ordered by scenario index and byte-identical for a given
    (n, seed, config) regardless of ``parallelism``.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    ranges = ranges if ranges is not None else SamplerRanges()
    config = config if config is not None else SimConfig()
    seeds = [int(s) for s in scenario_seeds(seed, n)]

    if parallelism > 1 and n > 1:
        ctx = mp.get_context("fork")
        with ctx.Pool(parallelism, initializer=_worker_init,
                      initargs=(ranges, config)) as pool:
            lines = pool.map(_worker_run, seeds, chunksize=max(1, n // (parallelism * 4)))
    else:
        _worker_init(ranges, config)
        lines = [_worker_run(s) for s in seeds]

    summaries = []
    with open(path + ".tmp", "w", encoding="utf-8") as fh:
        for line in lines:
            fh.write(line)
            fh.write("\n")
    import os
    os.replace(path + ".tmp", path)
    import json
    for line in lines:
        summaries.append(json.loads(line)["summary"])

    groups = domain.partition_subgroups(summaries)
    manifest = {
        "kind": "dataset",
        "schema_version": SCHEMA_VERSION,
        "n": n,
        "seed": seed,
        "config_digest": serialize.sha256_text(serialize.dumps({
            "ranges": asdict(ranges), "sim": asdict(config)})),
        "subgroup_counts": {dim: {lvl: len(idx) for lvl, idx in levels.items()}
                            for dim, levels in groups.items()},
        "dataset_sha256": serialize.sha256_file(path),
    }
    serialize.write_json(path + ".manifest.json", manifest)
    return manifest


def load_records(path: str) -> List[dict]:
    return list(serialize.read_jsonl(path))
