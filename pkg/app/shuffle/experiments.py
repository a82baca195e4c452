"""
Experiment suites behind the CLI: sampling accuracy sweeps, the
hierarchical decision matrix, and spine-failure scenarios.

Every suite is a pure function of its arguments (seeds included) and returns
rows as dictionaries; `write_csv` renders them with a fixed column order so
re-runs produce byte-identical files.
"""

import csv
import io
import logging
import statistics
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence

from app.shuffle.core import get_combiner, get_partitioner, merge_buffers
from app.shuffle.sampling import (SAMPLING_METHODS, SamplingConfig, choose_group, estimate_reduction,
                                  group_reduction_table, samp_random)
from app.shuffle.simulator import Simulator, exhaustive_best_plan, inject_spine_failures
from app.shuffle.topology import CostModel, Level, Topology
from app.shuffle.workload import WorkloadSpec, gen_workload, true_ratio

logger = logging.getLogger("experiments")

SWEEP_COLUMNS = ("workload", "method", "rate", "r_hat_median", "true_ratio", "relative_error",
                 "sampling_bytes_fraction", "sampling_time", "modeled_overhead_fraction")
DECISION_COLUMNS = ("oversub", "workload", "seed", "trace", "best_trace", "regret",
                    "bytes_saved_fraction", "modeled_speedup")
FAILURE_COLUMNS = ("seed", "failed_links", "vanilla_time", "network_aware_time", "no_failure_time",
                   "trace", "time_ratio")

METHODS = SAMPLING_METHODS
SAMPLING_STAGE = "sweep"


def write_csv(rows: Iterable[dict], columns: Sequence[str], out=None) -> str:
    """Renders rows as CSV; writes to `out` (a path) when given and returns the text."""
    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=list(columns), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({c: _cell(row.get(c, "")) for c in columns})
    text = buffer.getvalue()
    if out is not None:
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
    return text


def _cell(value):
    if isinstance(value, float):
        return f"{value:.6g}"
    return value


# --- Sampling accuracy and overhead ---

def sampling_sweep(workloads: Sequence[WorkloadSpec], rates: Sequence[float], topo: Topology,
                   cm: Optional[CostModel] = None, methods: Sequence[str] = METHODS, seeds: int = 30,
                   comb_func: str = "sum", part_func: Optional[str] = None, seed: int = 0) -> List[dict]:
    """
    Estimator accuracy and measured sampling overhead per (workload, method, rate).

    Accuracy is the median estimate over `seeds` seeds starting at `seed`.
    Overhead comes from a real network_aware run per row, sampling with that
    method and rate: sampling_time is the modeled time of its SAMP phases,
    and modeled_overhead_fraction relates it to the vanilla shuffle's time.
    """
    cm = cm or CostModel()
    comb, part = get_combiner(comb_func), get_partitioner(part_func)
    srcs = topo.workers()
    sim = Simulator(topo, cm)
    rows = []
    for spec in workloads:
        inputs = gen_workload(spec, srcs)
        population = merge_buffers(inputs[w] for w in srcs)
        truth = true_ratio(inputs, comb)
        total = population.total_bytes
        vanilla = sim.run("vanilla_push", inputs, srcs=srcs, comb_func=comb_func)
        logger.info(f"sweep {spec.describe()}: true ratio {truth:.4f}, {len(population)} messages")

        for rate in rates:
            for method in methods:
                base = SamplingConfig(rate=rate, seed=seed, method=method)
                estimates, sample_bytes = [], []
                if method == "partition_aware":
                    table = group_reduction_table(population, srcs, part, comb, base)
                    for s in range(seed, seed + seeds):
                        j = choose_group(replace(base, seed=s), 0, SAMPLING_STAGE, base.groups)
                        before, after = table[j]
                        estimates.append(after / before if before else 1.0)
                        sample_bytes.append(before)
                else:
                    for s in range(seed, seed + seeds):
                        sample = samp_random(population, rate, replace(base, seed=s))
                        estimates.append(estimate_reduction(sample, comb))
                        sample_bytes.append(sample.total_bytes)
                adaptive = sim.run("network_aware", inputs, srcs=srcs, comb_func=comb_func,
                                   part_func=part_func, cfg=base)
                median = statistics.median(estimates)
                median_bytes = statistics.median(sample_bytes)
                rows.append({
                    "workload": spec.describe(),
                    "method": method,
                    "rate": rate,
                    "r_hat_median": median,
                    "true_ratio": truth,
                    "relative_error": abs(median - truth) / truth,
                    "sampling_bytes_fraction": median_bytes / total if total else 0.0,
                    "sampling_time": adaptive.sampling_time,
                    "modeled_overhead_fraction": adaptive.sampling_time / vanilla.modeled_time,
                })
    return rows


# --- Hierarchical decisions ---

def decision_matrix(workloads: Sequence[WorkloadSpec], oversubscriptions: Sequence[float], topo: Topology,
                    cm: Optional[CostModel] = None, cfg: Optional[SamplingConfig] = None,
                    comb_func: str = "sum", seeds: Sequence[int] = (0,)) -> List[dict]:
    """Adaptive trace vs the exhaustive best variant, per oversubscription, workload and seed."""
    cm = cm or CostModel()
    cfg = cfg or SamplingConfig()
    srcs = topo.workers()
    rows = []
    for ratio in oversubscriptions:
        sim = Simulator(topo.with_oversubscription(ratio), cm)
        for spec in workloads:
            for seed in seeds:
                inputs = gen_workload(spec.with_seed(spec.seed + seed), srcs)
                run_cfg = replace(cfg, seed=cfg.seed + seed)
                vanilla = sim.run("vanilla_push", inputs, srcs=srcs, comb_func=comb_func)
                adaptive = sim.run("network_aware", inputs, srcs=srcs, comb_func=comb_func, cfg=run_cfg)
                best, best_time, _ = exhaustive_best_plan(sim, inputs, comb_func=comb_func, srcs=srcs, cfg=run_cfg)
                cross_vanilla = vanilla.bytes_by_level[Level.GLOBAL.name]
                cross_adaptive = adaptive.bytes_by_level[Level.GLOBAL.name]
                rows.append({
                    "oversub": ratio,
                    "workload": spec.describe(),
                    "seed": seed,
                    "trace": adaptive.trace,
                    "best_trace": best,
                    "regret": adaptive.modeled_time / best_time - 1.0,
                    "bytes_saved_fraction": 1.0 - cross_adaptive / cross_vanilla if cross_vanilla else 0.0,
                    "modeled_speedup": vanilla.modeled_time / adaptive.modeled_time,
                })
                logger.info(f"oversub {ratio}:1 {spec.describe()} seed {seed}: {adaptive.trace} (best {best})")
    return rows


def agreement_summary(rows: Sequence[dict]) -> Dict[str, float]:
    """Share of rows whose adaptive trace is the exhaustive best, and the worst regret otherwise."""
    if not rows:
        return {"agreement": 1.0, "max_regret": 0.0}
    agree = sum(1 for r in rows if r["trace"] == r["best_trace"])
    regrets = [r["regret"] for r in rows if r["trace"] != r["best_trace"]]
    return {"agreement": agree / len(rows), "max_regret": max(regrets, default=0.0)}


def optimality_grid(workload: WorkloadSpec, oversubscriptions: Sequence[float], copies: Sequence[int],
                    topo: Topology, configs: int = 100, cm: Optional[CostModel] = None,
                    cfg: Optional[SamplingConfig] = None, comb_func: str = "sum") -> List[dict]:
    """
    Adaptive trace vs the exhaustive best over `configs` configurations.

    Configuration i uses oversubscriptions[i % len(oversubscriptions)],
    copies[(i // len(oversubscriptions)) % len(copies)] and seed i for both
    the workload and the sampling seed. Rows have DECISION_COLUMNS.
    """
    if not oversubscriptions or not copies:
        raise ValueError("need at least one oversubscription and one duplication level")
    rows = []
    for i in range(configs):
        ratio = oversubscriptions[i % len(oversubscriptions)]
        spec = replace(workload, copies=copies[(i // len(oversubscriptions)) % len(copies)], seed=0)
        row = decision_matrix([spec], [ratio], topo, cm=cm, cfg=cfg, comb_func=comb_func, seeds=(i,))[0]
        rows.append(row)
    summary = agreement_summary(rows)
    logger.info(f"optimality over {configs} configurations: agreement {summary['agreement']:.3f}, "
                f"max regret {summary['max_regret']:.3f}")
    return rows


# --- Spine failures ---

def failure_scenarios(topo: Topology, workload: WorkloadSpec, k: int, scenarios: int,
                      cm: Optional[CostModel] = None, cfg: Optional[SamplingConfig] = None,
                      comb_func: str = "sum") -> List[dict]:
    """Vanilla vs network-aware modeled time under `scenarios` seeded k-link failures."""
    cm = cm or CostModel()
    cfg = cfg or SamplingConfig()
    srcs = topo.workers()
    inputs = gen_workload(workload, srcs)
    baseline = Simulator(topo, cm).run("network_aware", inputs, srcs=srcs, comb_func=comb_func, cfg=cfg)
    rows = []
    for seed in range(scenarios):
        failed_topo = inject_spine_failures(topo, k, seed)
        sim = Simulator(failed_topo, cm)
        vanilla = sim.run("vanilla_push", inputs, srcs=srcs, comb_func=comb_func)
        adaptive = sim.run("network_aware", inputs, srcs=srcs, comb_func=comb_func, cfg=cfg)
        new_links = sorted(failed_topo.failed_spine_links - topo.failed_spine_links)
        rows.append({
            "seed": seed,
            "failed_links": " ".join(f"{r}:{l}" for r, l in new_links),
            "vanilla_time": vanilla.modeled_time,
            "network_aware_time": adaptive.modeled_time,
            "no_failure_time": baseline.modeled_time,
            "trace": adaptive.trace,
            "time_ratio": adaptive.modeled_time / vanilla.modeled_time,
        })
    return rows


def failure_summary(rows: Sequence[dict], tolerance: float = 0.25) -> Dict[str, float]:
    if not rows:
        return {"never_worse": 1.0, "close_to_healthy": 1.0, "median_ratio": 1.0}
    never_worse = sum(1 for r in rows if r["network_aware_time"] <= r["vanilla_time"])
    close = sum(1 for r in rows if r["network_aware_time"] <= (1 + tolerance) * r["no_failure_time"])
    return {
        "never_worse": never_worse / len(rows),
        "close_to_healthy": close / len(rows),
        "median_ratio": statistics.median(r["time_ratio"] for r in rows),
    }
