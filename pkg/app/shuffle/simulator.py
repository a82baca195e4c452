"""
Deterministic shuffle simulator.

A Simulator owns a topology, a cost model, a shuffle manager and one
ShuffleWorker per worker id. `run` drives one shuffle end to end: every
participant resolves the template through the manager, the plans execute on
the chosen scheduler, and END records are written before it returns.
"""

import itertools
import logging
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from app.manager.client import LocalManagerClient, ManagerClient
from app.manager.store import ShuffleManager
from app.manager.worker import ShuffleWorker
from app.shuffle.algorithms import load_library
from app.shuffle.core import MessageBuffer, combine_buffer, get_combiner, get_partitioner, merge_buffers, partition_buffer
from app.shuffle.errors import InvalidArgumentError
from app.shuffle.executor import SCHEDULERS, ShuffleOutcome, run_shuffle
from app.shuffle.plan import PlanOptions, ShuffleCall
from app.shuffle.sampling import SamplingConfig
from app.shuffle.topology import CostModel, Topology
from app.shuffle.workload import WorkloadSpec, gen_workload

logger = logging.getLogger("simulator")

# Forced (server, rack) branch choices and the trace each produces.
HIERARCHY_VARIANTS = {
    "G": (False, False),
    "S,G": (True, False),
    "R,G": (False, True),
    "S,R,G": (True, True),
}


class Simulator:
    def __init__(self, topo: Topology, cm: Optional[CostModel] = None,
                 manager: Optional[ShuffleManager] = None, client: Optional[ManagerClient] = None,
                 scheduler: str = "cooperative", template_dir=None):
        if scheduler not in SCHEDULERS:
            raise InvalidArgumentError(f"unknown scheduler {scheduler!r}; expected one of {SCHEDULERS}")
        self.topo = topo
        self.cm = cm or CostModel()
        self.scheduler = scheduler
        self.library = load_library(template_dir)
        if manager is None and client is None:
            manager = ShuffleManager(self.library.values())
        self.manager = manager
        self.client = client or LocalManagerClient(manager)
        self._workers: Dict[int, ShuffleWorker] = {}
        self._shuffle_ids = itertools.count(1)

    def worker(self, w_id: int) -> ShuffleWorker:
        if w_id not in self._workers:
            self.topo.check_worker(w_id)
            self._workers[w_id] = ShuffleWorker(w_id, self.client, self.topo, self.cm,
                                                local_templates=self.library)
        return self._workers[w_id]

    def run(self, template_id: str, inputs: Dict[int, MessageBuffer], dsts: Optional[Sequence[int]] = None,
            part_func: Optional[str] = None, comb_func: Optional[str] = None,
            cfg: Optional[SamplingConfig] = None, options: Optional[PlanOptions] = None,
            srcs: Optional[Sequence[int]] = None, shuffle_id: Optional[int] = None) -> ShuffleOutcome:
        """
        Runs one shuffle.

        Args:
            template_id: Template to run; must be known to the manager.
            inputs: Source worker -> input buffer.
            dsts: Destination workers; defaults to every worker of the topology.
            srcs: Source workers; defaults to the keys of inputs in ascending order.

        Returns:
            The outcome, including manager record counts for this shuffle.

        Raises:
            DeadlockError: All live workers blocked.
            PlanError: A worker's plan failed; the error names the worker.
        """
        cfg = cfg or SamplingConfig()
        srcs = list(srcs) if srcs is not None else sorted(inputs)
        dsts = list(dsts) if dsts is not None else self.topo.workers()
        shuffle_id = shuffle_id if shuffle_id is not None else next(self._shuffle_ids)
        participants = sorted(set(srcs) | set(dsts))

        calls = [ShuffleCall(w_id=w, template_id=template_id, shuffle_id=shuffle_id, srcs=srcs, dsts=dsts,
                             bufs=inputs.get(w, MessageBuffer()) if w in srcs else MessageBuffer(),
                             part_func=part_func, comb_func=comb_func)
                 for w in participants]
        logger.info(f"shuffle {shuffle_id}: {template_id} {len(srcs)} srcs -> {len(dsts)} dsts "
                    f"({self.scheduler})")
        plans = [self.worker(call.w_id).prepare(call, cfg, options) for call in calls]
        outcome = run_shuffle(plans, self.scheduler)
        for call in calls:
            self.worker(call.w_id).finish(call)
        self.client.flush()
        if self.manager is not None:
            outcome.record_counts = self.manager.record_counts(shuffle_id)
        logger.info(f"shuffle {shuffle_id} done: trace={outcome.trace or '-'} "
                    f"time={outcome.modeled_time:.6e}s bytes={outcome.bytes_by_level}")
        return outcome

    def run_workload(self, template_id: str, workload: WorkloadSpec, srcs: Optional[Sequence[int]] = None,
                     **kwargs) -> ShuffleOutcome:
        srcs = list(srcs) if srcs is not None else self.topo.workers()
        return self.run(template_id, gen_workload(workload, srcs), srcs=srcs, **kwargs)


def run(topo: Topology, cm: CostModel, template_id: str, workload: WorkloadSpec,
        cfg: Optional[SamplingConfig] = None, comb_func: Optional[str] = "sum",
        scheduler: str = "cooperative", **kwargs) -> ShuffleOutcome:
    """One-shot helper: a fresh simulator running one workload over every worker."""
    sim = Simulator(topo, cm, scheduler=scheduler)
    return sim.run_workload(template_id, workload, cfg=cfg, comb_func=comb_func, **kwargs)


def reference_reduce(inputs: Dict[int, MessageBuffer], dsts: Sequence[int],
                     part_func: Optional[str] = None, comb_func: Optional[str] = None) -> Dict[int, MessageBuffer]:
    """Single-node oracle: concatenate all inputs, combine, partition over dsts."""
    merged = merge_buffers(inputs[w] for w in sorted(inputs))
    if comb_func is not None:
        merged = combine_buffer(merged, get_combiner(comb_func))
    return partition_buffer(merged, list(dsts), get_partitioner(part_func))


def inject_spine_failures(topo: Topology, k: int, seed: int) -> Topology:
    """
    Fails k healthy spine links chosen uniformly without replacement, never
    disconnecting a rack.

    Raises:
        InvalidArgumentError: If k links cannot fail without disconnecting a rack.
    """
    spare = sum(topo.spine_links_per_rack - 1 - topo.failures_on_rack(r) for r in range(topo.racks))
    if k < 0 or k > spare:
        raise InvalidArgumentError(f"cannot fail {k} spine links; at most {spare} can fail "
                                   f"without disconnecting a rack")
    rng = np.random.default_rng([seed, k])
    failed = set(topo.failed_spine_links)
    for _ in range(k):
        candidates = [(r, l) for r in range(topo.racks) for l in range(topo.spine_links_per_rack)
                      if (r, l) not in failed
                      and sum(1 for fr, _ in failed if fr == r) < topo.spine_links_per_rack - 1]
        failed.add(candidates[int(rng.integers(len(candidates)))])
    logger.debug(f"failed spine links (seed {seed}): {sorted(failed - set(topo.failed_spine_links))}")
    return topo.with_failures(failed)


def exhaustive_best_plan(sim: Simulator, inputs: Dict[int, MessageBuffer], comb_func: str = "sum",
                         template_id: str = "network_aware", **kwargs) -> Tuple[str, float, Dict[str, ShuffleOutcome]]:
    """
    Forces each hierarchical variant (G; S,G; R,G; S,R,G) and returns the
    fastest by modeled time, with every variant's outcome.
    """
    outcomes = {}
    for label, (server, rack) in HIERARCHY_VARIANTS.items():
        options = PlanOptions(forced={"server": server, "rack": rack})
        outcomes[label] = sim.run(template_id, inputs, comb_func=comb_func, options=options, **kwargs)
    best = min(outcomes, key=lambda label: (outcomes[label].modeled_time, label))
    return best, outcomes[best].modeled_time, outcomes
