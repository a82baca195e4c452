#!/usr/bin/env python3
"""
Unit tests for the simulator: link-failure injection, failure robustness,
exhaustive variant search and run bookkeeping.
"""

import os
import sys
import unittest

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.shuffle.errors import InvalidArgumentError
from app.shuffle.experiments import failure_scenarios, failure_summary
from app.shuffle.simulator import HIERARCHY_VARIANTS, Simulator, exhaustive_best_plan, inject_spine_failures, run
from app.shuffle.topology import CostModel, Topology
from app.shuffle.workload import WorkloadSpec, gen_workload

CLUSTER = Topology(racks=2, servers_per_rack=5, workers_per_server=2, spine_links_per_rack=8)
DESK_COSTS = CostModel(alpha=1e-6, combine_cost=0.2e-9)


class TestFailureInjection(unittest.TestCase):

    def test_deterministic(self):
        self.assertEqual(inject_spine_failures(CLUSTER, 3, 7), inject_spine_failures(CLUSTER, 3, 7))

    def test_injects_k_links(self):
        for seed in range(20):
            failed = inject_spine_failures(CLUSTER, 3, seed)
            self.assertEqual(len(failed.failed_spine_links), 3)
            self.assertTrue(all(failed.healthy_fraction(r) > 0 for r in range(failed.racks)))

    def test_never_disconnects(self):
        topo = Topology(racks=2, servers_per_rack=1, workers_per_server=1, spine_links_per_rack=2)
        failed = inject_spine_failures(topo, 2, 0)
        self.assertEqual(failed.bottleneck_healthy_fraction, 0.5)
        with self.assertRaises(InvalidArgumentError):
            inject_spine_failures(topo, 3, 0)

    def test_zero_failures(self):
        self.assertEqual(inject_spine_failures(CLUSTER, 0, 1), CLUSTER)

    def test_failures_slow_vanilla(self):
        workload = WorkloadSpec.parse("uniform:n=500,keys=100000")
        healthy = run(CLUSTER, DESK_COSTS, "vanilla_push", workload)
        degraded = run(inject_spine_failures(CLUSTER, 3, 0), DESK_COSTS, "vanilla_push", workload)
        self.assertGreater(degraded.modeled_time, healthy.modeled_time)
        self.assertEqual(degraded.bytes_by_level, healthy.bytes_by_level)


class TestFailureRobustness(unittest.TestCase):

    def test_network_aware_under_failures(self):
        workload = WorkloadSpec.parse("duplicate:n=1000,copies=20,local=2")
        rows = failure_scenarios(CLUSTER.with_oversubscription(10), workload, 3, 100, cm=DESK_COSTS)
        self.assertEqual(len(rows), 100)
        summary = failure_summary(rows)
        self.assertEqual(summary["never_worse"], 1.0)
        self.assertGreaterEqual(summary["close_to_healthy"], 0.80)
        self.assertTrue(all(len(r["failed_links"].split()) == 3 for r in rows))


class TestSimulator(unittest.TestCase):

    def test_unknown_scheduler(self):
        with self.assertRaises(InvalidArgumentError):
            Simulator(CLUSTER, scheduler="threads")

    def test_shuffle_ids_advance(self):
        sim = Simulator(CLUSTER, DESK_COSTS)
        inputs = gen_workload(WorkloadSpec.parse("uniform:n=10,keys=10"), CLUSTER.workers())
        sim.run("vanilla_push", inputs)
        sim.run("vanilla_push", inputs)
        shuffle_ids = {r.shuffle_id for r in sim.manager.records()}
        self.assertEqual(shuffle_ids, {1, 2})
        self.assertEqual(sim.manager.record_counts(), {"START": 40, "END": 40})

    def test_worker_template_cache(self):
        sim = Simulator(CLUSTER, DESK_COSTS)
        inputs = gen_workload(WorkloadSpec.parse("uniform:n=10,keys=10"), CLUSTER.workers())
        for _ in range(3):
            sim.run("vanilla_pull", inputs)
        self.assertEqual(sim.worker(0).cached_templates(), ["vanilla_pull"])

    def test_exhaustive_best_plan(self):
        sim = Simulator(CLUSTER.with_oversubscription(10), DESK_COSTS)
        inputs = gen_workload(WorkloadSpec.parse("duplicate:n=2000,copies=20,local=2"), CLUSTER.workers())
        best, best_time, outcomes = exhaustive_best_plan(sim, inputs)
        self.assertEqual(set(outcomes), set(HIERARCHY_VARIANTS))
        for label, outcome in outcomes.items():
            self.assertEqual(outcome.trace, label)
            self.assertGreater(outcome.sampling_bytes, 0)
        self.assertEqual(best, "S,R,G")
        self.assertEqual(best_time, min(o.modeled_time for o in outcomes.values()))


if __name__ == "__main__":
    unittest.main()
