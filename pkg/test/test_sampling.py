#!/usr/bin/env python3
"""
Unit tests for partition-aware and random sampling and the eff/cost estimate.
"""

import math
import os
import sys
import unittest

import numpy as np

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.shuffle.core import Message, MessageBuffer, fnv1a_64, get_combiner, get_partitioner, merge_buffers
from app.shuffle.errors import InvalidArgumentError
from app.shuffle.experiments import sampling_sweep
from app.shuffle.sampling import (SampleRun, SamplingConfig, choose_group, compute_eff_cost, estimate_reduction,
                                  extract_group, group_of, group_reduction_table, mix64, samp_random,
                                  spread_cost_per_byte)
from app.shuffle.simulator import Simulator
from app.shuffle.topology import CostModel, Level, Topology
from app.shuffle.workload import LETTERS, WorkloadSpec, gen_workload, true_ratio

SUM = get_combiner("sum")
PART = get_partitioner(None)
TOPO = Topology(racks=2, servers_per_rack=5, workers_per_server=2)


class TestSamplingConfig(unittest.TestCase):

    def test_groups(self):
        self.assertEqual(SamplingConfig(rate=0.01).groups, 100)
        self.assertEqual(SamplingConfig(rate=1.0).groups, 1)
        self.assertEqual(SamplingConfig(rate=1e-4).groups, 10000)

    def test_invalid(self):
        with self.assertRaises(InvalidArgumentError):
            SamplingConfig(rate=0)
        with self.assertRaises(InvalidArgumentError):
            SamplingConfig(rate=1.5)
        with self.assertRaises(InvalidArgumentError):
            SamplingConfig(seed=-1)
        with self.assertRaises(InvalidArgumentError):
            SamplingConfig(method="systematic")


class TestGrouping(unittest.TestCase):
    """Group assignment and the shared choice of group."""

    def test_copies_share_a_group(self):
        space = range(1 << 20)
        a, b = Message.of_int("key", 1), Message.of_int("key", 99)
        self.assertEqual(group_of(a, space, PART, 100), group_of(b, space, PART, 100))

    def test_single_group_takes_everything(self):
        buf = MessageBuffer(Message.of_int(f"k{i}", 1) for i in range(30))
        self.assertEqual(extract_group(buf, range(64), PART, 1, 0), buf)

    def test_choice_is_deterministic(self):
        cfg = SamplingConfig(rate=0.01, seed=5)
        picks = {choose_group(cfg, 3, "rack", cfg.groups) for _ in range(5)}
        self.assertEqual(len(picks), 1)
        self.assertTrue(0 <= picks.pop() < 100)

    def test_choice_varies_with_seed(self):
        picks = {choose_group(SamplingConfig(seed=s), 1, "server", 100) for s in range(30)}
        self.assertGreater(len(picks), 10)

    def test_table_weights_to_population_ratio(self):
        inputs = gen_workload(WorkloadSpec.parse("zipf:n=300,keys=200,s=1.1,seed=4"), range(4))
        population = merge_buffers(inputs.values())
        table = group_reduction_table(population, list(range(4)), PART, SUM, SamplingConfig(rate=0.1))
        before = sum(b for b, _ in table)
        after = sum(a for _, a in table)
        self.assertEqual(before, population.total_bytes)
        self.assertAlmostEqual(after / before, true_ratio(inputs, SUM))

    def test_letter_groups_match_enumeration(self):
        # 26 destinations, 10 groups: each letter lands in the group of its destination index.
        dsts = list(range(26))
        buf = gen_workload(WorkloadSpec.parse("letter_count:n=400,seed=3"), [0])[0]
        expected = {j: set() for j in range(10)}
        for letter in LETTERS:
            index = fnv1a_64(letter.encode("utf-8")) % 26
            expected[mix64(index) % 10].add(letter.encode("utf-8"))
        seen = 0
        for j in range(10):
            group = extract_group(buf, dsts, PART, 10, j)
            self.assertTrue({m.key for m in group} <= expected[j])
            self.assertTrue(all(group_of(m, dsts, PART, 10) == j for m in group))
            self.assertEqual(len(group), sum(1 for m in buf if m.key in expected[j]))
            seen += len(group)
        self.assertEqual(seen, len(buf))

    def test_sampled_share_concentrates(self):
        # 100 groups over ~10000 distinct keys: every seed samples close to 1% of the bytes.
        inputs = gen_workload(WorkloadSpec.parse("uniform:n=500,keys=1000000,seed=2"), range(20))
        population = merge_buffers(inputs.values())
        cfg = SamplingConfig(rate=0.01)
        table = group_reduction_table(population, list(range(20)), PART, SUM, cfg)
        shares = []
        for seed in range(100):
            j = choose_group(SamplingConfig(rate=0.01, seed=seed), 0, "rack", cfg.groups)
            shares.append(table[j][0] / population.total_bytes)
        self.assertTrue(all(0.005 <= s <= 0.015 for s in shares), shares)
        j = choose_group(cfg, 0, "rack", cfg.groups)
        self.assertEqual(extract_group(population, cfg.destination_space(range(20)), PART, 100, j).total_bytes,
                         table[j][0])


class TestEstimators(unittest.TestCase):

    def test_empty_sample(self):
        self.assertEqual(estimate_reduction(MessageBuffer(), SUM), 1.0)

    def test_all_distinct(self):
        buf = MessageBuffer(Message.of_int(f"k{i}", 1) for i in range(10))
        self.assertEqual(estimate_reduction(buf, SUM), 1.0)

    def test_random_sampling_rate(self):
        buf = MessageBuffer(Message.of_int(f"k{i}", 1) for i in range(20000))
        sample = samp_random(buf, 0.1, SamplingConfig(seed=1))
        self.assertTrue(1700 < len(sample) < 2300)
        self.assertEqual(samp_random(buf, 0.1, SamplingConfig(seed=1)), sample)

    def test_random_sample_size_within_three_sigma(self):
        n, p = 2000, 0.1
        buf = MessageBuffer(Message.of_int(f"k{i}", 1) for i in range(n))
        mean, sigma = n * p, math.sqrt(n * p * (1 - p))
        sizes = np.array([len(samp_random(buf, p, SamplingConfig(seed=s))) for s in range(1000)])
        self.assertGreaterEqual(np.mean(np.abs(sizes - mean) <= 3 * sigma), 0.99)
        self.assertLessEqual(abs(sizes.mean() - mean), 3 * sigma / math.sqrt(len(sizes)))

    def test_partition_aware_beats_random(self):
        # 20000 keys, five copies each: true ratio 0.2.
        spec = WorkloadSpec.parse("duplicate:n=20000,copies=5,seed=0")
        rows = sampling_sweep([spec], [1e-2, 1e-3, 1e-4], TOPO, CostModel(alpha=1e-6), seeds=30)
        by_method = {(r["method"], r["rate"]): r for r in rows}
        truth = rows[0]["true_ratio"]
        self.assertTrue(0.15 <= truth <= 0.25)
        for rate in (1e-2, 1e-3, 1e-4):
            self.assertLessEqual(by_method[("partition_aware", rate)]["relative_error"], 0.10)
        self.assertGreaterEqual(by_method[("random", 1e-2)]["r_hat_median"], 3 * truth)
        self.assertLessEqual(by_method[("partition_aware", 1e-2)]["sampling_bytes_fraction"], 0.02)
        for row in rows:
            self.assertGreater(row["sampling_time"], 0.0)
        self.assertLess(by_method[("partition_aware", 1e-2)]["modeled_overhead_fraction"], 0.5)

    def test_full_rate_is_exact(self):
        spec = WorkloadSpec.parse("zipf:n=500,keys=2000,s=1.1,seed=4")
        for row in sampling_sweep([spec], [1.0], TOPO, CostModel(alpha=1e-6), seeds=3):
            self.assertAlmostEqual(row["r_hat_median"], row["true_ratio"])
            self.assertEqual(row["sampling_bytes_fraction"], 1.0)


class TestSamplingInShuffle(unittest.TestCase):
    """Both sampling methods driven through the hierarchical template."""

    def test_random_method_runs_in_template(self):
        inputs = gen_workload(WorkloadSpec.parse("duplicate:n=500,copies=20,local=2"), TOPO.workers())
        sim = Simulator(TOPO.with_oversubscription(10), CostModel(alpha=1e-6))
        aware = sim.run("network_aware", inputs, comb_func="sum", cfg=SamplingConfig(rate=0.05))
        drawn = sim.run("network_aware", inputs, comb_func="sum", cfg=SamplingConfig(rate=0.05, method="random"))
        self.assertEqual(drawn.key_values(), aware.key_values())
        self.assertGreater(drawn.sampling_bytes, 0)
        self.assertGreater(drawn.sampling_time, 0.0)


class TestEffCost(unittest.TestCase):

    def setUp(self):
        self.topo = Topology(racks=2, servers_per_rack=2, workers_per_server=2, nic_bandwidth=1e9)
        self.cm = CostModel(alpha=1e-6, combine_cost=1e-9)
        self.run = SampleRun(stage="server", scope=[0, 1], S=100, j=0, sampling_server=0,
                             bytes_local={0: 1000, 1: 1000}, r_hat=0.5)

    def test_server_stage(self):
        # Each worker holds 1000 bytes and sends half of them to its one peer.
        eff, cost = compute_eff_cost(self.run, Level.SERVER, self.topo, self.cm)
        self.assertAlmostEqual(cost, 1e-6 + 500 / 1e10 + 1000e-9)
        self.assertAlmostEqual(eff, 0.5 * 1000 / 1e9)

    def test_oversubscription_raises_eff(self):
        topo = self.topo.with_oversubscription(10)
        eff, _ = compute_eff_cost(self.run, Level.SERVER, topo, self.cm, next_level=Level.GLOBAL)
        self.assertAlmostEqual(eff, 0.5 * 1000 / 1e8)

    def test_next_phase_peers(self):
        # Rack peers of worker 0: itself, one server peer and two rack peers.
        eff, _ = compute_eff_cost(self.run, Level.SERVER, self.topo, self.cm,
                                  next_level=Level.RACK, next_peers=[0, 1, 2, 3])
        per_byte = (1 / 1e10 + 2 / 1e9) / 4 + 1e-9
        self.assertAlmostEqual(eff, 0.5 * 1000 * per_byte)
        self.assertAlmostEqual(spread_cost_per_byte(0, [0], self.topo, self.cm), 1e-9)

    def test_rack_cost_pays_every_peer(self):
        run = SampleRun(stage="rack", scope=[0, 1, 2, 3], S=100, j=0, sampling_server=0,
                        bytes_local={w: 4000 for w in range(4)}, r_hat=0.5)
        _, cost = compute_eff_cost(run, Level.RACK, self.topo, self.cm)
        self.assertAlmostEqual(cost, 3 * 1e-6 + 1000 / 1e10 + 2 * 1000 / 1e9 + 4000e-9)

    def test_no_reduction_no_benefit(self):
        self.run.r_hat = 1.0
        eff, cost = compute_eff_cost(self.run, Level.RACK, self.topo, self.cm)
        self.assertEqual(eff, 0.0)
        self.assertGreater(cost, 0.0)

    def test_global_level_rejected(self):
        with self.assertRaises(InvalidArgumentError):
            compute_eff_cost(self.run, Level.GLOBAL, self.topo, self.cm)


if __name__ == "__main__":
    unittest.main()
