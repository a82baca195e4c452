#!/usr/bin/env python3
"""
Unit tests for workload specs and generators.
"""

import os
import sys
import tempfile
import unittest

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.shuffle.core import get_combiner
from app.shuffle.errors import IngestionError, InvalidArgumentError
from app.shuffle.workload import WorkloadKind, WorkloadSpec, gen_workload, key_name, true_ratio, zipf_weights

SUM = get_combiner("sum")


class TestWorkloadSpec(unittest.TestCase):

    def test_parse(self):
        spec = WorkloadSpec.parse("zipf:n=100,keys=50,s=0.9,seed=3")
        self.assertEqual(spec, WorkloadSpec(WorkloadKind.ZIPF, 100, 50, 0.9, seed=3))
        self.assertEqual(WorkloadSpec.parse(spec.describe()), spec)

    def test_parse_duplicate(self):
        spec = WorkloadSpec.parse("duplicate:n=10,copies=3,local=2")
        self.assertEqual((spec.n_messages, spec.copies, spec.local_copies), (10, 3, 2))
        self.assertEqual(spec.describe(), "duplicate:n=10,copies=3,local=2,seed=0")

    def test_parse_errors(self):
        for text in ("gauss:n=1", "uniform:n", "uniform:size=4", "uniform:n=-1", "duplicate:copies=0", "file:"):
            with self.subTest(text=text):
                with self.assertRaises(InvalidArgumentError):
                    WorkloadSpec.parse(text)

    def test_zipf_weights(self):
        weights = zipf_weights(10, 1.1)
        self.assertAlmostEqual(weights.sum(), 1.0)
        self.assertTrue(all(weights[i] > weights[i + 1] for i in range(9)))


class TestGenerators(unittest.TestCase):

    def test_deterministic(self):
        spec = WorkloadSpec.parse("uniform:n=50,keys=20,seed=8")
        self.assertEqual(gen_workload(spec, [0, 1, 2]), gen_workload(spec, [0, 1, 2]))
        self.assertNotEqual(gen_workload(spec, [0, 1, 2]), gen_workload(spec.with_seed(9), [0, 1, 2]))

    def test_sizes(self):
        buffers = gen_workload(WorkloadSpec.parse("zipf:n=40,keys=100"), [4, 5])
        self.assertEqual(sorted(buffers), [4, 5])
        self.assertTrue(all(len(b) == 40 for b in buffers.values()))
        self.assertTrue(all(m.size == 24 for b in buffers.values() for m in b))

    def test_letter_count(self):
        buffers = gen_workload(WorkloadSpec.parse("letter_count:n=500"), [0, 1])
        keys = {m.key for b in buffers.values() for m in b}
        self.assertLessEqual(len(keys), 26)

    def test_duplicate_ratio(self):
        spec = WorkloadSpec.parse("duplicate:n=300,copies=4,local=2")
        buffers = gen_workload(spec, list(range(10)))
        self.assertEqual(sum(len(b) for b in buffers.values()), 300 * 4 * 2)
        self.assertAlmostEqual(true_ratio(buffers, SUM), 1 / 8)
        holders = [w for w, b in buffers.items() if any(m.key == key_name(0) for m in b)]
        self.assertEqual(len(holders), 4)

    def test_copies_clamped(self):
        with self.assertLogs("workload", level="WARNING"):
            buffers = gen_workload(WorkloadSpec.parse("duplicate:n=5,copies=9"), [0, 1, 2])
        self.assertEqual(sum(len(b) for b in buffers.values()), 15)

    def test_no_sources(self):
        with self.assertRaises(InvalidArgumentError):
            gen_workload(WorkloadSpec(), [])

    def test_file_workload(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "counts.tsv")
            with open(path, "w") as f:
                f.write("# word counts\napple\t3\npear\t1\n\napple\t2\n")
            buffers = gen_workload(WorkloadSpec(WorkloadKind.FILE, path=path), [0, 1])
            self.assertEqual([m.key for m in buffers[0]], [b"apple", b"apple"])
            self.assertEqual([m.int_value() for m in buffers[1]], [1])

    def test_file_errors(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.tsv")
            with open(path, "w") as f:
                f.write("apple\t3\npear\tmany\n")
            with self.assertRaises(IngestionError) as ctx:
                gen_workload(WorkloadSpec(WorkloadKind.FILE, path=path), [0])
            self.assertEqual(ctx.exception.line, 2)
            with self.assertRaises(IngestionError):
                gen_workload(WorkloadSpec(WorkloadKind.FILE, path=os.path.join(tmp, "missing.tsv")), [0])

    def _ingest_error(self, content: bytes) -> IngestionError:
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "bad.tsv")
            with open(path, "wb") as f:
                f.write(content)
            with self.assertRaises(IngestionError) as ctx:
                gen_workload(WorkloadSpec(WorkloadKind.FILE, path=path), [0, 1])
            return ctx.exception

    def test_file_invalid_utf8(self):
        error = self._ingest_error(b"apple\t3\n# ok\ncaf\xe9\t1\n")
        self.assertEqual(error.line, 3)
        self.assertIn("UTF-8", str(error))

    def test_file_value_out_of_range(self):
        error = self._ingest_error(b"apple\t3\npear\t9223372036854775808\n")
        self.assertEqual(error.line, 2)
        error = self._ingest_error(b"pear\t-9223372036854775809\n")
        self.assertEqual(error.line, 1)

    def test_file_value_at_limits(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "limits.tsv")
            with open(path, "w") as f:
                f.write("max\t9223372036854775807\nmin\t-9223372036854775808\n")
            buffers = gen_workload(WorkloadSpec(WorkloadKind.FILE, path=path), [0, 1])
        self.assertEqual(buffers[0].msgs[0].int_value(), (1 << 63) - 1)
        self.assertEqual(buffers[1].msgs[0].int_value(), -(1 << 63))


if __name__ == "__main__":
    unittest.main()
