#!/usr/bin/env python3
"""
Unit tests for the shuffle manager: template registry, START/END records,
the wire protocol and the standalone TCP service.
"""

import itertools
import os
import socket
import sys
import tempfile
import unittest
from collections import Counter
from unittest import mock

from anyio.from_thread import start_blocking_portal

# Add the parent directory to the path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.manager.client import LocalManagerClient, RemoteManagerClient
from app.manager.protocol import LENGTH, decode_payload, dispatch, encode_frame, recv_message
from app.manager.server import build_manager, serve
from app.manager.store import RecordKind, ShuffleManager, WorkerStatus
from app.shuffle.algorithms import load_library
from app.shuffle.errors import NotFoundError, ProtocolError, TemplateParseError
from app.shuffle.simulator import Simulator
from app.shuffle.topology import CostModel, Topology
from app.shuffle.workload import WorkloadSpec, gen_workload

TOPO = Topology(racks=2, servers_per_rack=2, workers_per_server=2)
COSTS = CostModel(alpha=1e-6)
TINY = "template tiny\nsection sender\nPART parts bufs dsts\nPUBLISH parts\n"


class CountingClient(LocalManagerClient):
    """Local client that counts requests and notifications per op."""

    def __init__(self, manager):
        super().__init__(manager)
        self.requests = Counter()
        self.notifications = Counter()
        self.wire_bytes = 0

    def request(self, message):
        self.requests[message["op"]] += 1
        response = super().request(message)
        self.wire_bytes += len(encode_frame(message)) + len(encode_frame(response))
        return response

    def notify(self, message):
        self.notifications[message["op"]] += 1
        self.wire_bytes += len(encode_frame(message))
        super().notify(message)


def _check_record_invariants(test, manager):
    by_key = {}
    for record in manager.records():
        by_key.setdefault((record.w_id, record.shuffle_id), []).append(record)
    for key, records in by_key.items():
        test.assertEqual([r.kind for r in records], [RecordKind.START, RecordKind.END], key)
        test.assertLessEqual(records[0].timestamp, records[1].timestamp)
        test.assertLess(records[0].seq, records[1].seq)


class TestShuffleManager(unittest.TestCase):

    def setUp(self):
        self.manager = ShuffleManager(load_library().values())

    def test_get_template_records_start(self):
        template = self.manager.get_template(3, 1, "vanilla_push")
        self.assertEqual(template.id, "vanilla_push")
        self.assertEqual(self.manager.record_counts(1), {"START": 1, "END": 0})
        self.assertEqual(self.manager.progress(1, workers=[3, 4]),
                         {3: WorkerStatus.IN_FLIGHT, 4: WorkerStatus.NOT_STARTED})

    def test_unknown_template_records_nothing(self):
        with self.assertRaises(NotFoundError):
            self.manager.get_template(0, 1, "missing")
        self.assertEqual(self.manager.records(), [])

    def test_duplicate_start(self):
        self.manager.record_start(0, 1, "vanilla_push")
        with self.assertRaises(ProtocolError):
            self.manager.record_start(0, 1, "vanilla_push")

    def test_end_without_start(self):
        with self.assertRaises(ProtocolError):
            self.manager.record_end(0, 1)
        self.manager.record_start(0, 1, "vanilla_push")
        self.manager.record_end(0, 1)
        with self.assertRaises(ProtocolError):
            self.manager.record_end(0, 1)
        self.assertEqual(self.manager.progress(1), {0: WorkerStatus.DONE})

    def test_install_template(self):
        self.manager.install_template("tiny", TINY)
        self.assertIn("tiny", self.manager.list_templates())
        with self.assertRaises(ProtocolError):
            self.manager.install_template("other", TINY)
        with self.assertRaises(TemplateParseError):
            self.manager.install_template("bad", "template bad\nsection sender\nHOP x\n")
        self.assertNotIn("bad", self.manager.list_templates())

    def test_reinstall_replaces(self):
        self.manager.install_template("tiny", TINY)
        self.assertNotIn("PHASE", self.manager.template("tiny").opcodes())
        phased = TINY.replace("section sender\n", "section sender\nPHASE global\n")
        self.manager.install_template("tiny", phased)
        self.assertIn("PHASE", self.manager.get_template(0, 1, "tiny").opcodes())

    def test_record_order_ignores_wall_clock(self):
        backwards = itertools.count(1e9, -1.0)
        with mock.patch("time.time", side_effect=lambda: next(backwards)):
            self.manager.record_start(0, 1, "vanilla_push")
            self.manager.record_end(0, 1)
        _check_record_invariants(self, self.manager)

    def test_spill_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            spill = os.path.join(tmp, "records", "shuffle.jsonl")
            manager = ShuffleManager(load_library().values(), spill_path=spill)
            manager.record_start(1, 9, "bruck")
            manager.record_end(1, 9)
            self.assertEqual(ShuffleManager.load_records(spill), manager.records())


class TestProtocol(unittest.TestCase):

    def setUp(self):
        self.manager = ShuffleManager(load_library().values())

    def test_frame_layout(self):
        frame = encode_frame({"op": "list_templates"})
        (length,) = LENGTH.unpack(frame[:4])
        self.assertEqual(length, len(frame) - 4)
        self.assertEqual(decode_payload(frame[4:]), {"op": "list_templates"})

    def test_malformed_payload(self):
        with self.assertRaises(ProtocolError):
            decode_payload(b"{not json")
        with self.assertRaises(ProtocolError):
            decode_payload(b"[1, 2]")

    def test_dispatch_errors(self):
        self.assertEqual(dispatch(self.manager, {"op": "get_template", "wId": 0, "shuffleId": 1,
                                                 "templateId": "missing"})["err"], "not_found")
        self.assertEqual(dispatch(self.manager, {"op": "record_end", "wId": 0, "shuffleId": 1})["err"], "protocol")
        self.assertEqual(dispatch(self.manager, {"op": "record_end", "wId": "x", "shuffleId": 1})["err"], "protocol")
        self.assertEqual(dispatch(self.manager, {"op": "teleport"})["err"], "protocol")
        response = dispatch(self.manager, {"op": "install_template", "templateId": "x", "body": "nonsense"})
        self.assertEqual(response["err"], "invalid")

    def test_counting_double(self):
        client = CountingClient(self.manager)
        sim = Simulator(TOPO, COSTS, manager=self.manager, client=client)
        inputs = gen_workload(WorkloadSpec.parse("uniform:n=20,keys=30"), TOPO.workers())
        invocations = 4
        for _ in range(invocations):
            sim.run("vanilla_pull", inputs, comb_func="sum")
        workers = TOPO.num_workers
        self.assertEqual(client.requests["get_template"], workers)
        self.assertEqual(client.notifications["record_start"], workers * (invocations - 1))
        self.assertEqual(client.requests["record_end"], workers * invocations)
        self.assertEqual(self.manager.record_counts(), {"START": workers * invocations,
                                                        "END": workers * invocations})
        _check_record_invariants(self, self.manager)

    def test_control_traffic_ignores_workload_size(self):
        traffic = []
        for spec in ("uniform:n=20,keys=30", "uniform:n=2000,keys=3000"):
            manager = ShuffleManager(load_library().values())
            client = CountingClient(manager)
            sim = Simulator(TOPO, COSTS, manager=manager, client=client)
            inputs = gen_workload(WorkloadSpec.parse(spec), TOPO.workers())
            for _ in range(2):
                sim.run("vanilla_push", inputs, comb_func="sum")
            traffic.append(client.wire_bytes)
        self.assertGreater(traffic[0], 0)
        self.assertEqual(traffic[0], traffic[1])


class TestManagerService(unittest.TestCase):
    """The standalone service over loopback TCP."""

    def setUp(self):
        self.manager = build_manager()
        self.portal_cm = start_blocking_portal()
        self.portal = self.portal_cm.__enter__()
        self.server, self.port = self.portal.start_task(serve, self.manager, "127.0.0.1", 0)
        self.client = RemoteManagerClient("127.0.0.1", self.port)

    def tearDown(self):
        self.client.close()
        self.server.cancel()
        self.portal_cm.__exit__(None, None, None)

    def test_remote_shuffle(self):
        sim = Simulator(TOPO, COSTS, client=self.client)
        inputs = gen_workload(WorkloadSpec.parse("uniform:n=20,keys=30"), TOPO.workers())
        local = Simulator(TOPO, COSTS).run("vanilla_push", inputs, comb_func="sum")
        for _ in range(3):
            outcome = sim.run("vanilla_push", inputs, comb_func="sum")
        self.assertEqual(outcome.key_values(), local.key_values())
        self.assertEqual(self.manager.record_counts(), {"START": 24, "END": 24})
        _check_record_invariants(self, self.manager)
        self.assertEqual(self.client.progress(3), {w: WorkerStatus.DONE for w in TOPO.workers()})

    def test_remote_errors(self):
        with self.assertRaises(NotFoundError):
            self.client.get_template(0, 1, "missing")
        self.client.install_template("tiny", TINY)
        self.assertIn("tiny", self.client.list_templates())

    def test_malformed_frame_closes_connection(self):
        with socket.create_connection(("127.0.0.1", self.port), timeout=5) as conn:
            conn.sendall(LENGTH.pack(5) + b"{oops")
            response = recv_message(conn)
            self.assertEqual(response["err"], "protocol")
            self.assertIsNone(recv_message(conn))

class TestManagerUnreachable(unittest.TestCase):
    """Shuffles keep running when no manager listens."""

    def setUp(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        self.client = RemoteManagerClient("127.0.0.1", port, timeout=1.0)
        self.inputs = gen_workload(WorkloadSpec.parse("uniform:n=20,keys=30"), TOPO.workers())

    def tearDown(self):
        self.client.close()

    def test_shuffle_proceeds_with_warning(self):
        sim = Simulator(TOPO, COSTS, client=self.client)
        with self.assertLogs("shuffle_worker", level="WARNING") as logs:
            outcome = sim.run("vanilla_push", self.inputs, comb_func="sum")
        local = Simulator(TOPO, COSTS).run("vanilla_push", self.inputs, comb_func="sum")
        self.assertEqual(outcome.key_values(), local.key_values())
        self.assertTrue(any("manager unreachable" in line for line in logs.output))
        self.assertTrue(any("not recorded" in line for line in logs.output))
        self.assertEqual(sim.worker(0).cached_templates(), [])

    def test_unknown_template_still_fails(self):
        sim = Simulator(TOPO, COSTS, client=self.client)
        with self.assertRaises(OSError):
            sim.run("warp_drive", self.inputs, comb_func="sum")



if __name__ == "__main__":
    unittest.main()
