"""
Plan execution.

Each worker's plan runs as a generator that yields a channel Wait whenever it
blocks on RECV or FETCH. Two schedulers drive the generators over a shared
Fabric:

- cooperative: one thread steps workers in id order until all finish; a
  full pass without progress is a deadlock.
- parallel: one thread per worker blocking on the fabric's condition; the
  fabric declares deadlock when every live worker waits on an empty channel.

Both produce identical outcomes: modeled time is analytic, and every
per-worker accumulator depends only on that worker's program order.
"""

import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, Iterable, List, Optional, Tuple

from app.shuffle.channels import DATA_TAG, Fabric, Packet, Wait
from app.shuffle.core import MessageBuffer, combine_buffer, merge_buffers, partition_buffer
from app.shuffle.errors import DeadlockError, PlanError, TeShuError
from app.shuffle.plan import ShufflePlan, stage_of_level
from app.shuffle.sampling import broadcast_eff_cost, samp_partition_aware
from app.shuffle.templates import Instruction
from app.shuffle.topology import Level, level_of, neighbors_same_rack, transfer_time

logger = logging.getLogger("shuffle_executor")

SCHEDULERS = ("cooperative", "parallel")
TRACE_ORDER = ("S", "R", "G")
DEFAULT_PHASE = "main"

_INDEXED = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)\[(.+)\]$")


@dataclass
class WorkerStats:
    """Per-worker accumulators; merged into a ShuffleOutcome after the run."""

    phase_times: Dict[str, float] = field(default_factory=dict)
    bytes_by_level: Counter = field(default_factory=Counter)
    transfers_by_phase: Counter = field(default_factory=Counter)
    self_bytes: int = 0
    payload_bytes: int = 0
    sampling_bytes: int = 0
    trace: set = field(default_factory=set)
    decisions: Dict[Tuple[str, Tuple[int, ...]], bool] = field(default_factory=dict)

    def charge(self, phase: str, seconds: float) -> None:
        self.phase_times[phase] = self.phase_times.get(phase, 0.0) + seconds


@dataclass
class ShuffleOutcome:
    buffers: Dict[int, MessageBuffer]
    bytes_by_level: Dict[str, int]
    modeled_time: float
    phase_times: Dict[str, float]
    decision_trace: List[str]
    scope_decisions: Dict[Tuple[str, Tuple[int, ...]], bool]
    sampling_bytes: int
    sampling_time: float
    transfers_by_phase: Dict[str, int]
    self_bytes: int
    payload_bytes: int
    record_counts: Dict[str, int] = field(default_factory=dict)

    @property
    def trace(self) -> str:
        return ",".join(self.decision_trace)

    @property
    def total_bytes(self) -> int:
        return sum(self.bytes_by_level.values())

    def key_values(self) -> Dict[int, Dict[bytes, List[bytes]]]:
        """Destination -> key -> sorted values; order-insensitive view of the result."""
        view = {}
        for d, buf in self.buffers.items():
            per_key: Dict[bytes, List[bytes]] = {}
            for m in buf:
                per_key.setdefault(m.key, []).append(m.value)
            view[d] = {k: sorted(v) for k, v in per_key.items()}
        return view

    def summary(self) -> dict:
        return {
            "trace": self.trace,
            "modeled_time": self.modeled_time,
            "bytes_by_level": dict(self.bytes_by_level),
            "phase_times": dict(self.phase_times),
            "transfers_by_phase": dict(self.transfers_by_phase),
            "sampling_bytes": self.sampling_bytes,
            "sampling_time": self.sampling_time,
            "self_bytes": self.self_bytes,
            "messages_delivered": sum(len(b) for b in self.buffers.values()),
            "record_counts": dict(self.record_counts),
        }


class PlanExecutor:
    """Interprets one worker's ShufflePlan against a Fabric."""

    def __init__(self, plan: ShufflePlan, fabric: Fabric):
        self.plan = plan
        self.fabric = fabric
        self.worker = plan.call.w_id
        self.shuffle_id = plan.call.shuffle_id
        self.topo = plan.topo
        self.cm = plan.cm
        self.stats = WorkerStats()
        self.phase = DEFAULT_PHASE
        call = plan.call
        self.env: Dict[str, Any] = {
            "self": self.worker,
            "srcs": list(call.srcs),
            "dsts": list(call.dsts),
            "participants": list(call.participants),
            "bufs": MessageBuffer(call.bufs),
            "out": MessageBuffer(),
        }

    # --- Context used by the sampling collectives ---

    def send_packet(self, dst: int, packet: Packet, tag: str = DATA_TAG) -> None:
        level = level_of(self.worker, dst, self.topo)
        size = packet.size
        self.stats.charge(self.phase, transfer_time(size, level, self.topo, self.cm))
        self.stats.payload_bytes += size
        if tag != DATA_TAG:
            self.stats.sampling_bytes += size
        if level == Level.SELF:
            self.stats.self_bytes += size
        else:
            self.stats.bytes_by_level[level.name] += size
        self.stats.transfers_by_phase[self.phase] += 1
        self.fabric.put(self.worker, dst, packet, tag)

    def recv_packet(self, src: int, tag: str = DATA_TAG):
        packet = yield Wait("recv", src, self.worker, tag)
        return packet

    def charge_combine(self, nbytes: int) -> None:
        self.stats.charge(self.phase, self.cm.combine_cost * nbytes)

    # --- Operand resolution ---

    def value(self, token: str) -> Any:
        if token.startswith("$"):
            return self.plan.params[token[1:]]
        if token.isdigit():
            return int(token)
        match = _INDEXED.match(token)
        if match:
            container = self.value(match.group(1))
            key = self.value(match.group(2))
            try:
                return container[key]
            except (KeyError, IndexError, TypeError):
                raise PlanError(f"{match.group(1)} has no entry {key!r}") from None
        if "." in token:
            head, attr = token.split(".", 1)
            obj = self.value(head)
            for name in attr.split("."):
                obj = getattr(obj, name)
            return obj
        if token not in self.env:
            raise PlanError(f"undefined name {token!r}")
        return self.env[token]

    def assign(self, target: str, value: Any) -> None:
        match = _INDEXED.match(target)
        if match is None:
            self.env[target] = value
            return
        slot = self.env.setdefault(match.group(1), {})
        slot[self.value(match.group(2))] = value

    def _buffers(self, tokens: Iterable[str]) -> MessageBuffer:
        parts: List[MessageBuffer] = []
        for token in tokens:
            v = self.value(token)
            if isinstance(v, MessageBuffer):
                parts.append(v)
            elif isinstance(v, dict):
                parts.extend(v.values())
            elif isinstance(v, (list, tuple)):
                parts.extend(v)
            else:
                raise PlanError(f"{token!r} is not a message buffer")
        return merge_buffers(parts)

    # --- Instructions ---

    def run(self):
        for section, program in self.plan.programs:
            logger.debug(f"worker {self.worker}: running {section} program")
            yield from self._block(program)

    def _block(self, program: Tuple[Instruction, ...]):
        for ins in program:
            try:
                yield from getattr(self, f"_op_{ins.op.lower()}")(ins)
            except TeShuError:
                raise
            except (AttributeError, TypeError, ValueError) as e:
                raise PlanError(f"line {ins.line}: {ins}: {e}") from e

    def _op_phase(self, ins):
        self.phase = ins.args[0]
        yield from ()

    def _op_trace(self, ins):
        self.stats.trace.add(ins.args[0])
        yield from ()

    def _op_let(self, ins):
        target, exprs = ins.args[0], ins.args[1:]
        if len(exprs) == 1 and not isinstance(self.value(exprs[0]), (MessageBuffer, dict)):
            self.assign(target, self.value(exprs[0]))
        else:
            self.assign(target, self._buffers(exprs))
        yield from ()

    def _op_nbrs(self, ins):
        self.assign(ins.args[0], list(ins.resolved))
        yield from ()

    def _op_part(self, ins):
        target, buf, dests = ins.args[:3]
        part = self.value(ins.args[3]) if len(ins.args) == 4 else self.plan.part
        self.assign(target, partition_buffer(self._buffers([buf]), list(self.value(dests)), part))
        yield from ()

    def _op_comb(self, ins):
        merged = self._buffers(ins.args[1:])
        if self.plan.comb is not None:
            self.charge_combine(merged.total_bytes)
            merged = combine_buffer(merged, self.plan.comb)
        self.assign(ins.args[0], merged)
        yield from ()

    def _op_send(self, ins):
        dst = self.value(ins.args[0])
        self.send_packet(dst, Packet(self._buffers([ins.args[1]])))
        yield from ()

    def _op_recv(self, ins):
        packet = yield from self.recv_packet(self.value(ins.args[1]))
        self.assign(ins.args[0], packet.buffer)

    def _op_publish(self, ins):
        parts = self.value(ins.args[0])
        for dst, buf in parts.items():
            self.fabric.publish(self.worker, dst, buf)
        yield from ()

    def _op_fetch(self, ins):
        src = self.value(ins.args[1])
        packet = yield Wait("fetch", src, self.worker)
        level = level_of(src, self.worker, self.topo)
        size = packet.size
        self.stats.charge(self.phase, transfer_time(size, level, self.topo, self.cm))
        self.stats.payload_bytes += size
        if level == Level.SELF:
            self.stats.self_bytes += size
        else:
            self.stats.bytes_by_level[level.name] += size
        self.stats.transfers_by_phase[self.phase] += 1
        self.assign(ins.args[0], packet.buffer)

    def _op_samp(self, ins):
        target, buf, scope, stage, rate = ins.args
        cfg = self.plan.cfg
        rate_value = float(self.value(rate))
        if rate_value != cfg.rate:
            cfg = replace(cfg, rate=rate_value)
        run = yield from samp_partition_aware(
            self._buffers([buf]), self.plan.call.dsts, self.plan.part, cfg,
            self.value(scope), self, stage, self.plan.comb)
        self.assign(target, run)

    def _op_effcost(self, ins):
        eff_name, cost_name, run_name, level_name = ins.args
        level, next_level = ins.resolved
        stage = stage_of_level(level_name)
        run = self.value(run_name)
        call = self.plan.call
        if next_level == Level.RACK:
            next_peers = neighbors_same_rack(self.worker, call.srcs, self.topo)
        else:
            next_peers = call.dsts
        eff, cost = yield from broadcast_eff_cost(run, level, next_level, self, next_peers)
        # Forced branches still pay for sampling; only the outcome is overridden.
        if self.plan.forced is not None and stage in self.plan.forced:
            eff, cost = (1.0, 0.0) if self.plan.forced[stage] else (0.0, 1.0)
        self.stats.decisions[(stage, tuple(run.scope))] = eff > cost
        self.assign(eff_name, eff)
        self.assign(cost_name, cost)

    def _op_for(self, ins):
        var, _, items = ins.args
        for item in list(self.value(items)):
            self.env[var] = item
            yield from self._block(ins.body)

    def _op_if(self, ins):
        if len(ins.args) == 3:
            taken = self.value(ins.args[0]) > self.value(ins.args[2])
        else:
            taken = bool(self.value(ins.args[0]))
        if taken:
            yield from self._block(ins.body)


# --- Schedulers ---

def _annotate(error: TeShuError, worker: int) -> TeShuError:
    if error.worker is None and not isinstance(error, DeadlockError):
        error.worker = worker
    return error


def run_cooperative(executors: List[PlanExecutor], fabric: Fabric) -> None:
    """Steps every worker in id order until all finish; raises on deadlock."""
    pending: Dict[int, Tuple[Any, Wait]] = {}
    for ex in sorted(executors, key=lambda e: e.worker):
        gen = ex.run()
        try:
            pending[ex.worker] = (gen, next(gen))
        except StopIteration:
            pass
        except TeShuError as e:
            raise _annotate(e, ex.worker)

    while pending:
        progressed = False
        for worker in sorted(pending):
            gen, wait = pending[worker]
            try:
                while fabric.ready(wait):
                    progressed = True
                    wait = gen.send(fabric.take(wait))
                pending[worker] = (gen, wait)
            except StopIteration:
                del pending[worker]
            except TeShuError as e:
                raise _annotate(e, worker)
        if not progressed:
            error = DeadlockError({w: wait.describe() for w, (_, wait) in pending.items()})
            logger.error(str(error))
            raise error


def run_parallel(executors: List[PlanExecutor], fabric: Fabric) -> None:
    """Runs one thread per worker; raises the first failure after all threads stop."""
    for ex in executors:
        fabric.register(ex.worker)

    def drive(ex: PlanExecutor) -> None:
        gen = ex.run()
        try:
            wait = next(gen)
            while True:
                wait = gen.send(fabric.wait_for(ex.worker, wait))
        except StopIteration:
            fabric.finish(ex.worker)
        except TeShuError as e:
            fabric.finish(ex.worker, _annotate(e, ex.worker))
        except Exception as e:
            fabric.finish(ex.worker, PlanError(f"unexpected failure: {e}", worker=ex.worker))
            logger.error(f"worker {ex.worker} crashed", exc_info=True)

    with ThreadPoolExecutor(max_workers=max(1, len(executors)), thread_name_prefix="shuffle-worker") as pool:
        list(pool.map(drive, executors))
    if fabric.failure is not None:
        raise fabric.failure


# --- Running a whole shuffle ---

def _check_consistent(plans: List[ShufflePlan]) -> None:
    signatures = {p.call.signature() for p in plans}
    if len(signatures) != 1:
        raise PlanError("participants disagree on the shuffle invocation")
    call = plans[0].call
    workers = sorted(p.call.w_id for p in plans)
    if workers != list(call.participants):
        raise PlanError(f"expected one plan per participant {list(call.participants)}, got {workers}")


def collect_outcome(executors: List[PlanExecutor]) -> ShuffleOutcome:
    phase_times: Dict[str, float] = {}
    bytes_by_level = Counter({Level.SERVER.name: 0, Level.RACK.name: 0, Level.GLOBAL.name: 0})
    transfers = Counter()
    decisions: Dict[Tuple[str, Tuple[int, ...]], bool] = {}
    trace = set()
    sampling_bytes = self_bytes = payload_bytes = 0

    for ex in sorted(executors, key=lambda e: e.worker):
        s = ex.stats
        for phase, seconds in s.phase_times.items():
            phase_times[phase] = max(phase_times.get(phase, 0.0), seconds)
        bytes_by_level.update(s.bytes_by_level)
        transfers.update(s.transfers_by_phase)
        trace |= s.trace
        sampling_bytes += s.sampling_bytes
        self_bytes += s.self_bytes
        payload_bytes += s.payload_bytes
        for key, taken in s.decisions.items():
            if key in decisions and decisions[key] != taken:
                raise PlanError(f"workers of scope {list(key[1])} disagree at stage {key[0]}")
            decisions[key] = taken

    dsts = executors[0].plan.call.dsts if executors else ()
    by_worker = {ex.worker: ex for ex in executors}
    buffers = {d: by_worker[d].env["out"] for d in dsts}
    sampling_time = sum(t for p, t in phase_times.items() if p.endswith("_sample"))
    return ShuffleOutcome(
        buffers=buffers,
        bytes_by_level=dict(bytes_by_level),
        modeled_time=sum(phase_times.values()),
        phase_times=phase_times,
        decision_trace=[t for t in TRACE_ORDER if t in trace],
        scope_decisions=decisions,
        sampling_bytes=sampling_bytes,
        sampling_time=sampling_time,
        transfers_by_phase=dict(transfers),
        self_bytes=self_bytes,
        payload_bytes=payload_bytes,
    )


def run_shuffle(plans: List[ShufflePlan], scheduler: str = "cooperative") -> ShuffleOutcome:
    """
    Executes one plan per participant to completion.

    Raises:
        DeadlockError: All live workers blocked.
        PlanError: Any worker's plan failed (annotated with the worker id).
    """
    if scheduler not in SCHEDULERS:
        raise ValueError(f"unknown scheduler {scheduler!r}; expected one of {SCHEDULERS}")
    _check_consistent(plans)
    fabric = Fabric(plans[0].call.shuffle_id)
    executors = [PlanExecutor(p, fabric) for p in plans]
    try:
        if scheduler == "parallel":
            run_parallel(executors, fabric)
        else:
            run_cooperative(executors, fabric)
    except TeShuError as e:
        logger.error(f"shuffle {plans[0].call.shuffle_id} ({plans[0].template_id}) aborted: {e}")
        raise
    return collect_outcome(executors)
