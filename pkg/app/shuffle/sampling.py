"""
Combiner-reduction estimation for the hierarchical shuffle.

Partition-aware sampling divides the destination space into S groups and
samples one whole group, so every copy of a key lands in the sample or none
does. The random baseline samples messages independently and misses most
duplicates at small rates.

The collective helpers here (`samp_partition_aware`, `broadcast_eff_cost`)
are generators driven by a worker's plan executor: they yield channel waits
through `ctx.recv_packet` and send through `ctx.send_packet`.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from app.shuffle.channels import Packet
from app.shuffle.core import (
    MASK64,
    CombinerFn,
    Message,
    MessageBuffer,
    PartitionFn,
    combine_buffer,
    fnv1a_64,
)
from app.shuffle.errors import InvalidArgumentError
from app.shuffle.topology import CostModel, Level, Topology, level_of, transfer_time

logger = logging.getLogger("shuffle_sampling")

DEFAULT_VIRTUAL_DESTINATIONS = 1 << 20
SAMPLING_METHODS = ("partition_aware", "random")


@dataclass(frozen=True)
class SamplingConfig:
    rate: float = 0.01
    seed: int = 0
    # Destination space the groups are drawn over; None means the call's dsts.
    virtual_destinations: Optional[int] = DEFAULT_VIRTUAL_DESTINATIONS
    # How SAMP picks messages: one whole group, or each message independently.
    method: str = "partition_aware"

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise InvalidArgumentError(f"sampling rate must be in (0, 1], got {self.rate}")
        if not isinstance(self.seed, int) or not 0 <= self.seed <= MASK64:
            raise InvalidArgumentError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.virtual_destinations is not None and self.virtual_destinations < 1:
            raise InvalidArgumentError("virtual_destinations must be >= 1")
        if self.method not in SAMPLING_METHODS:
            raise InvalidArgumentError(f"sampling method must be one of {', '.join(SAMPLING_METHODS)}, "
                                       f"got {self.method!r}")

    @property
    def groups(self) -> int:
        return max(1, round(1 / self.rate))

    def destination_space(self, dsts: Sequence) -> Sequence:
        if self.virtual_destinations is None:
            return dsts
        return range(self.virtual_destinations)


@dataclass
class SampleRun:
    """State of one SAMP collective as seen by one scope worker."""

    stage: str
    scope: List[int]
    S: int
    j: int
    sampling_server: int
    sample: MessageBuffer = field(default_factory=MessageBuffer)
    bytes_local: Dict[int, int] = field(default_factory=dict)
    r_hat: float = 1.0
    eff: Optional[float] = None
    cost: Optional[float] = None


# --- Grouping ---

def mix64(x: int) -> int:
    """Secondary 64-bit hash (splitmix64 finalizer) used for group ids."""
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def group_of(msg: Message, dsts: Sequence, part: PartitionFn, S: int) -> int:
    """Group of a message: a function of its destination index only."""
    if S < 1:
        raise InvalidArgumentError("group count must be >= 1")
    return mix64(part.eval(msg, dsts)) % S


def choose_group(cfg: SamplingConfig, shuffle_id: int, stage: str, S: int) -> int:
    """The sampled group j; identical on every worker of a scope without communication."""
    rng = np.random.default_rng([cfg.seed, shuffle_id & MASK64, fnv1a_64(stage.encode("utf-8"))])
    return int(rng.integers(S))


def extract_group(buf, space: Sequence, part: PartitionFn, S: int, j: int) -> MessageBuffer:
    return MessageBuffer(m for m in buf if group_of(m, space, part, S) == j)


# --- Estimators ---

def estimate_reduction(sample: MessageBuffer, comb: CombinerFn) -> float:
    """Combined bytes over raw bytes of a sample; 1.0 for an empty sample."""
    if sample.total_bytes == 0:
        return 1.0
    return combine_buffer(sample, comb).total_bytes / sample.total_bytes


def samp_random(buf, rate: float, cfg: SamplingConfig, stream: int = 0) -> MessageBuffer:
    """Baseline: keeps each message independently with probability rate."""
    if not 0 < rate <= 1:
        raise InvalidArgumentError(f"sampling rate must be in (0, 1], got {rate}")
    msgs = list(buf)
    rng = np.random.default_rng([cfg.seed, stream])
    keep = rng.random(len(msgs)) < rate
    return MessageBuffer(m for m, k in zip(msgs, keep) if k)


def group_reduction_table(msgs, dsts: Sequence, part: PartitionFn, comb: CombinerFn,
                          cfg: SamplingConfig) -> List[Tuple[int, int]]:
    """
    (raw bytes, combined bytes) for every group j in [0, S).

    The byte-weighted mean of the per-group ratios equals the population
    ratio, so the table evaluates every possible sample at once.
    """
    S = cfg.groups
    space = cfg.destination_space(dsts)
    groups = [MessageBuffer() for _ in range(S)]
    for msg in msgs:
        groups[group_of(msg, space, part, S)].append(msg)
    return [(g.total_bytes, combine_buffer(g, comb).total_bytes) for g in groups]


def spread_cost_per_byte(worker: int, peers: Sequence[int], topo: Topology, cm: CostModel) -> float:
    """Modeled seconds per byte for a worker that spreads its bytes evenly over
    peers, each receiver combining what arrives. Self-delivery is free."""
    peers = list(peers)
    if not peers:
        return cm.combine_cost
    wire = sum(1.0 / cm.bandwidth(level_of(worker, p, topo), topo) for p in peers if p != worker)
    return wire / len(peers) + cm.combine_cost


def compute_eff_cost(run: SampleRun, level: Level, topo: Topology, cm: CostModel,
                     next_level: Optional[Level] = None,
                     next_peers: Optional[Sequence[int]] = None) -> Tuple[float, float]:
    """
    Estimated time saved by combining at `level` (eff) and the time that
    level's shuffle costs (cost), both per worker of the scope.

    A worker holds b = B / |scope| bytes. The level's shuffle costs one alpha
    per peer, b / |scope| bytes to each peer at its level, and combining b
    on arrival. Combining removes (1 - r) * b bytes from every later phase;
    eff prices them at the next phase's per-byte cost over next_peers, or at
    next_level's bandwidth when no peers are given.

    Args:
        run: A completed sample run (sampling server side).
        level: Level.SERVER or Level.RACK.
        next_level: The level the data crosses next; defaults to RACK after
            SERVER and GLOBAL after RACK.
        next_peers: Workers the next phase spreads the bytes over.

    Returns:
        (eff, cost) in modeled seconds.
    """
    if level not in (Level.SERVER, Level.RACK):
        raise InvalidArgumentError(f"eff/cost is only defined for SERVER and RACK, got {level.name}")
    if next_level is None:
        next_level = Level.RACK if level == Level.SERVER else Level.GLOBAL
    n = len(run.scope)
    share = float(sum(run.bytes_local.values())) / n
    me = run.sampling_server
    cost = sum(transfer_time(share / n, level_of(me, p, topo), topo, cm) for p in run.scope if p != me)
    cost += cm.combine_cost * share
    if next_peers is None:
        per_byte = 1.0 / cm.bandwidth(next_level, topo)
    else:
        per_byte = spread_cost_per_byte(me, next_peers, topo, cm)
    return (1.0 - run.r_hat) * share * per_byte, cost


# --- Collectives ---

def samp_partition_aware(buf, dsts: Sequence, part: PartitionFn, cfg: SamplingConfig,
                         scope: Sequence[int], ctx, stage: str,
                         comb: Optional[CombinerFn] = None):
    """
    Gathers group j of every scope worker at the sampling server (min(scope)).
    With cfg.method "random" each worker sends an independent draw at
    cfg.rate instead.

    Generator; returns the SampleRun. Only the sampling server's run carries
    the sample, the per-worker byte counts and r_hat.
    """
    scope = sorted(scope)
    S = cfg.groups
    j = choose_group(cfg, ctx.shuffle_id, stage, S)
    run = SampleRun(stage=stage, scope=scope, S=S, j=j, sampling_server=scope[0])
    if cfg.method == "random":
        stream = fnv1a_64(f"{ctx.shuffle_id}:{stage}:{ctx.worker}".encode("utf-8"))
        mine = samp_random(buf, cfg.rate, cfg, stream)
    else:
        mine = extract_group(buf, cfg.destination_space(dsts), part, S, j)
    tag = f"samp:{stage}"

    if ctx.worker != run.sampling_server:
        ctx.send_packet(run.sampling_server, Packet(mine, (float(buf.total_bytes),)), tag)
        return run

    run.sample.extend(mine)
    run.bytes_local[ctx.worker] = buf.total_bytes
    for src in scope[1:]:
        packet = yield from ctx.recv_packet(src, tag)
        run.sample.extend(packet.buffer)
        run.bytes_local[src] = int(packet.control[0])
    if comb is not None:
        run.r_hat = estimate_reduction(run.sample, comb)
        ctx.charge_combine(run.sample.total_bytes)
    logger.debug(f"worker {ctx.worker} {stage}: S={S} j={j} sample={run.sample!r} r_hat={run.r_hat:.4f}")
    return run


def broadcast_eff_cost(run: SampleRun, level: Level, next_level: Level, ctx,
                       next_peers: Optional[Sequence[int]] = None):
    """Computes (eff, cost) at the sampling server and delivers it to the scope. Generator."""
    tag = f"eff:{run.stage}"
    if ctx.worker == run.sampling_server:
        eff, cost = compute_eff_cost(run, level, ctx.topo, ctx.cm, next_level, next_peers)
        for dst in run.scope[1:]:
            ctx.send_packet(dst, Packet(MessageBuffer(), (eff, cost)), tag)
    else:
        packet = yield from ctx.recv_packet(run.sampling_server, tag)
        eff, cost = packet.control
    run.eff, run.cost = eff, cost
    return eff, cost
