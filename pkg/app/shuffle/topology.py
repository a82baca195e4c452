"""
Leaf-spine cluster layout and the analytic alpha-beta cost model.

Workers are densely enumerated: worker w lives on server w // workers_per_server,
and server s lives on rack s // servers_per_rack. Each rack's leaf switch has
spine_links_per_rack uplinks; failed uplinks shrink the usable inter-rack
bandwidth.
"""

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import FrozenSet, Iterable, List, Tuple

from app.shuffle.errors import InvalidArgumentError

logger = logging.getLogger("topology")

GBPS_10 = 10e9 / 8  # bytes per second


class Level(IntEnum):
    """Hierarchy level crossed by a transfer between two workers."""

    SELF = 0
    SERVER = 1
    RACK = 2
    GLOBAL = 3


@dataclass(frozen=True)
class Topology:
    racks: int
    servers_per_rack: int
    workers_per_server: int
    oversubscription: float = 1.0
    nic_bandwidth: float = GBPS_10
    spine_links_per_rack: int = 4
    failed_spine_links: FrozenSet[Tuple[int, int]] = field(default_factory=frozenset)

    def __post_init__(self):
        for name in ("racks", "servers_per_rack", "workers_per_server", "spine_links_per_rack"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise InvalidArgumentError(f"{name} must be an integer >= 1, got {value!r}")
        if self.oversubscription < 1:
            raise InvalidArgumentError("oversubscription must be >= 1")
        if self.nic_bandwidth <= 0:
            raise InvalidArgumentError("nic_bandwidth must be > 0")
        object.__setattr__(self, "failed_spine_links",
                           frozenset((int(r), int(l)) for r, l in self.failed_spine_links))
        for rack, link in self.failed_spine_links:
            if not 0 <= rack < self.racks or not 0 <= link < self.spine_links_per_rack:
                raise InvalidArgumentError(f"failed link ({rack}, {link}) is outside the topology")
        for rack in range(self.racks):
            if self.failures_on_rack(rack) >= self.spine_links_per_rack:
                raise InvalidArgumentError(f"rack {rack} would be fully disconnected")

    # --- Layout ---

    @property
    def num_servers(self) -> int:
        return self.racks * self.servers_per_rack

    @property
    def num_workers(self) -> int:
        return self.num_servers * self.workers_per_server

    def workers(self) -> List[int]:
        return list(range(self.num_workers))

    def check_worker(self, w: int) -> None:
        if not isinstance(w, int) or not 0 <= w < self.num_workers:
            raise InvalidArgumentError(f"unknown worker id: {w!r}")

    def server_of(self, w: int) -> int:
        self.check_worker(w)
        return w // self.workers_per_server

    def rack_of(self, w: int) -> int:
        return self.server_of(w) // self.servers_per_rack

    # --- Link health ---

    def failures_on_rack(self, rack: int) -> int:
        return sum(1 for r, _ in self.failed_spine_links if r == rack)

    def healthy_fraction(self, rack: int) -> float:
        healthy = self.spine_links_per_rack - self.failures_on_rack(rack)
        return healthy / self.spine_links_per_rack

    @property
    def bottleneck_healthy_fraction(self) -> float:
        return min(self.healthy_fraction(r) for r in range(self.racks))

    @property
    def inter_rack_bandwidth(self) -> float:
        """Effective inter-rack bandwidth after failures and oversubscription."""
        return self.nic_bandwidth * self.bottleneck_healthy_fraction / self.oversubscription

    def with_failures(self, links: Iterable[Tuple[int, int]]) -> "Topology":
        return replace(self, failed_spine_links=frozenset(self.failed_spine_links) | frozenset(links))

    def with_oversubscription(self, ratio: float) -> "Topology":
        return replace(self, oversubscription=float(ratio))

    # --- Config files ---

    def to_dict(self) -> dict:
        return {
            "racks": self.racks,
            "servers_per_rack": self.servers_per_rack,
            "workers_per_server": self.workers_per_server,
            "oversubscription": self.oversubscription,
            "nic_bandwidth": self.nic_bandwidth,
            "spine_links_per_rack": self.spine_links_per_rack,
            "failed_spine_links": sorted([r, l] for r, l in self.failed_spine_links),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Topology":
        known = {"racks", "servers_per_rack", "workers_per_server", "oversubscription",
                 "nic_bandwidth", "spine_links_per_rack", "failed_spine_links"}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown topology keys: {', '.join(sorted(unknown))}")
        kwargs = dict(data)
        for name in ("racks", "servers_per_rack", "workers_per_server", "spine_links_per_rack"):
            if name in kwargs:
                kwargs[name] = int(kwargs[name])
        for name in ("oversubscription", "nic_bandwidth"):
            if name in kwargs:
                kwargs[name] = float(kwargs[name])
        kwargs["failed_spine_links"] = frozenset(
            (int(r), int(l)) for r, l in kwargs.get("failed_spine_links", ()))
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "Topology":
        """
        Reads a topology file: a JSON object, or `key = value` lines with
        failed links written as `rack:link` pairs separated by commas.

        Raises:
            InvalidArgumentError: Unreadable file, malformed JSON or a value
                of the wrong type.
        """
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as e:
            raise InvalidArgumentError(f"cannot read topology file {path}: {e}") from e
        if text.lstrip().startswith("{"):
            try:
                data = json.loads(text)
            except json.JSONDecodeError as e:
                raise InvalidArgumentError(f"{path}:{e.lineno}: malformed JSON: {e.msg}") from None
            if not isinstance(data, dict):
                raise InvalidArgumentError(f"{path}: expected a JSON object")
        else:
            data = cls._parse_lines(text, path)
        try:
            return cls.from_dict(data)
        except InvalidArgumentError:
            raise
        except (TypeError, ValueError) as e:
            raise InvalidArgumentError(f"{path}: bad topology value: {e}") from None

    @staticmethod
    def _parse_lines(text: str, path) -> dict:
        data = {}
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidArgumentError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "failed_spine_links":
                pairs = [p.strip() for p in value.split(",") if p.strip()]
                data[key] = [tuple(p.split(":", 1)) for p in pairs]
            else:
                data[key] = value
        return data


@dataclass(frozen=True)
class CostModel:
    """
    Alpha-beta transfer cost: alpha seconds of startup per SEND plus bytes
    over the bandwidth of the level crossed.
    """

    alpha: float = 10e-6
    combine_cost: float = 0.2e-9
    intra_server_factor: float = 10.0

    def __post_init__(self):
        if self.alpha < 0 or self.combine_cost < 0:
            raise InvalidArgumentError("alpha and combine_cost must be >= 0")
        if self.intra_server_factor < 1:
            raise InvalidArgumentError("intra_server_factor must be >= 1")

    def intra_server_bw(self, topo: Topology) -> float:
        return topo.nic_bandwidth * self.intra_server_factor

    def intra_rack_bw(self, topo: Topology) -> float:
        return topo.nic_bandwidth

    def inter_rack_bw(self, topo: Topology) -> float:
        return topo.inter_rack_bandwidth

    def bandwidth(self, level: Level, topo: Topology) -> float:
        if level == Level.SELF:
            return math.inf
        if level == Level.SERVER:
            return self.intra_server_bw(topo)
        if level == Level.RACK:
            return self.intra_rack_bw(topo)
        return self.inter_rack_bw(topo)


def level_of(a: int, b: int, topo: Topology) -> Level:
    """Classifies the hierarchy level a transfer from a to b crosses."""
    if topo.server_of(a) == topo.server_of(b):
        return Level.SELF if a == b else Level.SERVER
    if topo.rack_of(a) == topo.rack_of(b):
        return Level.RACK
    return Level.GLOBAL


def transfer_time(nbytes: float, level: Level, topo: Topology, cm: CostModel) -> float:
    """Modeled seconds to move nbytes across the given level (0 for SELF)."""
    if nbytes < 0:
        raise InvalidArgumentError("byte count must be >= 0")
    if level == Level.SELF:
        return 0.0
    return cm.alpha + nbytes / cm.bandwidth(level, topo)


def _neighbors(w: int, scope: Iterable[int], topo: Topology, max_level: Level) -> List[int]:
    scope = set(scope)
    if w not in scope:
        raise InvalidArgumentError(f"worker {w} is not in the neighbor scope")
    return sorted(x for x in scope if level_of(w, x, topo) <= max_level)


def neighbors_same_server(w: int, scope: Iterable[int], topo: Topology) -> List[int]:
    """Workers of scope on w's server (w included), ascending."""
    return _neighbors(w, scope, topo, Level.SERVER)


def neighbors_same_rack(w: int, scope: Iterable[int], topo: Topology) -> List[int]:
    """Workers of scope on w's rack (w included), ascending."""
    return _neighbors(w, scope, topo, Level.RACK)
