"""
Shuffle invocations and their instantiation into per-worker plans.

`instantiate` binds a template to one worker's ShuffleCall: it resolves the
partition and combiner ids, binds every `$` parameter through the parameter
registry, and pre-resolves neighbor sets and next-hop levels from the
topology so the executor never consults the topology for scoping.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Dict, Optional, Tuple

from app.shuffle.core import CombinerFn, MessageBuffer, PartitionFn, get_combiner, get_partitioner
from app.shuffle.errors import InstantiationError, InvalidArgumentError
from app.shuffle.sampling import SamplingConfig
from app.shuffle.templates import Instruction, Template
from app.shuffle.topology import CostModel, Level, Topology, neighbors_same_rack, neighbors_same_server

logger = logging.getLogger("shuffle_plan")


@dataclass(frozen=True)
class ShuffleCall:
    """One worker's invocation of the shuffle API."""

    w_id: int
    template_id: str
    shuffle_id: int
    srcs: Tuple[int, ...]
    dsts: Tuple[int, ...]
    bufs: MessageBuffer = field(default_factory=MessageBuffer, compare=False)
    part_func: Optional[str] = None
    comb_func: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "srcs", tuple(self.srcs))
        object.__setattr__(self, "dsts", tuple(self.dsts))
        for name in ("srcs", "dsts"):
            workers = getattr(self, name)
            if not workers:
                raise InvalidArgumentError(f"{name} must not be empty")
            if len(set(workers)) != len(workers):
                raise InvalidArgumentError(f"{name} contains duplicate workers")
        if self.w_id not in self.srcs and self.w_id not in self.dsts:
            raise InvalidArgumentError(f"worker {self.w_id} is neither a source nor a destination")

    @property
    def participants(self) -> Tuple[int, ...]:
        return tuple(sorted(set(self.srcs) | set(self.dsts)))

    def signature(self) -> tuple:
        """Fields every participant of one shuffle must agree on."""
        return (self.template_id, self.shuffle_id, self.srcs, self.dsts, self.part_func, self.comb_func)


@dataclass(frozen=True)
class PlanOptions:
    # Stage name ("server"/"rack") -> forced branch outcome; sampling still runs.
    forced: Optional[Dict[str, bool]] = None
    # Overrides for template `default` values, e.g. {"GROUP_SIZE": "3"}.
    overrides: Dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ParamContext:
    call: ShuffleCall
    topo: Topology
    cm: CostModel
    cfg: SamplingConfig
    part: PartitionFn
    settings: Dict[str, str]


@dataclass(frozen=True)
class ShufflePlan:
    template_id: str
    call: ShuffleCall
    params: Dict[str, Any]
    programs: Tuple[Tuple[str, Tuple[Instruction, ...]], ...]
    part: PartitionFn
    comb: Optional[CombinerFn]
    topo: Topology
    cm: CostModel
    cfg: SamplingConfig
    forced: Optional[Dict[str, bool]] = None


# --- Parameter registry ---

_PARAMS: Dict[str, Callable[[ParamContext], Any]] = {}


def register_param(name: str):
    """Decorator registering the provider of a `$NAME` template parameter."""
    def decorator(fn):
        _PARAMS[name] = fn
        return fn
    return decorator


@register_param("RATE")
def _rate(ctx: ParamContext) -> float:
    return ctx.cfg.rate


# --- Instantiation ---

_STAGE_OF_LEVEL = {"SERVER": "server", "RACK": "rack"}


def stage_of_level(level_name: str) -> str:
    return _STAGE_OF_LEVEL[level_name]


def _scope_sets(call: ShuffleCall) -> Dict[str, Tuple[int, ...]]:
    return {"srcs": call.srcs, "dsts": call.dsts, "participants": call.participants}


def _neighbors(level_name: str, scope_name: str, call: ShuffleCall, topo: Topology):
    scopes = _scope_sets(call)
    if scope_name not in scopes:
        raise InstantiationError(f"NBRS scope must be one of {', '.join(scopes)}, got {scope_name}")
    scope = scopes[scope_name]
    if call.w_id not in scope:
        return [call.w_id]
    if level_name == "SERVER":
        return neighbors_same_server(call.w_id, scope, topo)
    return neighbors_same_rack(call.w_id, scope, topo)


def _next_level(template: Template, call: ShuffleCall, topo: Topology) -> Dict[str, Level]:
    """Next hop after each sampled level: RACK after SERVER only when a rack stage adds workers."""
    rack_stage = any(i.op == "NBRS" and i.args[1] == "RACK" for i in template.instructions())
    after_server = Level.GLOBAL
    if rack_stage and call.w_id in call.srcs:
        server = _neighbors("SERVER", "srcs", call, topo)
        rack = _neighbors("RACK", "srcs", call, topo)
        if len(rack) > len(server):
            after_server = Level.RACK
    return {"SERVER": after_server, "RACK": Level.GLOBAL}


def _resolve(ins: Instruction, call: ShuffleCall, topo: Topology, next_levels) -> Instruction:
    body = tuple(_resolve(child, call, topo, next_levels) for child in ins.body)
    resolved = ins.resolved
    if ins.op == "NBRS":
        resolved = tuple(_neighbors(ins.args[1], ins.args[2], call, topo))
    elif ins.op == "EFFCOST":
        level_name = ins.args[3]
        resolved = (Level[level_name], next_levels[level_name])
    return replace(ins, body=body, resolved=resolved)


def instantiate(template: Template, call: ShuffleCall, topo: Topology, cm: CostModel,
                cfg: SamplingConfig, options: Optional[PlanOptions] = None) -> ShufflePlan:
    """
    Binds a template to one worker's call.

    Raises:
        InstantiationError: Unknown function ids, a missing required
            combiner, or a `$` parameter with no provider.
        InvalidArgumentError: A worker id outside the topology.
    """
    options = options or PlanOptions()
    if call.template_id != template.id:
        raise InstantiationError(f"call names template {call.template_id}, got {template.id}")
    for w in call.participants:
        topo.check_worker(w)

    part = get_partitioner(call.part_func)
    comb = get_combiner(call.comb_func) if call.comb_func is not None else None
    if template.requires_combiner and comb is None:
        raise InstantiationError(f"template {template.id} requires a combiner function")

    settings = dict(template.defaults)
    settings.update({k: str(v) for k, v in options.overrides.items()})
    ctx = ParamContext(call=call, topo=topo, cm=cm, cfg=cfg, part=part, settings=settings)
    params = {}
    for name in sorted(template.params):
        provider = _PARAMS.get(name)
        if provider is None:
            raise InstantiationError(f"no value for template parameter ${name}")
        params[name] = provider(ctx)

    if "exchange" in template.sections:
        sections = ("exchange",)
    else:
        sections = tuple(s for s, members in (("sender", call.srcs), ("receiver", call.dsts))
                         if call.w_id in members and s in template.sections)
    next_levels = _next_level(template, call, topo)
    programs = tuple(
        (name, tuple(_resolve(ins, call, topo, next_levels) for ins in template.sections[name]))
        for name in sections)

    logger.debug(f"instantiated {template.id} for worker {call.w_id}: sections={list(sections)}")
    return ShufflePlan(
        template_id=template.id,
        call=call,
        params=params,
        programs=programs,
        part=part,
        comb=comb,
        topo=topo,
        cm=cm,
        cfg=cfg,
        forced=dict(options.forced) if options.forced is not None else None,
    )
