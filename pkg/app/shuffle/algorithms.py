"""
The shipped shuffle algorithm library.

Each algorithm is a template file under the template directory; this module
loads them and provides the schedule helpers their `$` parameters are built
from (ring rotation, Bruck rounds, two-level groups).
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from app.shuffle.core import Message, PartitionFn
from app.shuffle.errors import InvalidArgumentError, NotFoundError
from app.shuffle.plan import ParamContext, register_param
from app.shuffle.templates import Template
from app.utils import template_dir

logger = logging.getLogger("shuffle_algorithms")

TEMPLATE_IDS = ("vanilla_push", "vanilla_pull", "coordinated", "bruck", "two_level", "network_aware")
TEMPLATE_SUFFIX = ".tsh"


# --- Template library ---

def template_path(template_id: str, directory: Optional[Path] = None) -> Path:
    return Path(directory or template_dir()) / f"{template_id}{TEMPLATE_SUFFIX}"


def load_template(template_id: str, directory: Optional[Path] = None) -> Template:
    path = template_path(template_id, directory)
    if not path.exists():
        raise NotFoundError(f"no template file for {template_id} at {path}")
    template = Template.load(path)
    if template.id != template_id:
        raise InvalidArgumentError(f"{path} declares template {template.id}, expected {template_id}")
    return template


def load_library(directory: Optional[Path] = None) -> Dict[str, Template]:
    """Every template file in the directory, keyed by template id."""
    directory = Path(directory or template_dir())
    library = {}
    for path in sorted(directory.glob(f"*{TEMPLATE_SUFFIX}")):
        template = Template.load(path)
        library[template.id] = template
    logger.debug(f"loaded {len(library)} templates from {directory}")
    return library


def vanilla_push() -> Template:
    return load_template("vanilla_push")


def vanilla_pull() -> Template:
    return load_template("vanilla_pull")


def coordinated() -> Template:
    return load_template("coordinated")


def bruck() -> Template:
    return load_template("bruck")


def two_level_exchange(group_size=None) -> Template:
    """The two-level template; group_size is an int or "AUTO" (ceil(sqrt(n)))."""
    template = load_template("two_level")
    if group_size is not None:
        template = template.with_defaults(GROUP_SIZE=group_size)
    return template


def network_aware() -> Template:
    return load_template("network_aware")


# --- Coordinated (ring) shuffling ---

def ring_schedule(step: int, sender_index: int, m: int) -> int:
    """Receiver index paired with a sender at a rotation step."""
    if m < 1 or not 0 <= step < m:
        raise InvalidArgumentError(f"step must be in [0, {m}), got {step}")
    return (sender_index + step) % m


def ring_order(srcs: Sequence[int], receiver_index: int, m: int) -> List[int]:
    """Senders in the order a receiver meets them while the ring rotates."""
    return sorted(srcs, key=lambda s: ((receiver_index - srcs.index(s)) % m, srcs.index(s)))


@register_param("RING_ORDER")
def _ring_order(ctx: ParamContext) -> List[int]:
    call = ctx.call
    if call.w_id not in call.dsts:
        return []
    return ring_order(list(call.srcs), call.dsts.index(call.w_id), len(call.dsts))


# --- Bruck all-to-all ---

@dataclass(frozen=True)
class BruckRound:
    """One round of the Bruck exchange as seen by one worker."""

    k: int
    offset: int
    to: int
    frm: int
    pair: Tuple[int, int]
    router: PartitionFn


def bruck_schedule(n: int) -> List[Tuple[int, int]]:
    """(round k, peer offset 2^k) for ceil(log2 n) rounds."""
    if n < 1:
        raise InvalidArgumentError("worker count must be >= 1")
    rounds = math.ceil(math.log2(n)) if n > 1 else 0
    return [(k, 1 << k) for k in range(rounds)]


def bruck_forwards(relative_index: int, k: int) -> bool:
    """Whether a block with this relative destination index moves in round k."""
    return bool((relative_index >> k) & 1)


def bruck_rounds(worker: int, participants: Sequence[int], dsts: Sequence[int],
                 part: PartitionFn) -> List[BruckRound]:
    participants = list(participants)
    n = len(participants)
    i = participants.index(worker)
    position = {w: idx for idx, w in enumerate(participants)}
    dsts = list(dsts)
    rounds = []
    for k, offset in bruck_schedule(n):
        to = participants[(i + offset) % n]
        frm = participants[(i - offset) % n]

        def route(msg: Message, pair, k=k) -> int:
            rel = (position[dsts[part.eval(msg, dsts)]] - i) % n
            return 1 if bruck_forwards(rel, k) else 0

        rounds.append(BruckRound(k, offset, to, frm, (worker, to),
                                 PartitionFn(f"bruck_round_{k}", route)))
    return rounds


@register_param("BRUCK_ROUNDS")
def _bruck_rounds(ctx: ParamContext) -> List[BruckRound]:
    call = ctx.call
    return bruck_rounds(call.w_id, call.participants, call.dsts, ctx.part)


# --- Two-level exchange ---

def resolve_group_size(group_size, n: int) -> int:
    if str(group_size).upper() == "AUTO":
        return max(1, math.ceil(math.sqrt(n)))
    size = int(group_size)
    if size < 1:
        raise InvalidArgumentError(f"group size must be >= 1 or AUTO, got {group_size}")
    if size > n:
        logger.warning(f"group size {size} exceeds {n} senders; clamped to {n}")
        return n
    return size


def sender_groups(srcs: Sequence[int], group_size: int) -> List[List[int]]:
    srcs = list(srcs)
    return [srcs[i:i + group_size] for i in range(0, len(srcs), group_size)]


def slice_owner(group: Sequence[int], dst_index: int) -> int:
    return group[dst_index % len(group)]


def cross_group_transfers(srcs: Sequence[int], dsts: Sequence[int], group_size) -> int:
    """Exchange-phase transfers whose destination lies outside the sender's group."""
    groups = sender_groups(srcs, resolve_group_size(group_size, len(srcs)))
    count = 0
    for group in groups:
        members = set(group)
        count += sum(1 for d in dsts if d not in members)
    return count


def _two_level(ctx: ParamContext):
    call = ctx.call
    size = resolve_group_size(ctx.settings.get("GROUP_SIZE", "AUTO"), len(call.srcs))
    return sender_groups(call.srcs, size)


def _my_group(ctx: ParamContext) -> List[int]:
    for group in _two_level(ctx):
        if ctx.call.w_id in group:
            return group
    return []


@register_param("GROUP")
def _group(ctx: ParamContext) -> List[int]:
    return _my_group(ctx)


@register_param("SLICE_ROUTER")
def _slice_router(ctx: ParamContext) -> PartitionFn:
    dsts, part = list(ctx.call.dsts), ctx.part
    return PartitionFn("two_level_slice", lambda msg, group: part.eval(msg, dsts) % len(group))


@register_param("SLICE_DSTS")
def _slice_dsts(ctx: ParamContext) -> List[int]:
    group = _my_group(ctx)
    if not group:
        return []
    me = ctx.call.w_id
    return [d for i, d in enumerate(ctx.call.dsts) if slice_owner(group, i) == me]


@register_param("SLICE_SENDERS")
def _slice_senders(ctx: ParamContext) -> List[int]:
    call = ctx.call
    if call.w_id not in call.dsts:
        return []
    i = call.dsts.index(call.w_id)
    return [slice_owner(group, i) for group in _two_level(ctx)]
