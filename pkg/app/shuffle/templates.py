"""
Shuffle templates as data.

A template is a small program over the shuffle primitives, written one
instruction per line:

    template <id>
    require combFunc          # optional; the call must pass a combiner
    param <NAME>              # $-parameter bound at instantiation
    default <NAME> <value>    # default value for an instantiation option
    section sender|receiver|exchange
    <OPCODE> <arg> ...
    FOR <var> IN <set>  ...  END
    IF <a> > <b>        ...  END

Arguments are variable names, `name[index]` lookups, `a.b` attribute
lookups, `$NAME` parameters, `self`, or integer literals. `#` starts a
comment. Indentation is free-form; blocks close with END.

The sender section runs on every worker in srcs, the receiver section on
every worker in dsts (after the sender section when a worker is in both),
and the exchange section on every worker in srcs or dsts.
"""

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, FrozenSet, Iterator, Optional, Tuple

from app.shuffle.errors import TemplateParseError

logger = logging.getLogger("shuffle_templates")

SECTIONS = ("sender", "receiver", "exchange")

# opcode -> (min args, max args)
ARITY = {
    "SEND": (2, 2),
    "RECV": (2, 2),
    "FETCH": (2, 2),
    "PUBLISH": (1, 1),
    "PART": (3, 4),
    "COMB": (2, None),
    "SAMP": (5, 5),
    "EFFCOST": (4, 4),
    "NBRS": (3, 3),
    "LET": (1, None),
    "FOR": (3, 3),
    "IF": (1, 3),
    "PHASE": (1, 1),
    "TRACE": (1, 1),
}

# The six shuffle primitives proper.
PRIMITIVES = frozenset({"SEND", "RECV", "FETCH", "PART", "COMB", "SAMP"})

BLOCK_OPS = frozenset({"FOR", "IF"})
LEVEL_ARGS = frozenset({"SERVER", "RACK"})

_PARAM_RE = re.compile(r"\$([A-Z_][A-Z0-9_]*)")
_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class Instruction:
    op: str
    args: Tuple[str, ...]
    body: Tuple["Instruction", ...] = ()
    line: int = 0
    # Filled in at instantiation (neighbor sets, rates, next levels).
    resolved: object = None

    def walk(self) -> Iterator["Instruction"]:
        yield self
        for child in self.body:
            yield from child.walk()

    def __str__(self) -> str:
        return " ".join((self.op,) + self.args)


@dataclass(frozen=True)
class Template:
    id: str
    sections: Dict[str, Tuple[Instruction, ...]]
    params: FrozenSet[str] = frozenset()
    requires: FrozenSet[str] = frozenset()
    defaults: Dict[str, str] = field(default_factory=dict)
    body: str = ""

    @property
    def sender_program(self) -> Tuple[Instruction, ...]:
        return self.sections.get("sender", ())

    @property
    def requires_combiner(self) -> bool:
        return "combFunc" in self.requires

    def instructions(self) -> Iterator[Instruction]:
        for program in self.sections.values():
            for ins in program:
                yield from ins.walk()

    def opcodes(self) -> FrozenSet[str]:
        return frozenset(ins.op for ins in self.instructions())

    def with_defaults(self, **values) -> "Template":
        merged = dict(self.defaults)
        merged.update({k: str(v) for k, v in values.items()})
        return replace(self, defaults=merged)

    def serialize(self) -> str:
        return self.body

    @classmethod
    def parse(cls, text: str) -> "Template":
        return parse_template(text)

    @classmethod
    def load(cls, path) -> "Template":
        return parse_template(Path(path).read_text(encoding="utf-8"))


def _tokenize(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line.split()


def _check_arg(token: str, lineno: int) -> None:
    base = token[1:] if token.startswith("$") else token
    for part in re.split(r"[\[\].]", base):
        if part and not (_NAME_RE.match(part) or part.isdigit() or part.startswith("$")):
            raise TemplateParseError(f"bad argument {token!r}", lineno)


def parse_template(text: str) -> Template:
    """
    Parses and validates a template body.

    Raises:
        TemplateParseError: On unknown opcodes, bad arity, unbalanced blocks,
            undeclared parameters, or a missing header.
    """
    template_id: Optional[str] = None
    params, requires, defaults = set(), set(), {}
    sections: Dict[str, list] = {}
    # Stack of (instruction-list, opening op, args, line)
    stack = []
    current: Optional[list] = None
    used_params = set()

    for lineno, tokens in _tokenize(text):
        head, rest = tokens[0], tokens[1:]
        if head == "template":
            if template_id is not None or len(rest) != 1:
                raise TemplateParseError("expected exactly one 'template <id>' header", lineno)
            template_id = rest[0]
            continue
        if template_id is None:
            raise TemplateParseError("template must start with 'template <id>'", lineno)
        if head == "require":
            if rest != ["combFunc"]:
                raise TemplateParseError("only 'require combFunc' is supported", lineno)
            requires.add("combFunc")
            continue
        if head == "param":
            if len(rest) != 1:
                raise TemplateParseError("expected 'param <NAME>'", lineno)
            params.add(rest[0])
            continue
        if head == "default":
            if len(rest) != 2:
                raise TemplateParseError("expected 'default <NAME> <value>'", lineno)
            defaults[rest[0]] = rest[1]
            continue
        if head == "section":
            if stack:
                raise TemplateParseError("section starts inside an open block", lineno)
            if len(rest) != 1 or rest[0] not in SECTIONS:
                raise TemplateParseError(f"section must be one of {', '.join(SECTIONS)}", lineno)
            if rest[0] in sections:
                raise TemplateParseError(f"duplicate section {rest[0]}", lineno)
            current = sections.setdefault(rest[0], [])
            continue
        if current is None:
            raise TemplateParseError("instruction outside of a section", lineno)
        if head == "END":
            if not stack:
                raise TemplateParseError("END without an open block", lineno)
            parent, op, args, start = stack.pop()
            parent.append(Instruction(op, args, tuple(current), start))
            current = parent
            continue
        if head not in ARITY:
            raise TemplateParseError(f"unknown instruction {head}", lineno)
        lo, hi = ARITY[head]
        if len(rest) < lo or (hi is not None and len(rest) > hi):
            raise TemplateParseError(f"{head} takes {lo}..{hi or 'n'} arguments, got {len(rest)}", lineno)
        if head == "FOR" and rest[1] != "IN":
            raise TemplateParseError("expected 'FOR <var> IN <set>'", lineno)
        if head == "IF" and len(rest) not in (1, 3):
            raise TemplateParseError("expected 'IF <a> > <b>' or 'IF <flag>'", lineno)
        if head == "IF" and len(rest) == 3 and rest[1] != ">":
            raise TemplateParseError("only '>' comparisons are supported", lineno)
        if head in ("EFFCOST", "NBRS"):
            level = rest[3] if head == "EFFCOST" else rest[1]
            if level not in LEVEL_ARGS:
                raise TemplateParseError(f"{head} level must be SERVER or RACK", lineno)
        for token in rest:
            if token not in ("IN", ">"):
                _check_arg(token, lineno)
            used_params.update(_PARAM_RE.findall(token))
        if head in BLOCK_OPS:
            stack.append((current, head, tuple(rest), lineno))
            current = []
        else:
            current.append(Instruction(head, tuple(rest), (), lineno))

    if template_id is None:
        raise TemplateParseError("empty template")
    if stack:
        raise TemplateParseError(f"block opened at line {stack[-1][3]} is never closed")
    if not sections:
        raise TemplateParseError("template has no sections")
    if "exchange" in sections and ("sender" in sections or "receiver" in sections):
        raise TemplateParseError("exchange section cannot be mixed with sender/receiver sections")
    undeclared = used_params - params
    if undeclared:
        raise TemplateParseError(f"undeclared parameters: {', '.join(sorted(undeclared))}")

    template = Template(
        id=template_id,
        sections={name: tuple(body) for name, body in sections.items()},
        params=frozenset(params),
        requires=frozenset(requires),
        defaults=defaults,
        body=text,
    )
    logger.debug(f"parsed template {template_id}: sections={list(sections)} params={sorted(params)}")
    return template
