"""Program AST, the function-signature registry and the program text syntax.

Programs are a single function call, ``name(arg, arg, ...)``; there is no
composition.  Zero-argument programs serialize as the bare name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import NamedTuple

from .errors import ArgumentError, ProgramSyntaxError, SchemaError, UnknownFunction
from .scene import DEFAULT_SCHEMA, AttributeSchema

ATTR = "attr"
ATTR_TYPE = "attr_type"
POS = "pos"
ATTR_LIST = "attr_list"

CAPTION, COUNT, EXIST, SEEK = "Caption", "Count", "Exist", "Seek"


class KBMask(NamedTuple):
    fetch: bool
    handle: bool
    conv_subj: bool
    seen_objs: bool
    groups: bool


@dataclass(frozen=True)
class FunctionSignature:
    name: str
    kind: str  # "caption" | "question"
    category: str
    arg_spec: tuple[str, ...]
    output: str  # "none" | "num" | "yes_no" | "attr"
    kb_mask: KBMask

    @property
    def referent(self) -> str | None:
        """How the function resolves its referent: imm, imm2, early or None."""
        if self.kind == "caption":
            return None
        if self.name.endswith(("-imm2", "-imm-2")):
            return "imm2"
        if self.name.endswith("-imm"):
            return "imm"
        if self.name.endswith("-early"):
            return "early"
        return None


def _m(bits: str) -> KBMask:
    return KBMask(*(c == "x" for c in bits))


_L = (ATTR_LIST,)

# name, args, output, mask bits (fetch handle subj seen groups; x = set)
_CAPTIONS = [
    ("count-att", (ATTR,), ".x.xx"),
    ("extreme-right", _L, ".xxx."),
    ("extreme-left", _L, ".xxx."),
    ("extreme-behind", _L, ".xxx."),
    ("extreme-front", _L, ".xxx."),
    ("extreme-centre", _L, ".xxx."),
    ("unique-obj", _L, ".xxx."),
    ("obj-relation", (ATTR, POS, ATTR), ".xxx."),
]

_QUESTIONS = [
    ("count-all", (), "num", "....x"),
    ("count-other", (), "num", "..xx."),
    ("count-all-group", (), "num", "....."),
    ("count-attribute", (ATTR,), "num", ".xxxx"),
    ("count-attribute-group", (ATTR,), "num", ".xxxx"),
    ("count-obj-rel-imm", (POS,), "num", "..xxx"),
    ("count-obj-rel-imm-2", (POS,), "num", "..xxx"),
    ("count-obj-rel-early", (POS, ATTR), "num", "xxxxx"),
    ("count-obj-exclude-imm", (ATTR_TYPE,), "num", "..xxx"),
    ("count-obj-exclude-early", (ATTR_TYPE, ATTR), "num", "x.xxx"),
    ("exist-other", (), "yes_no", "...xx"),
    ("exist-attribute", (ATTR,), "yes_no", ".x.xx"),
    ("exist-attribute-group", (ATTR,), "yes_no", ".xxxx"),
    ("exist-obj-rel-imm", (POS,), "yes_no", "..xxx"),
    ("exist-obj-rel-imm2", (POS,), "yes_no", "..xxx"),
    ("exist-obj-rel-early", (POS, ATTR), "yes_no", "xxxxx"),
    ("exist-obj-exclude-imm", (ATTR_TYPE,), "yes_no", "..xxx"),
    ("exist-obj-exclude-early", (ATTR_TYPE, ATTR), "yes_no", "x...x"),
    ("seek-attr-imm", (ATTR_TYPE,), "attr", ".x..."),
    ("seek-attr-imm2", (ATTR_TYPE,), "attr", ".x..."),
    ("seek-attr-early", (ATTR_TYPE, ATTR), "attr", "xxxx."),
    ("seek-attr-sim-early", (ATTR_TYPE, ATTR), "attr", "xxxx."),
    # pos added: the function is not executable without a direction
    ("seek-attr-rel-imm", (ATTR_TYPE, POS), "attr", ".xxx."),
    ("seek-attr-rel-early", (ATTR_TYPE, POS, ATTR), "attr", "xxxx."),
]

_PREFIX_CATEGORY = {"count": COUNT, "exist": EXIST, "seek": SEEK}


def _build_registry() -> dict[str, FunctionSignature]:
    reg = {}
    for name, args, bits in _CAPTIONS:
        reg[name] = FunctionSignature(name, "caption", CAPTION, args, "none", _m(bits))
    for name, args, out, bits in _QUESTIONS:
        cat = _PREFIX_CATEGORY[name.split("-", 1)[0]]
        reg[name] = FunctionSignature(name, "question", cat, args, out, _m(bits))
    return reg


REGISTRY: dict[str, FunctionSignature] = _build_registry()
CAPTION_FUNCTIONS = tuple(n for n, s in REGISTRY.items() if s.kind == "caption")
QUESTION_FUNCTIONS = tuple(n for n, s in REGISTRY.items() if s.kind == "question")
ALIASES = {"seek-attribute-early": "seek-attr-early"}


@dataclass(frozen=True)
class Program:
    name: str
    args: tuple[str, ...] = ()

    def __post_init__(self):
        if not isinstance(self.args, tuple):
            object.__setattr__(self, "args", tuple(self.args))

    @property
    def signature(self) -> FunctionSignature:
        try:
            return REGISTRY[self.name]
        except KeyError:
            raise UnknownFunction(f"unknown function {self.name!r}") from None

    def __str__(self) -> str:
        return serialize_program(self)


def lookup(name: str) -> FunctionSignature:
    sig = REGISTRY.get(ALIASES.get(name, name))
    if sig is None:
        raise UnknownFunction(f"unknown function {name!r}")
    return sig


def category(p: Program) -> str:
    return p.signature.category


# -- text syntax ----------------------------------------------------------------------

_TOKEN = re.compile(r"\s*(?:([A-Za-z_][\w-]*)|(\S))")


def _tokens(text: str):
    pos = 0
    while True:
        m = _TOKEN.match(text, pos)
        if m is None:
            yield len(text), None, None
            return
        word, punct = m.groups()
        yield m.start(1) if word else m.start(2), word, punct
        pos = m.end()


def parse_program(text: str, schema: AttributeSchema = DEFAULT_SCHEMA) -> Program:
    toks = _tokens(text)
    at, name, punct = next(toks)
    if name is None:
        raise ProgramSyntaxError("missing function name", at, "identifier")
    args: list[str] = []
    at, word, punct = next(toks)
    if word is None and punct is None:
        pass
    elif punct == "(":
        at, word, punct = next(toks)
        if punct != ")":
            while True:
                if word is None:
                    raise ProgramSyntaxError("bad argument", at, "argument")
                args.append(word)
                at, word, punct = next(toks)
                if punct == ")":
                    break
                if punct != ",":
                    raise ProgramSyntaxError("unterminated argument list", at, "',' or ')'")
                at, word, punct = next(toks)
        at, word, punct = next(toks)
        if word is not None or punct is not None:
            raise ProgramSyntaxError("trailing input", at, "end of program")
    else:
        raise ProgramSyntaxError("unexpected token", at, "'(' or end of program")
    prog = Program(lookup(name).name, tuple(args))
    validate(prog, schema)
    return prog


def serialize_program(p: Program) -> str:
    if not p.args:
        return p.name
    return f"{p.name}({', '.join(p.args)})"


def validate(p: Program, schema: AttributeSchema = DEFAULT_SCHEMA) -> None:
    sig = p.signature
    spec = sig.arg_spec
    if spec == (ATTR_LIST,):
        n = len(p.args)
        if not 1 <= n <= len(schema.dimensions):
            raise ArgumentError(
                f"{p.name}: expects 1..{len(schema.dimensions)} attributes, got {n}"
            )
        seen: dict[str, str] = {}
        for a in p.args:
            dim = _attr_dim(p, a, schema)
            if dim in seen:
                raise ArgumentError(
                    f"{p.name}: {a!r} and {seen[dim]!r} are both {dim} values"
                )
            seen[dim] = a
        return
    if len(p.args) != len(spec):
        raise ArgumentError(f"{p.name}: arity {len(p.args)} vs expected {len(spec)}")
    for i, (kind, a) in enumerate(zip(spec, p.args)):
        if kind == ATTR:
            _attr_dim(p, a, schema)
        elif kind == ATTR_TYPE:
            if a not in schema.dimensions:
                raise ArgumentError(f"{p.name}: argument {i} {a!r} is not an attribute type")
        elif kind == POS:
            if a not in schema.positions:
                raise ArgumentError(f"{p.name}: argument {i} {a!r} is not a position")


def _attr_dim(p: Program, a: str, schema: AttributeSchema) -> str:
    try:
        return schema.check_value(a)
    except SchemaError:
        raise ArgumentError(f"{p.name}: argument {a!r} is not an attribute value") from None


def canonical(p: Program, schema: AttributeSchema = DEFAULT_SCHEMA) -> Program:
    """Sort an attribute-list argument into the schema's argument order."""
    if p.signature.arg_spec != (ATTR_LIST,):
        return p
    rank = {d: i for i, d in enumerate(schema.argument_order)}
    args = sorted(p.args, key=lambda a: rank[schema.dimension_of[a]])
    return Program(p.name, tuple(args))
