"""Render programs to English and parse that English back to programs.

Surface forms are strings with typed slots that refer to program arguments
by position:

    {np:i}   singular noun phrase ("small cylinder", "red object")
    {anp:i}  the same with an article ("a small cylinder")
    {nps:i}  plural noun phrase ("cubes", "red objects")
    {type:i} attribute type name ("colour")
    {rel:i}  relation phrase ("to the left of")

Attribute-list arguments are rendered in English adjective order, so parsing
returns them in the schema's argument order (see ``dsl.canonical``).
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

from .dsl import ATTR, ATTR_LIST, ATTR_TYPE, POS, REGISTRY, Program, canonical, validate
from .errors import NoTemplateMatch, ProgramError, SchemaError
from .scene import DEFAULT_SCHEMA, AttributeSchema

_SLOT = re.compile(r"\{(np|anp|nps|type|rel):(\d+)\}")
_SLOT_KINDS = {
    "np": (ATTR, ATTR_LIST),
    "anp": (ATTR, ATTR_LIST),
    "nps": (ATTR, ATTR_LIST),
    "type": (ATTR_TYPE,),
    "rel": (POS,),
}


@dataclass(frozen=True)
class Template:
    program_name: str
    kind: str
    surface_forms: tuple[str, ...]


def normalize(text: str) -> str:
    text = " ".join(text.strip().lower().split())
    return text.rstrip("?.! ")


@dataclass
class _Form:
    template: Template
    text: str
    regex: re.Pattern
    slots: list[tuple[str, int, str]]  # (slot kind, arg index, group name)
    literal: str


class TemplateSet:
    def __init__(
        self,
        templates: Sequence[Template],
        schema: AttributeSchema = DEFAULT_SCHEMA,
        relations: Mapping[str, str] | None = None,
        object_word: str = "object",
        objects_word: str = "objects",
    ):
        self.schema = schema
        self.templates = {t.program_name: t for t in templates}
        missing = set(REGISTRY) - set(self.templates)
        if missing:
            raise SchemaError(f"functions without templates: {sorted(missing)}")
        for t in templates:
            if not t.surface_forms:
                raise SchemaError(f"{t.program_name}: template has no surface forms")
            if REGISTRY[t.program_name].kind != t.kind:
                raise SchemaError(f"{t.program_name}: kind {t.kind!r} does not match the registry")
        self.relations = dict(relations or _default_phrases()["relations"])
        self._rel_back = {v: k for k, v in self.relations.items()}
        self.object_word, self.objects_word = object_word, objects_word

        noun_dim = schema.noun_dimension
        self._nouns = {v: v for v in schema.values[noun_dim]}
        self._plurals = {v + "s": v for v in schema.values[noun_dim]}
        adjs = [v for d in schema.dimensions if d != noun_dim for v in schema.values[d]]
        alt = lambda words: "|".join(re.escape(w) for w in sorted(words, key=len, reverse=True))
        adj = f"(?:(?:{alt(adjs)}) )*"
        self._np = f"{adj}(?:{alt(list(self._nouns) + [object_word])})"
        self._nps = f"{adj}(?:{alt(list(self._plurals) + [objects_word])})"
        self._forms = {"caption": [], "question": []}
        for t in templates:
            for text in t.surface_forms:
                self._forms[t.kind].append(self._compile(t, text))
        self._parse_cached = lru_cache(maxsize=1 << 16)(self._parse)

    # -- loading ----------------------------------------------------------------------

    @classmethod
    def from_json(cls, doc: Mapping, schema: AttributeSchema = DEFAULT_SCHEMA) -> TemplateSet:
        phrases = doc.get("phrases") or _default_phrases()
        templates = [
            Template(t["program"], t["kind"], tuple(t["forms"])) for t in doc["templates"]
        ]
        return cls(
            templates,
            schema,
            phrases.get("relations"),
            phrases.get("object", "object"),
            phrases.get("objects", "objects"),
        )

    @classmethod
    def from_file(cls, path: str | Path, schema: AttributeSchema = DEFAULT_SCHEMA) -> TemplateSet:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")), schema)

    def variants(self, name: str) -> int:
        return len(self.templates[name].surface_forms)

    # -- rendering --------------------------------------------------------------------

    def _phrase(self, values: Sequence[str], plural: bool) -> str:
        schema = self.schema
        dim_of = schema.dimension_of
        by_dim = {dim_of[v]: v for v in values}
        noun_dim = schema.noun_dimension
        words = [by_dim[d] for d in schema.dimensions if d != noun_dim and d in by_dim]
        noun = by_dim.get(noun_dim)
        if noun is None:
            words.append(self.objects_word if plural else self.object_word)
        else:
            words.append(noun + "s" if plural else noun)
        return " ".join(words)

    def render(self, p: Program, variant: int = 0) -> str:
        t = self.templates[p.name]
        text = t.surface_forms[variant % len(t.surface_forms)]
        spec = REGISTRY[p.name].arg_spec

        def fill(m: re.Match) -> str:
            kind, i = m.group(1), int(m.group(2))
            if kind in ("np", "anp", "nps"):
                values = p.args if spec == (ATTR_LIST,) else [p.args[i]]
                phrase = self._phrase(values, kind == "nps")
                if kind == "anp":
                    phrase = ("an " if phrase[0] in "aeiou" else "a ") + phrase
                return phrase
            if kind == "rel":
                return self.relations[p.args[i]]
            return p.args[i]

        out = _SLOT.sub(fill, text)
        return out[0].upper() + out[1:]

    # -- parsing ----------------------------------------------------------------------

    def _compile(self, t: Template, text: str) -> _Form:
        spec = REGISTRY[t.program_name].arg_spec
        norm = normalize(text)
        parts, slots, literal = [], [], []
        last = 0
        for k, m in enumerate(_SLOT.finditer(norm)):
            kind, i = m.group(1), int(m.group(2))
            arg_i = 0 if spec == (ATTR_LIST,) else i
            if arg_i >= len(spec) or spec[arg_i] not in _SLOT_KINDS[kind]:
                raise SchemaError(f"{t.program_name}: slot {m.group(0)} does not fit {spec}")
            lit = norm[last : m.start()]
            parts.append(re.escape(lit))
            literal.append(lit)
            g = f"s{k}"
            if kind == "np":
                parts.append(f"(?P<{g}>{self._np})")
            elif kind == "anp":
                parts.append(f"(?:an|a) (?P<{g}>{self._np})")
            elif kind == "nps":
                parts.append(f"(?P<{g}>{self._nps})")
            elif kind == "type":
                parts.append(f"(?P<{g}>{'|'.join(map(re.escape, self.schema.dimensions))})")
            else:
                parts.append(f"(?P<{g}>{'|'.join(map(re.escape, self.relations.values()))})")
            slots.append((kind, i, g))
            last = m.end()
        parts.append(re.escape(norm[last:]))
        literal.append(norm[last:])
        filled = {i for _, i, _ in slots}
        if spec != (ATTR_LIST,) and filled != set(range(len(spec))):
            raise SchemaError(f"{t.program_name}: form {text!r} does not cover every argument")
        return _Form(t, text, re.compile("".join(parts)), slots, "".join(literal))

    def _np_values(self, phrase: str, plural: bool) -> list[str]:
        *adjs, noun = phrase.split(" ")
        table = self._plurals if plural else self._nouns
        values = list(adjs)
        if noun in table:
            values.append(table[noun])
        return values

    def _build(self, form: _Form, m: re.Match) -> Program:
        name = form.template.program_name
        spec = REGISTRY[name].arg_spec
        args: list[str | None] = [None] * len(spec)
        for kind, i, g in form.slots:
            text = m.group(g)
            if kind in ("np", "anp", "nps"):
                values = self._np_values(text, kind == "nps")
                if not values:
                    raise SchemaError(f"noun phrase {text!r} names no attribute")
                if spec == (ATTR_LIST,):
                    args = values
                    continue
                if len(values) != 1:
                    raise SchemaError(f"noun phrase {text!r} must name exactly one attribute")
                args[i] = values[0]
            elif kind == "rel":
                args[i] = self._rel_back[text]
            else:
                args[i] = text
        prog = Program(name, tuple(args))
        try:
            validate(prog, self.schema)
        except ProgramError as exc:
            raise SchemaError(str(exc)) from None
        return canonical(prog, self.schema)

    def _parse(self, norm: str, kind: str) -> Program:
        found: list[tuple[int, Program]] = []
        slot_error: SchemaError | None = None
        for form in self._forms[kind]:
            m = form.regex.fullmatch(norm)
            if m is None:
                continue
            try:
                found.append((len(form.literal), self._build(form, m)))
            except SchemaError as exc:
                slot_error = exc
        if found:
            return max(found, key=lambda f: f[0])[1]
        if slot_error is not None:
            raise slot_error
        raise NoTemplateMatch(norm, self.suggest(norm, kind))

    def parse_nl(self, text: str, kind: str | None = None) -> Program:
        """Parse ``text`` as a ``kind`` program; with no kind, questions are
        tried first, then captions."""
        norm = normalize(text)
        if kind is None:
            try:
                return self._parse_cached(norm, "question")
            except (NoTemplateMatch, SchemaError) as first:
                try:
                    return self._parse_cached(norm, "caption")
                except NoTemplateMatch:
                    if isinstance(first, SchemaError):
                        raise first from None
                    raise NoTemplateMatch(norm, self.suggest(norm, None)) from None
        if kind not in self._forms:
            raise ValueError(f"kind must be 'caption' or 'question', got {kind!r}")
        return self._parse_cached(norm, kind)

    def matches(self, text: str, kind: str | None = None) -> list[Program]:
        """Every program any single form yields for ``text`` (ambiguity probe)."""
        norm = normalize(text)
        out = []
        forms = self._forms["question"] + self._forms["caption"] if kind is None else self._forms[kind]
        for form in forms:
            m = form.regex.fullmatch(norm)
            if m is not None:
                try:
                    out.append(self._build(form, m))
                except SchemaError:
                    pass
        return out

    def suggest(self, text: str, kind: str | None, n: int = 3) -> list[str]:
        words = set(normalize(text).split())

        def overlap(form: _Form) -> float:
            lit = set(_SLOT.sub(" ", normalize(form.text)).split())
            return len(words & lit) / (len(words | lit) or 1)

        forms = self._forms["question"] + self._forms["caption"] if kind is None else self._forms[kind]
        ranked = sorted(forms, key=overlap, reverse=True)
        return [f.text for f in ranked[:n]]


def _default_phrases() -> dict:
    return _default_doc()["phrases"]


@lru_cache(maxsize=1)
def _default_doc() -> dict:
    text = resources.files("nsvd").joinpath("data/templates.json").read_text(encoding="utf-8")
    return json.loads(text)


_DEFAULT: TemplateSet | None = None


def default_templates() -> TemplateSet:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = TemplateSet.from_json(_default_doc())
    return _DEFAULT


def render(p: Program, variant: int = 0) -> str:
    return default_templates().render(p, variant)


def parse_nl(text: str, kind: str | None = None) -> Program:
    return default_templates().parse_nl(text, kind)
