"""Symbolic executor with a dynamic knowledge base.

The knowledge base (KB) tracks the entities mentioned so far in a dialog, the
current and previous conversation subject, and the active group.  Every
function may only touch the KB fields its signature's mask allows; the
``apply_update`` guard raises MaskViolation otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .dsl import CAPTION, KBMask, Program, FunctionSignature
from .errors import (
    AmbiguousSimilar,
    ExecutionStateError,
    FetchError,
    MaskViolation,
    MissingSubject,
    NoActiveGroup,
    NoReferent,
)
from .scene import Scene, extreme_ties, filter_by_attrs

HANDLE, SUBJECT, SEEN, GROUP = "handle", "subject", "seen", "group"
_MASK_FIELD = {HANDLE: "handle", SUBJECT: "conv_subj", SEEN: "seen_objs", GROUP: "groups"}


@dataclass
class SeenRecord:
    entity: int
    known: dict[str, str]
    first_mention_round: int

    @property
    def handle(self) -> list[str]:
        return list(self.known.values())

    def copy(self) -> SeenRecord:
        return SeenRecord(self.entity, dict(self.known), self.first_mention_round)


@dataclass(frozen=True)
class Group:
    members: tuple[int, ...]
    created_round: int


@dataclass
class KnowledgeBase:
    scene: Scene
    seen: list[SeenRecord] = field(default_factory=list)
    subject: int | None = None
    prev_subject: int | None = None
    group: Group | None = None
    round: int = 0
    captioned: bool = False
    ambiguous_caption: bool = False
    records: dict[int, SeenRecord] = field(default_factory=dict, repr=False)

    def copy(self) -> KnowledgeBase:
        seen = [r.copy() for r in self.seen]
        return KnowledgeBase(
            self.scene,
            seen,
            self.subject,
            self.prev_subject,
            self.group,
            self.round,
            self.captioned,
            self.ambiguous_caption,
            {r.entity: r for r in seen},
        )

    def snapshot(self) -> dict:
        """Comparable view of every mask-governed field."""
        return {
            "handle": {r.entity: tuple(r.known.items()) for r in self.seen},
            "conv_subj": (self.subject, self.prev_subject),
            "seen_objs": tuple(r.entity for r in self.seen),
            "groups": self.group,
        }

    @staticmethod
    def changed_fields(before: dict, after: dict) -> set[str]:
        """Mask fields that differ between two snapshots.

        A newly created record counts as a seen-objects change only; the
        handle field changes when a record present in both grows.
        """
        changed = {k for k in ("conv_subj", "seen_objs", "groups") if before[k] != after[k]}
        old, new = before["handle"], after["handle"]
        if any(new[e] != h for e, h in old.items()):
            changed.add("handle")
        return changed

    def dump(self) -> str:
        lines = []
        for r in self.seen:
            flag = " <- subject" if r.entity == self.subject else ""
            flag = flag or (" <- previous subject" if r.entity == self.prev_subject else "")
            lines.append(f"  [{r.entity}] {'-'.join(r.handle) or '?'} (round {r.first_mention_round}){flag}")
        group = "none" if self.group is None else str(list(self.group.members))
        lines.append(f"  group: {group}")
        return "\n".join(lines)


@dataclass(frozen=True)
class Answer:
    kind: str  # number | yes_no | attribute | none
    value: object = None

    def __str__(self) -> str:
        if self.kind == "yes_no":
            return "yes" if self.value else "no"
        if self.kind == "none":
            return "none"
        return str(self.value)


NONE_ANSWER = Answer("none")


def init_kb(scene: Scene) -> KnowledgeBase:
    return KnowledgeBase(scene)


# -- KB primitives ----------------------------------------------------------------------


def fetch(kb: KnowledgeBase, constraints: Mapping[str, str]) -> int:
    """First seen entity (in mention order) whose known attributes satisfy
    every constraint."""
    if not constraints:
        raise FetchError("fetch needs at least one constraint")
    items = constraints.items()
    for rec in kb.seen:
        known = rec.known
        if all(known.get(d) == v for d, v in items):
            return rec.entity
    wanted = "-".join(constraints.values())
    raise FetchError(f"no mentioned entity matches {wanted!r}")


def apply_update(kb: KnowledgeBase, kind: str, payload, mask: KBMask | None = None) -> None:
    if mask is not None and not getattr(mask, _MASK_FIELD[kind]):
        raise MaskViolation(f"{kind} update is not permitted by this function's mask")
    if kind == HANDLE:
        entity, attrs = payload
        known = kb.records[entity].known
        for dim, value in attrs.items():
            if dim not in known:
                known[dim] = value
    elif kind == SUBJECT:
        if payload != kb.subject:
            kb.prev_subject = kb.subject
            kb.subject = payload
    elif kind == SEEN:
        entity, attrs = payload
        if entity not in kb.records:
            dims = kb.scene.schema.dimensions
            known = {d: attrs[d] for d in dims if d in attrs}
            rec = SeenRecord(entity, known, kb.round)
            kb.seen.append(rec)
            kb.records[entity] = rec
    elif kind == GROUP:
        kb.group = Group(tuple(payload), kb.round)
    else:
        raise ValueError(f"unknown update kind {kind!r}")


def _address(kb: KnowledgeBase, mask: KBMask, entity: int, attrs: Mapping[str, str]) -> None:
    """Apply the updates allowed by ``mask`` for an entity the program just addressed."""
    if entity not in kb.records:
        if mask.seen_objs:
            apply_update(kb, SEEN, (entity, attrs), mask)
    elif mask.handle and attrs:
        apply_update(kb, HANDLE, (entity, attrs), mask)
    if mask.conv_subj and entity in kb.records:
        apply_update(kb, SUBJECT, entity, mask)


def _settle(kb: KnowledgeBase, mask: KBMask, members: list[int], attrs_of) -> None:
    if mask.groups:
        apply_update(kb, GROUP, members, mask)
    if len(members) == 1:
        _address(kb, mask, members[0], attrs_of(members[0]))


# -- captions -------------------------------------------------------------------------


def _attrs_dict(kb: KnowledgeBase, values) -> dict[str, str]:
    dim_of = kb.scene.schema.dimension_of
    return {dim_of[v]: v for v in values}


def caption_referents(scene: Scene, p: Program) -> tuple[list, bool]:
    """Candidate referents of a caption and whether the choice is ambiguous.

    Returns ``(candidates, ambiguous)``; the first candidate is the one the
    executor picks.  For obj-relation the candidates are ``(x, y)`` pairs.
    """
    name = p.name
    schema = scene.schema
    if name == "obj-relation":
        a1, pos, a2 = p.args
        xs = filter_by_attrs(scene, {schema.dimension_of[a1]: a1})
        ys = set(filter_by_attrs(scene, {schema.dimension_of[a2]: a2}))
        related = scene.related[pos]
        pairs = [(x, y) for y in ys for x in xs if x != y and x in related[y]]
        pairs.sort()
        return pairs, len(pairs) > 1
    cands = filter_by_attrs(scene, {schema.dimension_of[a]: a for a in p.args})
    if name == "count-att" or not cands:
        return cands, False
    if name == "unique-obj":
        return cands, len(cands) > 1
    pos = name.split("-", 1)[1]
    ties = extreme_ties(scene, cands, pos)
    return ties, len(ties) > 1


def execute_caption(kb: KnowledgeBase, p: Program) -> None:
    sig = p.signature
    if sig.kind != "caption":
        raise ExecutionStateError(f"{p.name} is not a caption program")
    if kb.round != 0 or kb.captioned:
        raise ExecutionStateError("the caption must be executed first, at round 0")
    scene, mask = kb.scene, sig.kb_mask
    cands, ambiguous = caption_referents(scene, p)
    if not cands:
        raise NoReferent(f"no entity satisfies caption {p}")
    if p.name == "count-att":
        attrs = _attrs_dict(kb, p.args)
        apply_update(kb, GROUP, cands, mask)
        for e in cands:
            apply_update(kb, SEEN, (e, attrs), mask)
    elif p.name == "obj-relation":
        x, y = cands[0]
        a1, _, a2 = p.args
        apply_update(kb, SEEN, (x, _attrs_dict(kb, [a1])), mask)
        apply_update(kb, SEEN, (y, _attrs_dict(kb, [a2])), mask)
        apply_update(kb, SUBJECT, x, mask)
    else:
        _address(kb, mask, cands[0], _attrs_dict(kb, p.args))
    kb.captioned = True
    kb.ambiguous_caption = ambiguous


# -- questions ------------------------------------------------------------------------


def resolve_referent(kb: KnowledgeBase, p: Program) -> int | None:
    """The entity a question refers back to, without touching the KB."""
    how = p.signature.referent
    if how == "imm":
        if kb.subject is None:
            raise MissingSubject(f"{p.name}: no conversation subject")
        return kb.subject
    if how == "imm2":
        if kb.prev_subject is None:
            raise MissingSubject(f"{p.name}: no previous conversation subject")
        return kb.prev_subject
    if how == "early":
        a = p.args[-1]
        return fetch(kb, {kb.scene.schema.dimension_of[a]: a})
    return None


def _group(kb: KnowledgeBase, p: Program) -> tuple[int, ...]:
    if kb.group is None:
        raise NoActiveGroup(f"{p.name}: no active group")
    return kb.group.members


def _no_attrs(_e):
    return {}


def _count_like(kb: KnowledgeBase, sig: FunctionSignature, members: list[int], attrs_of) -> int:
    _settle(kb, sig.kb_mask, members, attrs_of)
    return len(members)


def _q_all(kb, sig, p, r):
    return _count_like(kb, sig, list(range(len(kb.scene))), _no_attrs)


def _q_other(kb, sig, p, r):
    seen = kb.records
    return _count_like(kb, sig, [e for e in range(len(kb.scene)) if e not in seen], _no_attrs)


def _q_all_group(kb, sig, p, r):
    return len(_group(kb, p))


def _q_attribute(kb, sig, p, r):
    a = p.args[0]
    attrs = {kb.scene.schema.dimension_of[a]: a}
    return _count_like(kb, sig, list(kb.scene.by_value[a]), lambda e: attrs)


def _q_attribute_group(kb, sig, p, r):
    a = p.args[0]
    dim = kb.scene.schema.dimension_of[a]
    ents = kb.scene.entities
    members = [m for m in _group(kb, p) if ents[m].attributes[dim] == a]
    return _count_like(kb, sig, members, lambda e: {dim: a})


def _q_rel(kb, sig, p, r):
    members = sorted(kb.scene.related[p.args[0]][r])
    return _count_like(kb, sig, members, _no_attrs)


def _q_exclude(kb, sig, p, r):
    t = p.args[0]
    ents = kb.scene.entities
    value = ents[r].attributes[t]
    members = [e.index for e in ents if e.index != r and e.attributes[t] == value]
    return _count_like(kb, sig, members, lambda e: {t: value})


def _yes(count_fn):
    def run(kb, sig, p, r):
        return count_fn(kb, sig, p, r) > 0

    return run


def _q_seek(kb, sig, p, r):
    t = p.args[0]
    value = kb.scene.entities[r].attributes[t]
    _address(kb, sig.kb_mask, r, {t: value})
    return value


def _q_seek_sim(kb, sig, p, r):
    t, a = p.args
    dim = kb.scene.schema.dimension_of[a]
    ents = kb.scene.entities
    cands = [e.index for e in ents if e.index != r and e.attributes[dim] == a]
    if len(cands) != 1:
        raise AmbiguousSimilar(f"{p}: {len(cands)} other entities share {a!r}")
    e = cands[0]
    value = ents[e].attributes[t]
    _address(kb, sig.kb_mask, e, {dim: a, t: value})
    return value


def _q_seek_rel(kb, sig, p, r):
    t, pos = p.args[0], p.args[1]
    scene = kb.scene
    cands = sorted(scene.related[pos][r])
    if not cands:
        return None
    dist = {e: scene.xy_distance(e, r) for e in cands}
    best = min(dist.values())
    e = next(c for c in cands if dist[c] - best <= 1e-6)
    value = scene.entities[e].attributes[t]
    _address(kb, sig.kb_mask, e, {t: value})
    return value


_QUESTION_IMPL = {
    "count-all": _q_all,
    "count-other": _q_other,
    "count-all-group": _q_all_group,
    "count-attribute": _q_attribute,
    "count-attribute-group": _q_attribute_group,
    "count-obj-rel-imm": _q_rel,
    "count-obj-rel-imm-2": _q_rel,
    "count-obj-rel-early": _q_rel,
    "count-obj-exclude-imm": _q_exclude,
    "count-obj-exclude-early": _q_exclude,
    "exist-other": _yes(_q_other),
    "exist-attribute": _yes(_q_attribute),
    "exist-attribute-group": _yes(_q_attribute_group),
    "exist-obj-rel-imm": _yes(_q_rel),
    "exist-obj-rel-imm2": _yes(_q_rel),
    "exist-obj-rel-early": _yes(_q_rel),
    "exist-obj-exclude-imm": _yes(_q_exclude),
    "exist-obj-exclude-early": _yes(_q_exclude),
    "seek-attr-imm": _q_seek,
    "seek-attr-imm2": _q_seek,
    "seek-attr-early": _q_seek,
    "seek-attr-sim-early": _q_seek_sim,
    "seek-attr-rel-imm": _q_seek_rel,
    "seek-attr-rel-early": _q_seek_rel,
}


def execute_question(kb: KnowledgeBase, p: Program) -> Answer:
    sig = p.signature
    if sig.kind != "question" or sig.category == CAPTION:
        raise ExecutionStateError(f"{p.name} is not a question program")
    if not kb.captioned:
        raise ExecutionStateError("a caption must be executed before any question")
    if kb.round < 1:
        raise ExecutionStateError("question rounds start at 1; advance kb.round first")
    r = resolve_referent(kb, p)
    value = _QUESTION_IMPL[p.name](kb, sig, p, r)
    if sig.output == "num":
        return Answer("number", value)
    if sig.output == "yes_no":
        return Answer("yes_no", value)
    if value is None:
        return NONE_ANSWER
    return Answer("attribute", value)


def run_dialog(scene: Scene, caption: Program, questions) -> tuple[list[Answer], KnowledgeBase]:
    """Execute a caption and a question sequence from a fresh KB."""
    kb = init_kb(scene)
    execute_caption(kb, caption)
    answers = []
    for q in questions:
        kb.round += 1
        answers.append(execute_question(kb, q))
    return answers, kb
