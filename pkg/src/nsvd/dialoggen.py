"""Synthetic dialog datasets: sampling, annotation, serialization and replay."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence, Union

from .dsl import (
    ATTR_TYPE,
    CAPTION_FUNCTIONS,
    COUNT,
    EXIST,
    POS,
    QUESTION_FUNCTIONS,
    REGISTRY,
    SEEK,
    Program,
    canonical,
    parse_program,
    serialize_program,
)
from .errors import ExecutionError, GenerationError, ParseError, ProgramError, ReplayMismatch
from .executor import (
    KnowledgeBase,
    caption_referents,
    execute_caption,
    execute_question,
    init_kb,
    resolve_referent,
)
from .scene import DEFAULT_SCHEMA, AttributeSchema, Scene
from .templates import TemplateSet, default_templates

Coref = Union[None, str, int]
ALL = "all"

_STANDALONE = {"count-all", "count-attribute", "exist-attribute"}
_AGGREGATE = {
    "count-other",
    "exist-other",
    "count-all-group",
    "count-attribute-group",
    "exist-attribute-group",
}


@dataclass
class Round:
    question: str
    program: Program
    answer: str
    question_type: str
    coref: Coref = None


@dataclass
class Dialog:
    scene_id: int
    caption: str
    caption_program: Program
    rounds: list[Round]
    seed: int
    ambiguous_caption: bool = False

    @property
    def length(self) -> int:
        return len(self.rounds)


def coref_label_of(p: Program, kb: KnowledgeBase) -> Coref:
    """Co-reference label of ``p`` if executed in ``kb``'s current round."""
    if p.name in _STANDALONE:
        return None
    if p.name in _AGGREGATE:
        return ALL
    referent = resolve_referent(kb, p)
    return kb.round - kb.records[referent].first_mention_round


# -- sampling -------------------------------------------------------------------------


def _attr_subset(scene: Scene, entity: int, rng: random.Random) -> tuple[str, ...]:
    schema = scene.schema
    dims = rng.sample(schema.dimensions, rng.randint(1, len(schema.dimensions)))
    attrs = scene.entities[entity].attributes
    return tuple(attrs[d] for d in schema.argument_order if d in dims)


def _sample_caption(scene: Scene, name: str, rng: random.Random) -> Program | None:
    schema = scene.schema
    n = len(scene)
    if name == "count-att":
        e = rng.randrange(n)
        value = scene.attr(e, rng.choice(schema.dimensions))
        if len(scene.by_value[value]) < 2:
            return None  # "there are some ..." over a single object reads wrong
        return Program(name, (value,))
    if name == "obj-relation":
        if n < 2:
            return None
        x, y = rng.sample(range(n), 2)
        options = [p for p in schema.positions if x in scene.related[p][y]]
        if not options:
            return None
        a1 = scene.attr(x, rng.choice(schema.dimensions))
        a2 = scene.attr(y, rng.choice(schema.dimensions))
        return Program(name, (a1, rng.choice(options), a2))
    return Program(name, _attr_subset(scene, rng.randrange(n), rng))


def sample_caption(scene: Scene, rng: random.Random, max_attempts: int = 200) -> tuple[Program, bool]:
    """Draw an executable caption, preferring ones with a unique referent."""
    fallback = None
    for _ in range(max_attempts):
        p = _sample_caption(scene, rng.choice(CAPTION_FUNCTIONS), rng)
        if p is None:
            continue
        cands, ambiguous = caption_referents(scene, p)
        if not cands:
            continue
        if not ambiguous:
            return p, False
        fallback = fallback or p
    if fallback is None:
        raise GenerationError(f"scene {scene.scene_id}: no executable caption")
    return fallback, True


def _satisfiable(name: str, kb: KnowledgeBase) -> bool:
    sig = REGISTRY[name]
    how = sig.referent
    if how == "imm" and kb.subject is None:
        return False
    if how == "imm2" and kb.prev_subject is None:
        return False
    if how == "early" and not any(r.known for r in kb.seen):
        return False
    if name.endswith("-group") and kb.group is None:
        return False
    return True


def _sample_question(name: str, kb: KnowledgeBase, rng: random.Random) -> Program:
    schema = kb.scene.schema
    sig = REGISTRY[name]
    args = []
    for i, kind in enumerate(sig.arg_spec):
        if kind == ATTR_TYPE:
            args.append(rng.choice(schema.dimensions))
        elif kind == POS:
            args.append(rng.choice(schema.positions))
        elif sig.referent == "early" and i == len(sig.arg_spec) - 1:
            rec = rng.choice([r for r in kb.seen if r.known])
            args.append(rng.choice(list(rec.known.values())))
        else:
            args.append(rng.choice(schema.all_values))
    return Program(name, tuple(args))


def generate_dialog(
    scene: Scene,
    L: int,
    seed: int,
    templates: TemplateSet | None = None,
    functions: Iterable[str] | None = None,
    max_attempts: int = 200,
) -> Dialog:
    """Sample a dialog of ``L`` rounds whose every program executes."""
    if L < 1:
        raise GenerationError("dialogs need at least one round")
    templates = templates or default_templates()
    allowed = list(QUESTION_FUNCTIONS) if functions is None else list(functions)
    for f in allowed:
        if REGISTRY.get(f) is None or REGISTRY[f].kind != "question":
            raise GenerationError(f"{f!r} is not a question function")
    rng = random.Random(seed)

    caption_prog, ambiguous = sample_caption(scene, rng, max_attempts)
    caption = templates.render(caption_prog, rng.randrange(templates.variants(caption_prog.name)))
    kb = init_kb(scene)
    execute_caption(kb, caption_prog)

    cap = max(1, (3 * L) // 24)
    used: dict[str, int] = {}
    rounds = []
    for r in range(1, L + 1):
        kb.round = r
        ready = [f for f in allowed if _satisfiable(f, kb)]
        fresh = [f for f in ready if used.get(f, 0) < cap]
        for attempt in range(max_attempts):
            # the balance guard yields once the capped pool has had half the budget
            pool = fresh if fresh and attempt < max_attempts // 2 else ready
            if not pool:
                break
            name = rng.choice(pool)
            p = _sample_question(name, kb, rng)
            trial = kb.copy()
            try:
                coref = coref_label_of(p, trial)
                answer = execute_question(trial, p)
            except ExecutionError:
                continue
            kb = trial
            break
        else:
            raise GenerationError(f"scene {scene.scene_id}: no executable question at round {r}")
        if not pool:
            raise GenerationError(f"scene {scene.scene_id}: no satisfiable question at round {r}")
        used[name] = used.get(name, 0) + 1
        text = templates.render(p, rng.randrange(templates.variants(name)))
        rounds.append(Round(text, p, str(answer), name, coref))
    return Dialog(scene.scene_id, caption, caption_prog, rounds, seed, ambiguous)


def generate_dataset(
    scenes: Sequence[Scene],
    per_scene: int,
    L: int,
    seed: int,
    templates: TemplateSet | None = None,
    functions: Iterable[str] | None = None,
) -> list[Dialog]:
    functions = None if functions is None else list(functions)
    rng = random.Random(seed)
    dialogs = []
    for scene in scenes:
        for _ in range(per_scene):
            dialogs.append(generate_dialog(scene, L, rng.getrandbits(63), templates, functions))
    return dialogs


def question_type_split(seed: int) -> tuple[list[str], list[str]]:
    """Randomly assign half the question types of every category to split A,
    the rest to split B."""
    rng = random.Random(seed)
    a, b = [], []
    for cat in (COUNT, EXIST, SEEK):
        names = [n for n in QUESTION_FUNCTIONS if REGISTRY[n].category == cat]
        rng.shuffle(names)
        half = len(names) // 2
        a += names[:half]
        b += names[half:]
    order = {n: i for i, n in enumerate(QUESTION_FUNCTIONS)}
    return sorted(a, key=order.get), sorted(b, key=order.get)


def coref_probe_dialog(
    scene: Scene, distance: int, seed: int, templates: TemplateSet | None = None
) -> Dialog:
    """A dialog whose final question refers back exactly ``distance`` rounds.

    Round 1 introduces an entity through a count over an attribute only it
    carries; rounds 2..distance are history-free counts; the last round asks
    for another attribute of that entity by the earlier attribute.
    """
    if distance < 1:
        raise GenerationError("distance must be at least 1")
    templates = templates or default_templates()
    rng = random.Random(seed)
    schema = scene.schema
    unique = [v for v in schema.all_values if len(scene.by_value[v]) == 1]
    if not unique or len(scene) < 2:
        raise GenerationError(f"scene {scene.scene_id}: no attribute value held by a single entity")
    value = rng.choice(unique)
    target = scene.by_value[value][0]
    others = [e for e in range(len(scene)) if e != target]
    rng.shuffle(others)
    caption_prog = None
    for c in others:
        p = canonical(Program("unique-obj", tuple(scene.entities[c].attributes.values())), schema)
        if not caption_referents(scene, p)[1]:
            caption_prog = p
            break
    if caption_prog is None:
        raise GenerationError(f"scene {scene.scene_id}: no unambiguous caption entity")
    dim = schema.dimension_of[value]
    ask = rng.choice([d for d in schema.dimensions if d != dim])
    programs = [Program("count-attribute", (value,))]
    programs += [Program("count-all")] * (distance - 1)
    programs.append(Program("seek-attr-early", (ask, value)))

    kb = init_kb(scene)
    execute_caption(kb, caption_prog)
    rounds = []
    for r, p in enumerate(programs, 1):
        kb.round = r
        coref = coref_label_of(p, kb)
        answer = execute_question(kb, p)
        text = templates.render(p, rng.randrange(templates.variants(p.name)))
        rounds.append(Round(text, p, str(answer), p.name, coref))
    caption = templates.render(caption_prog, 0)
    return Dialog(scene.scene_id, caption, caption_prog, rounds, seed, False)


# -- replay and serialization ---------------------------------------------------------


def replay_dialog(scene: Scene, dialog: Dialog) -> tuple[list[str], KnowledgeBase]:
    kb = init_kb(scene)
    execute_caption(kb, dialog.caption_program)
    answers = []
    for r, rnd in enumerate(dialog.rounds, 1):
        kb.round = r
        answers.append(str(execute_question(kb, rnd.program)))
    return answers, kb


def check_replay(scene: Scene, dialog: Dialog, index: int = 0) -> None:
    try:
        answers, _ = replay_dialog(scene, dialog)
    except ExecutionError as exc:
        raise ReplayMismatch(index, 0, "executable dialog", type(exc).__name__) from exc
    for r, (rnd, got) in enumerate(zip(dialog.rounds, answers), 1):
        if rnd.answer != got:
            raise ReplayMismatch(index, r, rnd.answer, got)


def _coref_to_json(c: Coref):
    return "none" if c is None else c


def _coref_from_json(c) -> Coref:
    if c == "none" or c is None:
        return None
    if c == ALL or (isinstance(c, int) and c >= 1):
        return c
    raise ParseError(f"bad coref label {c!r}")


def dialog_to_json(d: Dialog) -> dict:
    return {
        "scene_id": d.scene_id,
        "seed": d.seed,
        "ambiguous_caption": d.ambiguous_caption,
        "caption": d.caption,
        "caption_program": serialize_program(d.caption_program),
        "rounds": [
            {
                "question": r.question,
                "program": serialize_program(r.program),
                "answer": r.answer,
                "question_type": r.question_type,
                "coref": _coref_to_json(r.coref),
            }
            for r in d.rounds
        ],
    }


def write_dataset(
    dialogs: Sequence[Dialog], path: str | Path, schema: AttributeSchema = DEFAULT_SCHEMA
) -> None:
    doc = {"version": 1, "schema": schema.to_json(), "dialogs": [dialog_to_json(d) for d in dialogs]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def _dialog_from_json(raw: Mapping, schema: AttributeSchema, i: int) -> Dialog:
    try:
        rounds = [
            Round(
                r["question"],
                parse_program(r["program"], schema),
                str(r["answer"]),
                r["question_type"],
                _coref_from_json(r["coref"]),
            )
            for r in raw["rounds"]
        ]
        return Dialog(
            int(raw["scene_id"]),
            raw["caption"],
            parse_program(raw["caption_program"], schema),
            rounds,
            int(raw["seed"]),
            bool(raw.get("ambiguous_caption", False)),
        )
    except (KeyError, TypeError, ValueError, ProgramError) as exc:
        raise ParseError(f"dialog {i}: {type(exc).__name__}: {exc}") from exc


def read_dataset(
    path: str | Path,
    scenes: Mapping[int, Scene] | None = None,
    replay_fraction: float = 0.01,
    seed: int = 0,
) -> list[Dialog]:
    """Load a dataset, validating every program.

    When ``scenes`` is given, a deterministic sample of ``replay_fraction`` of
    the dialogs (at least one) is replayed and checked against its recorded
    answers.
    """
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.pos) from exc
    if not isinstance(doc, dict) or doc.get("version") != 1 or "dialogs" not in doc:
        raise ParseError(f"{path}: not a version-1 dialog dataset", 0)
    schema = AttributeSchema.from_json(doc["schema"]) if "schema" in doc else DEFAULT_SCHEMA
    dialogs = [_dialog_from_json(d, schema, i) for i, d in enumerate(doc["dialogs"])]
    if scenes is not None and dialogs and replay_fraction > 0:
        k = min(len(dialogs), max(1, math.ceil(replay_fraction * len(dialogs))))
        for i in sorted(random.Random(seed).sample(range(len(dialogs)), k)):
            d = dialogs[i]
            check_replay(scenes[d.scene_id], d, i)
    return dialogs


def category_of(question_type: str) -> str:
    return REGISTRY[question_type].category
