"""Evaluation of dialog models: accuracy, (normalised) first-failure round,
and the per-round / per-category / per-co-reference slicings.

Two history schemes are supported.  Under ``gt`` the history handed to the
model carries the ground-truth answers; under ``pred`` it carries the
model's own earlier answers for the same dialog.
"""

from __future__ import annotations

import csv
import json
import os
import re
from collections import OrderedDict, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .dialoggen import ALL, Coref, Dialog, category_of
from .dsl import COUNT, EXIST, SEEK
from .errors import EmptyInput, MissingScene, NsvdError
from .executor import KnowledgeBase, execute_caption, execute_question, init_kb
from .scene import Scene
from .templates import TemplateSet, default_templates

GT, PRED = "gt", "pred"
_SCHEME_ALIASES = {"gt": GT, "gt_history": GT, "pred": PRED, "pred_history": PRED}
DEFAULT_BINS = ("none", "1", "2", "3", "4+", "all")


class DialogModel(Protocol):
    """Answers one question given the scene, caption and visible history.

    A model may also define ``for_dialog(dialog, index)`` returning a model
    bound to one dialog; the harness then uses the bound model for every
    round of that dialog.  Reference models that read the dataset use this.
    """

    def answer(self, scene: Scene, caption: str, history: Sequence[tuple[str, str]], question: str) -> str:
        ...


def normalize_answer(a: str) -> str:
    return a.strip().lower()


# -- metrics ------------------------------------------------------------------------


def first_failures(correct: Sequence[Sequence[bool]], L: int) -> list[int]:
    if not correct:
        raise EmptyInput("no dialogs to score")
    out = []
    for i, row in enumerate(correct):
        if len(row) != L:
            raise ValueError(f"dialog {i} has {len(row)} rounds, expected {L}")
        out.append(next((j for j, ok in enumerate(row, 1) if not ok), L + 1))
    return out


def ffr(correct: Sequence[Sequence[bool]], L: int) -> Fraction:
    """Mean 1-based index of the first wrong round (L + 1 for flawless dialogs)."""
    f = first_failures(correct, L)
    return Fraction(sum(f), len(f))


def nffr(correct: Sequence[Sequence[bool]], L: int) -> Fraction:
    """First-failure round normalised by L + 1, averaged over dialogs."""
    return ffr(correct, L) / (L + 1)


# -- coref bins ---------------------------------------------------------------------


_BIN = re.compile(r"^(?:(none)|(all)|(\d+)|(\d+)\+|(\d+)-(\d+))$")


@dataclass(frozen=True)
class CorefBins:
    labels: tuple[str, ...] = DEFAULT_BINS

    def __post_init__(self):
        specs = [self._spec(b) for b in self.labels]
        if sum(s[0] == "none" for s in specs) != 1 or sum(s[0] == "all" for s in specs) != 1:
            raise ValueError("bins need exactly one 'none' and one 'all' bin")
        ranges = sorted((s[1], s[2]) for s in specs if s[0] == "range")
        expect = 1
        for lo, hi in ranges:
            if lo != expect:
                raise ValueError(f"co-reference bins leave a gap or overlap at distance {expect}")
            if hi is None:
                expect = None
                break
            expect = hi + 1
        if expect is not None:
            raise ValueError("co-reference bins need an open-ended bin such as '4+'")
        if len(ranges) != sum(s[0] == "range" for s in specs):
            raise ValueError("bins after the open-ended bin overlap it")

    @staticmethod
    def _spec(label: str):
        m = _BIN.match(label)
        if m is None:
            raise ValueError(f"bad co-reference bin {label!r}")
        none, all_, one, open_, lo, hi = m.groups()
        if none:
            return ("none", None, None)
        if all_:
            return ("all", None, None)
        if one:
            return ("range", int(one), int(one))
        if open_:
            return ("range", int(open_), None)
        if int(lo) > int(hi):
            raise ValueError(f"empty co-reference bin {label!r}")
        return ("range", int(lo), int(hi))

    def bin_of(self, coref: Coref) -> str:
        for label in self.labels:
            kind, lo, hi = self._spec(label)
            if kind == "none" and coref is None:
                return label
            if kind == "all" and coref == ALL:
                return label
            if kind == "range" and isinstance(coref, int) and coref >= lo and (hi is None or coref <= hi):
                return label
        raise ValueError(f"co-reference label {coref!r} falls in no bin")


@dataclass(frozen=True)
class EvaluationConfig:
    scheme: str = GT
    history_window: int | None = None  # None = all rounds
    coref_bins: CorefBins = field(default_factory=CorefBins)

    def __post_init__(self):
        if self.scheme not in _SCHEME_ALIASES:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", _SCHEME_ALIASES[self.scheme])
        if self.history_window is not None and self.history_window < 0:
            raise ValueError("history window must be non-negative")

    @property
    def window_label(self) -> str:
        return "all" if self.history_window is None else str(self.history_window)


def parse_window(text: str) -> int | None:
    return None if text.strip().lower() == "all" else int(text)


# -- report -------------------------------------------------------------------------


@dataclass
class RoundResult:
    dialog: int
    round: int
    question_type: str
    category: str
    coref: Coref
    correct: bool
    error: str | None = None
    ambiguous: bool = False


def _slice(results, key) -> dict[str, dict]:
    tally: dict[str, list[int]] = {}
    for r in results:
        t = tally.setdefault(key(r), [0, 0])
        t[0] += 1
        t[1] += r.correct
    return {k: {"n": n, "correct": c, "accuracy": c / n} for k, (n, c) in tally.items()}


@dataclass
class EvaluationReport:
    overall_accuracy: float
    nffr: Fraction
    ffr: Fraction
    per_round: list[dict]
    per_category: dict[str, dict]
    per_coref_bin: dict[str, dict]
    per_question_type: dict[str, dict]
    per_caption: dict[str, dict]
    counts: dict[str, int]
    rows: list[RoundResult] = field(default_factory=list, repr=False)

    @property
    def per_round_accuracy(self) -> list[float]:
        return [r["accuracy"] for r in self.per_round]

    @property
    def per_category_accuracy(self) -> dict[str, float]:
        return {k: v["accuracy"] for k, v in self.per_category.items()}

    @property
    def per_coref_bin_accuracy(self) -> dict[str, float]:
        return {k: v["accuracy"] for k, v in self.per_coref_bin.items()}

    def to_json(self) -> dict:
        return {
            "overall_accuracy": self.overall_accuracy,
            "nffr": float(self.nffr),
            "nffr_exact": f"{self.nffr.numerator}/{self.nffr.denominator}",
            "ffr": float(self.ffr),
            "per_round": self.per_round,
            "per_category": self.per_category,
            "per_coref_bin": self.per_coref_bin,
            "per_question_type": self.per_question_type,
            "per_caption": self.per_caption,
            "counts": self.counts,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["dialog_id", "round", "question_type", "category", "coref", "correct"])
            for r in self.rows:
                coref = "none" if r.coref is None else r.coref
                w.writerow([r.dialog, r.round, r.question_type, r.category, coref, int(r.correct)])


def build_report(rows: list[RoundResult], bins: CorefBins) -> EvaluationReport:
    if not rows:
        raise EmptyInput("no rounds to score")
    by_dialog: dict[int, list[RoundResult]] = defaultdict(list)
    for r in rows:
        by_dialog[r.dialog].append(r)
    f_sum, ffr_sum = Fraction(0), Fraction(0)
    for rs in by_dialog.values():
        L = len(rs)
        f = first_failures([[r.correct for r in sorted(rs, key=lambda r: r.round)]], L)[0]
        f_sum += Fraction(f, L + 1)
        ffr_sum += f
    n_dialogs = len(by_dialog)
    per_round = _slice(rows, lambda r: r.round)
    per_cat = _slice(rows, lambda r: r.category)
    per_bin = _slice(rows, lambda r: bins.bin_of(r.coref))
    total_correct = sum(r.correct for r in rows)
    return EvaluationReport(
        overall_accuracy=total_correct / len(rows),
        nffr=f_sum / n_dialogs,
        ffr=ffr_sum / n_dialogs,
        per_round=[{"round": k, **per_round[k]} for k in sorted(per_round)],
        per_category={k: per_cat[k] for k in (COUNT, EXIST, SEEK) if k in per_cat},
        per_coref_bin={k: per_bin[k] for k in bins.labels if k in per_bin},
        per_question_type=dict(sorted(_slice(rows, lambda r: r.question_type).items())),
        per_caption=_slice(rows, lambda r: "ambiguous" if r.ambiguous else "unambiguous"),
        counts={
            "dialogs": n_dialogs,
            "rounds": len(rows),
            "L": max(len(rs) for rs in by_dialog.values()),
            "correct": total_correct,
            "errors": sum(r.error is not None for r in rows),
        },
        rows=rows,
    )


# -- models -------------------------------------------------------------------------


class SymbolicModel:
    """Answers by re-deriving programs from the caption and the visible
    history questions, executing them from a fresh knowledge base, then
    executing the current question.  History answer strings are ignored, and
    history questions that fail to execute are skipped.

    Rebuilt knowledge bases are memoised on (scene, caption, visible
    questions); the memo never changes what a call returns.
    """

    def __init__(self, templates: TemplateSet | None = None, cache_size: int = 4096):
        self.templates = templates or default_templates()
        self.cache_size = cache_size
        self._cache: OrderedDict = OrderedDict()

    def _kb(self, scene: Scene, caption: str, questions: tuple[str, ...]) -> KnowledgeBase:
        key = (id(scene), caption, questions)
        hit = self._cache.get(key)
        if hit is not None and hit.scene is scene:
            self._cache.move_to_end(key)
            return hit
        if questions:
            parent = self._kb(scene, caption, questions[:-1])
            kb = parent.copy()
            kb.round += 1
            try:
                execute_question(kb, self.templates.parse_nl(questions[-1], "question"))
            except NsvdError:
                # history rounds that no longer execute (truncated context) are skipped
                kb = parent.copy()
                kb.round += 1
        else:
            kb = init_kb(scene)
            execute_caption(kb, self.templates.parse_nl(caption, "caption"))
        self._cache[key] = kb
        if len(self._cache) > self.cache_size:
            self._cache.popitem(last=False)
        return kb

    def answer(self, scene, caption, history, question) -> str:
        kb = self._kb(scene, caption, tuple(q for q, _ in history)).copy()
        kb.round += 1
        return str(execute_question(kb, self.templates.parse_nl(question, "question")))


class _Replayer:
    def __init__(self, dialog: Dialog, pick):
        self.dialog = dialog
        self.pick = pick
        self.cursor = 0

    def answer(self, scene, caption, history, question) -> str:
        rnd = self.dialog.rounds[self.cursor]
        self.cursor += 1
        if rnd.question != question:
            raise NsvdError("oracle asked a question out of dialog order")
        return self.pick(self.cursor, rnd, history)


class OracleModel:
    """Reads ground-truth answers straight from the dataset."""

    def for_dialog(self, dialog: Dialog, index: int) -> _Replayer:
        return _Replayer(dialog, lambda r, rnd, history: rnd.answer)

    def answer(self, scene, caption, history, question) -> str:
        raise NsvdError("OracleModel must be bound to a dialog with for_dialog")


class StubModel:
    """Canned-answer model driven by a rule table.

    Each rule may constrain ``dialog`` (index), ``scene_id``, ``round``,
    ``question``, ``question_type`` and ``history_contains`` (some visible
    history answer equals the string); the first matching rule's ``answer``
    is returned.  Without a match the model returns ``otherwise``.  In both
    places the literal ``"truth"`` means the ground-truth answer.
    """

    def __init__(self, rules: Sequence[Mapping], otherwise: str = "truth"):
        self.rules = [dict(r) for r in rules]
        self.otherwise = otherwise

    @classmethod
    def from_file(cls, path: str | Path) -> StubModel:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(doc.get("rules", []), doc.get("otherwise", "truth"))

    def for_dialog(self, dialog: Dialog, index: int) -> _Replayer:
        def pick(round_no, rnd, history):
            for rule in self.rules:
                if "dialog" in rule and rule["dialog"] != index:
                    continue
                if "scene_id" in rule and rule["scene_id"] != dialog.scene_id:
                    continue
                if "round" in rule and rule["round"] != round_no:
                    continue
                if "question" in rule and rule["question"] != rnd.question:
                    continue
                if "question_type" in rule and rule["question_type"] != rnd.question_type:
                    continue
                if "history_contains" in rule and rule["history_contains"] not in [a for _, a in history]:
                    continue
                return rnd.answer if rule["answer"] == "truth" else rule["answer"]
            return rnd.answer if self.otherwise == "truth" else self.otherwise

        return _Replayer(dialog, pick)

    def answer(self, scene, caption, history, question) -> str:
        raise NsvdError("StubModel must be bound to a dialog with for_dialog")


# -- evaluation ---------------------------------------------------------------------


def _evaluate_dialog(index: int, dialog: Dialog, scene: Scene, model, config: EvaluationConfig) -> list[RoundResult]:
    bound = model.for_dialog(dialog, index) if hasattr(model, "for_dialog") else model
    window = config.history_window
    history: list[tuple[str, str]] = []
    out = []
    for r, rnd in enumerate(dialog.rounds, 1):
        if window is None:
            visible = list(history)
        else:
            visible = history[max(0, len(history) - window) :] if window else []
        error = None
        try:
            pred = bound.answer(scene, dialog.caption, visible, rnd.question)
            correct = normalize_answer(pred) == normalize_answer(rnd.answer)
        except Exception as exc:  # a failing model is scored, not fatal
            pred, correct, error = "", False, type(exc).__name__
        history.append((rnd.question, rnd.answer if config.scheme == GT else pred))
        out.append(
            RoundResult(
                index,
                r,
                rnd.question_type,
                category_of(rnd.question_type),
                rnd.coref,
                correct,
                error,
                dialog.ambiguous_caption,
            )
        )
    return out


_JOB: tuple | None = None


def _run_chunk(bounds: tuple[int, int]) -> list[RoundResult]:
    dialogs, scenes, model, config = _JOB
    out = []
    for i in range(*bounds):
        d = dialogs[i]
        out.extend(_evaluate_dialog(i, d, scenes[d.scene_id], model, config))
    return out


def worker_count() -> int:
    env = os.environ.get("NSVD_THREADS")
    return max(1, int(env)) if env else (os.cpu_count() or 1)


def evaluate(
    dialogs: Sequence[Dialog],
    scenes: Mapping[int, Scene],
    model: DialogModel,
    config: EvaluationConfig | None = None,
    workers: int | None = None,
) -> EvaluationReport:
    global _JOB
    config = config or EvaluationConfig()
    if not dialogs:
        raise EmptyInput("no dialogs to evaluate")
    for d in dialogs:
        if d.scene_id not in scenes:
            raise MissingScene(f"scene {d.scene_id} is not loaded")
    workers = min(workers or worker_count(), len(dialogs))
    if workers <= 1 or len(dialogs) < 64:
        _JOB = (dialogs, scenes, model, config)
        try:
            rows = _run_chunk((0, len(dialogs)))
        finally:
            _JOB = None
        return build_report(rows, config.coref_bins)
    import multiprocessing as mp

    step = -(-len(dialogs) // workers)
    chunks = [(i, min(i + step, len(dialogs))) for i in range(0, len(dialogs), step)]
    _JOB = (dialogs, scenes, model, config)
    try:
        with ProcessPoolExecutor(workers, mp_context=mp.get_context("fork")) as pool:
            rows = [r for part in pool.map(_run_chunk, chunks) for r in part]
    finally:
        _JOB = None
    return build_report(rows, config.coref_bins)


@dataclass
class SweepReport:
    reports: dict[tuple[str, str], EvaluationReport]

    def grid(self) -> dict[str, dict[str, dict[str, float]]]:
        out: dict[str, dict[str, dict[str, float]]] = {}
        for (scheme, window), rep in self.reports.items():
            out.setdefault(scheme, {})[window] = rep.per_coref_bin_accuracy
        return out

    def to_json(self) -> dict:
        return {
            "grid": self.grid(),
            "reports": {
                f"{scheme}/{window}": rep.to_json() for (scheme, window), rep in self.reports.items()
            },
        }


def sweep_history_window(
    dialogs: Sequence[Dialog],
    scenes: Mapping[int, Scene],
    model: DialogModel,
    windows: Sequence[int | None],
    schemes: Sequence[str] = (GT, PRED),
    bins: CorefBins | None = None,
    workers: int | None = None,
) -> SweepReport:
    if not windows:
        raise EmptyInput("no history windows to sweep")
    bins = bins or CorefBins()
    reports = {}
    for scheme in schemes:
        for w in windows:
            cfg = EvaluationConfig(scheme, w, bins)
            reports[(cfg.scheme, cfg.window_label)] = evaluate(dialogs, scenes, model, cfg, workers)
    return SweepReport(reports)
