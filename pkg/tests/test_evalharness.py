from __future__ import annotations

import csv
import json
import random
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nsvd.dialoggen import Dialog, Round, coref_probe_dialog, generate_dataset
from nsvd.dsl import Program
from nsvd.errors import EmptyInput, GenerationError, MissingScene
from nsvd.evalharness import (
    CorefBins,
    EvaluationConfig,
    OracleModel,
    StubModel,
    SymbolicModel,
    evaluate,
    ffr,
    nffr,
    parse_window,
    sweep_history_window,
)
from nsvd.scene import SceneConfig, generate_scene


def nffr_by_formula(correct, L):
    """Literal reading of the piecewise definition: sum Delta*delta*alpha over
    rounds, with L + 1 for a flawless dialog."""
    total = Fraction(0)
    for row in correct:
        s = 0
        for j in range(1, L + 1):
            delta = 0 if row[j - 1] else 1
            alpha = 0 if any(not row[k - 1] for k in range(1, j)) else 1
            s += j * delta * alpha
        if all(row):
            s = L + 1
        total += Fraction(s, L + 1)
    return total / len(correct)


@pytest.fixture(scope="module")
def world():
    rng = random.Random(5)
    scenes = [generate_scene(SceneConfig(rng.randint(3, 10)), rng.getrandbits(32), scene_id=i) for i in range(20)]
    dialogs = generate_dataset(scenes, 3, 10, seed=17)
    return {s.scene_id: s for s in scenes}, dialogs


# -- metric ---------------------------------------------------------------------------


def test_nffr_hand_examples():
    L = 10
    assert nffr([[True] * L], L) == 1
    assert nffr([[False] + [True] * 9], L) == Fraction(1, 11)
    five = [True] * 4 + [False] + [True] * 5
    assert nffr([five, [True] * L], L) == Fraction(8, 11)
    three = [True, True, False] + [True] * 7
    assert nffr([three] * 4, L) == Fraction(3, 11)
    assert ffr([three, [True] * L], L) == 7
    assert ffr([[True] * L], L) == 11


def test_nffr_errors():
    with pytest.raises(EmptyInput):
        nffr([], 10)
    with pytest.raises(ValueError):
        nffr([[True] * 3], 4)


@settings(max_examples=300, deadline=None)
@given(
    data=st.data(),
    L=st.integers(1, 12),
    n=st.integers(1, 8),
)
def test_nffr_matches_formula_and_properties(data, L, n):
    rows = data.draw(st.lists(st.lists(st.booleans(), min_size=L, max_size=L), min_size=n, max_size=n))
    v = nffr(rows, L)
    assert v == nffr_by_formula(rows, L)
    assert 0 < v <= 1
    assert (v == 1) == all(all(r) for r in rows)
    assert ffr(rows, L) == v * (L + 1)
    i = data.draw(st.integers(0, n - 1))
    j = data.draw(st.integers(0, L - 1))
    if not rows[i][j]:
        flipped = [list(r) for r in rows]
        flipped[i][j] = True
        assert nffr(flipped, L) >= v


# -- bins and config ------------------------------------------------------------------


def test_default_bins():
    b = CorefBins()
    assert [b.bin_of(x) for x in (None, 1, 2, 3, 4, 9, "all")] == ["none", "1", "2", "3", "4+", "4+", "all"]


@pytest.mark.parametrize("labels", [("1", "2+", "all"), ("none", "1", "3+", "all"), ("none", "1-3", "2+", "all"), ("none", "1", "2")])
def test_bad_bins(labels):
    with pytest.raises(ValueError):
        CorefBins(labels)


def test_custom_bins():
    b = CorefBins(("none", "1-2", "3+", "all"))
    assert b.bin_of(2) == "1-2"
    assert b.bin_of(7) == "3+"


def test_config_aliases_and_window():
    assert EvaluationConfig("gt_history").scheme == "gt"
    assert EvaluationConfig("pred_history", 3).window_label == "3"
    assert parse_window("ALL") is None and parse_window("4") == 4
    with pytest.raises(ValueError):
        EvaluationConfig("beam")
    with pytest.raises(ValueError):
        EvaluationConfig("gt", -1)


# -- evaluation -----------------------------------------------------------------------


def test_oracle_is_perfect(world):
    scenes, dialogs = world
    for scheme in ("gt", "pred"):
        rep = evaluate(dialogs, scenes, OracleModel(), EvaluationConfig(scheme))
        assert rep.overall_accuracy == 1.0 and rep.nffr == 1


def test_symbolic_is_perfect_and_scheme_invariant(world):
    scenes, dialogs = world
    gt = evaluate(dialogs, scenes, SymbolicModel(), EvaluationConfig("gt"))
    pred = evaluate(dialogs, scenes, SymbolicModel(), EvaluationConfig("pred"))
    assert gt.overall_accuracy == 1.0
    assert gt.dumps() == pred.dumps()


def test_stub_wrong_at_round_three(world):
    scenes, dialogs = world
    stub = StubModel([{"round": 3, "answer": "__wrong__"}])
    rep = evaluate(dialogs, scenes, stub, EvaluationConfig("gt"))
    assert rep.per_round_accuracy == [1, 1, 0, 1, 1, 1, 1, 1, 1, 1]
    assert rep.nffr == Fraction(3, 11)
    assert rep.counts["dialogs"] == len(dialogs)


def test_stub_diverges_between_schemes(world):
    scenes, dialogs = world
    # round 2 is answered wrongly; round 4 is right only if the history shows that wrong answer
    model = StubModel(
        [
            {"round": 2, "answer": "__wrong__"},
            {"round": 4, "history_contains": "__wrong__", "answer": "truth"},
            {"round": 4, "answer": "__also_wrong__"},
        ]
    )
    gt = evaluate(dialogs, scenes, model, EvaluationConfig("gt"))
    pred = evaluate(dialogs, scenes, model, EvaluationConfig("pred"))
    assert gt.per_round_accuracy[3] == 0
    assert pred.per_round_accuracy[3] == 1
    assert gt.nffr == pred.nffr == Fraction(2, 11)
    assert gt.overall_accuracy < pred.overall_accuracy


def test_stub_from_file(tmp_path, world):
    scenes, dialogs = world
    path = tmp_path / "stub.json"
    path.write_text(json.dumps({"rules": [{"question_type": "count-all", "answer": "0"}], "otherwise": "truth"}))
    rep = evaluate(dialogs, scenes, StubModel.from_file(path))
    assert rep.per_question_type["count-all"]["accuracy"] < 1
    assert rep.per_question_type["exist-other"]["accuracy"] == 1


def test_model_exceptions_are_scored(world):
    scenes, dialogs = world

    class Broken:
        def answer(self, scene, caption, history, question):
            raise RuntimeError("boom")

    rep = evaluate(dialogs[:3], scenes, Broken())
    assert rep.overall_accuracy == 0
    assert rep.counts["errors"] == 30


def test_missing_scene_and_empty(world):
    scenes, dialogs = world
    with pytest.raises(MissingScene):
        evaluate(dialogs, {}, OracleModel())
    with pytest.raises(EmptyInput):
        evaluate([], scenes, OracleModel())


def test_history_window_passed_to_model(world):
    scenes, dialogs = world
    seen = []

    class Spy:
        def answer(self, scene, caption, history, question):
            seen.append(len(history))
            return ""

    evaluate(dialogs[:1], scenes, Spy(), EvaluationConfig("gt", 2))
    assert seen == [0, 1, 2, 2, 2, 2, 2, 2, 2, 2]
    seen.clear()
    evaluate(dialogs[:1], scenes, Spy(), EvaluationConfig("gt", 0))
    assert seen == [0] * 10


def test_parallel_matches_serial(world):
    scenes, dialogs = world
    many = dialogs * 30
    serial = evaluate(many, scenes, SymbolicModel(), workers=1)
    par = evaluate(many, scenes, SymbolicModel(), workers=2)
    assert serial.dumps() == par.dumps()


def test_report_slices_and_csv(tmp_path, world):
    scenes, dialogs = world
    rep = evaluate(dialogs, scenes, SymbolicModel())
    assert set(rep.per_category_accuracy) <= {"Count", "Exist", "Seek"}
    assert set(rep.per_coref_bin_accuracy) <= set(CorefBins().labels)
    assert sum(v["n"] for v in rep.per_coref_bin.values()) == rep.counts["rounds"]
    rep.write_csv(tmp_path / "r.csv")
    rows = list(csv.DictReader(open(tmp_path / "r.csv")))
    assert len(rows) == rep.counts["rounds"]
    assert json.loads(rep.dumps())["nffr_exact"] == "1/1"


def test_window_sweep_degrades_only_references(world):
    scenes, _ = world
    probes = []
    for s in scenes.values():
        try:
            probes.append(coref_probe_dialog(s, 5, seed=s.scene_id))
        except GenerationError:
            pass
    sweep = sweep_history_window(probes, scenes, SymbolicModel(), [0, 3, 5, None])
    grid = sweep.grid()
    for scheme in ("gt", "pred"):
        assert grid[scheme]["all"]["4+"] == 1.0
        assert grid[scheme]["5"]["4+"] == 1.0
        assert grid[scheme]["3"]["4+"] < 1.0
        assert grid[scheme]["0"]["none"] == 1.0
    assert set(json.loads(json.dumps(sweep.to_json()))["reports"]) == {
        f"{s}/{w}" for s in ("gt", "pred") for w in ("0", "3", "5", "all")
    }
    with pytest.raises(EmptyInput):
        sweep_history_window(probes, scenes, SymbolicModel(), [])


def test_symbolic_handles_unparseable_question(world):
    scenes, dialogs = world
    d = dialogs[0]
    bad = Dialog(d.scene_id, d.caption, d.caption_program, [Round("Why?", Program("count-all"), "3", "count-all")], 0)
    rep = evaluate([bad], scenes, SymbolicModel())
    assert rep.overall_accuracy == 0 and rep.counts["errors"] == 1
