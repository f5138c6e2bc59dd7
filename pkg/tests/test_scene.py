from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import make_scene
from nsvd.errors import EmptyCandidates, GenerationError, ParseError, SchemaError
from nsvd.scene import (
    DEFAULT_SCHEMA,
    OPPOSITE,
    SceneConfig,
    extreme,
    extreme_ties,
    filter_by_attrs,
    generate_scene,
    load_scenes,
    relates,
    scene_to_json,
    write_scenes,
)


def test_relations_follow_default_directions(fig_scene):
    assert relates(fig_scene, 1, 0, "right")
    assert relates(fig_scene, 2, 0, "left")
    assert relates(fig_scene, 3, 0, "behind")
    assert relates(fig_scene, 4, 0, "front")
    assert not relates(fig_scene, 3, 0, "right")  # same x: not strictly right


def test_relation_is_irreflexive(fig_scene):
    for pos in OPPOSITE:
        for i in range(len(fig_scene)):
            assert not relates(fig_scene, i, i, pos)


def test_relation_index_out_of_range(fig_scene):
    with pytest.raises(IndexError):
        relates(fig_scene, 0, 9, "left")


def test_related_table_matches_predicate(fig_scene):
    for pos in OPPOSITE:
        for b in range(len(fig_scene)):
            expect = {a for a in range(len(fig_scene)) if relates(fig_scene, a, b, pos)}
            assert fig_scene.related[pos][b] == expect


def test_extremes(fig_scene):
    allc = range(len(fig_scene))
    assert extreme(fig_scene, allc, "right") == 1
    assert extreme(fig_scene, allc, "left") == 2
    assert extreme(fig_scene, allc, "behind") == 3
    assert extreme(fig_scene, allc, "front") == 4
    assert extreme(fig_scene, allc, "centre") == 0


def test_extreme_tie_goes_to_lowest_index():
    s = make_scene(
        [
            ("small", "red", "rubber", "cube", 1, 0),
            ("small", "blue", "rubber", "cube", 1, 3),
            ("small", "green", "rubber", "cube", -1, 0),
        ]
    )
    assert extreme_ties(s, [0, 1, 2], "right") == [0, 1]
    assert extreme(s, [1, 0], "right") == 0


def test_extreme_empty_candidates(fig_scene):
    with pytest.raises(EmptyCandidates):
        extreme(fig_scene, [], "left")


def test_filter_by_attrs(fig_scene):
    assert filter_by_attrs(fig_scene, {"colour": "red"}) == [0, 3]
    assert filter_by_attrs(fig_scene, {"colour": "red", "size": "large"}) == [3]
    assert filter_by_attrs(fig_scene, {"shape": "cylinder", "material": "metal"}) == []
    with pytest.raises(SchemaError):
        filter_by_attrs(fig_scene, {"colour": "cube"})


def test_scene_validation():
    with pytest.raises(SchemaError):
        make_scene([("small", "pink", "rubber", "cube", 0, 0)])
    with pytest.raises(SchemaError):
        make_scene([])
    bad = {"right": (1, 0, 0), "left": (1, 0, 0), "front": (0, -1, 0), "behind": (0, 1, 0)}
    with pytest.raises(SchemaError):
        make_scene([("small", "red", "rubber", "cube", 0, 0)], directions=bad)


def test_round_trip_file(tmp_path, fig_scene):
    path = tmp_path / "scenes.json"
    write_scenes([fig_scene], path)
    raw = json.loads(path.read_text())
    assert raw["scenes"][0]["objects"][0]["color"] == "red"
    [back] = load_scenes(path)
    assert back == fig_scene


def test_load_fills_default_directions(tmp_path, fig_scene):
    raw = scene_to_json(fig_scene)
    del raw["directions"]
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenes": [raw]}))
    [back] = load_scenes(path)
    assert back.directions["front"] == (0.0, -1.0, 0.0)


def test_load_reports_byte_offset(tmp_path):
    path = tmp_path / "broken.json"
    text = '{"scenes": [ {"image_index": 0,, } ]}'
    path.write_text(text)
    with pytest.raises(ParseError) as info:
        load_scenes(path)
    assert info.value.offset == text.index(",,") + 1


def test_load_rejects_bad_attribute(tmp_path, fig_scene):
    raw = scene_to_json(fig_scene)
    raw["objects"][1]["shape"] = "pyramid"
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"scenes": [raw]}))
    with pytest.raises(SchemaError, match="pyramid"):
        load_scenes(path)


def test_too_many_objects_rejected(tmp_path):
    objs = [("small", "red", "rubber", "cube", i, 0) for i in range(21)]
    with pytest.raises(SchemaError):
        make_scene(objs)


def test_generate_scene_deterministic():
    a = generate_scene(SceneConfig(8), seed=5)
    b = generate_scene(SceneConfig(8), seed=5)
    c = generate_scene(SceneConfig(8), seed=6)
    assert a == b
    assert a != c


def test_generate_scene_restrict():
    s = generate_scene(SceneConfig(6, {"colour": ["grey", "red"]}), seed=1)
    assert {e.attributes["colour"] for e in s.entities} <= {"grey", "red"}


def test_generate_scene_impossible_spacing():
    cfg = SceneConfig(20, min_pairwise_distance=5.0, max_attempts=500)
    with pytest.raises(GenerationError):
        generate_scene(cfg, seed=0)


def test_schema_json_round_trip():
    assert DEFAULT_SCHEMA.from_json(DEFAULT_SCHEMA.to_json()).to_json() == DEFAULT_SCHEMA.to_json()


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 20), seed=st.integers(0, 2**32))
def test_generated_scenes_are_valid(n, seed):
    s = generate_scene(SceneConfig(n), seed=seed)
    assert len(s) == n
    xy = s.coords[:, :2]
    for i in range(n):
        for j in range(i + 1, n):
            assert ((xy[i] - xy[j]) ** 2).sum() ** 0.5 >= 0.8
    # distinct attribute tuples while the product space allows it
    tuples = {tuple(e.attributes.values()) for e in s.entities}
    assert len(tuples) == n


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(2, 10))
def test_opposite_relations_are_converse(seed, n):
    s = generate_scene(SceneConfig(n), seed=seed)
    for pos, opp in OPPOSITE.items():
        for a in range(n):
            for b in range(n):
                assert relates(s, a, b, pos) == relates(s, b, a, opp)
