"""Scene graphs: attribute schema, entities, CLEVR-format ingestion and synthesis.

Spatial predicates follow the CLEVR convention: ``a`` is to the ``pos`` of ``b``
iff the displacement ``a - b`` has a positive projection onto the scene's
direction vector for ``pos``.
"""

from __future__ import annotations

import itertools
import json
import math
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyCandidates, GenerationError, ParseError, SchemaError

EPS = 1e-6
CENTRE = "centre"
MAX_OBJECTS = 20

DEFAULT_DIRECTIONS = {
    "right": (1.0, 0.0, 0.0),
    "left": (-1.0, 0.0, 0.0),
    "front": (0.0, -1.0, 0.0),
    "behind": (0.0, 1.0, 0.0),
}
OPPOSITE = {"right": "left", "left": "right", "front": "behind", "behind": "front"}


@dataclass(frozen=True, eq=False)
class AttributeSchema:
    """Attribute dimensions and their values.

    ``dimensions`` is the canonical order used for entity handles (size first,
    shape last).  ``argument_order`` is the order attribute lists take inside
    programs, which puts colour first and size last.  The last entry of
    ``dimensions`` is the noun dimension used when rendering English.
    """

    dimensions: tuple[str, ...] = ("size", "colour", "material", "shape")
    values: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: {
            "size": ("large", "small"),
            "colour": ("blue", "brown", "cyan", "grey", "green", "purple", "red", "yellow"),
            "material": ("rubber", "metal"),
            "shape": ("cube", "cylinder", "sphere"),
        }
    )
    positions: tuple[str, ...] = ("right", "left", "front", "behind")
    argument_order: tuple[str, ...] = ("colour", "material", "shape", "size")
    file_keys: Mapping[str, str] = field(default_factory=lambda: {"colour": "color"})

    def __post_init__(self):
        names = list(self.dimensions)
        for dim in self.dimensions:
            if dim not in self.values:
                raise SchemaError(f"dimension {dim!r} has no value list")
            names.extend(self.values[dim])
        for name in names:
            if not name or name != name.lower():
                raise SchemaError(f"schema names must be nonempty lowercase, got {name!r}")
        if len(set(names)) != len(names):
            raise SchemaError("dimension and value names must be unique across the schema")
        if sorted(self.argument_order) != sorted(self.dimensions):
            raise SchemaError("argument_order must be a permutation of dimensions")
        if set(self.positions) != set(OPPOSITE):
            raise SchemaError(f"positions must be {sorted(OPPOSITE)}")

    @cached_property
    def dimension_of(self) -> dict[str, str]:
        return {v: dim for dim in self.dimensions for v in self.values[dim]}

    @cached_property
    def all_values(self) -> tuple[str, ...]:
        return tuple(v for dim in self.dimensions for v in self.values[dim])

    @property
    def noun_dimension(self) -> str:
        return self.dimensions[-1]

    def check_value(self, value: str, dim: str | None = None) -> str:
        """Return the dimension of ``value``; raise SchemaError if it is unknown."""
        found = self.dimension_of.get(value)
        if found is None or (dim is not None and found != dim):
            where = f" for dimension {dim!r}" if dim else ""
            raise SchemaError(f"unknown attribute value {value!r}{where}")
        return found

    def to_json(self) -> dict:
        return {
            "dimensions": list(self.dimensions),
            "values": {d: list(self.values[d]) for d in self.dimensions},
            "positions": list(self.positions),
            "argument_order": list(self.argument_order),
            "file_keys": dict(self.file_keys),
        }

    @classmethod
    def from_json(cls, data: Mapping) -> AttributeSchema:
        dims = tuple(data["dimensions"])
        return cls(
            dimensions=dims,
            values={d: tuple(data["values"][d]) for d in dims},
            positions=tuple(data.get("positions", DEFAULT_DIRECTIONS)),
            argument_order=tuple(data.get("argument_order", dims)),
            file_keys=dict(data.get("file_keys", {})),
        )


DEFAULT_SCHEMA = AttributeSchema()


@dataclass(frozen=True, eq=False)
class Entity:
    index: int
    attributes: Mapping[str, str]
    coords: tuple[float, float, float]

    def __getitem__(self, dim: str) -> str:
        return self.attributes[dim]

    def __eq__(self, other):
        if not isinstance(other, Entity):
            return NotImplemented
        return (
            self.index == other.index
            and dict(self.attributes) == dict(other.attributes)
            and self.coords == other.coords
        )

    def describe(self) -> str:
        return " ".join(self.attributes.values())


@dataclass(frozen=True, eq=False)
class Scene:
    scene_id: int
    entities: tuple[Entity, ...]
    directions: Mapping[str, tuple[float, float, float]] = field(
        default_factory=lambda: dict(DEFAULT_DIRECTIONS)
    )
    schema: AttributeSchema = DEFAULT_SCHEMA
    max_objects: int = MAX_OBJECTS

    def __post_init__(self):
        n = len(self.entities)
        if not 1 <= n <= self.max_objects:
            raise SchemaError(
                f"scene {self.scene_id}: needs 1..{self.max_objects} entities, got {n}"
            )
        for i, ent in enumerate(self.entities):
            if ent.index != i:
                raise SchemaError(f"scene {self.scene_id}: entity at position {i} has index {ent.index}")
            if set(ent.attributes) != set(self.schema.dimensions):
                raise SchemaError(
                    f"scene {self.scene_id}, entity {i}: attributes must cover {self.schema.dimensions}"
                )
            for dim, value in ent.attributes.items():
                if self.schema.dimension_of.get(value) != dim:
                    raise SchemaError(
                        f"scene {self.scene_id}, entity {i}: unknown {dim} value {value!r}"
                    )
        missing = set(OPPOSITE) - set(self.directions)
        if missing:
            raise SchemaError(f"scene {self.scene_id}: missing directions {sorted(missing)}")
        for pos, opp in OPPOSITE.items():
            a, b = np.asarray(self.directions[pos]), np.asarray(self.directions[opp])
            if not np.allclose(a, -b, atol=1e-6, rtol=0):
                raise SchemaError(f"scene {self.scene_id}: {pos} and {opp} are not opposite")

    def __len__(self) -> int:
        return len(self.entities)

    def __eq__(self, other):
        if not isinstance(other, Scene):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.entities == other.entities
            and {k: tuple(v) for k, v in self.directions.items()}
            == {k: tuple(v) for k, v in other.directions.items()}
        )

    @cached_property
    def coords(self) -> np.ndarray:
        return np.array([e.coords for e in self.entities], dtype=float)

    @cached_property
    def related(self) -> dict[str, tuple[frozenset[int], ...]]:
        """``related[pos][b]`` is the set of ``a`` with ``relates(a, b, pos)``."""
        diff = self.coords[:, None, :] - self.coords[None, :, :]
        out = {}
        for pos in OPPOSITE:
            mask = diff @ np.asarray(self.directions[pos], dtype=float) > EPS
            out[pos] = tuple(frozenset(np.flatnonzero(mask[:, b]).tolist()) for b in range(len(self)))
        return out

    @cached_property
    def by_value(self) -> dict[str, tuple[int, ...]]:
        table: dict[str, list[int]] = {v: [] for v in self.schema.all_values}
        for e in self.entities:
            for v in e.attributes.values():
                table[v].append(e.index)
        return {v: tuple(ix) for v, ix in table.items()}

    def attr(self, index: int, dim: str) -> str:
        return self.entities[index].attributes[dim]

    def xy_distance(self, a: int, b: int) -> float:
        ca, cb = self.entities[a].coords, self.entities[b].coords
        return math.hypot(ca[0] - cb[0], ca[1] - cb[1])


def _check_index(scene: Scene, i: int) -> None:
    if not 0 <= i < len(scene.entities):
        raise IndexError(f"entity index {i} out of range for scene {scene.scene_id}")


def relates(scene: Scene, a: int, b: int, pos: str) -> bool:
    """True iff entity ``a`` lies to the ``pos`` of entity ``b``."""
    _check_index(scene, a)
    _check_index(scene, b)
    ca, cb = scene.entities[a].coords, scene.entities[b].coords
    d = scene.directions[pos]
    return sum((x - y) * u for x, y, u in zip(ca, cb, d)) > EPS


def extreme_ties(scene: Scene, candidates: Iterable[int], pos: str) -> list[int]:
    """All candidates within EPS of the optimum for ``pos``, ascending."""
    cands = sorted(set(candidates))
    if not cands:
        raise EmptyCandidates(f"no candidates for extreme-{pos}")
    for c in cands:
        _check_index(scene, c)
    if pos == CENTRE:
        centre = scene.coords[:, :2].mean(axis=0)
        score = [-math.hypot(*(scene.coords[c, :2] - centre)) for c in cands]
    else:
        d = scene.directions[pos]
        score = [sum(x * u for x, u in zip(scene.entities[c].coords, d)) for c in cands]
    best = max(score)
    return [c for c, s in zip(cands, score) if best - s <= EPS]


def extreme(scene: Scene, candidates: Iterable[int], pos: str) -> int:
    """The candidate furthest towards ``pos`` (or nearest the centroid for
    ``"centre"``); ties go to the lowest index."""
    return extreme_ties(scene, candidates, pos)[0]


def filter_by_attrs(scene: Scene, constraints: Mapping[str, str]) -> list[int]:
    for dim, value in constraints.items():
        scene.schema.check_value(value, dim)
    if not constraints:
        return list(range(len(scene)))
    sets = [scene.by_value[v] for v in constraints.values()]
    first, rest = sets[0], [set(s) for s in sets[1:]]
    return [i for i in first if all(i in s for s in rest)]


# -- ingestion ------------------------------------------------------------------------


def _scene_from_json(raw: Mapping, schema: AttributeSchema, max_objects: int) -> Scene:
    sid = raw.get("image_index")
    if not isinstance(sid, int):
        raise SchemaError(f"scene without integer image_index: {sid!r}")
    objects = raw.get("objects")
    if not isinstance(objects, list) or not objects:
        raise SchemaError(f"scene {sid}: needs a nonempty object list")
    entities = []
    for i, obj in enumerate(objects):
        attrs = {}
        for dim in schema.dimensions:
            key = schema.file_keys.get(dim, dim)
            value = obj.get(key)
            if value is None:
                raise SchemaError(f"scene {sid}, entity {i}: missing {key!r}")
            if schema.dimension_of.get(value) != dim:
                raise SchemaError(f"scene {sid}, entity {i}: unknown {dim} value {value!r}")
            attrs[dim] = value
        coords = obj.get("3d_coords")
        if not isinstance(coords, list) or len(coords) != 3:
            raise SchemaError(f"scene {sid}, entity {i}: 3d_coords must be a 3-vector")
        entities.append(Entity(i, attrs, tuple(float(c) for c in coords)))
    directions = raw.get("directions")
    if directions is None:
        directions = dict(DEFAULT_DIRECTIONS)
    else:
        directions = {p: tuple(float(x) for x in directions[p]) for p in directions}
    return Scene(sid, tuple(entities), directions, schema, max_objects)


def load_scenes(
    path: str | Path, schema: AttributeSchema = DEFAULT_SCHEMA, max_objects: int = MAX_OBJECTS
) -> list[Scene]:
    data = Path(path).read_bytes()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", exc.pos) from exc
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not UTF-8", exc.start) from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("scenes"), list):
        raise ParseError(f"{path}: expected an object with a 'scenes' list", 0)
    return [_scene_from_json(raw, schema, max_objects) for raw in doc["scenes"]]


def scene_to_json(scene: Scene) -> dict:
    schema = scene.schema
    return {
        "image_index": scene.scene_id,
        "objects": [
            {
                **{schema.file_keys.get(d, d): e.attributes[d] for d in schema.dimensions},
                "3d_coords": list(e.coords),
            }
            for e in scene.entities
        ],
        "directions": {p: list(v) for p, v in scene.directions.items()},
    }


def write_scenes(scenes: Sequence[Scene], path: str | Path) -> None:
    doc = {"scenes": [scene_to_json(s) for s in scenes]}
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# -- synthesis ------------------------------------------------------------------------

_HEIGHT = {"large": 0.7, "small": 0.35}


@dataclass
class SceneConfig:
    n_objects: int
    allowed_values: Mapping[str, Sequence[str]] | None = None
    min_pairwise_distance: float = 0.8
    half_extent: float = 3.0
    max_attempts: int = 10_000


def generate_scene(
    config: SceneConfig, seed: int, schema: AttributeSchema = DEFAULT_SCHEMA, scene_id: int = 0
) -> Scene:
    if config.n_objects < 1:
        raise GenerationError("n_objects must be at least 1")
    allowed = {d: tuple(schema.values[d]) for d in schema.dimensions}
    for dim, vals in (config.allowed_values or {}).items():
        if dim not in allowed:
            raise SchemaError(f"unknown dimension {dim!r}")
        if not vals:
            raise GenerationError(f"allowed values for {dim!r} are empty")
        for v in vals:
            schema.check_value(v, dim)
        allowed[dim] = tuple(vals)

    rng = random.Random(seed)
    tuples = list(itertools.product(*(allowed[d] for d in schema.dimensions)))
    n = config.n_objects
    if n <= len(tuples):
        chosen = rng.sample(tuples, n)
    else:
        chosen = rng.sample(tuples, len(tuples))
        chosen += [rng.choice(tuples) for _ in range(n - len(tuples))]

    placed: list[tuple[float, float]] = []
    attempts = 0
    h, dmin = config.half_extent, config.min_pairwise_distance
    while len(placed) < n:
        attempts += 1
        if attempts > config.max_attempts:
            raise GenerationError(
                f"could not place {n} objects {dmin} apart after {config.max_attempts} attempts"
            )
        x, y = round(rng.uniform(-h, h), 4), round(rng.uniform(-h, h), 4)
        if all(math.hypot(x - px, y - py) >= dmin for px, py in placed):
            placed.append((x, y))

    entities = []
    for i, (values, (x, y)) in enumerate(zip(chosen, placed)):
        attrs = dict(zip(schema.dimensions, values))
        z = _HEIGHT.get(attrs.get("size", ""), 0.5)
        entities.append(Entity(i, attrs, (x, y, z)))
    return Scene(scene_id, tuple(entities), dict(DEFAULT_DIRECTIONS), schema, max(MAX_OBJECTS, n))
