"""Test-side helpers: scene builders, a random program sampler and an
independent brute-force oracle for counting / existence questions.

The oracle works on raw CLEVR-style dicts (``color``, ``3d_coords``) and
never imports executor code.
"""

from __future__ import annotations

import random

from nsvd.dsl import ATTR, ATTR_LIST, ATTR_TYPE, POS, REGISTRY, Program
from nsvd.scene import DEFAULT_SCHEMA, Entity, Scene

COLOURS = ("blue", "brown", "cyan", "grey", "green", "purple", "red", "yellow")
VALUES = {
    "size": ("large", "small"),
    "colour": COLOURS,
    "material": ("rubber", "metal"),
    "shape": ("cube", "cylinder", "sphere"),
}
DIMS = ("size", "colour", "material", "shape")
POSITIONS = ("right", "left", "front", "behind")


def make_scene(objects, scene_id=0, directions=None) -> Scene:
    """``objects`` is a list of (size, colour, material, shape, x, y)."""
    ents = []
    for i, (size, colour, material, shape, x, y) in enumerate(objects):
        attrs = {"size": size, "colour": colour, "material": material, "shape": shape}
        ents.append(Entity(i, attrs, (float(x), float(y), 0.5)))
    if directions is None:
        return Scene(scene_id, tuple(ents))
    return Scene(scene_id, tuple(ents), directions)


def random_program(name: str, rng: random.Random) -> Program:
    spec = REGISTRY[name].arg_spec
    if spec == (ATTR_LIST,):
        dims = rng.sample(DIMS, rng.randint(1, 4))
        return Program(name, tuple(rng.choice(VALUES[d]) for d in DEFAULT_SCHEMA.argument_order if d in dims))
    args = []
    for kind in spec:
        if kind == ATTR:
            args.append(rng.choice(VALUES[rng.choice(DIMS)]))
        elif kind == ATTR_TYPE:
            args.append(rng.choice(DIMS))
        elif kind == POS:
            args.append(rng.choice(POSITIONS))
    return Program(name, tuple(args))


# -- brute-force oracle ---------------------------------------------------------------

_RAW_KEY = {"size": "size", "colour": "color", "material": "material", "shape": "shape"}
_UNIT = {
    "right": (1.0, 0.0, 0.0),
    "left": (-1.0, 0.0, 0.0),
    "front": (0.0, -1.0, 0.0),
    "behind": (0.0, 1.0, 0.0),
}


def _dim_of(value):
    for d, vs in VALUES.items():
        if value in vs:
            return d
    raise KeyError(value)


def _lies(raw, a, b, pos):
    ca, cb = raw["objects"][a]["3d_coords"], raw["objects"][b]["3d_coords"]
    u = raw.get("directions", _UNIT)[pos]
    return (ca[0] - cb[0]) * u[0] + (ca[1] - cb[1]) * u[1] + (ca[2] - cb[2]) * u[2] > 1e-6


def oracle_answer(raw, state, name, args):
    """Brute-force answer, or the string ``"error"`` if no referent exists.

    ``state`` carries ``subject``, ``prev``, ``group`` (list of indices) and
    ``seen`` (list of (index, {dim: value}) in mention order).
    """
    objs = raw["objects"]
    n = len(objs)

    def val(i, dim):
        return objs[i][_RAW_KEY[dim]]

    def early(a):
        d = _dim_of(a)
        for idx, known in state["seen"]:
            if known.get(d) == a:
                return idx
        return None

    ref = None
    if name.endswith(("-imm2", "-imm-2")):
        ref = state["prev"]
    elif name.endswith("-imm"):
        ref = state["subject"]
    elif name.endswith("-early"):
        ref = early(args[-1])
    if ref is None and name.endswith(("-imm", "-imm2", "-imm-2", "-early")):
        return "error"

    base = name.split("-", 1)[1]
    if base == "all":
        k = n
    elif base == "other":
        k = n - len({i for i, _ in state["seen"]})
    elif base == "all-group":
        k = len(state["group"])
    elif base == "attribute":
        k = sum(val(i, _dim_of(args[0])) == args[0] for i in range(n))
    elif base == "attribute-group":
        k = sum(val(i, _dim_of(args[0])) == args[0] for i in state["group"])
    elif base.startswith("obj-rel"):
        k = sum(_lies(raw, i, ref, args[0]) for i in range(n))
    elif base.startswith("obj-exclude"):
        k = sum(i != ref and val(i, args[0]) == val(ref, args[0]) for i in range(n))
    else:
        raise ValueError(name)
    if name.startswith("exist"):
        return "yes" if k > 0 else "no"
    return str(k)
