"""Command-line entry point: ``nsvd <subcommand>``.

Exit codes: 0 success, 2 usage/config, 3 generation failure, 4 execution
failure, 5 I/O.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import random
import sys
from pathlib import Path

from . import __version__
from .dialoggen import generate_dialog, question_type_split, read_dataset, write_dataset
from .dsl import QUESTION_FUNCTIONS, parse_program, serialize_program
from .errors import (
    ExecutionError,
    GenerationError,
    NoTemplateMatch,
    NsvdError,
    ParseError,
    ProgramError,
    ReplayMismatch,
    SchemaError,
)
from .evalharness import (
    EvaluationConfig,
    OracleModel,
    StubModel,
    SymbolicModel,
    evaluate,
    parse_window,
    sweep_history_window,
)
from .executor import KnowledgeBase, execute_caption, execute_question, init_kb
from .scene import DEFAULT_SCHEMA, SceneConfig, generate_scene, load_scenes, write_scenes
from .templates import default_templates

EXIT_OK, EXIT_USAGE, EXIT_GENERATION, EXIT_EXECUTION, EXIT_IO = 0, 2, 3, 4, 5


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _sha256(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(output: str | Path, argv: list[str], seeds: dict, inputs: list, outputs: list) -> Path:
    path = Path(f"{output}.manifest.json")
    doc = {
        "command": ["nsvd", *argv],
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "version": __version__,
        "outputs": [str(p) for p in outputs],
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    path.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return path


def _load_scene_map(path: str) -> dict:
    return {s.scene_id: s for s in load_scenes(path)}


# -- gen-scenes -----------------------------------------------------------------------


def _parse_range(text: str) -> tuple[int, int]:
    lo, sep, hi = text.partition("..")
    try:
        lo_i = int(lo)
        hi_i = int(hi) if sep else lo_i
    except ValueError:
        raise CliError(EXIT_USAGE, f"--objects expects MIN..MAX, got {text!r}") from None
    if not 1 <= lo_i <= hi_i:
        raise CliError(EXIT_USAGE, f"--objects range {text!r} is empty or below 1")
    return lo_i, hi_i


def _parse_restrict(items: list[str]) -> dict:
    aliases = {v: k for k, v in DEFAULT_SCHEMA.file_keys.items()}
    out = {}
    for item in items:
        dim, sep, values = item.partition("=")
        if not sep or not values:
            raise CliError(EXIT_USAGE, f"--restrict expects dim=v1,v2,..., got {item!r}")
        out[aliases.get(dim, dim)] = [v for v in values.split(",") if v]
    return out


def cmd_gen_scenes(args, argv) -> int:
    if args.count < 1:
        raise CliError(EXIT_USAGE, "--count must be at least 1")
    lo, hi = _parse_range(args.objects)
    allowed = _parse_restrict(args.restrict or [])
    rng = random.Random(args.seed)
    scenes = []
    for i in range(args.count):
        n = rng.randint(lo, hi)
        cfg = SceneConfig(n, allowed or None)
        scenes.append(generate_scene(cfg, rng.getrandbits(63), scene_id=i))
    write_scenes(scenes, args.output)
    write_manifest(args.output, argv, {"seed": args.seed}, [], [args.output])
    print(f"wrote {len(scenes)} scenes to {args.output}")
    return EXIT_OK


# -- gen-dialogs ----------------------------------------------------------------------


def _parse_functions(spec: str | None) -> list[str] | None:
    if spec is None:
        return None
    path = Path(spec)
    if path.suffix == ".json" or path.exists():
        doc = json.loads(path.read_text(encoding="utf-8"))
        names = doc["functions"] if isinstance(doc, dict) else doc
    else:
        names = [n.strip() for n in spec.split(",") if n.strip()]
    unknown = [n for n in names if n not in QUESTION_FUNCTIONS]
    if unknown or not names:
        raise CliError(EXIT_USAGE, f"--functions names unknown question functions: {unknown}")
    return names


def cmd_gen_dialogs(args, argv) -> int:
    if args.per_scene < 1 or args.rounds < 1:
        raise CliError(EXIT_USAGE, "--per-scene and --rounds must be at least 1")
    functions = _parse_functions(args.functions)
    scenes = load_scenes(args.scenes)
    rng = random.Random(args.seed)
    templates = default_templates()
    dialogs = []
    for scene in scenes:
        for _ in range(args.per_scene):
            seed = rng.getrandbits(63)
            try:
                dialogs.append(generate_dialog(scene, args.rounds, seed, templates, functions))
            except GenerationError as exc:
                raise CliError(EXIT_GENERATION, f"scene_id {scene.scene_id}: {exc}") from exc
    write_dataset(dialogs, args.output, scenes[0].schema if scenes else DEFAULT_SCHEMA)
    inputs = [args.scenes] + ([args.functions] if args.functions and Path(args.functions).exists() else [])
    write_manifest(args.output, argv, {"seed": args.seed}, inputs, [args.output])
    print(f"wrote {len(dialogs)} dialogs ({args.rounds} rounds each) to {args.output}")
    return EXIT_OK


def cmd_split(args, argv) -> int:
    a, b = question_type_split(args.seed)
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for tag, names in (("A", a), ("B", b)):
        (out / f"split-{tag}.json").write_text(json.dumps({"functions": names}, indent=1) + "\n")
    print(f"wrote {out / 'split-A.json'} and {out / 'split-B.json'}")
    return EXIT_OK


# -- exec / repl ----------------------------------------------------------------------


def _describe_change(before: dict, after: dict, kb: KnowledgeBase) -> str:
    changed = sorted(KnowledgeBase.changed_fields(before, after))
    return "kb delta: " + (", ".join(changed) if changed else "none")


def cmd_exec(args, argv) -> int:
    scenes = _load_scene_map(args.scenes)
    if args.scene_id not in scenes:
        raise CliError(EXIT_USAGE, f"scene {args.scene_id} not found in {args.scenes}")
    kb = init_kb(scenes[args.scene_id])
    try:
        if args.caption is not None:
            p = parse_program(args.caption)
            execute_caption(kb, p)
            print(f"caption {serialize_program(p)}")
            print(kb.dump())
        for text in args.program or []:
            p = parse_program(text)
            kb.round += 1
            answer = execute_question(kb, p)
            print(f"round {kb.round}: {serialize_program(p)} -> {answer}")
            print(kb.dump())
    except (ProgramError, ExecutionError) as exc:
        raise CliError(EXIT_EXECUTION, f"{type(exc).__name__}: {exc}") from exc
    return EXIT_OK


def _read_program(text: str, kind: str, templates):
    if text.startswith("!"):
        return parse_program(text[1:].strip())
    try:
        return templates.parse_nl(text, kind)
    except NoTemplateMatch:
        try:
            return parse_program(text)
        except ProgramError:
            pass
        raise


def cmd_repl(args, argv, stdin=None, stdout=None) -> int:
    stdin = stdin or sys.stdin
    out = stdout or sys.stdout
    scenes = _load_scene_map(args.scenes)
    if args.scene_id not in scenes:
        raise CliError(EXIT_USAGE, f"scene {args.scene_id} not found in {args.scenes}")
    templates = default_templates()
    kb = init_kb(scenes[args.scene_id])
    interactive = stdin.isatty()

    def say(msg: str) -> None:
        print(msg, file=out)

    say("enter a caption, then questions; ':kb' shows the knowledge base, ':quit' exits")
    while True:
        if interactive:
            out.write("caption> " if not kb.captioned else f"q{kb.round + 1}> ")
            out.flush()
        line = stdin.readline()
        if not line:
            break
        line = line.strip()
        if not line:
            continue
        if line == ":quit":
            break
        if line == ":kb":
            say(kb.dump())
            continue
        kind = "question" if kb.captioned else "caption"
        try:
            p = _read_program(line, kind, templates)
            say(f"program: {serialize_program(p)}")
            before = kb.snapshot()
            if kind == "caption":
                execute_caption(kb, p)
                say("answer: -")
            else:
                trial = kb.copy()
                trial.round += 1
                answer = execute_question(trial, p)
                kb = trial
                say(f"answer: {answer}")
            say(_describe_change(before, kb.snapshot(), kb))
        except NoTemplateMatch as exc:
            say(f"NoTemplateMatch: did you mean one of: {' | '.join(exc.suggestions)}")
        except NsvdError as exc:
            say(f"{type(exc).__name__}: {exc}")
    return EXIT_OK


# -- evaluate -------------------------------------------------------------------------


def _make_model(spec: str):
    if spec == "symbolic":
        return SymbolicModel()
    if spec == "oracle":
        return OracleModel()
    if spec.startswith("stub:"):
        return StubModel.from_file(spec[5:])
    raise CliError(EXIT_USAGE, f"unknown model {spec!r}; use symbolic, oracle or stub:FILE")


def cmd_evaluate(args, argv) -> int:
    model = _make_model(args.model)
    try:
        window = parse_window(args.window)
        sweep = [parse_window(w) for w in args.sweep_windows.split(",")] if args.sweep_windows else None
        config = EvaluationConfig(args.scheme, window)
    except ValueError as exc:
        raise CliError(EXIT_USAGE, str(exc)) from exc
    scenes = _load_scene_map(args.scenes)
    dialogs = read_dataset(args.dialogs, scenes)
    meta = {
        "config": {"model": args.model, "scheme": config.scheme, "window": config.window_label},
        "dataset": str(args.dialogs),
        "dataset_sha256": _sha256(args.dialogs),
        "scenes_sha256": _sha256(args.scenes),
    }
    output = Path(args.output)
    outputs = [output]
    if sweep:
        result = sweep_history_window(dialogs, scenes, model, sweep)
        doc = {"run": meta, **result.to_json()}
        for (scheme, w), rep in result.reports.items():
            print(f"{scheme:>4} window={w:>3}: Acc {rep.overall_accuracy:.4f}  NFFR {float(rep.nffr):.4f}")
    else:
        report = evaluate(dialogs, scenes, model, config)
        doc = {"run": meta, "report": report.to_json()}
        csv_path = output.with_suffix(".csv")
        report.write_csv(csv_path)
        outputs.append(csv_path)
        print(f"Acc {report.overall_accuracy:.4f}  NFFR {float(report.nffr):.4f}")
    output.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    write_manifest(output, argv, {}, [args.dialogs, args.scenes], outputs)
    return EXIT_OK


# -- wiring ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nsvd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nsvd {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenes", help="synthesise CLEVR-format scenes")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--objects", default="3..10", help="object count range MIN..MAX")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restrict", action="append", metavar="DIM=V1,V2", help="limit a dimension's values")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("gen-dialogs", help="generate an annotated dialog dataset")
    p.add_argument("--scenes", required=True)
    p.add_argument("--per-scene", type=int, default=5)
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--functions", help="JSON file or comma list of allowed question functions")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen_dialogs)

    p = sub.add_parser("split-functions", help="write a random half/half question-type split")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output-dir", default=".")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("exec", help="execute programs against one scene")
    p.add_argument("--scenes", required=True)
    p.add_argument("--scene-id", type=int, required=True)
    p.add_argument("--caption")
    p.add_argument("--program", action="append", help="question program; repeatable")
    p.set_defaults(func=cmd_exec)

    p = sub.add_parser("evaluate", help="score a model on a dialog dataset")
    p.add_argument("--dialogs", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--model", default="symbolic")
    p.add_argument("--scheme", default="gt", choices=["gt", "pred"])
    p.add_argument("--window", default="all")
    p.add_argument("--sweep-windows", help="comma list such as 0,1,2,5,all")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("repl", help="interactive caption/question loop")
    p.add_argument("--scenes", required=True)
    p.add_argument("--scene-id", type=int, required=True)
    p.set_defaults(func=cmd_repl)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except GenerationError as exc:
        print(f"error: GenerationError: {exc}", file=sys.stderr)
        return EXIT_GENERATION
    except (SchemaError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ParseError, ReplayMismatch, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
