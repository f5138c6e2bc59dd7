"""Neural-symbolic visual dialog toolkit: scenes, a dialog DSL with an explicit
knowledge base, templated language, dialog generation and evaluation."""

from __future__ import annotations

__version__ = "0.1.0"

from .dialoggen import Dialog, Round, generate_dataset, generate_dialog, read_dataset, write_dataset
from .dsl import REGISTRY, Program, parse_program, serialize_program
from .evalharness import (
    EvaluationConfig,
    EvaluationReport,
    OracleModel,
    StubModel,
    SymbolicModel,
    evaluate,
    nffr,
    sweep_history_window,
)
from .executor import KnowledgeBase, execute_caption, execute_question, init_kb
from .scene import DEFAULT_SCHEMA, AttributeSchema, Entity, Scene, generate_scene, load_scenes
from .templates import TemplateSet, default_templates, parse_nl, render

__all__ = [
    "DEFAULT_SCHEMA", "REGISTRY", "AttributeSchema", "Dialog", "Entity", "EvaluationConfig",
    "EvaluationReport", "KnowledgeBase", "OracleModel", "Program", "Round", "Scene", "StubModel",
    "SymbolicModel", "TemplateSet", "default_templates", "evaluate", "execute_caption",
    "execute_question", "generate_dataset", "generate_dialog", "generate_scene", "init_kb",
    "load_scenes", "nffr", "parse_nl", "parse_program", "read_dataset", "render",
    "serialize_program", "sweep_history_window", "write_dataset",
]
