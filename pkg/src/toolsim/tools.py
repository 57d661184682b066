"""Toolset construction: seed catalogs, generated documentation, and the toolset file."""

from __future__ import annotations

import json
import logging
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from . import prompts
from .backend import Backend, CompletionRequest, Role
from .openapi import TYPE_TOKENS, ApiSchema, Violation, is_textual_only, validate_schema

logger = logging.getLogger(__name__)

IDENTIFIER_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_FENCE_RE = re.compile(r"```([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)


class CatalogError(Exception):
    pass


class GenerationError(Exception):
    """A generated document could not be turned into a usable tool part."""


class SchemaGenerationError(GenerationError):
    def __init__(self, message: str, violations: list[Violation] | None = None):
        super().__init__(message)
        self.violations = violations or []


@dataclass(frozen=True)
class ToolSeed:
    name: str
    introduction: str
    category: str


@dataclass(frozen=True)
class FunctionParam:
    name: str
    type: str
    required: bool = False
    description: str = ""


@dataclass(frozen=True)
class FunctionDoc:
    name: str
    summary: str
    parameters: tuple[FunctionParam, ...] = ()
    returns: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "summary": self.summary,
            "parameters": [
                {"name": p.name, "type": p.type, "required": p.required, "description": p.description}
                for p in self.parameters
            ],
            "returns": self.returns,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> FunctionDoc:
        return cls(
            name=data["name"],
            summary=data["summary"],
            parameters=tuple(
                FunctionParam(p["name"], p["type"], bool(p.get("required", False)), p.get("description", ""))
                for p in data.get("parameters", [])
            ),
            returns=data.get("returns", ""),
        )


@dataclass(frozen=True)
class ToolSpec:
    name: str
    introduction: str
    description: str
    functions: tuple[FunctionDoc, ...]
    schema: ApiSchema
    category: str = ""

    def __post_init__(self) -> None:
        for part in ("name", "introduction", "description"):
            if not getattr(self, part).strip():
                raise ValueError(f"tool {self.name!r}: {part} is empty")
        if not self.functions:
            raise ValueError(f"tool {self.name!r}: no functions")
        if not self.schema.document:
            raise ValueError(f"tool {self.name!r}: empty OpenAPI document")

    @property
    def function_names(self) -> list[str]:
        return [f.name for f in self.functions]

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "category": self.category,
            "introduction": self.introduction,
            "description": self.description,
            "functions": [f.to_dict() for f in self.functions],
            "openapi": self.schema.document,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ToolSpec:
        return cls(
            name=data["name"],
            introduction=data["introduction"],
            description=data["description"],
            functions=tuple(FunctionDoc.from_dict(f) for f in data["functions"]),
            schema=ApiSchema(data["openapi"]),
            category=data.get("category", ""),
        )


def render_function_docs(functions: tuple[FunctionDoc, ...] | list[FunctionDoc]) -> str:
    lines = []
    for fn in functions:
        if fn.parameters:
            params = "; ".join(
                f"{p.name} ({p.type}, {'required' if p.required else 'optional'}): {p.description}".rstrip(": ")
                for p in fn.parameters
            )
        else:
            params = "none"
        line = f"- {fn.name}: {fn.summary} Parameters: {params}."
        if fn.returns:
            line += f" Returns: {fn.returns}"
        lines.append(line)
    return "\n".join(lines)


# --- seed catalog ----------------------------------------------------------


@dataclass
class CatalogReport:
    skipped: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)


def load_seed_catalog(path: str | Path, categories: set[str] | None = None) -> tuple[list[ToolSeed], CatalogReport]:
    """Read a JSON array of ``{name, introduction, category}`` rows.

    Unusable rows are skipped and noted in the report; a repeated name keeps its
    first occurrence.
    """
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CatalogError(f"cannot read seed catalog {path}: {exc}") from exc
    try:
        rows = json.loads(text) if text.strip() else []
    except json.JSONDecodeError as exc:
        raise CatalogError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(rows, list):
        raise CatalogError(f"{path}: expected a JSON array")

    report = CatalogReport()
    seeds: list[ToolSeed] = []
    seen: set[str] = set()
    for i, row in enumerate(rows):
        if not isinstance(row, dict):
            report.skipped.append(f"row {i}: not an object")
            continue
        values = [row.get(k) for k in ("name", "introduction", "category")]
        if not all(isinstance(v, str) and v.strip() for v in values):
            report.skipped.append(f"row {i}: name, introduction and category must be non-empty text")
            continue
        name, intro, category = (v.strip() for v in values)  # type: ignore[union-attr]
        if categories is not None and category not in categories:
            report.skipped.append(f"row {i}: unknown category {category!r}")
            continue
        if name in seen:
            report.duplicates.append(name)
            continue
        seen.add(name)
        seeds.append(ToolSeed(name, intro, category))
    if not seeds:
        raise CatalogError(f"{path}: no valid seed rows")
    return seeds, report


# --- documentation generation ----------------------------------------------


def extract_blocks(text: str, languages: tuple[str, ...] = ()) -> list[str]:
    """Bodies of fenced code blocks, optionally restricted to the given language tags."""
    blocks = []
    for lang, body in _FENCE_RE.findall(text):
        if not languages or lang.lower() in languages or not lang:
            blocks.append(body)
    return blocks


def _complete(backend: Backend, prompt: str) -> str:
    return backend.complete(CompletionRequest.for_role(Role.DOC_GENERATOR, prompt, max_output_tokens=2048))


def generate_description(seed: ToolSeed, backend: Backend) -> str:
    prompt = prompts.render("description", name=seed.name, category=seed.category, introduction=seed.introduction)
    problem = ""
    for attempt in (1, 2):
        text = _complete(backend, prompt)
        label = re.search(r"^\s*Description:", text, re.MULTILINE)
        description = (text[label.end():] if label else text).strip()
        if not description:
            problem = "empty generation"
        elif len(description) <= len(seed.introduction):
            problem = "description is not longer than the introduction"
        else:
            return description
        logger.warning("%s: %s (attempt %d)", seed.name, problem, attempt)
    raise GenerationError(f"{seed.name}: {problem}")


@dataclass
class ParseReport:
    discarded: list[str] = field(default_factory=list)
    renamed: list[tuple[str, str]] = field(default_factory=list)


def _function_entry(raw: Any) -> FunctionDoc:
    if not isinstance(raw, dict):
        raise ValueError("entry is not an object")
    name = raw.get("name")
    if not isinstance(name, str) or not IDENTIFIER_RE.match(name):
        raise ValueError(f"invalid function name {name!r}")
    summary = raw.get("summary", raw.get("description"))
    if not isinstance(summary, str) or not summary.strip():
        raise ValueError(f"{name}: missing summary")
    raw_params = raw.get("parameters", [])
    if not isinstance(raw_params, list):
        raise ValueError(f"{name}: parameters is not a list")
    params = []
    for p in raw_params:
        if not isinstance(p, dict):
            raise ValueError(f"{name}: parameter is not an object")
        pname, ptype = p.get("name"), p.get("type")
        if not isinstance(pname, str) or not IDENTIFIER_RE.match(pname):
            raise ValueError(f"{name}: invalid parameter name {pname!r}")
        if ptype not in TYPE_TOKENS:
            raise ValueError(f"{name}.{pname}: unknown type {ptype!r}")
        if any(q.name == pname for q in params):
            raise ValueError(f"{name}: duplicate parameter {pname!r}")
        required = p.get("required", False)
        if not isinstance(required, bool):
            raise ValueError(f"{name}.{pname}: required flag is not a boolean")
        params.append(FunctionParam(pname, ptype, required, str(p.get("description", "")).strip()))
    returns = raw.get("returns", "")
    if not isinstance(returns, str):
        returns = json.dumps(returns, sort_keys=True)
    return FunctionDoc(name, summary.strip(), tuple(params), returns.strip())


def parse_function_docs(text: str) -> tuple[list[FunctionDoc], ParseReport]:
    report = ParseReport()
    entries: list[Any] = []
    blocks = extract_blocks(text, ("json",)) or [text]
    for i, block in enumerate(blocks):
        try:
            data = json.loads(block)
        except json.JSONDecodeError as exc:
            report.discarded.append(f"block {i}: not valid JSON ({exc.msg})")
            continue
        if isinstance(data, dict) and isinstance(data.get("functions"), list):
            entries.extend(data["functions"])
        elif isinstance(data, list):
            entries.extend(data)
        else:
            entries.append(data)

    functions: list[FunctionDoc] = []
    names: set[str] = set()
    for i, raw in enumerate(entries):
        try:
            fn = _function_entry(raw)
        except ValueError as exc:
            report.discarded.append(f"entry {i}: {exc}")
            continue
        if fn.name in names:
            n = 2
            while f"{fn.name}_{n}" in names:
                n += 1
            new = f"{fn.name}_{n}"
            report.renamed.append((fn.name, new))
            fn = FunctionDoc(new, fn.summary, fn.parameters, fn.returns)
        names.add(fn.name)
        functions.append(fn)
    return functions, report


def generate_function_docs(seed: ToolSeed, description: str, backend: Backend) -> tuple[list[FunctionDoc], ParseReport]:
    if not description.strip():
        raise ValueError("description must be non-empty")
    prompt = prompts.render("functions", name=seed.name, introduction=seed.introduction, description=description)
    functions, report = parse_function_docs(_complete(backend, prompt))
    for note in report.discarded:
        logger.warning("%s: discarded function entry: %s", seed.name, note)
    if not functions:
        raise GenerationError(f"{seed.name}: no parseable functions")
    return functions, report


def parse_openapi(text: str) -> ApiSchema:
    blocks = extract_blocks(text, ("json", "yaml", "yml")) or [text]
    try:
        data = yaml.safe_load(blocks[0])
    except yaml.YAMLError as exc:
        raise SchemaGenerationError(f"OpenAPI document is not parseable: {exc}") from exc
    if not isinstance(data, dict):
        raise SchemaGenerationError("OpenAPI document is not a mapping")
    # YAML may produce integer status codes or dates; normalize to JSON data.
    return ApiSchema(json.loads(json.dumps(data, default=str)))


def generate_openapi(
    name: str, description: str, functions: list[FunctionDoc] | tuple[FunctionDoc, ...], backend: Backend
) -> ApiSchema:
    if not (name and description and functions):
        raise ValueError("name, description and functions are required")
    functions_json = json.dumps([f.to_dict() for f in functions], indent=2, ensure_ascii=False)
    names = [f.name for f in functions]
    feedback = ""
    error: SchemaGenerationError | None = None
    for attempt in (1, 2):
        prompt = prompts.render(
            "openapi", name=name, description=description, functions=functions_json, feedback=feedback
        )
        try:
            schema = parse_openapi(_complete(backend, prompt))
        except SchemaGenerationError as exc:
            error = exc
            feedback = f"\nYour previous answer could not be parsed ({exc}). Answer with one fenced block."
        else:
            violations = validate_schema(schema, names)
            if not violations:
                return schema
            listed = "; ".join(str(v) for v in violations)
            error = SchemaGenerationError(f"{name}: OpenAPI document failed validation: {listed}", violations)
            feedback = "\nYour previous answer had these problems, fix all of them:\n" + "\n".join(
                f"- {v}" for v in violations
            )
        logger.warning("%s: OpenAPI generation attempt %d failed: %s", name, attempt, error)
    assert error is not None
    raise error


def build_tool(seed: ToolSeed, backend: Backend) -> ToolSpec:
    description = generate_description(seed, backend)
    functions, _ = generate_function_docs(seed, description, backend)
    schema = generate_openapi(seed.name, description, functions, backend)
    return ToolSpec(seed.name, seed.introduction, description, tuple(functions), schema, seed.category)


@dataclass
class BuildReport:
    built: list[str] = field(default_factory=list)
    skipped: dict[str, str] = field(default_factory=dict)


def sample_seeds(seeds: list[ToolSeed], n: int | None, rng_seed: int = 0) -> list[ToolSeed]:
    """Uniform sample without replacement, returned in catalog order."""
    if n is None or n >= len(seeds):
        return list(seeds)
    picked = set(random.Random(rng_seed).sample(range(len(seeds)), n))
    return [s for i, s in enumerate(seeds) if i in picked]


def build_toolset(
    seeds: list[ToolSeed], backend: Backend, parallelism: int = 1
) -> tuple[list[ToolSpec], BuildReport]:
    """Expand every seed; tools that fail generation or carry non-textual content are skipped."""

    def expand(seed: ToolSeed) -> ToolSpec | str:
        try:
            tool = build_tool(seed, backend)
        except GenerationError as exc:
            return str(exc)
        textual, reason = is_textual_only(tool.schema)
        if not textual:
            return f"non-textual content: {reason}"
        return tool

    with ThreadPoolExecutor(max_workers=max(1, parallelism)) as pool:
        results = list(pool.map(expand, seeds))

    report = BuildReport()
    tools = []
    for seed, result in zip(seeds, results):
        if isinstance(result, ToolSpec):
            tools.append(result)
            report.built.append(seed.name)
        else:
            report.skipped[seed.name] = result
            logger.warning("skipping %s: %s", seed.name, result)
    return tools, report


def validate_toolset(tools: list[ToolSpec]) -> dict[str, list[str]]:
    """Problems per tool name; a tool with no problems is absent from the result."""
    problems: dict[str, list[str]] = {}
    seen: set[str] = set()
    for tool in tools:
        found = [str(v) for v in validate_schema(tool.schema, tool.function_names)]
        if tool.name in seen:
            found.append("duplicate tool name")
        seen.add(tool.name)
        if len(set(tool.function_names)) != len(tool.function_names):
            found.append("duplicate function names")
        textual, reason = is_textual_only(tool.schema)
        if not textual:
            found.append(f"non-textual content: {reason}")
        if found:
            problems[tool.name] = found
    return problems


def dump_toolset(tools: list[ToolSpec]) -> str:
    return json.dumps([t.to_dict() for t in tools], indent=2, ensure_ascii=False) + "\n"


def save_toolset(tools: list[ToolSpec], path: str | Path) -> None:
    Path(path).write_text(dump_toolset(tools), encoding="utf-8")


def load_toolset(path: str | Path) -> list[ToolSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise ValueError(f"{path}: expected a JSON array of tools")
    return [ToolSpec.from_dict(d) for d in data]
