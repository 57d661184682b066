"""Filtering, statistics, sampling and (de)serialization of tool-use corpora."""

from __future__ import annotations

import json
import os
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import IO, Any, Iterable, Mapping

from ._util import round_half_up
from .agents import ErrorKind, assistant_prompt, render_entry
from .react import AssistantMove, render_react_block
from .simulation import ToolUseInstance
from .tools import ToolSpec, render_function_docs

CORPUS_FORMAT = "toolsim-corpus"
TRAINING_FORMAT = "toolsim-training"
FORMAT_VERSION = 1

# Fixed order; an instance is charged to the first rule it fails.
RULE_OUTCOME = "outcome"
RULE_STEP_LIMIT = "step limit"
RULE_RELEVANCE = "no relevant call"
RULE_PARSE = "parse error"
RULES = (RULE_OUTCOME, RULE_STEP_LIMIT, RULE_RELEVANCE, RULE_PARSE)

_VALIDATION_FAILURES = {ErrorKind.INVALID_ACTION, ErrorKind.PARAMETER_ERROR, ErrorKind.PARSE_ERROR}


class CorpusFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class CorpusVersionError(CorpusFormatError):
    pass


# --- filtering -------------------------------------------------------------


@dataclass(frozen=True)
class FilterRules:
    max_steps_kept: int = 5
    require_relevant_call: bool = True
    drop_parse_errors: bool = True

    def __post_init__(self) -> None:
        if self.max_steps_kept < 1:
            raise ValueError("max_steps_kept must be at least 1")


@dataclass
class RejectionReport:
    raw: int = 0
    kept: int = 0
    counts: dict[str, int] = field(default_factory=lambda: {r: 0 for r in RULES})
    per_tool: dict[str, dict[str, int]] = field(default_factory=dict)
    rejected: list[tuple[int, str, str]] = field(default_factory=list)  # (index, tool, rule)

    def to_dict(self) -> dict[str, Any]:
        return {
            "raw": self.raw,
            "kept": self.kept,
            "counts": self.counts,
            "per_tool": {k: self.per_tool[k] for k in sorted(self.per_tool)},
            "rejected": [{"index": i, "tool_name": t, "rule": r} for i, t, r in self.rejected],
        }


def rejection_rule(
    instance: ToolUseInstance, rules: FilterRules, function_names: set[str] | None = None
) -> str | None:
    """The first rule ``instance`` fails, or ``None`` if it is kept."""
    if instance.outcome != "completed":
        return RULE_STEP_LIMIT if instance.outcome == "step_limit" else RULE_OUTCOME
    if instance.steps > rules.max_steps_kept:
        return RULE_STEP_LIMIT
    if rules.require_relevant_call and not any(
        a.observation.error_kind not in _VALIDATION_FAILURES
        and (function_names is None or a.function_name in function_names)
        for a in instance.actions
    ):
        return RULE_RELEVANCE
    if rules.drop_parse_errors:
        recovered = True
        for a in instance.actions:
            if a.observation.error_kind == ErrorKind.PARSE_ERROR:
                recovered = False
            elif a.observation.ok and (function_names is None or a.function_name in function_names):
                recovered = True
        if not recovered:
            return RULE_PARSE
    return None


def filter_instances(
    raw: list[ToolUseInstance],
    rules: FilterRules = FilterRules(),
    tools: Mapping[str, ToolSpec] | None = None,
) -> tuple[list[ToolUseInstance], RejectionReport]:
    report = RejectionReport(raw=len(raw))
    kept = []
    for i, inst in enumerate(raw):
        names = set(tools[inst.tool_name].function_names) if tools and inst.tool_name in tools else None
        rule = rejection_rule(inst, rules, names)
        if rule is None:
            kept.append(inst)
            continue
        report.counts[rule] += 1
        per_tool = report.per_tool.setdefault(inst.tool_name, {})
        per_tool[rule] = per_tool.get(rule, 0) + 1
        report.rejected.append((i, inst.tool_name, rule))
    report.kept = len(kept)
    return kept, report


# --- statistics ------------------------------------------------------------


def word_count(text: str) -> int:
    return len(text.split())


def length_histogram(lengths: Iterable[int], bucket: int = 5) -> dict[str, int]:
    counts = Counter((n // bucket) * bucket for n in lengths)
    return {f"{lo}-{lo + bucket - 1}": counts[lo] for lo in sorted(counts)}


@dataclass(frozen=True)
class CorpusStats:
    tool_category_count: int | None
    tool_count: int
    instance_count: int
    single_call_count: int
    multi_call_count: int
    zero_call_count: int
    avg_functions_per_tool: float | None
    avg_steps: float
    avg_instruction_length: float
    avg_output_length: float
    instruction_length_histogram: dict[str, int]
    output_length_histogram: dict[str, int]

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def compute_stats(instances: list[ToolUseInstance], tools: Mapping[str, ToolSpec] | None = None) -> CorpusStats:
    """Corpus-level counts and averages; lengths are whitespace-delimited words.

    Averages are exact rationals rounded half-up to two decimals. Category and
    function counts need the toolset and are ``None`` without it.
    """
    if not instances:
        raise ValueError("cannot compute statistics of an empty corpus")
    n = len(instances)
    names = sorted({i.tool_name for i in instances})
    instr_lengths = [word_count(i.instruction.text) for i in instances]
    output_lengths = [word_count(i.final_response) for i in instances]
    steps = [i.steps for i in instances]

    categories = avg_functions = None
    if tools is not None:
        present = [tools[name] for name in names if name in tools]
        categories = len({t.category for t in present})
        if present:
            avg_functions = round_half_up(Fraction(sum(len(t.functions) for t in present), len(present)), 2)

    return CorpusStats(
        tool_category_count=categories,
        tool_count=len(names),
        instance_count=n,
        single_call_count=sum(1 for s in steps if s == 1),
        multi_call_count=sum(1 for s in steps if s >= 2),
        zero_call_count=sum(1 for s in steps if s == 0),
        avg_functions_per_tool=avg_functions,
        avg_steps=round_half_up(Fraction(sum(steps), n), 2),
        avg_instruction_length=round_half_up(Fraction(sum(instr_lengths), n), 2),
        avg_output_length=round_half_up(Fraction(sum(output_lengths), n), 2),
        instruction_length_histogram=length_histogram(instr_lengths),
        output_length_histogram=length_histogram(output_lengths),
    )


# --- review sampling -------------------------------------------------------

REVIEW_QUESTIONS = (
    "Is the instruction solvable with this tool?",
    "Are the tool executor's responses effective, i.e. plausible and consistent with the documentation?",
    "Are the assistant's action sequence and final output accurate?",
)


def render_transcript(instance: ToolUseInstance) -> str:
    """Full ReAct transcript of an instance, ending with the final answer when there is one."""
    parts = [render_entry(e) for e in instance.entries()]
    if instance.outcome == "completed" and instance.final_response:
        parts.append(render_react_block(AssistantMove.finish(instance.final_thought, instance.final_response)))
    return "\n".join(parts)


@dataclass
class ReviewBundle:
    seed: int
    indices: list[int]
    instances: list[ToolUseInstance]

    def render_markdown(self, tools: Mapping[str, ToolSpec] | None = None) -> str:
        out = [f"# Corpus review sample\n\n{len(self.instances)} instances, sampling seed {self.seed}.\n"]
        for n, (idx, inst) in enumerate(zip(self.indices, self.instances), start=1):
            out.append(f"## {n}. {inst.tool_name} (corpus index {idx})\n")
            tool = tools.get(inst.tool_name) if tools else None
            if tool is not None:
                out.append(f"**Description.** {tool.description}\n")
                out.append("**Functions.**\n\n" + render_function_docs(tool.functions) + "\n")
            out.append(f"**Instruction** ({inst.instruction.style}). {inst.instruction.text}\n")
            out.append("```text\n" + render_transcript(inst) + "\n```\n")
            for q in REVIEW_QUESTIONS:
                out.append(f"- {q}  [ ] yes  [ ] no")
            out.append("")
        return "\n".join(out) + "\n"


def sample_for_review(instances: list[ToolUseInstance], n: int, seed: int = 0) -> ReviewBundle:
    if n < 0 or n > len(instances):
        raise ValueError(f"cannot sample {n} of {len(instances)} instances")
    indices = random.Random(seed).sample(range(len(instances)), n)
    return ReviewBundle(seed, indices, [instances[i] for i in indices])


# --- ablation subsampling --------------------------------------------------


class InfeasibleSample(ValueError):
    pass


def subsample_by_toolcount(
    instances: list[ToolUseInstance], tool_counts: list[int], total_instances: int, seed: int = 0
) -> list[list[ToolUseInstance]]:
    """For each k pick k tools uniformly, then ``total_instances`` instances spread
    round-robin over those tools (random order within each tool)."""
    by_tool: dict[str, list[ToolUseInstance]] = defaultdict(list)
    for inst in instances:
        by_tool[inst.tool_name].append(inst)
    names = sorted(by_tool)
    out = []
    for k in tool_counts:
        if k < 1 or k > len(names):
            raise InfeasibleSample(f"requested {k} tools but {len(names)} are available")
        if total_instances < k:
            raise InfeasibleSample(f"{total_instances} instances cannot cover {k} distinct tools")
        rng = random.Random(f"{seed}:{k}")
        chosen = sorted(rng.sample(names, k))
        available = sum(len(by_tool[name]) for name in chosen)
        if available < total_instances:
            raise InfeasibleSample(f"the {k} selected tools hold only {available} instances, {total_instances} requested")
        queues = []
        for name in chosen:
            pool = list(by_tool[name])
            rng.shuffle(pool)
            queues.append(pool)
        picked: list[ToolUseInstance] = []
        while len(picked) < total_instances:
            for queue in queues:
                if queue and len(picked) < total_instances:
                    picked.append(queue.pop())
        out.append(picked)
    return out


# --- serialization ---------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    line: int
    message: str


@dataclass
class Corpus:
    instances: list[ToolUseInstance] = field(default_factory=list)
    config_digest: str | None = None
    manifest_digest: str | None = None
    diagnostics: list[Diagnostic] = field(default_factory=list, compare=False)

    def header(self) -> dict[str, Any]:
        return {
            "format": CORPUS_FORMAT,
            "version": FORMAT_VERSION,
            "config_digest": self.config_digest,
            "manifest_digest": self.manifest_digest,
        }


def _line(data: dict[str, Any]) -> str:
    return json.dumps(data, sort_keys=True, ensure_ascii=False) + "\n"


class CorpusWriter:
    """Appends instances one line at a time, flushing each so a crash loses at most the one in flight."""

    def __init__(self, path: str | Path, config_digest: str | None = None, manifest_digest: str | None = None):
        self.path = Path(path)
        self._fh: IO[str] = open(self.path, "w", encoding="utf-8", newline="\n")
        self._fh.write(_line(Corpus(config_digest=config_digest, manifest_digest=manifest_digest).header()))
        self._commit()
        self.count = 0

    def _commit(self) -> None:
        self._fh.flush()
        os.fsync(self._fh.fileno())

    def append(self, instance: ToolUseInstance) -> None:
        self._fh.write(_line(instance.to_dict()))
        self._commit()
        self.count += 1

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> CorpusWriter:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def serialize(corpus: Corpus, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_line(corpus.header()))
        for inst in corpus.instances:
            fh.write(_line(inst.to_dict()))


def _check_header(data: Any, expected_format: str) -> dict[str, Any]:
    if not isinstance(data, dict) or data.get("format") != expected_format:
        raise CorpusFormatError(f"missing {expected_format} header", 1)
    if data.get("version") != FORMAT_VERSION:
        raise CorpusVersionError(
            f"file has format version {data.get('version')!r}, this reader supports {FORMAT_VERSION}", 1
        )
    return data


def deserialize(path: str | Path, lenient: bool = False) -> Corpus:
    """Load a corpus file. In lenient mode malformed lines become diagnostics."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.read().split("\n")
    if not lines or not lines[0].strip():
        raise CorpusFormatError("empty file, no header", 1)
    try:
        header = _check_header(json.loads(lines[0]), CORPUS_FORMAT)
    except json.JSONDecodeError as exc:
        raise CorpusFormatError(f"header is not JSON ({exc.msg})", 1) from exc
    corpus = Corpus(config_digest=header.get("config_digest"), manifest_digest=header.get("manifest_digest"))
    for number, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            corpus.instances.append(ToolUseInstance.from_dict(json.loads(line)))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, AttributeError) as exc:
            if not lenient:
                raise CorpusFormatError(f"malformed instance ({type(exc).__name__}: {exc})", number) from exc
            corpus.diagnostics.append(Diagnostic(number, f"{type(exc).__name__}: {exc}"))
    return corpus


def read_header(path: str | Path) -> dict[str, Any]:
    with open(path, encoding="utf-8") as fh:
        return json.loads(fh.readline())


# --- training export -------------------------------------------------------


def training_example(instance: ToolUseInstance, tool: ToolSpec) -> dict[str, str]:
    return {
        "tool_name": instance.tool_name,
        "instruction": instance.instruction.text,
        "prompt": assistant_prompt(tool, instance.instruction.text),
        "target": render_transcript(instance),
    }


def export_training_view(
    instances: list[ToolUseInstance],
    tools: Mapping[str, ToolSpec],
    path: str | Path,
    manifest_digest: str | None = None,
) -> int:
    """Write prompt/target pairs as JSON Lines after a header line; returns the example count."""
    header = {"format": TRAINING_FORMAT, "version": FORMAT_VERSION, "manifest_digest": manifest_digest}
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_line(header))
        for inst in instances:
            if inst.tool_name not in tools:
                raise KeyError(f"tool {inst.tool_name!r} is not in the toolset")
            fh.write(_line(training_example(inst, tools[inst.tool_name])))
    return len(instances)


def load_training_view(path: str | Path) -> list[dict[str, str]]:
    with open(path, encoding="utf-8") as fh:
        _check_header(json.loads(fh.readline()), TRAINING_FORMAT)
        return [json.loads(line) for line in fh if line.strip()]
