from __future__ import annotations

import json
import random

import pytest

from helpers import random_instance
from toolsim.agents import ActionRecord, ErrorKind, ExecutorResult, Instruction
from toolsim.corpus import (
    RULES,
    Corpus,
    CorpusFormatError,
    CorpusVersionError,
    CorpusWriter,
    FilterRules,
    InfeasibleSample,
    compute_stats,
    deserialize,
    export_training_view,
    filter_instances,
    length_histogram,
    load_training_view,
    read_header,
    rejection_rule,
    sample_for_review,
    serialize,
    subsample_by_toolcount,
)
from toolsim.react import AssistantMove, parse_transcript
from toolsim.simulation import ToolUseInstance

OK = ExecutorResult(200, "{}")
PARAM = ExecutorResult(400, "bad", ErrorKind.PARAMETER_ERROR)
INVALID = ExecutorResult(404, "no", ErrorKind.INVALID_ACTION)
PARSE = ExecutorResult(422, "parse", ErrorKind.PARSE_ERROR)
SERVER = ExecutorResult(503, "down", ErrorKind.SIMULATED_SERVER_ERROR)


def instance(observations, outcome="completed", tool="Nager.Date", instruction="list holidays", names=None):
    actions = [
        ActionRecord("t", (names or ["getHolidays"] * len(observations))[i], {}, obs, i + 1,
                     raw="Thought: t\nAction: f" if obs is PARSE else None)
        for i, obs in enumerate(observations)
    ]
    return ToolUseInstance(
        tool, Instruction(instruction, "command", tool), actions, "answer" if outcome == "completed" else "", outcome
    )


# --- filtering ---------------------------------------------------------------


@pytest.mark.parametrize(
    "inst, rule",
    [
        (instance([OK]), None),
        (instance([OK] * 5), None),
        (instance([OK] * 6), "step limit"),
        (instance([OK] * 3, outcome="step_limit"), "step limit"),
        (instance([OK], outcome="aborted"), "outcome"),
        (instance([PARAM, INVALID]), "no relevant call"),
        (instance([]), "no relevant call"),
        (instance([SERVER]), None),
        (instance([PARSE, OK]), None),
        (instance([OK, PARSE]), "parse error"),
        (instance([PARSE, PARAM, OK]), None),
        (instance([PARSE, SERVER]), "parse error"),
        (instance([PARSE] * 6), "step limit"),
    ],
)
def test_rejection_rules(inst, rule):
    assert rejection_rule(inst, FilterRules()) == rule


def test_relevance_uses_tool_function_names(holiday_tool):
    inst = instance([OK], names=["getWeather"])
    assert rejection_rule(inst, FilterRules()) is None
    assert rejection_rule(inst, FilterRules(), set(holiday_tool.function_names)) == "no relevant call"
    assert rejection_rule(instance([PARAM]), FilterRules(require_relevant_call=False)) is None
    assert rejection_rule(instance([OK, PARSE]), FilterRules(drop_parse_errors=False)) is None


def test_filter_partition_on_random_corpus():
    rng = random.Random(11)
    raw = [random_instance(rng) for _ in range(300)]
    kept, report = filter_instances(raw, FilterRules())
    assert report.raw == 300 and report.kept == len(kept)
    assert len(kept) + len(report.rejected) == 300 == report.kept + sum(report.counts.values())
    rejected_idx = {i for i, _, _ in report.rejected}
    assert [inst for i, inst in enumerate(raw) if i not in rejected_idx] == kept
    for i, tool, rule in report.rejected:
        assert rule in RULES and raw[i].tool_name == tool
        assert rejection_rule(raw[i], FilterRules()) == rule


def test_filter_rules_validation():
    with pytest.raises(ValueError):
        FilterRules(max_steps_kept=0)


# --- statistics --------------------------------------------------------------


def four_instances():
    words = lambda n: " ".join(["word"] * n)  # noqa: E731
    return [
        instance([OK], instruction=words(10)),
        instance([PARAM], instruction=words(20), tool="WeatherNow"),
        instance([OK, OK], instruction=words(30)),
        instance([PARSE, OK], instruction=words(40), tool="WeatherNow"),
    ]


def test_stats_hand_computed():
    stats = compute_stats(four_instances())
    assert (stats.single_call_count, stats.multi_call_count, stats.zero_call_count) == (2, 2, 0)
    assert stats.avg_instruction_length == 25.0
    assert stats.avg_steps == 1.5
    assert stats.avg_output_length == 1.0
    assert stats.tool_count == 2 and stats.instance_count == 4
    assert stats.tool_category_count is None and stats.avg_functions_per_tool is None
    assert stats.instruction_length_histogram == {"10-14": 1, "20-24": 1, "30-34": 1, "40-44": 1}


def test_stats_with_toolset(demo_tools):
    stats = compute_stats(four_instances(), demo_tools)
    assert stats.tool_category_count == 2
    assert stats.avg_functions_per_tool == 2.5


def test_stats_round_half_up():
    insts = [instance([OK] * n) for n in (1, 1, 2)]  # 4/3 steps
    assert compute_stats(insts).avg_steps == 1.33
    insts = [instance([OK] * n) for n in (1,) * 7 + (2,)]  # 9/8 = 1.125
    assert compute_stats(insts).avg_steps == 1.13


def test_stats_empty_corpus():
    with pytest.raises(ValueError):
        compute_stats([])


def test_histogram_buckets():
    assert length_histogram([0, 4, 5, 12]) == {"0-4": 2, "5-9": 1, "10-14": 1}


# --- review sampling -----------------------------------------------------------


def test_review_sample(demo_tools):
    rng = random.Random(2)
    raw = [random_instance(rng, list(demo_tools)) for _ in range(30)]
    bundle = sample_for_review(raw, 10, seed=4)
    assert len(set(bundle.indices)) == 10
    assert bundle.indices == sample_for_review(raw, 10, seed=4).indices
    full = sample_for_review(raw, 30, seed=1)
    assert sorted(full.indices) == list(range(30))
    text = bundle.render_markdown(demo_tools)
    assert text.count("[ ] yes  [ ] no") == 30
    assert "Is the instruction solvable" in text
    with pytest.raises(ValueError):
        sample_for_review(raw, 31)


# --- ablation --------------------------------------------------------------------


def per_tool(counts):
    out = []
    for name, n in counts.items():
        out += [instance([OK], tool=name, instruction=f"{name} {i}") for i in range(n)]
    return out


def test_ablation_round_robin_split():
    (sub,) = subsample_by_toolcount(per_tool({"A": 3, "B": 100}), [2], 10, seed=0)
    counts = {t: sum(1 for i in sub if i.tool_name == t) for t in "AB"}
    assert counts == {"A": 3, "B": 7}


def test_ablation_identity_and_reproducibility():
    corpus = per_tool({f"T{i}": 4 for i in range(6)})
    (sub,) = subsample_by_toolcount(corpus, [6], 12, seed=3)
    assert {i.tool_name for i in sub} == {f"T{i}" for i in range(6)}
    assert subsample_by_toolcount(corpus, [3], 9, seed=5) == subsample_by_toolcount(corpus, [3], 9, seed=5)
    assert len({id(i) for i in sub}) == 12


def test_ablation_infeasible():
    corpus = per_tool({"A": 1, "B": 1})
    with pytest.raises(InfeasibleSample):
        subsample_by_toolcount(corpus, [3], 2)
    with pytest.raises(InfeasibleSample):
        subsample_by_toolcount(corpus, [2], 5)
    with pytest.raises(InfeasibleSample):
        subsample_by_toolcount(corpus, [2], 1)


# --- serialization -----------------------------------------------------------------


def test_round_trip_and_header(tmp_path):
    rng = random.Random(5)
    corpus = Corpus([random_instance(rng) for _ in range(6)], "cfg", "man")
    path = tmp_path / "c.jsonl"
    serialize(corpus, path)
    assert deserialize(path) == corpus
    assert read_header(path) == {"format": "toolsim-corpus", "version": 1, "config_digest": "cfg", "manifest_digest": "man"}


def test_writer_matches_serialize(tmp_path):
    rng = random.Random(6)
    insts = [random_instance(rng) for _ in range(4)]
    with CorpusWriter(tmp_path / "a.jsonl", "cfg", "man") as w:
        for i in insts:
            w.append(i)
    serialize(Corpus(insts, "cfg", "man"), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_corrupted_line(tmp_path):
    rng = random.Random(7)
    path = tmp_path / "c.jsonl"
    serialize(Corpus([random_instance(rng) for _ in range(6)]), path)
    lines = path.read_text(encoding="utf-8").split("\n")
    lines[3] = lines[3][:-7]
    path.write_text("\n".join(lines), encoding="utf-8")
    with pytest.raises(CorpusFormatError) as info:
        deserialize(path)
    assert info.value.line == 4
    loaded = deserialize(path, lenient=True)
    assert len(loaded.instances) == 5
    assert [d.line for d in loaded.diagnostics] == [4]


def test_version_mismatch(tmp_path):
    path = tmp_path / "v2.jsonl"
    path.write_text(json.dumps({"format": "toolsim-corpus", "version": 2}) + "\n", encoding="utf-8")
    with pytest.raises(CorpusVersionError):
        deserialize(path)
    path.write_text('{"something": "else"}\n', encoding="utf-8")
    with pytest.raises(CorpusFormatError):
        deserialize(path, lenient=True)


def test_unknown_outcome_is_malformed(tmp_path):
    data = instance([OK]).to_dict()
    data["outcome"] = "finished"
    path = tmp_path / "c.jsonl"
    path.write_text(json.dumps({"format": "toolsim-corpus", "version": 1}) + "\n" + json.dumps(data) + "\n")
    assert deserialize(path, lenient=True).diagnostics[0].line == 2


# --- training export -------------------------------------------------------------


def test_training_export(tmp_path, demo_tools):
    inst = ToolUseInstance(
        "Nager.Date",
        Instruction("holidays in Japan 2024", "command", "Nager.Date"),
        [ActionRecord("need list", "getHolidays", {"country": "Japan", "year": 2024}, OK, 1)],
        "Here they are.",
        final_thought="done",
    )
    path = tmp_path / "train.jsonl"
    assert export_training_view([inst], demo_tools, path, "man") == 1
    (example,) = load_training_view(path)
    assert "Tool name: Nager.Date" in example["prompt"] and example["prompt"].rstrip().endswith("holidays in Japan 2024")
    target = example["target"]
    expected = {"Thought:": 2, "Action:": 1, "Action Input:": 1, "Observation:": 1, "Final Answer:": 1}
    for marker, n in expected.items():
        assert sum(line.startswith(marker) for line in target.splitlines()) == n
    steps = parse_transcript(target)
    assert steps[0].result == AssistantMove.act("need list", "getHolidays", {"country": "Japan", "year": 2024})
    assert steps[1].result == AssistantMove.finish("done", "Here they are.")


def test_training_export_recovers_action_sequence(tmp_path, demo_tools):
    rng = random.Random(9)
    insts = []
    while len(insts) < 40:
        inst = random_instance(rng, list(demo_tools))
        if inst.outcome == "completed" and all(a.raw is None for a in inst.actions):
            insts.append(inst)
    path = tmp_path / "train.jsonl"
    export_training_view(insts, demo_tools, path)
    for inst, example in zip(insts, load_training_view(path)):
        steps = parse_transcript(example["target"])
        acts = [s.result for s in steps if s.result.is_act]
        expected = [e.move() for e in inst.entries()]
        assert acts == expected


def test_empty_training_export(tmp_path, demo_tools):
    path = tmp_path / "train.jsonl"
    export_training_view([], demo_tools, path)
    assert load_training_view(path) == []
    assert len(path.read_text().splitlines()) == 1
