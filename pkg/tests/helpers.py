"""Seeded generators shared by property tests and the acceptance suite."""

from __future__ import annotations

import itertools
import random
import string

from toolsim.agents import ActionRecord, ErrorKind, ExecutorResult, Instruction, UserExchange
from toolsim.react import ACTION, ACTION_INPUT, FINAL_ANSWER, THOUGHT, AssistantMove, _marker_at
from toolsim.simulation import ToolUseInstance

WORDS = "the holiday list year weather city word define search next forecast of in for and é ü 日本 Action: Thought:".split()


def random_text(rng: random.Random, max_words: int = 12, lines: int = 1, allow_empty: bool = False) -> str:
    while True:
        out = []
        for _ in range(rng.randint(1, lines)):
            words = [rng.choice(WORDS) for _ in range(rng.randint(0 if allow_empty else 1, max_words))]
            out.append(" ".join(words))
        text = "\n".join(out).strip()
        # Markers may appear mid-line but never at the start of a line.
        if any(_marker_at(line) for line in text.splitlines()):
            continue
        if text or allow_empty:
            return text


def random_json(rng: random.Random, depth: int = 0):
    kind = rng.randrange(8 if depth < 2 else 6)
    if kind == 0:
        return None
    if kind == 1:
        return rng.choice([True, False])
    if kind == 2:
        return rng.randint(-10**6, 10**6)
    if kind == 3:
        return rng.choice([0.5, -2.25, 1e-7, 3.0, 2.0, 1e21])
    if kind in (4, 5):
        return random_text(rng, 4, allow_empty=True) + rng.choice(["", "\n", "\t", '"', "\\", " "])
    if kind == 6:
        return [random_json(rng, depth + 1) for _ in range(rng.randint(0, 3))]
    return {random_key(rng): random_json(rng, depth + 1) for _ in range(rng.randint(0, 3))}


def random_key(rng: random.Random) -> str:
    return "".join(rng.choice(string.ascii_letters + "_ é") for _ in range(rng.randint(1, 8)))


def random_name(rng: random.Random) -> str:
    head = rng.choice(string.ascii_letters + "_")
    return head + "".join(rng.choice(string.ascii_letters + string.digits + "_.-") for _ in range(rng.randint(0, 15)))


def random_move(rng: random.Random) -> AssistantMove:
    thought = random_text(rng, lines=3, allow_empty=rng.random() < 0.1)
    if rng.random() < 0.7:
        params = {random_key(rng): random_json(rng) for _ in range(rng.randint(0, 4))}
        return AssistantMove.act(thought, random_name(rng), params)
    return AssistantMove.finish(thought, random_text(rng, lines=3))


def _segments(block: str) -> list[str]:
    segs: list[str] = []
    for line in block.split("\n"):
        if _marker_at(line) or not segs:
            segs.append(line)
        else:
            segs[-1] += "\n" + line
    return segs


def mutate_block(block: str, rng: random.Random) -> str:
    """Delete a marker, reorder segments or duplicate one; every result breaks the grammar."""
    segs = _segments(block)
    op = rng.choice(["delete", "reorder", "duplicate"])
    if op == "delete":
        i = rng.randrange(len(segs))
        marker = next(m for m in (THOUGHT, ACTION_INPUT, ACTION, FINAL_ANSWER) if segs[i].startswith(m))
        segs[i] = segs[i][len(marker):]
    elif op == "reorder":
        original = list(segs)
        while segs == original:
            rng.shuffle(segs)
    else:
        i = rng.randrange(len(segs))
        segs.insert(i + 1, segs[i])
    return "\n".join(segs)


def random_result(rng: random.Random) -> ExecutorResult:
    kind = rng.choice(list(ErrorKind))
    if kind is ErrorKind.NONE:
        status = rng.choice([200, 201, 204])
    else:
        status = rng.choice([400, 404, 422, 500, 503])
    warnings = tuple(random_text(rng, 4) for _ in range(rng.randint(0, 1)))
    return ExecutorResult(status, random_text(rng, 20, lines=2, allow_empty=True), kind, warnings)


def random_instance(rng: random.Random, tools: list[str] | None = None) -> ToolUseInstance:
    tool = rng.choice(tools or ["Nager.Date", "WeatherNow", "FreeDictionary", "日本語Tool"])
    seq = 0
    actions, exchanges = [], []
    for _ in range(rng.randint(0, 6)):
        seq += 1
        if rng.random() < 0.15:
            exchanges.append(UserExchange(random_text(rng), random_text(rng), random_text(rng, lines=2), seq))
            continue
        params = {random_key(rng): random_json(rng) for _ in range(rng.randint(0, 3))}
        raw = random_text(rng, lines=2) if rng.random() < 0.1 else None
        actions.append(ActionRecord(random_text(rng), random_name(rng), params, random_result(rng), seq, raw=raw))
    outcome = rng.choice(["completed", "completed", "step_limit", "aborted"])
    return ToolUseInstance(
        tool_name=tool,
        instruction=Instruction(random_text(rng, 30), rng.choice(["command", "question", "other"]), tool),
        actions=actions,
        final_response=random_text(rng, 30, lines=2) if outcome == "completed" else "",
        outcome=outcome,
        final_thought=random_text(rng, allow_empty=True),
        user_exchanges=exchanges,
        provenance={"episode_seed": rng.getrandbits(64), "instruction_index": rng.randint(0, 9), "backend": {"backend": "x"}},
        error="BackendError: boom" if outcome == "aborted" else None,
    )


# --- executor validation oracle -------------------------------------------

VALID_VALUE = {"string": "Japan", "integer": 2024, "number": 2.5, "boolean": True, "array": ["a"], "object": {"k": 1}}
# Several wrong values per type; bool must never pass for integer or number.
MISTYPED = {
    "string": [5, None, ["Japan"]],
    "integer": ["2024", 2024.5, True],
    "number": ["2.5", False, {"v": 2.5}],
    "boolean": [1, "true"],
    "array": ["a", {"0": "a"}],
    "object": [[1], "k=1"],
}
UNKNOWN_PARAM = "unexpectedExtra"


def perturbation_space(op):
    """Every combination of (absent | valid | each mistyped value) per parameter, with or without
    one unknown parameter, paired with the independently computed verdict."""
    choices = []
    for decl in op.parameters:
        options = [("absent", None), ("valid", VALID_VALUE[decl.type])]
        options += [("mistyped", v) for v in MISTYPED[decl.type]]
        choices.append([(decl, state, value) for state, value in options])
    for combo in itertools.product(*choices):
        for extra in (False, True):
            params = {d.name: v for d, state, v in combo if state != "absent"}
            if extra:
                params[UNKNOWN_PARAM] = "surprise"
            ok = not extra and all(
                state == "valid" or (state == "absent" and not d.required) for d, state, _ in combo
            )
            yield params, ok


def listed_perturbations(op):
    """The three named perturbation kinds applied one at a time to the complete valid call."""
    base = {d.name: VALID_VALUE[d.type] for d in op.parameters}
    yield "unperturbed", dict(base), True
    for d in op.parameters:
        if d.required:
            yield f"drop {d.name}", {k: v for k, v in base.items() if k != d.name}, False
    yield "add unknown", {**base, UNKNOWN_PARAM: 1}, False
    for d in op.parameters:
        for wrong in MISTYPED[d.type]:
            yield f"mistype {d.name}={wrong!r}", {**base, d.name: wrong}, False
