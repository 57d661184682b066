"""Author the offline demo pack under fixtures/demo.

A rule-based responder plays every LLM role for three toy tools. The pipeline
runs once against it through a RecordingBackend, and the recorded exchanges
become the scripted fixtures that ``toolsim pipeline run`` replays.

    python3 scripts/build_demo_pack.py [--out fixtures/demo]
"""

from __future__ import annotations

import argparse
import json
import re
from pathlib import Path

from toolsim.backend import CallbackBackend, CompletionRequest, RecordingBackend, Role
from toolsim.cli import plan_pipeline
from toolsim.simulation import generate_raw_corpus
from toolsim.tools import build_toolset, load_seed_catalog

PIPELINE = {
    "seeds": "seeds.json",
    "backend": "scripted:fixtures.json",
    "out_dir": "out",
    "seed": 0,
    # Generation allows 8 steps so the planted 6-call episode completes and is
    # then rejected by the 5-step filter.
    "generate": {"max_steps": 8, "instructions_per_tool": 2},
    "filter": {"max_steps_kept": 5},
}


def fn(name, summary, method, path, params, returns):
    """params: (name, type, required, location, description)."""
    return {"name": name, "summary": summary, "method": method, "path": path, "params": params, "returns": returns}


TOOLS = {
    "Nager.Date": {
        "category": "Calendar",
        "introduction": "Public holidays for more than 90 countries",
        "description": (
            "Nager.Date is a public holiday service covering more than 90 countries. It lists the "
            "official holidays of a country for a given year, finds holidays by name or keyword and "
            "explains the background of individual holidays. It is useful for planning travel, "
            "scheduling work around days off, or answering questions about national celebrations."
        ),
        "server": "https://date.nager.at/api/v3",
        "functions": [
            fn("getHolidays", "List the public holidays of a country in a given year.", "get", "/holidays/{year}",
               [("country", "string", True, "query", "Country name or ISO code"),
                ("year", "integer", True, "path", "Four-digit year")],
               "Array of holidays with date, local name and English name."),
            fn("searchHolidays", "Find holidays whose name matches a keyword.", "get", "/holidays/search",
               [("query", "string", True, "query", "Keyword to look for"),
                ("country", "string", False, "query", "Restrict the search to one country")],
               "Array of matching holidays with their identifiers."),
            fn("getHolidayDetails", "Describe one holiday in detail.", "get", "/holidays/details/{holidayId}",
               [("holidayId", "string", True, "path", "Identifier returned by searchHolidays")],
               "Holiday name, dates, history and customs."),
        ],
        "instructions": {
            "command": "Give me the list of public holidays in Japan for 2024.",
            "question": "When is the next holiday that celebrates children, and how do people observe it?",
        },
    },
    "WeatherNow": {
        "category": "Weather",
        "introduction": "Current weather and short forecasts for cities worldwide",
        "description": (
            "WeatherNow reports current conditions and forecasts of up to a week for cities around the "
            "world. Observations include temperature, wind, humidity and a short summary, in metric or "
            "imperial units. Travellers, event planners and anyone choosing what to wear tomorrow can "
            "use it to compare places and plan ahead."
        ),
        "server": "https://api.weathernow.example/v1",
        "functions": [
            fn("getCurrentWeather", "Current conditions in a city.", "get", "/current",
               [("city", "string", True, "query", "City name"),
                ("units", "string", False, "query", "metric or imperial")],
               "Temperature, wind, humidity and a summary."),
            fn("getForecast", "Daily forecast for a city.", "get", "/forecast/{city}",
               [("city", "string", True, "path", "City name"),
                ("days", "integer", True, "query", "Number of days, 1 to 7")],
               "One entry per day with high, low and summary."),
        ],
        "instructions": {
            "command": "Tell me the current weather in Oslo in metric units.",
            "question": "What will the weather be like tomorrow in Paris, Berlin, Madrid, Rome, Vienna and Prague?",
        },
    },
    "FreeDictionary": {
        "category": "Dictionary",
        "introduction": "Definitions, phonetics and synonyms for English words",
        "description": (
            "FreeDictionary is an English dictionary service that returns definitions, phonetic "
            "spellings, example sentences and synonyms for a word. Writers looking for a better word, "
            "learners checking a meaning and word-game players can all use it to look up vocabulary "
            "quickly."
        ),
        "server": "https://api.freedictionary.example/v2",
        "functions": [
            fn("getDefinition", "Definitions and phonetics of a word.", "get", "/entries/{word}",
               [("word", "string", True, "path", "The English word")],
               "Phonetic spelling and definitions by part of speech."),
            fn("getSynonyms", "Synonyms of a word.", "get", "/synonyms/{word}",
               [("word", "string", True, "path", "The English word"),
                ("limit", "integer", False, "query", "Maximum number of synonyms")],
               "Array of synonyms ordered by relevance."),
        ],
        "instructions": {
            "command": "Define the word serendipity for me.",
            "question": "What are some synonyms for happy?",
        },
    },
}


def react(thought, action, params):
    return f"Thought: {thought}\nAction: {action}\nAction Input: {json.dumps(params)}"


def final(thought, answer):
    return f"Thought: {thought}\nFinal Answer: {answer}"


CITIES = ["Paris", "Berlin", "Madrid", "Rome", "Vienna", "Prague"]
FORECAST = {"Paris": (18, "light rain"), "Berlin": (15, "cloudy"), "Madrid": (27, "sunny"),
            "Rome": (24, "sunny"), "Vienna": (17, "showers"), "Prague": (16, "overcast")}

# Assistant turns per instruction, in order.
EPISODES = {
    TOOLS["Nager.Date"]["instructions"]["command"]: [
        react("I need to get the list of holidays in Japan for 2024.", "getHolidays", {"country": "Japan", "year": 2024}),
        final("I have the full list of holidays for Japan in 2024.",
              "The list of holidays in Japan for 2024 is: New Year's Day (Jan 1), Coming of Age Day (Jan 8), "
              "National Foundation Day (Feb 11), Emperor's Birthday (Feb 23), Vernal Equinox Day (Mar 20), "
              "Showa Day (Apr 29), Constitution Memorial Day (May 3), Greenery Day (May 4), Children's Day "
              "(May 5), Marine Day (Jul 15), Mountain Day (Aug 11), Respect for the Aged Day (Sep 16), "
              "Autumnal Equinox Day (Sep 22), Sports Day (Oct 14), Culture Day (Nov 3) and Labor "
              "Thanksgiving Day (Nov 23)."),
    ],
    TOOLS["Nager.Date"]["instructions"]["question"]: [
        react("Children's holidays differ by country, so I should ask which country the user means.",
              "ask_user", {"question": "Which country are you interested in?"}),
        react("The user is in Japan. I will search for a children's holiday there.",
              "searchHolidays", {"query": "children", "country": "Japan"}),
        react("Children's Day matches. I will fetch its details to explain the customs.",
              "getHolidayDetails", {"holidayId": "JP-2024-05-05"}),
        final("I know the date and the customs.",
              "The next children's holiday in Japan is Children's Day on May 5. Families fly carp-shaped "
              "koinobori streamers, display samurai dolls and eat kashiwa-mochi to wish children health."),
    ],
    TOOLS["WeatherNow"]["instructions"]["command"]: [
        # Malformed on purpose: the action input is missing, which the parser must report.
        "Thought: I should look up the current weather in Oslo.\nAction: getCurrentWeather",
        react("My previous step lacked the action input. I will call getCurrentWeather properly.",
              "getCurrentWeather", {"city": "Oslo", "units": "metric"}),
        final("I have the current conditions.", "It is currently 9 degrees Celsius and windy in Oslo, with light drizzle."),
    ],
    TOOLS["WeatherNow"]["instructions"]["question"]: [
        *[react(f"I need tomorrow's forecast for {c}.", "getForecast", {"city": c, "days": 1}) for c in CITIES],
        final("I have all six forecasts.",
              "Tomorrow: " + "; ".join(f"{c} {t}°C and {s}" for c, (t, s) in FORECAST.items()) + "."),
    ],
    TOOLS["FreeDictionary"]["instructions"]["command"]: [
        react("I will look up the definition of serendipity.", "getDefinition", {"term": "serendipity"}),
        react("The parameter is called word, not term. I will retry.", "getDefinition", {"word": "serendipity"}),
        final("I have the definition.",
              "Serendipity (/ˌsɛrənˈdɪpɪti/) is the occurrence of fortunate discoveries by chance."),
    ],
    TOOLS["FreeDictionary"]["instructions"]["question"]: [
        react("A thesaurus lookup should give synonyms.", "getThesaurus", {"word": "happy"}),
        react("There is no getThesaurus function; getSynonyms is the right one.", "getSynonyms", {"word": "happy", "limit": 5}),
        final("I have five synonyms.", "Some synonyms for happy are cheerful, joyful, content, glad and delighted."),
    ],
}

USER_REPLIES = {"Which country are you interested in?": "I live in Japan, so Japanese holidays please."}

EXECUTOR = {
    "GET https://date.nager.at/api/v3/holidays/2024?country=Japan": (200, json.dumps([
        {"date": d, "name": n} for d, n in [
            ("2024-01-01", "New Year's Day"), ("2024-01-08", "Coming of Age Day"),
            ("2024-02-11", "National Foundation Day"), ("2024-02-23", "Emperor's Birthday"),
            ("2024-03-20", "Vernal Equinox Day"), ("2024-04-29", "Showa Day"),
            ("2024-05-03", "Constitution Memorial Day"), ("2024-05-04", "Greenery Day"),
            ("2024-05-05", "Children's Day"), ("2024-07-15", "Marine Day"), ("2024-08-11", "Mountain Day"),
            ("2024-09-16", "Respect for the Aged Day"), ("2024-09-22", "Autumnal Equinox Day"),
            ("2024-10-14", "Sports Day"), ("2024-11-03", "Culture Day"), ("2024-11-23", "Labor Thanksgiving Day")]
    ])),
    "GET https://date.nager.at/api/v3/holidays/search?query=children&country=Japan": (
        200, json.dumps([{"holidayId": "JP-2024-05-05", "name": "Children's Day", "date": "2024-05-05"}])),
    "GET https://date.nager.at/api/v3/holidays/details/JP-2024-05-05": (200, json.dumps({
        "name": "Children's Day", "date": "2024-05-05",
        "customs": "Koinobori carp streamers, samurai dolls and kashiwa-mochi rice cakes."})),
    "GET https://api.weathernow.example/v1/current?city=Oslo&units=metric": (
        200, json.dumps({"temperature": 9, "wind_kph": 32, "summary": "light drizzle"})),
    **{
        f"GET https://api.weathernow.example/v1/forecast/{c}?days=1": (
            200, json.dumps([{"day": 1, "high": t, "summary": s}]))
        for c, (t, s) in FORECAST.items()
    },
    "GET https://api.freedictionary.example/v2/entries/serendipity": (200, json.dumps({
        "word": "serendipity", "phonetic": "/ˌsɛrənˈdɪpɪti/",
        "definitions": ["The occurrence of fortunate discoveries by chance."]})),
    "GET https://api.freedictionary.example/v2/synonyms/happy?limit=5": (
        200, json.dumps(["cheerful", "joyful", "content", "glad", "delighted"])),
}


def openapi_document(tool: dict) -> dict:
    paths: dict = {}
    for f in tool["functions"]:
        params = [
            {"name": n, "in": loc, "required": req, "description": d, "schema": {"type": t}}
            for n, t, req, loc, d in f["params"]
        ]
        paths.setdefault(f["path"], {})[f["method"]] = {
            "operationId": f["name"],
            "summary": f["summary"],
            "parameters": params,
            "responses": {
                "200": {"description": f["returns"], "content": {"application/json": {"schema": {"type": "object"}}}},
                "404": {"description": "Not found", "content": {"application/json": {"schema": {"type": "object"}}}},
            },
        }
    return {"openapi": "3.0.0", "info": {"title": "", "version": "1.0"}, "servers": [{"url": tool["server"]}],
            "paths": paths}


def function_docs(tool: dict) -> list[dict]:
    return [
        {"name": f["name"], "summary": f["summary"], "returns": f["returns"],
         "parameters": [{"name": n, "type": t, "required": r, "description": d} for n, t, r, _, d in f["params"]]}
        for f in tool["functions"]
    ]


def _field(prompt: str, label: str) -> str:
    m = re.search(rf"^{re.escape(label)}: (.*)$", prompt, re.MULTILINE)
    if m is None:
        raise KeyError(f"prompt has no {label!r} line")
    return m.group(1).strip()


def respond(request: CompletionRequest) -> str:
    p = request.prompt
    if request.role is Role.DOC_GENERATOR:
        tool = TOOLS[_field(p, "Tool name")]
        if "Expand the introduction" in p:
            return "Description: " + tool["description"]
        if "Propose the specific functions" in p:
            return "```json\n" + json.dumps(function_docs(tool), indent=2) + "\n```"
        doc = openapi_document(tool)
        doc["info"]["title"] = _field(p, "Tool name")
        return "```json\n" + json.dumps(doc, indent=2) + "\n```"
    if request.role is Role.USER_AGENT:
        if "The assistant now asks you:" in p:
            return USER_REPLIES[_field(p, "The assistant now asks you")]
        tool = TOOLS[_field(p, "Tool name")]
        style = re.search(r"Write \d+ different (\w+) instructions", p).group(1)
        return f"1. {tool['instructions'][style]}"
    if request.role is Role.ASSISTANT_AGENT:
        instruction, _, history = p.rpartition("\nQuestion: ")[2].partition("\n")
        turn = sum(1 for line in history.splitlines() if line.startswith("Observation: "))
        return EPISODES[instruction][turn]
    if request.role is Role.EXECUTOR_AGENT:
        line = p.split("\nRequest:\n", 1)[1].splitlines()[0]
        status, body = EXECUTOR[line]
        return f"Status Code: {status}\nResponse: {body}"
    raise KeyError(f"no demo responses for role {request.role.value}")


def gold_records() -> list[dict]:
    """Reference solutions for the six instructions, for the eval subcommands."""
    ref = {
        "Nager.Date": [
            [("getHolidays", {"country": "Japan", "year": 2024})],
            [("searchHolidays", {"query": "children", "country": "Japan"}),
             ("getHolidayDetails", {"holidayId": "JP-2024-05-05"})],
        ],
        "WeatherNow": [
            [("getCurrentWeather", {"city": "Oslo", "units": "metric"})],
            [("getForecast", {"city": c, "days": 1}) for c in CITIES],
        ],
        "FreeDictionary": [
            [("getDefinition", {"word": "serendipity"})],
            [("getSynonyms", {"word": "happy", "limit": 5})],
        ],
    }
    out = []
    for name, tool in TOOLS.items():
        for style, actions in zip(("command", "question"), ref[name]):
            instruction = tool["instructions"][style]
            answer = EPISODES[instruction][-1].split("Final Answer: ", 1)[1]
            out.append({"tool_name": name, "instruction": instruction, "final_answer": answer,
                        "actions": [{"function_name": f, "parameters": a} for f, a in actions]})
    return out


def write_pack(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = [{"name": n, "introduction": t["introduction"], "category": t["category"]} for n, t in TOOLS.items()]
    (out_dir / "seeds.json").write_text(json.dumps(seeds, indent=2) + "\n", encoding="utf-8")
    (out_dir / "pipeline.json").write_text(json.dumps(PIPELINE, indent=2) + "\n", encoding="utf-8")
    (out_dir / "gold.json").write_text(json.dumps(gold_records(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    # The fixture file referenced by the config must exist for planning to succeed.
    fixtures = out_dir / "fixtures.json"
    if not fixtures.exists():
        fixtures.write_text("[]\n", encoding="utf-8")

    plan = plan_pipeline(out_dir / "pipeline.json")
    recorder = RecordingBackend(CallbackBackend(respond, name="demo-author"))
    seed_rows, _ = load_seed_catalog(plan.seeds_path)
    tools, report = build_toolset(seed_rows, recorder)
    if report.skipped:
        raise SystemExit(f"demo tools failed to build: {report.skipped}")
    instances, _ = generate_raw_corpus(tools, plan.episode, recorder)
    if len(instances) != 6 or any(i.outcome != "completed" for i in instances):
        raise SystemExit("demo episodes did not all complete")
    recorder.dump(fixtures)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "fixtures" / "demo"))
    args = parser.parse_args()
    write_pack(Path(args.out))
    print(f"demo pack written to {args.out}")


if __name__ == "__main__":
    main()

