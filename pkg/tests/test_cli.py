from __future__ import annotations

import json

import pytest

import build_demo_pack
from conftest import DEMO
from toolsim.cli import main
from toolsim.corpus import deserialize, read_header


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture()
def piped(demo_copy, capsys):
    code, out, err = run(capsys, "pipeline", "run", demo_copy / "pipeline.json")
    assert code == 0, err
    return demo_copy / "out", out


def test_pipeline_run(piped):
    out_dir, printed = piped
    assert "3 tools, 6 raw instances, 5 kept" in printed and "rejected (step limit): 1" in printed
    names = {p.name for p in out_dir.iterdir()}
    assert names == {"toolset.json", "toolset.report.json", "raw.jsonl", "raw.report.json", "filtered.jsonl",
                     "rejections.json", "stats.json", "manifest.json"}
    manifest = json.loads((out_dir / "manifest.json").read_text())
    digest = manifest["manifest_digest"]
    assert read_header(out_dir / "raw.jsonl")["manifest_digest"] == digest
    assert read_header(out_dir / "filtered.jsonl")["manifest_digest"] == digest
    for name in ("stats.json", "rejections.json", "raw.report.json", "toolset.report.json"):
        assert json.loads((out_dir / name).read_text())["manifest_digest"] == digest
    assert len(manifest["outputs"]) == 7
    rejections = json.loads((out_dir / "rejections.json").read_text())
    assert rejections["rejected"] == [{"index": 3, "tool_name": "WeatherNow", "rule": "step limit"}]


def test_pipeline_is_reproducible(piped, capsys):
    out_dir, _ = piped
    before = {p.name: p.read_bytes() for p in out_dir.iterdir()}
    code, _, err = run(capsys, "pipeline", "run", out_dir.parent / "pipeline.json")
    assert code == 3 and "refusing to overwrite" in err
    for name in ("raw.jsonl", "filtered.jsonl", "stats.json", "manifest.json"):
        assert name in err
    forced = []
    for _ in range(2):
        assert run(capsys, "pipeline", "run", out_dir.parent / "pipeline.json", "--force")[0] == 0
        forced.append({p.name: p.read_bytes() for p in out_dir.iterdir()})
    stamps = ("started_at", "finished_at")
    manifests = [{k: v for k, v in json.loads(f.pop("manifest.json")).items() if k not in stamps} for f in forced]
    assert forced[0] == forced[1] and manifests[0] == manifests[1]
    # The command line is part of the manifest digest, so only headers differ from the first run.
    for name in ("raw.jsonl", "filtered.jsonl"):
        assert before[name].split(b"\n")[1:] == forced[0][name].split(b"\n")[1:]
    assert before["toolset.json"] == forced[0]["toolset.json"]


def test_conflicts_are_detected_before_the_backend_opens(piped, capsys):
    demo = piped[0].parent
    (demo / "fixtures.json").write_text("not json")
    code, _, err = run(capsys, "pipeline", "run", demo / "pipeline.json")
    assert code == 3 and "refusing to overwrite" in err


def test_missing_seed_file_fails_at_build(demo_copy, capsys):
    (demo_copy / "seeds.json").unlink()
    code, _, err = run(capsys, "pipeline", "run", demo_copy / "pipeline.json")
    assert code == 3 and "stage build" in err
    assert not (demo_copy / "out").exists()


@pytest.mark.parametrize(
    "patch, stage",
    [
        ({"generate": {"max_steps": 0}}, "generate"),
        ({"filter": {"max_steps_kept": 0}}, "filter"),
        ({"filter": {"max_step": 3}}, "filter"),
        ({"colour": "blue"}, "config"),
    ],
)
def test_config_errors_name_the_stage(demo_copy, capsys, patch, stage):
    path = demo_copy / "pipeline.json"
    path.write_text(json.dumps({**json.loads(path.read_text()), **patch}))
    code, _, err = run(capsys, "pipeline", "run", path)
    assert code == 3 and f"stage {stage}" in err
    assert not (demo_copy / "out").exists()


def test_usage_errors(capsys):
    assert run(capsys, "corpus", "frobnicate")[0] == 2
    assert run(capsys)[0] == 2
    assert run(capsys, "corpus", "filter")[0] == 2


def test_missing_backend_is_usage_error(demo_copy, capsys, tmp_path):
    code, _, err = run(capsys, "toolset", "build", "--seeds", demo_copy / "seeds.json", "--out", tmp_path / "t.json")
    assert code == 2 and "--backend" in err


def test_stepwise_commands(piped, capsys, tmp_path):
    out_dir, _ = piped
    demo = out_dir.parent
    toolset, raw = out_dir / "toolset.json", out_dir / "raw.jsonl"

    assert run(capsys, "toolset", "validate", toolset)[0] == 0
    broken = json.loads(toolset.read_text())
    broken[0]["openapi"]["paths"] = {}
    (tmp_path / "broken.json").write_text(json.dumps(broken))
    code, printed, _ = run(capsys, "toolset", "validate", tmp_path / "broken.json")
    assert code == 1 and "1 with problems" in printed

    code, _, _ = run(capsys, "toolset", "build", "--seeds", demo / "seeds.json", "--out", tmp_path / "tools.json",
                     "--backend", f"scripted:{demo / 'fixtures.json'}")
    assert code == 0 and (tmp_path / "tools.json").read_bytes() == toolset.read_bytes()

    code, _, _ = run(capsys, "corpus", "generate", "--toolset", toolset, "--out", tmp_path / "raw.jsonl",
                     "--config", demo / "pipeline.json.gen", "--backend", f"scripted:{demo / 'fixtures.json'}")
    assert code == 3  # config file absent

    (tmp_path / "gen.yaml").write_text("max_steps: 8\ninstructions_per_tool: 2\n")
    code, _, _ = run(capsys, "corpus", "generate", "--toolset", toolset, "--out", tmp_path / "raw.jsonl",
                     "--config", tmp_path / "gen.yaml", "--backend", f"scripted:{demo / 'fixtures.json'}")
    assert code == 0
    assert deserialize(tmp_path / "raw.jsonl").instances == deserialize(raw).instances

    code, printed, _ = run(capsys, "corpus", "filter", raw, "--out", tmp_path / "kept.jsonl", "--toolset", toolset)
    assert code == 0 and "kept 5 of 6" in printed
    assert json.loads((tmp_path / "kept.jsonl.rejections.json").read_text())["counts"]["step limit"] == 1

    code, printed, _ = run(capsys, "corpus", "stats", tmp_path / "kept.jsonl", "--toolset", toolset)
    stats = json.loads(printed)
    assert code == 0 and stats["avg_steps"] == 1.8 and stats["tool_category_count"] == 3

    code, _, _ = run(capsys, "corpus", "sample-review", raw, "--n", 3, "--out", tmp_path / "review.md", "--toolset", toolset)
    assert code == 0 and (tmp_path / "review.md").read_text().startswith("<!-- manifest ")
    assert run(capsys, "corpus", "sample-review", raw, "--n", 7, "--out", tmp_path / "r2.md")[0] == 3

    code, _, _ = run(capsys, "corpus", "ablate", raw, "--tool-counts", "2,3", "--total", 4, "--out-dir", tmp_path / "abl")
    assert code == 0 and len(deserialize(tmp_path / "abl" / "tools-3.jsonl").instances) == 4
    assert run(capsys, "corpus", "ablate", raw, "--tool-counts", "4", "--total", 4, "--out-dir", tmp_path / "abl2")[0] == 3
    assert run(capsys, "corpus", "ablate", raw, "--tool-counts", "x", "--total", 4, "--out-dir", tmp_path / "abl3")[0] == 2

    code, _, _ = run(capsys, "corpus", "export-training", tmp_path / "kept.jsonl", "--toolset", toolset,
                     "--out", tmp_path / "train.jsonl")
    assert code == 0 and len((tmp_path / "train.jsonl").read_text().splitlines()) == 6


def test_eval_commands(piped, capsys, tmp_path):
    out_dir, _ = piped
    demo = out_dir.parent
    code, printed, _ = run(capsys, "eval", "structured", "--pred", out_dir / "filtered.jsonl", "--gold", demo / "gold.json",
                           "--out", tmp_path / "s.json", "--model", "demo")
    assert code == 0 and "100.0" in printed and "40.0" in printed

    (tmp_path / "judge.json").write_text(json.dumps([{"role": "judge", "response": "Procedure: yes\nResponse: yes\nOverall: no"}]))
    # The scripted backend keys fixtures by prompt; a prompt-less entry cannot match, so the call fails cleanly.
    code, _, err = run(capsys, "eval", "judge", "--pred", out_dir / "filtered.jsonl", "--gold", demo / "gold.json",
                       "--tools", out_dir / "toolset.json", "--out", tmp_path / "j.json",
                       "--backend", f"scripted:{tmp_path / 'judge.json'}")
    assert code in (3, 4) and err

    code, printed, _ = run(capsys, "eval", "report", tmp_path / "s.json", "--out", tmp_path / "report.json")
    assert code == 0 and "SR_args" in printed
    assert json.loads((tmp_path / "report.json").read_text())["structured"]["groups"][0]["values"]["SR"] == 40.0


def test_demo_pack_regenerates_byte_for_byte(tmp_path):
    build_demo_pack.write_pack(tmp_path)
    for name in ("seeds.json", "pipeline.json", "gold.json", "fixtures.json"):
        assert (tmp_path / name).read_bytes() == (DEMO / name).read_bytes(), name
