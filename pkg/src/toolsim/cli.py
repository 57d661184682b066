"""Command-line entry point: toolset, corpus, eval and pipeline subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Sequence

import yaml

from . import corpus as corpus_mod
from ._util import digest_of, text_digest
from .agents import LiveExecutor
from .backend import Backend, BackendError, ConfigError, LiveBackend, open_backend
from .corpus import Corpus, CorpusFormatError, CorpusWriter, FilterRules, InfeasibleSample
from .evaluation import (
    aggregate,
    judge_all,
    load_gold,
    load_results,
    pair_with_gold,
    save_results,
    score_structured,
)
from .simulation import EpisodeConfig, generate_raw_corpus
from .tools import (
    CatalogError,
    ToolSpec,
    build_toolset,
    dump_toolset,
    load_seed_catalog,
    load_toolset,
    sample_seeds,
    validate_toolset,
)

logger = logging.getLogger("toolsim")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUNTIME = 4


class UsageError(Exception):
    pass


class CliConfigError(Exception):
    pass


class StageError(Exception):
    def __init__(self, stage: str, message: str, code: int = EXIT_RUNTIME):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_help()}")


# --- manifests -------------------------------------------------------------


def file_digest(path: str | Path) -> str:
    return text_digest(Path(path).read_text(encoding="utf-8"))


@dataclass
class RunManifest:
    command: list[str]
    config_digests: dict[str, str] = field(default_factory=dict)
    input_digests: dict[str, str] = field(default_factory=dict)
    backend: dict[str, str] = field(default_factory=dict)
    toolset_digest: str | None = None
    outputs: dict[str, str] = field(default_factory=dict)
    started_at: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat())
    finished_at: str | None = None

    @property
    def digest(self) -> str:
        """Identity of the run: what was asked for and with which inputs, not when."""
        return digest_of([self.command, self.config_digests, self.input_digests, self.backend])

    def record(self, path: str | Path) -> None:
        self.outputs[str(path)] = file_digest(path)

    def write(self, path: str | Path) -> None:
        self.finished_at = datetime.now(timezone.utc).isoformat()
        data = {"manifest_digest": self.digest, **self.__dict__}
        Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def manifest_path(out: str | Path) -> Path:
    out = Path(out)
    return out.with_name(out.name + ".manifest.json")


def check_outputs(paths: Sequence[Path], force: bool) -> None:
    existing = [str(p) for p in paths if p.exists()]
    if existing and not force:
        raise CliConfigError("refusing to overwrite existing outputs (use --force): " + ", ".join(existing))


def write_json(path: str | Path, data: Any) -> None:
    Path(path).write_text(json.dumps(data, indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")


def _backend_inputs(selector: str) -> dict[str, str]:
    kind, _, target = selector.partition(":")
    return {f"backend:{kind}": file_digest(target)} if Path(target).is_file() else {}


def _clock_for(backend: Backend) -> Callable[[], float] | None:
    # Scripted runs stay byte-for-byte reproducible; wall-clock stamps only for live runs.
    return time.time if isinstance(backend, LiveBackend) else None


def _load_mapping(path: str | Path) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise CliConfigError(f"cannot read config {path}: {exc}") from exc
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise CliConfigError(f"config {path} must be a mapping")
    return data


def _episode_config(data: dict[str, Any], seed: int | None = None) -> EpisodeConfig:
    data = dict(data)
    if seed is not None:
        data.setdefault("rng_seed", seed)
    try:
        return EpisodeConfig.from_dict(data)
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"invalid episode config: {exc}") from exc


def _filter_rules(data: dict[str, Any]) -> FilterRules:
    try:
        return FilterRules(**data)
    except (TypeError, ValueError) as exc:
        raise CliConfigError(f"invalid filter rules: {exc}") from exc


def _load_toolset(path: str | Path) -> list[ToolSpec]:
    try:
        return load_toolset(path)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliConfigError(f"cannot load toolset {path}: {exc}") from exc


def _load_corpus(path: str | Path, lenient: bool = False) -> Corpus:
    try:
        corpus = corpus_mod.deserialize(path, lenient=lenient)
    except OSError as exc:
        raise CliConfigError(f"cannot read corpus {path}: {exc}") from exc
    except CorpusFormatError as exc:
        raise CliConfigError(f"{path}: {exc}") from exc
    for d in corpus.diagnostics:
        logger.warning("%s line %d skipped: %s", path, d.line, d.message)
    return corpus


def _live_executor(path: str | None) -> LiveExecutor | None:
    if path is None:
        return None
    data = _load_mapping(path)
    return LiveExecutor(set(data.get("allowlist", [])), dict(data.get("headers", {})), float(data.get("timeout_s", 20)))


# --- toolset ---------------------------------------------------------------


def cmd_toolset_build(args: argparse.Namespace) -> int:
    out = Path(args.out)
    try:
        seeds, catalog_report = load_seed_catalog(args.seeds)
    except CatalogError as exc:
        raise CliConfigError(str(exc)) from exc
    if args.sample is not None and args.sample < 1:
        raise CliConfigError("--sample must be positive")
    backend = open_backend(_require_backend(args), verbose=args.verbose)
    report_path = out.with_name(out.name + ".report.json")
    check_outputs([out, report_path, manifest_path(out)], args.force)

    manifest = RunManifest(
        command=_command(args),
        config_digests={"sample": digest_of([args.sample, _seed(args)])},
        input_digests={"seeds": file_digest(args.seeds), **_backend_inputs(args.backend)},
        backend=backend.identifiers(),
    )
    chosen = sample_seeds(seeds, args.sample, _seed(args))
    tools, report = build_toolset(chosen, backend, parallelism=args.parallelism)
    out.write_text(dump_toolset(tools), encoding="utf-8")
    manifest.toolset_digest = file_digest(out)
    write_json(
        report_path,
        {
            "manifest_digest": manifest.digest,
            "sampled": [s.name for s in chosen],
            "built": report.built,
            "skipped": report.skipped,
            "catalog_skipped_rows": catalog_report.skipped,
            "catalog_duplicates": catalog_report.duplicates,
        },
    )
    manifest.record(out)
    manifest.record(report_path)
    manifest.write(manifest_path(out))
    print(f"built {len(tools)} of {len(chosen)} tools -> {out}")
    return EXIT_OK if tools else EXIT_RUNTIME


def cmd_toolset_validate(args: argparse.Namespace) -> int:
    tools = _load_toolset(args.path)
    problems = validate_toolset(tools)
    for name, found in problems.items():
        for p in found:
            print(f"{name}: {p}")
    print(f"{len(tools)} tools, {len(problems)} with problems")
    return EXIT_INVALID if problems else EXIT_OK


# --- corpus ----------------------------------------------------------------


def cmd_corpus_generate(args: argparse.Namespace) -> int:
    out = Path(args.out)
    tools = _load_toolset(args.toolset)
    if not tools:
        raise CliConfigError("toolset is empty")
    config_data = _load_mapping(args.config) if args.config else {}
    if args.parallelism is not None:
        config_data["parallelism"] = args.parallelism
    config = _episode_config(config_data, args.seed)
    live = _live_executor(args.live_allowlist)
    if config.mode == "live" and live is None:
        raise CliConfigError("live mode needs --live-allowlist")
    backend = open_backend(_require_backend(args), verbose=args.verbose)
    report_path = out.with_name(out.name + ".report.json")
    check_outputs([out, report_path, manifest_path(out)], args.force)

    manifest = RunManifest(
        command=_command(args),
        config_digests={"episode": config.digest()},
        input_digests={"toolset": file_digest(args.toolset), **_backend_inputs(args.backend)},
        backend=backend.identifiers(),
        toolset_digest=file_digest(args.toolset),
    )
    with CorpusWriter(out, config.digest(), manifest.digest) as writer:
        instances, report = generate_raw_corpus(
            tools, config, backend, sink=writer.append, live=live, clock=_clock_for(backend)
        )
    write_json(report_path, {"manifest_digest": manifest.digest, **report.to_dict()})
    manifest.record(out)
    manifest.record(report_path)
    manifest.write(manifest_path(out))
    print(f"generated {len(instances)} instances -> {out}")
    return EXIT_OK


def cmd_corpus_filter(args: argparse.Namespace) -> int:
    out = Path(args.out)
    raw = _load_corpus(args.corpus, args.lenient)
    tools = {t.name: t for t in _load_toolset(args.toolset)} if args.toolset else None
    rules = _filter_rules(
        {
            "max_steps_kept": args.max_steps,
            "require_relevant_call": not args.allow_irrelevant,
            "drop_parse_errors": not args.keep_parse_errors,
        }
    )
    rejections = out.with_name(out.name + ".rejections.json")
    check_outputs([out, rejections, manifest_path(out)], args.force)
    manifest = RunManifest(
        command=_command(args),
        config_digests={"filter": digest_of(rules.__dict__)},
        input_digests={"corpus": file_digest(args.corpus)},
    )
    if args.toolset:
        manifest.toolset_digest = file_digest(args.toolset)
    kept, report = corpus_mod.filter_instances(raw.instances, rules, tools)
    corpus_mod.serialize(Corpus(kept, raw.config_digest, manifest.digest), out)
    write_json(rejections, {"manifest_digest": manifest.digest, **report.to_dict()})
    manifest.record(out)
    manifest.record(rejections)
    manifest.write(manifest_path(out))
    print(f"kept {len(kept)} of {len(raw.instances)} instances -> {out}")
    for rule, n in report.counts.items():
        if n:
            print(f"  rejected ({rule}): {n}")
    return EXIT_OK


def cmd_corpus_stats(args: argparse.Namespace) -> int:
    loaded = _load_corpus(args.corpus, args.lenient)
    tools = {t.name: t for t in _load_toolset(args.toolset)} if args.toolset else None
    if not loaded.instances:
        raise CliConfigError(f"{args.corpus} holds no instances")
    stats = corpus_mod.compute_stats(loaded.instances, tools).to_dict()
    text = json.dumps(stats, indent=2, sort_keys=True)
    if args.out:
        out = Path(args.out)
        check_outputs([out, manifest_path(out)], args.force)
        manifest = RunManifest(command=_command(args), input_digests={"corpus": file_digest(args.corpus)})
        write_json(out, {"manifest_digest": manifest.digest, **stats})
        manifest.record(out)
        manifest.write(manifest_path(out))
    print(text)
    return EXIT_OK


def cmd_corpus_sample_review(args: argparse.Namespace) -> int:
    out = Path(args.out)
    loaded = _load_corpus(args.corpus, args.lenient)
    tools = {t.name: t for t in _load_toolset(args.toolset)} if args.toolset else None
    if args.n > len(loaded.instances) or args.n < 1:
        raise CliConfigError(f"--n must lie in [1, {len(loaded.instances)}]")
    check_outputs([out, manifest_path(out)], args.force)
    manifest = RunManifest(
        command=_command(args),
        config_digests={"sample": digest_of([args.n, _seed(args)])},
        input_digests={"corpus": file_digest(args.corpus)},
    )
    bundle = corpus_mod.sample_for_review(loaded.instances, args.n, _seed(args))
    out.write_text(f"<!-- manifest {manifest.digest} -->\n" + bundle.render_markdown(tools), encoding="utf-8")
    manifest.record(out)
    manifest.write(manifest_path(out))
    print(f"wrote {args.n} review items -> {out}")
    return EXIT_OK


def cmd_corpus_ablate(args: argparse.Namespace) -> int:
    loaded = _load_corpus(args.corpus, args.lenient)
    try:
        counts = [int(k) for k in args.tool_counts.split(",") if k.strip()]
    except ValueError as exc:
        raise UsageError(f"--tool-counts must be comma-separated integers: {exc}") from exc
    out_dir = Path(args.out_dir)
    outputs = [out_dir / f"tools-{k}.jsonl" for k in counts]
    check_outputs([*outputs, out_dir / "manifest.json"], args.force)
    manifest = RunManifest(
        command=_command(args),
        config_digests={"ablate": digest_of([counts, args.total, _seed(args)])},
        input_digests={"corpus": file_digest(args.corpus)},
    )
    try:
        subs = corpus_mod.subsample_by_toolcount(loaded.instances, counts, args.total, _seed(args))
    except InfeasibleSample as exc:
        raise CliConfigError(str(exc)) from exc
    out_dir.mkdir(parents=True, exist_ok=True)
    for k, sub, path in zip(counts, subs, outputs):
        corpus_mod.serialize(Corpus(sub, loaded.config_digest, manifest.digest), path)
        manifest.record(path)
        print(f"{k} tools, {len(sub)} instances -> {path}")
    manifest.write(out_dir / "manifest.json")
    return EXIT_OK


def cmd_corpus_export_training(args: argparse.Namespace) -> int:
    out = Path(args.out)
    loaded = _load_corpus(args.corpus, args.lenient)
    tools = {t.name: t for t in _load_toolset(args.toolset)}
    missing = sorted({i.tool_name for i in loaded.instances} - set(tools))
    if missing:
        raise CliConfigError(f"tools missing from toolset: {', '.join(missing)}")
    check_outputs([out, manifest_path(out)], args.force)
    manifest = RunManifest(
        command=_command(args),
        input_digests={"corpus": file_digest(args.corpus)},
        toolset_digest=file_digest(args.toolset),
    )
    n = corpus_mod.export_training_view(loaded.instances, tools, out, manifest.digest)
    manifest.record(out)
    manifest.write(manifest_path(out))
    print(f"exported {n} training examples -> {out}")
    return EXIT_OK


# --- eval ------------------------------------------------------------------


def _predictions_and_gold(args: argparse.Namespace):
    preds = _load_corpus(args.pred, getattr(args, "lenient", False)).instances
    try:
        gold = load_gold(args.gold)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise CliConfigError(f"cannot load gold file {args.gold}: {exc}") from exc
    pairs, unmatched = pair_with_gold(preds, gold)
    for p in unmatched:
        logger.warning("no gold record for %s: %s", p.tool_name, p.instruction.text)
    if not pairs:
        raise CliConfigError("no prediction matches a gold record")
    return pairs


def _labels(args: argparse.Namespace) -> dict[str, str]:
    labels = {}
    if args.model:
        labels["model"] = args.model
    if args.subset:
        labels["subset"] = args.subset
    return labels


def cmd_eval_judge(args: argparse.Namespace) -> int:
    out = Path(args.out)
    pairs = _predictions_and_gold(args)
    tools = {t.name: t for t in _load_toolset(args.tools)}
    missing = sorted({p.tool_name for p, _ in pairs} - set(tools))
    if missing:
        raise CliConfigError(f"tools missing from toolset: {', '.join(missing)}")
    backend = open_backend(_require_backend(args), verbose=args.verbose)
    check_outputs([out, manifest_path(out)], args.force)
    manifest = RunManifest(
        command=_command(args),
        input_digests={"pred": file_digest(args.pred), "gold": file_digest(args.gold), **_backend_inputs(args.backend)},
        backend=backend.identifiers(),
        toolset_digest=file_digest(args.tools),
    )
    results = judge_all(pairs, tools, backend, parallelism=args.parallelism)
    labels = _labels(args)
    for r in results:
        r.labels = dict(labels)
    save_results(results, out, {**labels, "manifest_digest": manifest.digest})
    manifest.record(out)
    manifest.write(manifest_path(out))
    print(aggregate(results).render_text(), end="")
    return EXIT_OK


def cmd_eval_structured(args: argparse.Namespace) -> int:
    out = Path(args.out)
    pairs = _predictions_and_gold(args)
    check_outputs([out, manifest_path(out)], args.force)
    manifest = RunManifest(
        command=_command(args), input_digests={"pred": file_digest(args.pred), "gold": file_digest(args.gold)}
    )
    scored = [score_structured(p, g) for p, g in pairs if g.actions]
    skipped = len(pairs) - len(scored)
    if skipped:
        logger.warning("skipped %d gold records without tool calls", skipped)
    if not scored:
        raise CliConfigError("no gold record has tool calls to score against")
    labels = _labels(args)
    save_results(scored, out, {**labels, "manifest_digest": manifest.digest})
    manifest.record(out)
    manifest.write(manifest_path(out))
    print(aggregate(load_results(out)).render_text(), end="")
    return EXIT_OK


def cmd_eval_report(args: argparse.Namespace) -> int:
    results = []
    for path in args.results:
        try:
            results.extend(load_results(path))
        except (OSError, ValueError, KeyError) as exc:
            raise CliConfigError(f"cannot load results {path}: {exc}") from exc
    judge = [r for r in results if hasattr(r, "verdict")]
    structured = [r for r in results if not hasattr(r, "verdict")]
    tables = {}
    for name, group in (("judge", judge), ("structured", structured)):
        if group:
            table = aggregate(group)
            tables[name] = table.to_dict()
            print(table.render_text())
    if args.out:
        write_json(args.out, tables)
    return EXIT_OK


# --- pipeline --------------------------------------------------------------

PIPELINE_KEYS = {"seeds", "out_dir", "backend", "seed", "parallelism", "toolset", "generate", "filter"}


@dataclass
class PipelinePlan:
    seeds_path: Path
    out_dir: Path
    backend_selector: str
    seed: int
    sample: int | None
    build_parallelism: int
    episode: EpisodeConfig
    rules: FilterRules
    config_digest: str

    def outputs(self) -> dict[str, Path]:
        names = {
            "toolset": "toolset.json",
            "build_report": "toolset.report.json",
            "raw": "raw.jsonl",
            "run_report": "raw.report.json",
            "filtered": "filtered.jsonl",
            "rejections": "rejections.json",
            "stats": "stats.json",
            "manifest": "manifest.json",
        }
        return {k: self.out_dir / v for k, v in names.items()}


def plan_pipeline(config_path: str | Path, backend_override: str | None = None, seed_override: int | None = None) -> PipelinePlan:
    """Resolve and validate the whole layered config before anything runs.

    Top-level ``backend``, ``seed`` and ``parallelism`` apply to every stage
    unless a stage section sets its own.
    """
    config_path = Path(config_path)
    data = _load_mapping(config_path)
    unknown = set(data) - PIPELINE_KEYS
    if unknown:
        raise StageError("config", f"unknown keys {sorted(unknown)}", EXIT_CONFIG)
    base = config_path.parent

    def resolve(p: str) -> Path:
        path = Path(p)
        return path if path.is_absolute() else base / path

    seed = seed_override if seed_override is not None else int(data.get("seed", 0))
    shared = {"parallelism": data.get("parallelism", 1)}
    toolset_cfg = {**shared, **(data.get("toolset") or {})}
    generate_cfg = {**shared, "rng_seed": seed, **(data.get("generate") or {})}
    backend_sel = backend_override or generate_cfg.pop("backend", None) or data.get("backend")
    if not backend_sel:
        raise StageError("config", "no backend selector", EXIT_CONFIG)
    kind, sep, target = backend_sel.partition(":")
    if sep and target and not Path(target).is_absolute():
        backend_sel = f"{kind}:{resolve(target)}"

    if "seeds" not in data:
        raise StageError("build", "config names no seed catalog", EXIT_CONFIG)
    seeds_path = resolve(data["seeds"])
    if not seeds_path.is_file():
        raise StageError("build", f"seed catalog not found: {seeds_path}", EXIT_CONFIG)
    try:
        episode = EpisodeConfig.from_dict(generate_cfg)
    except (TypeError, ValueError) as exc:
        raise StageError("generate", f"invalid config: {exc}", EXIT_CONFIG) from exc
    try:
        rules = FilterRules(**(data.get("filter") or {}))
    except (TypeError, ValueError) as exc:
        raise StageError("filter", f"invalid config: {exc}", EXIT_CONFIG) from exc
    unknown_build = set(toolset_cfg) - {"sample", "parallelism"}
    if unknown_build:
        raise StageError("build", f"unknown keys {sorted(unknown_build)}", EXIT_CONFIG)
    return PipelinePlan(
        seeds_path=seeds_path,
        out_dir=resolve(data.get("out_dir", "out")),
        backend_selector=backend_sel,
        seed=seed,
        sample=toolset_cfg.get("sample"),
        build_parallelism=int(toolset_cfg.get("parallelism", 1)),
        episode=episode,
        rules=rules,
        config_digest=file_digest(config_path),
    )


def run_pipeline(plan: PipelinePlan, command: list[str], force: bool = False, verbose: bool = False) -> dict[str, Any]:
    """Build, generate, filter and summarize; stops at the first failing stage."""
    outputs = plan.outputs()
    check_outputs(list(outputs.values()), force)
    try:
        seeds, _ = load_seed_catalog(plan.seeds_path)
    except CatalogError as exc:
        raise StageError("build", str(exc), EXIT_CONFIG) from exc
    try:
        backend = open_backend(plan.backend_selector, verbose=verbose)
    except BackendError as exc:
        raise StageError("config", str(exc), EXIT_CONFIG) from exc

    manifest = RunManifest(
        command=command,
        config_digests={
            "pipeline": plan.config_digest,
            "episode": plan.episode.digest(),
            "filter": digest_of(plan.rules.__dict__),
        },
        input_digests={"seeds": file_digest(plan.seeds_path), **_backend_inputs(plan.backend_selector)},
        backend=backend.identifiers(),
    )
    plan.out_dir.mkdir(parents=True, exist_ok=True)

    chosen = sample_seeds(seeds, plan.sample, plan.seed)
    try:
        tools, build_report = build_toolset(chosen, backend, parallelism=plan.build_parallelism)
    except BackendError as exc:
        raise StageError("build", str(exc)) from exc
    if not tools:
        raise StageError("build", "no tool survived toolset construction: " + json.dumps(build_report.skipped))
    outputs["toolset"].write_text(dump_toolset(tools), encoding="utf-8")
    write_json(outputs["build_report"], {"manifest_digest": manifest.digest, "built": build_report.built,
                                         "skipped": build_report.skipped})
    manifest.toolset_digest = file_digest(outputs["toolset"])

    try:
        with CorpusWriter(outputs["raw"], plan.episode.digest(), manifest.digest) as writer:
            raw, run_report = generate_raw_corpus(
                tools, plan.episode, backend, sink=writer.append, clock=_clock_for(backend)
            )
    except (BackendError, ValueError) as exc:
        raise StageError("generate", str(exc)) from exc
    write_json(outputs["run_report"], {"manifest_digest": manifest.digest, **run_report.to_dict()})

    by_name = {t.name: t for t in tools}
    kept, rejections = corpus_mod.filter_instances(raw, plan.rules, by_name)
    corpus_mod.serialize(Corpus(kept, plan.episode.digest(), manifest.digest), outputs["filtered"])
    write_json(outputs["rejections"], {"manifest_digest": manifest.digest, **rejections.to_dict()})
    if not kept:
        raise StageError("stats", "filtering kept no instances")
    stats = corpus_mod.compute_stats(kept, by_name).to_dict()
    write_json(outputs["stats"], {"manifest_digest": manifest.digest, **stats})

    for key, path in outputs.items():
        if key != "manifest":
            manifest.record(path)
    manifest.write(outputs["manifest"])
    return {"tools": len(tools), "raw": len(raw), "kept": len(kept), "rejections": rejections.counts, "stats": stats}


def cmd_pipeline_run(args: argparse.Namespace) -> int:
    plan = plan_pipeline(args.config, args.backend, args.seed)
    summary = run_pipeline(plan, _command(args), force=args.force, verbose=args.verbose)
    print(
        f"{summary['tools']} tools, {summary['raw']} raw instances, {summary['kept']} kept -> {plan.out_dir}"
    )
    for rule, n in summary["rejections"].items():
        if n:
            print(f"  rejected ({rule}): {n}")
    return EXIT_OK


# --- wiring ----------------------------------------------------------------


def _command(args: argparse.Namespace) -> list[str]:
    return list(args._argv)


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _require_backend(args: argparse.Namespace) -> str:
    if not args.backend:
        raise UsageError("--backend is required for this command (scripted:<fixtures> or live:<config>)")
    return args.backend


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--backend", help="scripted:<fixture file> or live:<backend config>")
    common.add_argument("--seed", type=int, default=None, help="RNG seed for sampling and episodes")
    common.add_argument("--verbose", action="store_true", help="log provider exchanges")
    common.add_argument("--force", action="store_true", help="overwrite existing outputs")

    parser = _Parser(prog="toolsim", description=__doc__)
    groups = parser.add_subparsers(dest="group", metavar="{toolset,corpus,eval,pipeline}", parser_class=_Parser)
    groups.required = True

    def leaf(sub: Any, name: str, func: Callable[[argparse.Namespace], int], help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, parents=[common], help=help, description=help)
        p.set_defaults(func=func)
        return p

    toolset = groups.add_parser("toolset", help="build and validate toolsets").add_subparsers(dest="cmd", metavar="CMD")
    toolset.required = True
    p = leaf(toolset, "build", cmd_toolset_build, "expand seed introductions into full tool documentation")
    p.add_argument("--seeds", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sample", type=int, default=None, help="uniformly sample this many seeds")
    p.add_argument("--parallelism", type=int, default=1)
    p = leaf(toolset, "validate", cmd_toolset_validate, "check schemas, function coverage and textual content")
    p.add_argument("path")

    corpus = groups.add_parser("corpus", help="generate and process corpora").add_subparsers(dest="cmd", metavar="CMD")
    corpus.required = True
    p = leaf(corpus, "generate", cmd_corpus_generate, "simulate episodes for every tool")
    p.add_argument("--toolset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="episode config (JSON or YAML)")
    p.add_argument("--parallelism", type=int, default=None)
    p.add_argument("--live-allowlist", help="file listing base URLs live mode may call")
    p = leaf(corpus, "filter", cmd_corpus_filter, "apply step-limit, relevance and parse-error rules")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--toolset")
    p.add_argument("--max-steps", type=int, default=5)
    p.add_argument("--allow-irrelevant", action="store_true")
    p.add_argument("--keep-parse-errors", action="store_true")
    p.add_argument("--lenient", action="store_true")
    p = leaf(corpus, "stats", cmd_corpus_stats, "corpus statistics as JSON")
    p.add_argument("corpus")
    p.add_argument("--toolset")
    p.add_argument("--out")
    p.add_argument("--lenient", action="store_true")
    p = leaf(corpus, "sample-review", cmd_corpus_sample_review, "uniform sample rendered for human review")
    p.add_argument("corpus")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--out", required=True)
    p.add_argument("--toolset")
    p.add_argument("--lenient", action="store_true")
    p = leaf(corpus, "ablate", cmd_corpus_ablate, "fixed-size sub-corpora over varying tool counts")
    p.add_argument("corpus")
    p.add_argument("--tool-counts", required=True, help="comma-separated, e.g. 10,40,100,400")
    p.add_argument("--total", type=int, required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--lenient", action="store_true")
    p = leaf(corpus, "export-training", cmd_corpus_export_training, "prompt/target pairs for fine-tuning")
    p.add_argument("corpus")
    p.add_argument("--toolset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lenient", action="store_true")

    ev = groups.add_parser("eval", help="score transcripts").add_subparsers(dest="cmd", metavar="CMD")
    ev.required = True
    p = leaf(ev, "judge", cmd_eval_judge, "LLM-judge Procedure/Response/Overall verdicts")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--tools", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.add_argument("--subset")
    p.add_argument("--parallelism", type=int, default=1)
    p = leaf(ev, "structured", cmd_eval_structured, "thought/action/argument success rates against gold calls")
    p.add_argument("--pred", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--model")
    p.add_argument("--subset")
    p = leaf(ev, "report", cmd_eval_report, "aggregate result files into tables")
    p.add_argument("results", nargs="+")
    p.add_argument("--out")

    pipe = groups.add_parser("pipeline", help="run every stage from one config").add_subparsers(dest="cmd", metavar="CMD")
    pipe.required = True
    p = leaf(pipe, "run", cmd_pipeline_run, "build, generate, filter and summarize")
    p.add_argument("config")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CliConfigError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"pipeline failed at {exc}", file=sys.stderr)
        return exc.code
    except BackendError as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
