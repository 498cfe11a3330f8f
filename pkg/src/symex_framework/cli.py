"""
Command-line surface: analyze, replay, graph, query, compare
"""

import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
import structlog

from .agents.backends import AgentBackend, SingleAgentBackend, make_backend
from .agents.pipeline import AgentPipeline, PipelineOutcome, replay_output_dir
from .config import BackendKind, RunConfig, ToolchainMode, load_config
from .errors import SymexError
from .logging_setup import configure_logging
from .models import CveIdentity, CveSnippet, ExecutorSession, FileReport, KleeErrorRecord, SessionMode
from .report import (
    TIMINGS_FILE,
    average_seconds,
    baseline_summary_rows,
    classify_against_baseline,
    comparison_table,
    compute_metrics,
    cwe_table,
    dumps_timings,
    emit_report,
    load_baseline,
    load_reports,
    load_timings,
    metric_percentages,
    mode_comparison_rows,
    render_table,
    top_cves_table,
    write_report,
)
from .snippet_ingest import identity_from_name, load_corpus, load_snippet
from .vuln_graph import build_graph, dumps_jsonld, errors_by_cwe, export_jsonld, import_jsonld, top_cves

logger = structlog.get_logger(__name__)

PROG_NAME = "symex-pipeline"


@dataclass
class CliState:
    config: RunConfig
    out_dir: Path


def _apply_overrides(config: RunConfig, offline: bool, backend: Optional[str]) -> RunConfig:
    if offline:
        config = config.model_copy(update={
            "toolchain": config.toolchain.model_copy(update={"mode": ToolchainMode.OFFLINE}),
            "executor": config.executor.model_copy(update={"mode": SessionMode.REPLAY}),
        })
    if backend:
        config = config.model_copy(update={
            "backend": config.backend.model_copy(update={"kind": BackendKind(backend)}),
        })
    return config


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Run-config JSON file")
@click.option("--offline", is_flag=True, help="No compiler and no live executor: validate and replay only")
@click.option("--backend", type=click.Choice([k.value for k in BackendKind]), help="Agent backend")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=Path("symex-out"),
              show_default=True, help="Output directory")
@click.option("--log-level", default="WARNING", show_default=True)
@click.option("--log-json", is_flag=True, help="Emit logs as JSON lines")
@click.pass_context
def cli(ctx: click.Context, config_path: Optional[Path], offline: bool, backend: Optional[str],
        out_dir: Path, log_level: str, log_json: bool) -> None:
    """Rust CVE snippets to KLEE results, vulnerability graphs and reports"""
    configure_logging(log_level, log_json)
    try:
        config = load_config(config_path)
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--config") from e
    ctx.obj = CliState(config=_apply_overrides(config, offline, backend), out_dir=out_dir)


def _session_for(config: RunConfig, snippet: CveSnippet, replay_root: Path) -> ExecutorSession:
    if config.executor.mode == SessionMode.LIVE:
        command = config.executor.command.replace("{binary}", config.executor.resolve_binary())
        return ExecutorSession(mode=SessionMode.LIVE, executor_command=command)
    return ExecutorSession(mode=SessionMode.REPLAY, replay_dir=replay_root / snippet.slug)


def _write_corpus_outputs(out_dir: Path, outcomes: Sequence[PipelineOutcome], config: RunConfig) -> None:
    reports = [o.report for o in outcomes]
    metrics = compute_metrics(reports)
    write_report(emit_report(reports, metrics, confidence_weights=config.confidence_weights),
                 out_dir / "report.json")
    graph = build_graph((o.identity(), o.records) for o in outcomes)
    (out_dir / "graph.jsonld").write_text(dumps_jsonld(export_jsonld(graph)), encoding="utf-8")
    percentages = metric_percentages(metrics)
    click.echo(
        f"{metrics.files} files, {metrics.detected} detected ({percentages['detection_rate']}), "
        f"{metrics.total_critical} critical errors, compile rate {percentages['compile_rate']}, "
        f"fallback rate {percentages['fallback_rate']}"
    )


def _identity(report: FileReport) -> CveIdentity:
    return CveIdentity(cve_id=report.cve_id, cwe_id=report.cwe_id)


def _first_of_each_cve(identities: Sequence[CveIdentity]) -> Tuple[List[int], List[str]]:
    """Indices of the first identity per CVE id, and one message per later duplicate naming both origins"""
    seen: Dict[str, CveIdentity] = {}
    kept: List[int] = []
    messages: List[str] = []
    for index, identity in enumerate(identities):
        first = seen.setdefault(identity.cve_id, identity)
        if first is identity:
            kept.append(index)
        else:
            messages.append(f"duplicate {identity.cve_id}: {first.origin_path} and {identity.origin_path}")
    return kept, messages


@cli.command()
@click.argument("corpus_dir", type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--replay-root", type=click.Path(file_okay=False, path_type=Path),
              help="Directory holding one recorded KLEE output directory per snippet")
@click.option("--single-agent", is_flag=True, help="Skip planning and parameter selection (comparison mode)")
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
def analyze(state: CliState, corpus_dir: Path, replay_root: Optional[Path], single_agent: bool,
            out_dir: Optional[Path]) -> int:
    """Run the full pipeline over every snippet in CORPUS_DIR"""
    config = state.config
    out_dir = out_dir or state.out_dir
    replay_root = replay_root or config.executor.replay_root or corpus_dir / "klee_output"

    backend: AgentBackend = make_backend(config.backend, config.template_dir)
    if single_agent:
        backend = SingleAgentBackend(backend)
    pipeline = AgentPipeline(backend, config, out_dir)

    failures = 0
    snippets: List[CveSnippet] = []
    for path in load_corpus(corpus_dir):
        try:
            snippets.append(load_snippet(path))
        except SymexError as e:
            failures += 1
            click.echo(f"skipped {path.name}: {e}", err=True)

    kept, duplicates = _first_of_each_cve(snippets)
    snippets = [snippets[i] for i in kept]
    for message in duplicates:
        failures += 1
        click.echo(f"skipped {message}", err=True)

    workers = 1 if backend.serial_only else config.worker_bound
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(lambda s: pipeline.run(s, _session_for(config, s, replay_root)), snippets))

    failures += sum(1 for o in outcomes if o.report.failed_stage)
    for outcome in outcomes:
        if outcome.report.failed_stage:
            click.echo(f"{outcome.report.cve_id}: failed at {outcome.report.failed_stage}: "
                       f"{outcome.report.error_message}", err=True)
    if not outcomes:
        click.echo("no snippets analysed", err=True)
        click.get_current_context().exit(1)
    _write_corpus_outputs(out_dir, outcomes, config)
    (out_dir / TIMINGS_FILE).write_text(dumps_timings({o.report.cve_id: o.elapsed_s for o in outcomes}),
                                        encoding="utf-8")
    if failures:
        click.get_current_context().exit(1)
    return 0


def _expand_replay_dirs(dirs: Sequence[Path]) -> List[Path]:
    """A directory not named after a CVE is treated as a root of per-CVE output directories"""
    expanded: List[Path] = []
    for directory in dirs:
        if identity_from_name(directory.name) is None:
            children = sorted(p for p in directory.iterdir() if p.is_dir() and identity_from_name(p.name))
            if children:
                expanded.extend(children)
                continue
        expanded.append(directory)
    return expanded


def _write_file_outputs(out_dir: Path, identity: CveIdentity, outcome: PipelineOutcome) -> None:
    file_dir = out_dir / identity.slug
    file_dir.mkdir(parents=True, exist_ok=True)
    (file_dir / "records.json").write_text(
        json.dumps([r.model_dump(mode="json") for r in outcome.records], indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    (file_dir / "report.json").write_text(
        json.dumps(outcome.report.model_dump(mode="json"), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


@cli.command()
@click.argument("klee_out_dirs", nargs=-1, required=True,
                type=click.Path(exists=True, file_okay=False, path_type=Path))
@click.option("--out", "out_dir", type=click.Path(file_okay=False, path_type=Path), default=None)
@click.pass_obj
def replay(state: CliState, klee_out_dirs: Tuple[Path, ...], out_dir: Optional[Path]) -> int:
    """Parse recorded KLEE output directories named cwe-<n>-cve-<yyyy>-<nnnn>"""
    out_dir = out_dir or state.out_dir
    failures = 0
    outcomes: List[PipelineOutcome] = []
    identities: List[CveIdentity] = []
    for directory in _expand_replay_dirs(klee_out_dirs):
        identity = identity_from_name(directory.name)
        if identity is None:
            failures += 1
            click.echo(f"skipped {directory}: name does not match cwe-<n>-cve-<yyyy>-<nnnn>", err=True)
            continue
        identities.append(identity.model_copy(update={"origin_path": directory}))

    kept, duplicates = _first_of_each_cve(identities)
    for message in duplicates:
        failures += 1
        click.echo(f"skipped {message}", err=True)
    for identity in (identities[i] for i in kept):
        try:
            outcome = replay_output_dir(identity, identity.origin_path, state.config.confidence_weights)
            _write_file_outputs(out_dir, identity, outcome)
        except (SymexError, OSError) as e:
            failures += 1
            click.echo(f"{identity.cve_id}: {e}", err=True)
            continue
        summary = outcome.report.summary
        click.echo(f"{identity.cve_id}: ptr={summary.ptr_count} external={summary.external_count} "
                   f"critical_total={summary.critical_total}")
        outcomes.append(outcome)

    if outcomes:
        _write_corpus_outputs(out_dir, outcomes, state.config)
    if failures or not outcomes:
        click.get_current_context().exit(1)
    return 0


def _graph_inputs(source: Path) -> List[Tuple[CveIdentity, List[KleeErrorRecord]]]:
    """Pair each file report with the records.json persisted beside it"""
    if source.is_dir():
        source = source / "report.json"
    reports = load_reports(source)
    inputs = []
    for report in reports:
        identity = _identity(report)
        for candidate in (source.parent / identity.slug / "records.json", source.parent / "records.json"):
            if candidate.is_file():
                data = json.loads(candidate.read_text(encoding="utf-8"))
                records = [KleeErrorRecord.model_validate(r) for r in data]
                inputs.append((identity.model_copy(update={"origin_path": candidate}), records))
                break
        else:
            raise click.ClickException(f"no records.json found for {report.cve_id} next to {source}")
    return inputs


@cli.command()
@click.argument("source", type=click.Path(exists=True, path_type=Path))
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="JSON-LD output file (default: <out>/graph.jsonld)")
@click.pass_obj
def graph(state: CliState, source: Path, out_file: Optional[Path]) -> int:
    """Build the vulnerability graph from a report (or output directory) and export JSON-LD"""
    out_file = out_file or state.out_dir / "graph.jsonld"
    built = build_graph(_graph_inputs(source))
    out_file.parent.mkdir(parents=True, exist_ok=True)
    out_file.write_text(dumps_jsonld(export_jsonld(built)), encoding="utf-8")
    stats = built.stats()
    click.echo(render_table(["kind", "count"], sorted({**stats["nodes"], **stats["edges"]}.items())), nl=False)
    return 0


@cli.command()
@click.argument("graph_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("name", type=click.Choice(["errors-by-cwe", "top-cves"]))
@click.option("--n", "limit", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of a text table")
def query(graph_file: Path, name: str, limit: int, as_json: bool) -> int:
    """Run a named query against an exported graph"""
    try:
        loaded = import_jsonld(json.loads(graph_file.read_text(encoding="utf-8")))
    except (ValueError, SymexError) as e:
        raise click.ClickException(f"cannot load {graph_file}: {e}") from e
    if name == "errors-by-cwe":
        rows = errors_by_cwe(loaded)
        click.echo(json.dumps([r.model_dump() for r in rows], indent=2) if as_json else cwe_table(rows), nl=as_json)
    else:
        ranks = top_cves(loaded, limit)
        click.echo(json.dumps([r.model_dump() for r in ranks], indent=2) if as_json else top_cves_table(ranks),
                   nl=as_json)
    return 0


@cli.command()
@click.argument("report_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("baseline_file", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--single-agent-report", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Report from a --single-agent run, for the mode comparison table")
@click.option("--out", "out_file", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Write the report with its baseline comparison here")
@click.pass_obj
def compare(state: CliState, report_file: Path, baseline_file: Path, single_agent_report: Optional[Path],
            out_file: Optional[Path]) -> int:
    """Classify detections against a baseline map of CVE id -> warning count"""
    reports = load_reports(report_file)
    metrics = compute_metrics(reports)
    comparison = classify_against_baseline(reports, load_baseline(baseline_file))
    click.echo(comparison_table(comparison), nl=False)
    click.echo(render_table(["Metric", "Ours", "Baseline"], baseline_summary_rows(comparison, metrics)), nl=False)
    if single_agent_report is not None:
        rows = mode_comparison_rows(
            compute_metrics(load_reports(single_agent_report)),
            metrics,
            average_seconds(load_timings(single_agent_report)),
            average_seconds(load_timings(report_file)),
        )
        click.echo(render_table(["Metric", "Single-agent", "Four-agent"], rows), nl=False)
    if out_file is not None:
        document = emit_report(reports, metrics, comparison, state.config.confidence_weights)
        write_report(document, out_file)
    return 0


def cli_main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point returning an exit code: 0 ok, 1 file-level failure, 2 usage error"""
    args = list(sys.argv[1:] if argv is None else argv)
    if not args:
        click.echo(cli.get_help(click.Context(cli, info_name=PROG_NAME)), err=True)
        return 2
    try:
        result = cli.main(args=args, prog_name=PROG_NAME, standalone_mode=False)
    except click.UsageError as e:
        e.show()
        return 2
    except click.ClickException as e:
        e.show()
        return 1
    except click.Abort:
        return 1
    except SymexError as e:
        click.echo(f"error: {e}", err=True)
        return 1
    return int(result or 0)


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
