"""Command line entry points.

Settings resolve in layers: built-in defaults, then an optional JSON config
file, then ECHOLOOP_* environment variables, then explicit flags.
"""
from __future__ import annotations

import json
import os
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import click

from .bench import (
    ablation_run,
    canonical_report,
    feasibility_metrics,
    format_ablation,
    format_report,
    measurement_mae,
    phase_frame_mae,
    report_to_json,
    run_benchmark,
)
from .domain import EchoStudy
from .errors import ConfigError, EchoLoopError
from .gateway import PolicyBackend
from .guidelines import build_index, build_reference_index, ingest_paths, reference_corpus
from .loop import TraceEvent, run_session
from .personas import AdversarialPolicy, MeasurementPolicy
from .sim import (
    DifficultyMix,
    SimConfig,
    generate_benchmark,
    generate_studies,
    load_benchmark,
    load_dataset,
    save_benchmark,
    save_dataset,
)
from .tools import ToolContext, build_registry
from .vision import named_noise


@dataclass(frozen=True)
class Settings:
    seed: int = 7
    study_count: int = 80
    noise: str = "zero"
    step_budget: int = 15


def load_settings(config_path: str | None, env: dict[str, str] | None = None) -> Settings:
    env = dict(os.environ if env is None else env)
    settings = Settings()
    if config_path:
        try:
            data = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise click.ClickException(f"cannot read config {config_path}: {exc}")
        unknown = set(data) - {f.name for f in fields(Settings)}
        if unknown:
            raise click.ClickException(f"unknown config keys: {sorted(unknown)}")
        settings = replace(settings, **data)
    for spec in fields(Settings):
        raw = env.get(f"ECHOLOOP_{spec.name.upper()}")
        if raw is None:
            continue
        value = int(raw) if spec.type == "int" else raw
        settings = replace(settings, **{spec.name: value})
    return settings


def _studies(dataset: str | None, settings: Settings) -> list[EchoStudy]:
    if dataset:
        return load_dataset(dataset)
    return generate_studies(SimConfig(seed=settings.seed, study_count=settings.study_count))


def _noise(name: str | None, settings: Settings, studies: list[EchoStudy]):
    try:
        return named_noise(name or settings.noise, settings.seed, studies)
    except ConfigError as exc:
        raise click.ClickException(str(exc))


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="JSON settings file.")
@click.option("--seed", type=int, default=None, help="Override the master seed.")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, seed: int | None) -> None:
    """Agentic echocardiography measurement runtime."""
    settings = load_settings(config_path)
    if seed is not None:
        settings = replace(settings, seed=seed)
    ctx.obj = settings


# ---------------------------------------------------------------------------
# data generation


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True, help="Dataset directory to write.")
@click.option("--studies", "study_count", type=int, default=None, help="Number of studies.")
@click.option("--with-pixels", is_flag=True, help="Also render schematic pixel payloads.")
@click.option("--bench", "bench_path", type=click.Path(), default=None, help="Also write a benchmark JSONL here.")
@click.option("--easy", type=int, default=25)
@click.option("--medium", type=int, default=21)
@click.option("--difficult", type=int, default=14)
@click.pass_obj
def generate(
    settings: Settings,
    out_dir: str,
    study_count: int | None,
    with_pixels: bool,
    bench_path: str | None,
    easy: int,
    medium: int,
    difficult: int,
) -> None:
    """Generate a synthetic dataset (and optionally a benchmark)."""
    config = SimConfig(
        seed=settings.seed,
        study_count=study_count or settings.study_count,
        with_pixels=with_pixels,
    )
    studies = generate_studies(config)
    save_dataset(studies, out_dir, config)
    click.echo(f"wrote {len(studies)} studies to {out_dir}")
    if bench_path:
        mix = DifficultyMix(easy=easy, medium=medium, difficult=difficult)
        cases, warnings = generate_benchmark(studies, mix=mix, seed=settings.seed)
        save_benchmark(cases, bench_path, mix=mix, seed=settings.seed)
        click.echo(f"wrote {len(cases)} cases to {bench_path}")
        for warning in warnings:
            click.echo(f"warning: {warning}", err=True)


@main.command()
@click.argument("sources", nargs=-1, type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path(), required=True, help="Index file to write.")
@click.option("--builtin/--no-builtin", default=True, help="Include the built-in reference corpus.")
def ingest(sources: tuple[str, ...], out_path: str, builtin: bool) -> None:
    """Build a guideline index from text files."""
    docs = list(reference_corpus()) if builtin else []
    docs.extend(ingest_paths(sources))
    if not docs:
        raise click.ClickException("nothing to index: no sources and --no-builtin")
    index = build_index(docs)
    index.save(out_path)
    click.echo(f"indexed {len(docs)} documents ({len(index.passages)} passages) -> {out_path}")


# ---------------------------------------------------------------------------
# interactive query


def _print_event(event: TraceEvent) -> None:
    if event.kind == "thought":
        click.echo(f"[{event.payload['step']}] thought  {event.payload['text']}")
    elif event.kind == "tool_call":
        parsed = event.payload.get("parsed")
        shown = json.dumps(parsed, sort_keys=True) if parsed else "<malformed>"
        click.echo(f"[{event.payload['step']}] call     {shown}")
    elif event.kind == "tool_result":
        click.echo(f"[{event.payload['step']}] result   {json.dumps(event.payload['result'], sort_keys=True)}")
    elif event.kind in ("finish", "forced_answer"):
        click.echo(f"--- {event.kind} ---")


@main.command()
@click.option("--study", "study_id", required=True, help="Study id, e.g. study_0003.")
@click.option("--question", required=True)
@click.option("--dataset", type=click.Path(exists=True), default=None, help="Dataset directory (default: regenerate).")
@click.option("--noise", type=str, default=None, help="zero | default | calibrated")
@click.option("--persona", type=click.Choice(["optimal", "adversarial"]), default="optimal")
@click.option("--budget", type=int, default=None, help="Step budget.")
@click.option("--feasibility/--no-feasibility", default=True)
@click.option("--retrieval/--no-retrieval", default=True)
@click.option("--trace/--no-trace", default=True, help="Print the step-by-step trace.")
@click.pass_obj
def query(
    settings: Settings,
    study_id: str,
    question: str,
    dataset: str | None,
    noise: str | None,
    persona: str,
    budget: int | None,
    feasibility: bool,
    retrieval: bool,
    trace: bool,
) -> None:
    """Run one question against one study and print the answer."""
    studies = _studies(dataset, settings)
    by_id = {s.study_id: s for s in studies}
    if study_id not in by_id:
        raise click.ClickException(f"no study {study_id!r}; try one of {sorted(by_id)[:5]} ...")
    study = by_id[study_id]
    profile = _noise(noise, settings, studies)
    registry = build_registry(include_feasibility=feasibility, include_retrieval=retrieval)
    context = ToolContext(
        study=study,
        noise=profile,
        guideline_index=build_reference_index() if retrieval else None,
    )
    backend = PolicyBackend(AdversarialPolicy(salt=settings.seed) if persona == "adversarial" else MeasurementPolicy())
    state = run_session(
        question=question,
        study=study,
        registry=registry,
        backend=backend,
        context=context,
        step_budget=budget or settings.step_budget,
        sink=_print_event if trace else None,
    )
    click.echo("")
    click.echo(f"status: {state.status.value} after {len(state.history)} steps")
    if state.answer:
        click.echo(f"answer: {state.answer.text}")
        if not state.answer.grounded:
            click.echo(f"ungrounded values: {list(state.answer.ungrounded_values)}")


# ---------------------------------------------------------------------------
# benchmarking


@main.group()
def bench() -> None:
    """Benchmark generation, runs, ablations and tool metrics."""


@bench.command("run")
@click.option("--cases", "cases_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--noise", type=str, default=None)
@click.option("--feasibility/--no-feasibility", default=True)
@click.option("--retrieval/--no-retrieval", default=True)
@click.option("--report", "report_path", type=click.Path(), default=None, help="Write the JSON report here.")
@click.pass_obj
def bench_run(
    settings: Settings,
    cases_path: str,
    dataset: str | None,
    noise: str | None,
    feasibility: bool,
    retrieval: bool,
    report_path: str | None,
) -> None:
    """Run a saved benchmark and print the scorecard."""
    studies = _studies(dataset, settings)
    cases = load_benchmark(cases_path)
    profile = _noise(noise, settings, studies)
    report = run_benchmark(
        cases,
        studies,
        noise=profile,
        include_feasibility=feasibility,
        include_retrieval=retrieval,
        step_budget=settings.step_budget,
    )
    click.echo(format_report(report))
    if report_path:
        Path(report_path).write_text(report_to_json(report), encoding="utf-8")
        click.echo(f"\nreport written to {report_path}")


@bench.command("ablate")
@click.option("--cases", "cases_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--noise", type=str, default=None)
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.pass_obj
def bench_ablate(
    settings: Settings, cases_path: str, dataset: str | None, noise: str | None, report_path: str | None
) -> None:
    """Run the four-way tool ablation over a saved benchmark."""
    studies = _studies(dataset, settings)
    cases = load_benchmark(cases_path)
    profile = _noise(noise, settings, studies)
    reports = ablation_run(cases, studies, noise=profile, step_budget=settings.step_budget)
    click.echo(format_ablation(reports))
    if report_path:
        doc = {label: canonical_report(report) for label, report in reports.items()}
        Path(report_path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        click.echo(f"\nreport written to {report_path}")


@bench.command("metrics")
@click.option("--dataset", type=click.Path(exists=True), default=None)
@click.option("--noise", type=str, default="default")
@click.pass_obj
def bench_metrics(settings: Settings, dataset: str | None, noise: str) -> None:
    """Evaluate the vision tools themselves against ground truth."""
    studies = _studies(dataset, settings)
    profile = _noise(noise, settings, studies)

    click.echo("measurement MAE (cm), all feasible frames:")
    for kind, (mae, count) in measurement_mae(studies, profile).items():
        if count:
            click.echo(f"  {kind.value:<22} {mae:6.3f}  (n={count})")

    phase = phase_frame_mae(studies, profile)
    click.echo("\nphase frame MAE (closest predicted frame):")
    for name, (mae, count) in phase.items():
        click.echo(f"  {name:<4} {mae:6.3f}  (n={count})")

    feas = feasibility_metrics(studies, profile)
    micro, macro = feas["micro"], feas["macro"]
    click.echo(f"\nfeasibility over {feas['frames']} key frames:")
    click.echo(f"  micro  precision {micro.precision:.3f}  recall {micro.recall:.3f}  f1 {micro.f1:.3f}")
    click.echo(f"  macro  precision {macro.precision:.3f}  recall {macro.recall:.3f}  f1 {macro.f1:.3f}")


# ---------------------------------------------------------------------------
# service


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8080)
@click.option("--studies", "study_count", type=int, default=None)
@click.pass_obj
def serve(settings: Settings, host: str, port: int, study_count: int | None) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service import create_app

    config = SimConfig(seed=settings.seed, study_count=study_count or settings.study_count)
    app = create_app(generate_studies(config))
    uvicorn.run(app, host=host, port=port)


def entrypoint() -> None:  # pragma: no cover - thin wrapper
    try:
        main(standalone_mode=True)
    except EchoLoopError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":  # pragma: no cover
    entrypoint()
