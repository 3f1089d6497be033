"""Command-line entry points for the extraction pipeline.

Exit codes: 0 on success, 1 when a stage finished with partial failures
(e.g. some abstracts got no response), 2 on configuration or I/O errors.
"""

from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .config import ConfigError, load_config
from .evaluation import GoldFormatError
from .lexicon import IndexFormatError, LexiconSourceError
from .pipeline import (
    PipelineError,
    StageResult,
    run_all,
    stage_build_lexicon,
    stage_evaluate,
    stage_extract,
    stage_fetch,
    stage_filter,
    stage_link,
    stage_report,
    workdir_lock,
)
from .prompting import BackendError, PromptStyle, TemplateError

_HARD_ERRORS = (
    ConfigError,
    PipelineError,
    GoldFormatError,
    LexiconSourceError,
    IndexFormatError,
    TemplateError,
    BackendError,
    OSError,
)

_STYLE_CHOICE = click.Choice([s.value for s in PromptStyle])


@click.group()
@click.option(
    "--config",
    "-c",
    "config_path",
    type=click.Path(path_type=Path),
    default=None,
    help="YAML config file.",
)
@click.option(
    "--workdir",
    type=click.Path(path_type=Path),
    default=None,
    help="Override the working directory for all artifacts.",
)
@click.option("--verbose", "-v", is_flag=True, help="Log at DEBUG level.")
@click.pass_context
def main(ctx: click.Context, config_path: Path | None, workdir: Path | None, verbose: bool) -> None:
    """Mine chemical food-safety hazards from scientific abstracts."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    ctx.obj = {"config_path": config_path, "workdir": workdir}


def _load(ctx: click.Context):
    opts = ctx.obj
    return load_config(opts["config_path"], workdir=opts["workdir"])


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    raise SystemExit(2)


def _describe(result: StageResult) -> str:
    if result.skipped:
        return f"{result.stage}: up to date"
    scalars = {k: v for k, v in result.counts.items() if not isinstance(v, (list, dict))}
    body = " ".join(f"{k}={v}" for k, v in scalars.items())
    return f"{result.stage}: {body}" if body else f"{result.stage}: done"


def _finish(results: list[StageResult]) -> None:
    for result in results:
        click.echo(_describe(result))
    if any(r.failures for r in results):
        raise SystemExit(1)


def _print_grid(rows: list[list[str]]) -> None:
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    for row in rows:
        click.echo("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())


@main.command()
@click.pass_context
def fetch(ctx: click.Context) -> None:
    """Download, clean and deduplicate the abstract corpus."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_fetch(cfg)
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command("build-lexicon")
@click.pass_context
def build_lexicon(ctx: click.Context) -> None:
    """Build the chemical-name surface index from the names dump."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_build_lexicon(cfg)
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command("filter")
@click.option("--food", required=True, help="Food of interest, e.g. leafy_greens.")
@click.pass_context
def filter_cmd(ctx: click.Context, food: str) -> None:
    """Select the abstracts mentioning a configured food."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_filter(cfg, food)
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command()
@click.option("--food", required=True, help="Food of interest.")
@click.option("--style", type=_STYLE_CHOICE, default=PromptStyle.STEP_BY_STEP.value)
@click.pass_context
def extract(ctx: click.Context, food: str, style: str) -> None:
    """Prompt the model on each filtered abstract, storing raw responses."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_extract(cfg, food, PromptStyle(style))
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command()
@click.option("--food", required=True, help="Food of interest.")
@click.option("--style", type=_STYLE_CHOICE, default=PromptStyle.STEP_BY_STEP.value)
@click.pass_context
def link(ctx: click.Context, food: str, style: str) -> None:
    """Parse stored responses and link hazard names to identifiers."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_link(cfg, food, PromptStyle(style))
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command()
@click.option("--food", required=True, help="Food of interest.")
@click.pass_context
def report(ctx: click.Context, food: str) -> None:
    """Write CSV and JSON hazard reports for every linked table of a food."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            result = stage_report(cfg, food)
    except _HARD_ERRORS as exc:
        _fail(exc)
    _finish([result])


@main.command()
@click.option("--gold", type=click.Path(path_type=Path), default=None, help="Gold judgments CSV.")
@click.option("--style", type=_STYLE_CHOICE, default=PromptStyle.STEP_BY_STEP.value)
@click.pass_context
def evaluate(ctx: click.Context, gold: Path | None, style: str) -> None:
    """Score linked tables against gold judgments and print the accuracy grid."""
    try:
        cfg = _load(ctx)
        gold_path = gold if gold is not None else cfg.gold_path
        if gold_path is None:
            raise PipelineError("no gold file: pass --gold or set evaluation.gold in the config")
        with workdir_lock(cfg.workdir):
            result, rows = stage_evaluate(cfg, gold_path, PromptStyle(style))
    except _HARD_ERRORS as exc:
        _fail(exc)
    _print_grid(rows)
    _finish([result])


@main.command("run-all")
@click.option("--food", required=True, help="Food of interest.")
@click.option("--style", type=_STYLE_CHOICE, default=PromptStyle.STEP_BY_STEP.value)
@click.pass_context
def run_all_cmd(ctx: click.Context, food: str, style: str) -> None:
    """Run fetch, build-lexicon, filter, extract, link, report and evaluate."""
    try:
        cfg = _load(ctx)
        with workdir_lock(cfg.workdir):
            results, rows = run_all(cfg, food, PromptStyle(style))
    except _HARD_ERRORS as exc:
        _fail(exc)
    if rows is not None:
        _print_grid(rows)
    _finish(results)


if __name__ == "__main__":
    main()
