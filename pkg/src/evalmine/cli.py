"""Command-line entry point sequencing the pipeline stages.

Stages are resumable: each reads the previous stage's file from the
working directory and writes its own. Exit codes: 0 success, 1 stage
failure, 2 configuration problem.
"""
from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .analysis import PromptLabelMap
from .dblp import DblpClient
from .errors import ConfigError, EvalMineError
from .filtering import DEFAULT_KEYWORDS
from .gateway import (
    GatewayConfig,
    HttpBackend,
    LlmGateway,
    MockBackend,
    Transcript,
    WireFormat,
)
from .normalize import DatasetAliases
from .reporting import stats_text

logger = logging.getLogger(__name__)


def _build_gateway(config_path: str | None, transcript_path: str | None) -> LlmGateway:
    if transcript_path:
        transcript = Transcript.load(transcript_path)
        config = GatewayConfig(base_url="mock://replay", model_id="replay",
                               max_in_flight=1, retry_limit=0)
        return LlmGateway(MockBackend(transcript), config, sleep=lambda _: None)
    if not config_path:
        raise ConfigError("this stage needs --config (live gateway) or --gateway-transcript")
    raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
    wire = WireFormat.from_file(raw["wire_format"]) if "wire_format" in raw else WireFormat()
    config = GatewayConfig(
        base_url=raw["base_url"],
        model_id=raw["model_id"],
        api_key_env=raw.get("api_key_env", "EVALMINE_API_KEY"),
        max_in_flight=int(raw.get("max_in_flight", 4)),
        retry_limit=int(raw.get("retry_limit", 3)),
        timeout=float(raw.get("timeout", 60.0)),
        wire=wire,
    )
    return LlmGateway(HttpBackend(config), config)


def _stage(fn):
    """Map exceptions onto the documented exit codes."""
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            sys.exit(2)
        except (EvalMineError, OSError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


@click.group()
@click.option("--workdir", default="work", show_default=True,
              help="Directory holding stage outputs.")
@click.option("--config", "config_path", default=None,
              help="JSON gateway config for live LLM calls.")
@click.option("--gateway-transcript", default=None,
              help="Recorded transcript to replay instead of a live backend.")
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def main(ctx, workdir, config_path, gateway_transcript, seed, verbose):
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    ctx.obj = {
        "workdir": workdir,
        "config_path": config_path,
        "transcript": gateway_transcript,
        "seed": seed,
    }
    Path(workdir).mkdir(parents=True, exist_ok=True)


@main.command()
@click.option("--root", required=True, help="Corpus root of per-paper archives or directories.")
@click.option("--manifest", required=True, help="Sidecar metadata file (id<TAB>cats<TAB>title).")
@click.option("--from", "date_from", default="2301", show_default=True)
@click.option("--to", "date_to", default="2412", show_default=True)
@click.option("--categories", default="cs.CL,cs.AI,cs.LG,cs.CV", show_default=True)
@click.pass_obj
@_stage
def ingest(obj, root, manifest, date_from, date_to, categories):
    """Scan, filter, and flatten arXiv LaTeX sources."""
    cats = frozenset(c.strip() for c in categories.split(",") if c.strip())
    n_sources, n_skips = pipeline.stage_ingest(
        obj["workdir"], root, manifest, date_from, date_to, cats)
    click.echo(f"ingested {n_sources} papers ({n_skips} skipped)")


@main.command()
@click.option("--paper", default=None, help="Print this paper's candidates instead of writing.")
@click.pass_obj
@_stage
def tables(obj, paper):
    """Extract table environments from ingested papers."""
    if paper:
        papers = pipeline.load_papers(obj["workdir"])
        if paper not in papers:
            raise ConfigError(f"paper {paper} not in corpus")
        from .latex import extract_tables
        for candidate in extract_tables(papers[paper]):
            click.echo(f"[{candidate.table_index}] {candidate.caption or '(no caption)'}")
        return
    count = pipeline.stage_tables(obj["workdir"])
    click.echo(f"extracted {count} table candidates")


@main.command("filter")
@click.option("--keywords", default=",".join(sorted(DEFAULT_KEYWORDS)), show_default=True)
@click.pass_obj
@_stage
def filter_cmd(obj, keywords):
    """Keyword prefilter plus LLM leaderboard classification."""
    gateway = _build_gateway(obj["config_path"], obj["transcript"])
    keyword_set = frozenset(k.strip().lower() for k in keywords.split(",") if k.strip())
    kept = pipeline.stage_filter(obj["workdir"], gateway, keyword_set)
    click.echo(f"{kept} candidates kept for extraction")


@main.command()
@click.option("--force", is_flag=True, help="Redo units already extracted.")
@click.pass_obj
@_stage
def extract(obj, force):
    """Schema-driven extraction and context augmentation."""
    gateway = _build_gateway(obj["config_path"], obj["transcript"])
    count = pipeline.stage_extract(obj["workdir"], gateway, force=force)
    click.echo(f"wrote {count} new extraction rows")


@main.command()
@click.option("--force", is_flag=True)
@click.option("--aliases", "aliases_path", default=None)
@click.pass_obj
@_stage
def describe(obj, force, aliases_path):
    """Generate dataset descriptions (knowledge first, then grounded)."""
    gateway = _build_gateway(obj["config_path"], obj["transcript"])
    aliases = DatasetAliases.from_file(aliases_path) if aliases_path else None
    count = pipeline.stage_describe(obj["workdir"], gateway, aliases, force=force)
    click.echo(f"wrote {count} new descriptions")


@main.command()
@click.option("--aliases", "aliases_path", default=None,
              help="Extra dataset alias table (alias<TAB>canonical).")
@click.pass_obj
@_stage
def normalize(obj, aliases_path):
    """Whitelist metrics, canonicalize names, drop fine-tunes, dedup."""
    aliases = DatasetAliases.from_file(aliases_path) if aliases_path else None
    kept, rejected, conflicts = pipeline.stage_normalize(obj["workdir"], aliases)
    click.echo(f"kept {kept} records ({rejected} rejected, {conflicts} conflict groups)")


@main.command()
@click.option("--taxonomy", type=click.Choice(["skills", "reasoning"]), default="skills",
              show_default=True)
@click.option("--force", is_flag=True)
@click.pass_obj
@_stage
def categorize(obj, taxonomy, force):
    """Multi-label skill categorization of records."""
    gateway = _build_gateway(obj["config_path"], obj["transcript"])
    count = pipeline.stage_categorize(obj["workdir"], gateway, taxonomy, force=force)
    click.echo(f"categorized {count} records")


@main.command()
@click.option("--comparison", type=click.Choice(["cot", "icl", "more-shots", "joint"]),
              required=True)
@click.option("--labels", "labels_path", required=True,
              help="Prompt label map (string<TAB>cot|direct|cot_variant|other).")
@click.option("--resamples", default=100_000, show_default=True, type=int)
@click.option("--venue-filtered", is_flag=True,
              help="Also compute results over the DBLP peer-reviewed subset.")
@click.option("--correction-m", default=22, show_default=True, type=int)
@click.option("--reasoning-categories", is_flag=True,
              help="Group by the fine-grained reasoning taxonomy assignments.")
@click.pass_obj
@_stage
def analyze(obj, comparison, labels_path, resamples, venue_filtered, correction_m,
            reasoning_categories):
    """Matched-pair deltas, summaries, bootstrap significance."""
    labels = PromptLabelMap.load(labels_path)
    outputs = pipeline.stage_analyze(
        obj["workdir"], comparison, labels, seed=obj["seed"], resamples=resamples,
        venue_filtered=venue_filtered, dblp_client=DblpClient() if venue_filtered else None,
        correction_m=correction_m, use_reasoning_categories=reasoning_categories)
    click.echo(f"{outputs['pairs']} matched pairs for {comparison}")
    for key in ("joint_summary", "test_results"):
        if key in outputs:
            click.echo(f"wrote {outputs[key]}")


@main.command()
@click.option("--log-scale", is_flag=True, help="Kept for plotting scripts; counts are raw.")
@click.pass_obj
@_stage
def trend(obj, log_scale):
    """Quarterly evaluation-frequency counts per skill category."""
    out = pipeline.stage_trend(obj["workdir"])
    click.echo(f"wrote {out}")


@main.command()
@click.pass_obj
@_stage
def stats(obj):
    """Corpus statistics overview."""
    overview = pipeline.stage_stats(obj["workdir"])
    click.echo(stats_text(overview))


@main.command()
@click.pass_obj
@_stage
def report(obj):
    """Refresh stats and trend artifacts under reports/."""
    overview = pipeline.stage_stats(obj["workdir"])
    click.echo(stats_text(overview))
    try:
        out = pipeline.stage_trend(obj["workdir"])
        click.echo(f"wrote {out}")
    except (ConfigError, FileNotFoundError):
        click.echo("trend skipped (no category assignments yet)")


@main.command("sample-annotations")
@click.option("-n", "sample_size", default=40, show_default=True, type=int)
@click.pass_obj
@_stage
def sample_annotations(obj, sample_size):
    """Seeded per-paper record sample for human verification."""
    out = pipeline.stage_sample(obj["workdir"], sample_size, obj["seed"])
    click.echo(f"wrote {out}")


@main.command("import-released")
@click.argument("released_path")
@click.option("--mapping", "mapping_path", default=None,
              help="JSON with 'columns' and 'description_sources' overrides.")
@click.pass_obj
@_stage
def import_released(obj, released_path, mapping_path):
    """Load a published record dump into the native store schema."""
    kept, rejected = pipeline.stage_import(obj["workdir"], released_path, mapping_path)
    click.echo(f"imported {kept} records ({rejected} rejected)")


if __name__ == "__main__":
    main()
