"""Command-line client for the changekit service.

Every subcommand is a thin wrapper over one service endpoint. Without
``--server`` the service runs in-process, so batch use needs no daemon;
with ``--server http://host:port`` the same requests go over the wire.

Exit codes: 0 success, 1 validation failure, 2 I/O failure, 3 model
endpoint failure.
"""

from __future__ import annotations

import json
import sys

import click
import httpx

EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_ENDPOINT = 3

_CATEGORY_EXIT = {"validation": EXIT_VALIDATION, "io": EXIT_IO, "endpoint": EXIT_ENDPOINT}


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    import warnings

    with warnings.catch_warnings():
        # starlette deprecates httpx here in favor of httpx2, which is not
        # installable from this index; the client keeps working on httpx
        warnings.filterwarnings("ignore", message="Using `httpx` with `starlette.testclient`")
        from starlette.testclient import TestClient

    from .service.app import app

    return TestClient(app, raise_server_exceptions=False)


def _post(ctx: click.Context, path: str, payload: dict) -> dict:
    try:
        with _client(ctx.obj.get("server")) as client:
            response = client.post(path, json=payload)
    except httpx.HTTPError as exc:
        click.echo(f"error: cannot reach service: {exc}", err=True)
        sys.exit(EXIT_IO)
    if response.status_code == 200:
        return response.json()
    detail = {}
    try:
        detail = response.json().get("detail", {})
    except (json.JSONDecodeError, ValueError, AttributeError):
        pass
    if isinstance(detail, dict):
        category = detail.get("category", "validation")
        click.echo(f"error: {detail.get('message', response.text)}", err=True)
        for issue in detail.get("issues", []):
            click.echo(f"  {issue}", err=True)
    else:
        category = "validation"
        click.echo(f"error: {detail or response.text}", err=True)
    sys.exit(_CATEGORY_EXIT.get(category, EXIT_VALIDATION))


def _effective_config(config_path, **overrides):
    from .config import RunConfig, apply_overrides, load_config

    config = load_config(config_path) if config_path else RunConfig()
    return apply_overrides(config, **overrides)


@click.group()
@click.option("--server", default=None, metavar="URL", help="Remote service URL (default: run in-process).")
@click.pass_context
def main(ctx: click.Context, server: str | None):
    """Dataset synthesis and evaluation for bitemporal change analysis."""
    ctx.ensure_object(dict)
    ctx.obj["server"] = server


@main.command()
@click.argument("corpus_root", type=click.Path())
@click.argument("out_dir", type=click.Path())
@click.option("--config", "config_path", type=click.Path(), default=None, help="Corpus/pipeline config file.")
@click.option("--seed", type=int, default=None)
@click.option("--connectivity", type=click.Choice(["four", "eight"]), default=None)
@click.option("--epsilon", type=float, default=None, help="Simplification tolerance in pixels.")
@click.option("--precision", type=int, default=None, help="Polygon coordinate decimal places.")
@click.option("--min-area", type=int, default=None, help="Drop components below this pixel count.")
@click.option("--skip-unchanged", is_flag=True, default=None, help="Skip quantify/localize/multi-turn for no-change samples.")
@click.option("--gpt", "gpt_mode", type=click.Choice(["off", "stub", "live"]), default=None,
              help="GPT-assisted records: off, deterministic stub, or live endpoint (live issues billable requests).")
@click.option("--skip-gpt", is_flag=True, help="Shorthand for --gpt off.")
@click.option("--jobs", type=int, default=None, help="Worker threads for per-sample derivation.")
@click.option("--print-config", is_flag=True, help="Print the effective merged config and exit.")
@click.pass_context
def generate(ctx, corpus_root, out_dir, config_path, seed, connectivity, epsilon, precision,
             min_area, skip_unchanged, gpt_mode, skip_gpt, jobs, print_config):
    """Generate the instruction dataset for a corpus."""
    if skip_gpt:
        gpt_mode = "off"
    if print_config:
        from .config import config_to_text

        config = _effective_config(
            config_path, seed=seed, connectivity=connectivity, epsilon=epsilon,
            precision=precision, min_area=min_area, skip_unchanged=skip_unchanged,
            gpt_mode=gpt_mode, jobs=jobs,
        )
        click.echo(config_to_text(config), nl=False)
        return
    result = _post(ctx, "/generate", {
        "corpus_root": corpus_root, "out_dir": out_dir, "config_path": config_path,
        "seed": seed, "connectivity": connectivity, "epsilon": epsilon,
        "precision": precision, "min_area": min_area, "skip_unchanged": skip_unchanged,
        "gpt_mode": gpt_mode, "jobs": jobs,
    })
    click.echo(f"wrote {result['total']} records for {result['samples']} samples")
    click.echo(f"records: {result['records_path']}")
    click.echo(f"stats:   {result['stats_path']}")
    for kind, count in result["counts"].items():
        click.echo(f"  {kind:<13} {count}")
    if result.get("gpt"):
        gpt = result["gpt"]
        click.echo(f"  gpt pairs: raw {gpt['raw_pairs']}, valid {gpt['valid_records']}, dropped {gpt['dropped_pairs']}")


@main.command()
@click.argument("dataset", type=click.Path())
@click.pass_context
def stats(ctx, dataset):
    """Print per-kind record counts for a dataset file."""
    result = _post(ctx, "/stats", {"dataset_path": dataset})
    click.echo(result["table"])


@main.command()
@click.argument("dataset", type=click.Path())
@click.option("--max-violations", type=int, default=20, show_default=True, help="How many violations to print.")
@click.pass_context
def validate(ctx, dataset, max_violations):
    """Check every record against the schema and invariants."""
    result = _post(ctx, "/validate", {"dataset_path": dataset, "max_violations": max_violations})
    if result["valid"]:
        click.echo(f"OK: {result['records']} records, no violations")
        return
    click.echo(f"INVALID: {result['total_violations']} violation(s) in {result['records']} records", err=True)
    for v in result["violations"]:
        click.echo(f"  line {v['line']} ({v['record_id']}): {v['problem']}", err=True)
    sys.exit(EXIT_VALIDATION)


@main.command()
@click.argument("corpus_root", type=click.Path())
@click.option("--task", required=True,
              type=click.Choice(["caption_direct", "caption_cot", "binary", "quantify", "localize"]))
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--endpoint", default="echo", show_default=True,
              help="Model endpoint: 'echo', 'scripted:<path>', or an http(s) chat-completions URL.")
@click.option("--transcripts", "transcripts_path", type=click.Path(), default=None,
              help="Where to persist (or read, with --rescore) transcripts.")
@click.option("--rescore", is_flag=True, help="Re-score saved transcripts; no endpoint traffic.")
@click.option("--report", "report_path", type=click.Path(), default=None, help="Write the JSON report here.")
@click.option("--split", "eval_split", default=None, help="Which split to evaluate (default: test).")
@click.option("--seed", type=int, default=None)
@click.pass_context
def evaluate(ctx, corpus_root, task, config_path, endpoint, transcripts_path, rescore,
             report_path, eval_split, seed):
    """Evaluate a model endpoint (or stub) on one task."""
    result = _post(ctx, "/evaluate", {
        "corpus_root": corpus_root, "task": task, "config_path": config_path,
        "endpoint": endpoint, "transcripts_path": transcripts_path, "rescore": rescore,
        "report_path": report_path, "eval_split": eval_split, "seed": seed,
    })
    click.echo(result["table"])
    if result.get("transcripts_path"):
        click.echo(f"transcripts: {result['transcripts_path']}")
    if report_path:
        click.echo(f"report: {report_path}")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
