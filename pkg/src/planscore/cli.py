"""Command-line interface.

Exit codes: 0 success, 1 module error (category printed as JSON on stderr),
2 usage error, 3 ``check`` found violations, 4 ``explain`` disagreement.
"""

from __future__ import annotations

import json
import logging
import math
import sys
from functools import wraps
from pathlib import Path

import click

from . import io as pio
from .api import Engine, check_payload, explain_payload, retrieve_payload, score_payload
from .config import AppConfig, load_app_config
from .core import RetrievalConfig
from .errors import PlanScoreError
from .knowledge_base import build_kb, load_kb, save_kb
from .metrics import evaluate_system, format_report_table
from .synth import SynthConfig, generate
from .tuner import tune_retrieval

EXIT_ERROR = 1
EXIT_VIOLATIONS = 3
EXIT_DISAGREEMENT = 4


def _emit(data) -> None:
    click.echo(json.dumps(data, indent=2, allow_nan=False))


def _fail(exc: PlanScoreError) -> None:
    click.echo(json.dumps(exc.to_dict()), err=True)
    sys.exit(EXIT_ERROR)


def handle_errors(fn):
    @wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except PlanScoreError as exc:
            _fail(exc)

    return wrapper


def _fmt(x, digits: int = 4) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return "n/a"
    return f"{x:.{digits}f}"


def _engine(ctx: click.Context, kb_path: str, config: RetrievalConfig | None = None) -> Engine:
    app: AppConfig = ctx.obj
    kb = load_kb(kb_path)
    return Engine.build(kb, app.make_embedder(), config or app.retrieval)


def _retrieval_options(fn):
    fn = click.option("--alpha", type=float, default=None, help="Text-similarity weight.")(fn)
    fn = click.option("--beta-norm", type=float, default=None, help="Normalized-metric weight.")(fn)
    fn = click.option("--beta-raw", type=float, default=None, help="Raw-metric weight.")(fn)
    fn = click.option("-k", "k", type=int, default=None, help="Retrieval depth (3-10).")(fn)
    return fn


def _merge_config(base: RetrievalConfig, alpha, beta_norm, beta_raw, k) -> RetrievalConfig:
    data = base.to_dict()
    for key, value in (("alpha", alpha), ("beta_norm", beta_norm), ("beta_raw", beta_raw), ("k", k)):
        if value is not None:
            data[key] = value
    return RetrievalConfig.from_dict(data)


@click.group()
@click.option("--config", "config_path", type=click.Path(dir_okay=False), default=None, help="App config file (JSON).")
@click.option("--embedder", type=click.Choice(["fallback", "remote"]), default=None)
@click.option("--embed-url", default=None, help="Embedding service URL.")
@click.option("--chat-url", default=None, help="Chat backend URL.")
@click.option("--chat-model", default=None)
@click.option("--timeout", type=float, default=None, help="Remote request timeout in seconds.")
@click.option("--seed", type=int, default=None, help="Default seed for synth, kb build and tune.")
@click.option("-v", "--verbose", count=True)
@click.pass_context
def main(ctx, config_path, embedder, embed_url, chat_url, chat_model, timeout, seed, verbose):
    """Protocol-aware radiotherapy plan scoring, retrieval and evaluation."""
    logging.basicConfig(level=logging.WARNING - 10 * min(verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx.obj = load_app_config(
            config_path,
            embedder=embedder,
            embed_url=embed_url,
            chat_url=chat_url,
            chat_model=chat_model,
            timeout=timeout,
            seed=seed,
        )
    except PlanScoreError as exc:
        _fail(exc)


@main.command()
@click.option("--seed", type=int, default=None, help="Overrides the global seed.")
@click.option("--protocols", "n_protocols", type=int, default=9, show_default=True)
@click.option("--plans-per-protocol", type=int, default=69, show_default=True)
@click.option("--violation-rate", type=float, default=0.05, show_default=True)
@click.option("--sigma-log", type=float, default=0.25, show_default=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
@handle_errors
def synth(ctx, seed, n_protocols, plans_per_protocol, violation_rate, sigma_log, out_dir):
    """Write a synthetic corpus: OUT/protocols/*.json and OUT/plans/*.json."""
    protocols, plans = generate(
        SynthConfig(
            seed=ctx.obj.seed if seed is None else seed,
            protocols=n_protocols,
            plans_per_protocol=plans_per_protocol,
            violation_rate=violation_rate,
            sigma_log=sigma_log,
        )
    )
    out = Path(out_dir)
    for spec in protocols:
        pio.write_protocol(out / "protocols", spec)
    for plan in plans:
        pio.write_plan(out / "plans", plan)
    click.echo(f"wrote {len(protocols)} protocols and {len(plans)} plans to {out}")


@main.group()
def kb():
    """Knowledge-base commands."""


@kb.command("build")
@click.option("--plans", "plans_dir", type=click.Path(file_okay=False), required=True)
@click.option("--protocols", "protocols_dir", type=click.Path(file_okay=False), required=True)
@click.option("--split", type=float, default=0.1, show_default=True, help="Held-out fraction per protocol.")
@click.option("--seed", type=int, default=None, help="Overrides the global seed.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), required=True)
@click.option("--heldout", "heldout_dir", type=click.Path(file_okay=False), default=None,
              help="Held-out directory [default: <out stem>_heldout].")
@click.pass_context
@handle_errors
def kb_build(ctx, plans_dir, protocols_dir, split, seed, out_file, heldout_dir):
    """Score plans per protocol, split, and save the knowledge base."""
    app: AppConfig = ctx.obj
    embedder = app.make_embedder()
    knowledge, held_out = build_kb(
        pio.read_plans(plans_dir),
        pio.read_protocols(protocols_dir),
        split_fraction=split,
        seed=app.seed if seed is None else seed,
        embedding_meta={"provider": embedder.provider_id, "dimension": embedder.dimension},
    )
    out = Path(out_file)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_kb(knowledge, out)
    heldout = Path(heldout_dir) if heldout_dir else out.with_name(out.stem + "_heldout")
    pio.write_held_out(heldout, held_out)
    click.echo(f"knowledge base: {len(knowledge)} entries -> {out}")
    click.echo(f"held out: {len(held_out)} plans -> {heldout}")


@main.command()
@click.option("--plan", "plan_file", type=click.Path(dir_okay=False), required=True)
@click.option("--protocol", "protocol_file", type=click.Path(dir_okay=False), required=True)
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def score(plan_file, protocol_file, kb_file, as_json):
    """Normalized metrics, gm score and (with --kb) cohort percentile."""
    knowledge = load_kb(kb_file) if kb_file else None
    data = score_payload(pio.read_plan(plan_file), pio.read_protocol(protocol_file), knowledge)
    if as_json:
        _emit(data)
        return
    click.echo(f"Plan {data['plan_id']} ({data['protocol']})")
    for metric_id, value in data["normalized"].items():
        click.echo(f"  {metric_id:<28} {value:10.4f}")
    click.echo(f"gm_score   {data['gm_score']:.6f}")
    if knowledge is not None:
        click.echo(f"percentile {_fmt(data['percentile'])} (cohort of {data['cohort_size']})")


@main.command()
@click.option("--plan", "plan_file", type=click.Path(dir_okay=False), required=True)
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), required=True)
@_retrieval_options
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@handle_errors
def retrieve(ctx, plan_file, kb_file, alpha, beta_norm, beta_raw, k, as_json):
    """Rank similar knowledge-base plans and estimate the percentile."""
    config = _merge_config(ctx.obj.retrieval, alpha, beta_norm, beta_raw, k)
    data = retrieve_payload(pio.read_plan(plan_file), _engine(ctx, kb_file, config), config)
    if as_json:
        _emit(data)
        return
    click.echo(f"{'rank':>4}  {'plan_id':<20} {'text':>7} {'norm':>7} {'raw':>7} {'combined':>9} {'pctl':>8}")
    for i, n in enumerate(data["neighbors"], 1):
        click.echo(
            f"{i:>4}  {n['plan_id']:<20} {n['s_text']:7.4f} {n['s_norm']:7.4f} {n['s_raw']:7.4f} "
            f"{n['combined_score']:9.6f} {n['percentile']:8.4f}"
        )
    click.echo(f"nearest neighbor  {data['nn_percentile']:.4f}")
    click.echo(f"weighted average  {data['weighted_avg_percentile']:.4f}")
    click.echo(f"weighted median   {data['weighted_median_percentile']:.4f}")


@main.command()
@click.option("--plan", "plan_file", type=click.Path(dir_okay=False), required=True)
@click.option("--protocol", "protocol_file", type=click.Path(dir_okay=False), required=True)
@click.option("--json", "as_json", is_flag=True)
@handle_errors
def check(plan_file, protocol_file, as_json):
    """List violated constraints; exit 3 when any exist."""
    data = check_payload(pio.read_plan(plan_file), pio.read_protocol(protocol_file))
    if as_json:
        _emit(data)
    elif not data["violations"]:
        click.echo("no violations")
    else:
        for v in data["violations"]:
            click.echo(
                f"{v['metric_id']:<28} raw {v['raw_value']:.4f} > limit {v['limit']:.4f} "
                f"(normalized {v['normalized_value']:.4f})"
            )
    if data["violations"]:
        sys.exit(EXIT_VIOLATIONS)


TUNE_HEADER = (
    f"{'k':>3} {'alpha':>9} {'beta_norm':>9} {'beta_raw':>9} {'RMSE_AVG':>9} "
    f"{'MAE_NN':>9} {'%<=5pt_NN':>10} {'%<=10pt_AVG':>11} {'Loss':>9}"
)


@main.command()
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), required=True)
@click.option("--test", "test_dir", type=click.Path(file_okay=False), required=True)
@click.option("--calls", type=int, default=50, show_default=True)
@click.option("--init", "n_init", type=int, default=10, show_default=True)
@click.option("--seed", type=int, default=None, help="Overrides the global seed.")
@click.option("--out", "out_file", type=click.Path(dir_okay=False), default="tune_trace.json", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@handle_errors
def tune(ctx, kb_file, test_dir, calls, n_init, seed, out_file, as_json):
    """Gaussian-process search over (alpha, beta_norm, beta_raw, k)."""
    engine = _engine(ctx, kb_file)
    test_set = pio.read_held_out(test_dir)
    seed = ctx.obj.seed if seed is None else seed
    trace = tune_retrieval(engine.kb, engine.indexes, test_set, engine.embedder, n_calls=calls, seed=seed, n_init=n_init)
    best = trace.best_config
    report = evaluate_system(engine.kb, engine.indexes, test_set, best, engine.embedder)
    doc = trace.to_dict()
    doc["best_report"] = report.to_dict()
    pio.write_json(out_file, doc)
    if as_json:
        _emit(doc)
        return
    terms = report.loss_terms
    click.echo(TUNE_HEADER)
    click.echo(
        f"{best.k:>3} {best.alpha:9.6f} {best.beta_norm:9.6f} {best.beta_raw:9.6f} "
        f"{terms['rmse_avg']:9.6f} {terms['mae_nn']:9.6f} {terms['pct5_nn']:10.6f} "
        f"{terms['pct10_avg']:11.6f} {trace.best_loss:9.6f}"
    )
    click.echo(f"trace ({len(trace.entries)} calls, {trace.n_evaluations} evaluations) -> {out_file}")


@main.command()
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), required=True)
@click.option("--test", "test_dir", type=click.Path(file_okay=False), required=True)
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None,
              help="Retrieval config or tuning trace (uses its best config).")
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@handle_errors
def evaluate(ctx, kb_file, test_dir, config_file, as_json):
    """Metric suite per aggregation method plus the scalarized loss."""
    config = pio.read_config(config_file) if config_file else ctx.obj.retrieval
    engine = _engine(ctx, kb_file, config)
    report = evaluate_system(engine.kb, engine.indexes, pio.read_held_out(test_dir), config, engine.embedder)
    if as_json:
        _emit(report.to_dict(include_predictions=True))
        return
    click.echo(format_report_table(report))


@main.command()
@click.option("--plan", "plan_file", type=click.Path(dir_okay=False), default=None)
@click.option("--test", "test_dir", type=click.Path(file_okay=False), default=None,
              help="Batch mode over a held-out directory.")
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), required=True)
@click.option("--backend", type=click.Choice(["mock", "remote"]), default="mock", show_default=True)
@click.option("--config", "config_file", type=click.Path(dir_okay=False), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
@handle_errors
def explain(ctx, plan_file, test_dir, kb_file, backend, config_file, as_json):
    """Run the tool-augmented session and verify it; exit 0 only on full agreement."""
    if (plan_file is None) == (test_dir is None):
        raise click.UsageError("give exactly one of --plan or --test")
    app: AppConfig = ctx.obj.updated(backend=backend)
    config = pio.read_config(config_file) if config_file else app.retrieval
    engine = _engine(ctx, kb_file, config)
    chat = app.make_backend()
    plans = [pio.read_plan(plan_file)] if plan_file else [p for p, _ in pio.read_held_out(test_dir)]

    results = [explain_payload(p, engine, chat, config) for p in plans]
    agreed = sum(1 for r in results if r["agreement"]["overall"])
    if as_json:
        _emit({"n_plans": len(results), "n_agree": agreed, "sessions": results})
    else:
        for r in results:
            a = r["agreement"]
            if len(results) == 1:
                click.echo(r["summary"])
                click.echo("tool trace: " + " -> ".join(t["name"] for t in r["outcome"]["tool_trace"]))
                flags = ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in a.items())
                click.echo(f"agreement: {flags}")
            else:
                mark = "ok" if a["overall"] else "MISMATCH"
                click.echo(f"{r['plan_id']:<24} {mark}")
        click.echo(f"agreement {agreed}/{len(results)}")
    if agreed != len(results):
        sys.exit(EXIT_DISAGREEMENT)


@main.command()
@click.option("--kb", "kb_file", type=click.Path(dir_okay=False), required=True)
@click.option("--addr", default="127.0.0.1:8080", show_default=True, help="HOST:PORT")
@click.pass_context
@handle_errors
def serve(ctx, kb_file, addr):
    """Serve read-only scoring, retrieval, checking and explanation endpoints."""
    import uvicorn

    from .service import create_app

    host, _, port = addr.rpartition(":")
    if not host or not port.isdigit():
        raise click.BadParameter(f"expected HOST:PORT, got {addr!r}", param_hint="--addr")
    engine = _engine(ctx, kb_file)
    uvicorn.run(create_app(engine, ctx.obj.make_backend()), host=host, port=int(port), log_level="info")


if __name__ == "__main__":
    main()
