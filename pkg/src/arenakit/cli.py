"""Command-line entry point for every pipeline."""
from __future__ import annotations

import csv
import io
import json
import sys
from pathlib import Path

import click

from . import bench as bench_mod
from . import curation as curation_mod
from . import judge as judge_mod
from . import leaderboard as lb
from . import rating
from .votelog import load_log, summary_stats

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _anchor_from(spec: str) -> rating.Anchor:
    """--anchor forms: 'mean:1000' (default) or 'model:<name>:1000'."""
    parts = spec.split(":")
    if parts[0] == "mean":
        return rating.Anchor("mean", float(parts[1]) if len(parts) > 1 else 1000.0)
    if parts[0] == "model" and len(parts) >= 2:
        value = float(parts[2]) if len(parts) > 2 else 1000.0
        return rating.Anchor("fix_model", value, model=parts[1])
    raise click.BadParameter(f"bad anchor spec: {spec!r}")


@click.group()
def cli():
    """Pairwise model-battle log analytics, ratings and benchmarking."""


@cli.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--out", default=None)
def stats(log, out):
    """Descriptive statistics over a vote log."""
    records = load_log(log)
    _emit(json.dumps(summary_stats(records).to_dict(), indent=2) + "\n", out)


@cli.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--method", type=click.Choice(["elo", "bt"]), default="bt")
@click.option("--k-factor", type=float, default=32.0)
@click.option("--anchor", "anchor_spec", default="mean:1000")
@click.option("--bootstrap-rounds", type=int, default=0,
              help="attach percentile CIs when > 0 (bt only)")
@click.option("--seed", type=int, default=0)
@click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv")
@click.option("--out", default=None)
def rank(log, method, k_factor, anchor_spec, bootstrap_rounds, seed, fmt, out):
    """Leaderboard from a vote log (online Elo or Bradley-Terry MLE)."""
    records = load_log(log)
    if method == "elo":
        cfg = rating.EloConfig(k_factor=k_factor)
        ratings = rating.replay_online_elo(records, cfg)
        table = rating.RatingTable(ratings=ratings)
    else:
        cfg = rating.BTConfig(anchor=_anchor_from(anchor_spec))
        table = rating.bt_fit(rating.expand_votes(records, cfg), cfg)
        if bootstrap_rounds > 0:
            boot = rating.bootstrap_ratings(records, cfg, rounds=bootstrap_rounds, seed=seed)
            table = rating.table_with_intervals(table, boot)
    _emit(table.to_csv() if fmt == "csv" else table.to_json() + "\n", out)


@cli.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--kind", type=click.Choice(["count", "winfrac"]), default="count")
@click.option("--out", default=None)
def matrix(log, kind, out):
    """Battle-count or win-fraction matrix as CSV."""
    records = load_log(log)
    m = (
        lb.battle_count_matrix(records)
        if kind == "count"
        else lb.win_fraction_matrix(records)
    )
    _emit(m.to_csv(), out)


@cli.command("slice")
@click.argument("log", type=click.Path(exists=True))
@click.option("--axis", type=click.Choice([lb.AXIS_QUESTION_CATEGORY, lb.AXIS_IMAGE_DOMAIN]),
              required=True)
@click.option("--value", required=True)
@click.option("--anchor", "anchor_spec", default="mean:1000")
@click.option("--out", default=None)
def slice_cmd(log, axis, value, anchor_spec, out):
    """Rating table restricted to one tag slice."""
    records = load_log(log)
    cfg = rating.BTConfig(anchor=_anchor_from(anchor_spec))
    table = lb.sliced_ratings(records, lb.SliceKey(axis, value), cfg)
    _emit(table.to_csv(), out)


@cli.group()
def bench():
    """Benchmark pipeline: run judgements, score verdicts."""


@bench.command("run")
@click.argument("bench_set", type=click.Path(exists=True))
@click.option("--providers", "providers_path", type=click.Path(exists=True), required=True)
@click.option("--test-model", required=True)
@click.option("--judge-model", required=True)
@click.option("--cache-dir", default=None)
@click.option("--out", default=None)
def bench_run(bench_set, providers_path, test_model, judge_model, cache_dir, out):
    """Judge a test model against the bench set's reference answers."""
    providers = judge_mod.load_provider_config(providers_path)
    samples = bench_mod.load_bench_set(bench_set)
    results = bench_mod.run_bench(
        samples,
        providers[test_model],
        {},
        providers[judge_model],
        bench_mod.BenchRunConfig(cache_dir=cache_dir),
    )
    _emit(bench_mod.judgements_to_jsonl(results), out)


@bench.command("score")
@click.argument("verdicts_file", type=click.Path(exists=True))
@click.option("--model", default="test")
@click.option("--much-weight", type=float, default=3.0)
@click.option("--bootstrap-rounds", type=int, default=100)
@click.option("--seed", type=int, default=0)
@click.option("--out", default=None)
def bench_score_cmd(verdicts_file, model, much_weight, bootstrap_rounds, seed, out):
    """Score a verdict JSONL (as produced by `bench run`)."""
    verdicts = []
    with open(verdicts_file, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj.get("verdict"):
                verdicts.append(bench_mod.Verdict(obj["verdict"]))
    row = bench_mod.bench_score(
        verdicts, model=model, much_weight=much_weight,
        rounds=bootstrap_rounds, seed=seed,
    )
    _emit(bench_mod.report_csv([row]), out)


@cli.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--providers", "providers_path", type=click.Path(exists=True), required=True)
@click.option("--judge-model", required=True)
@click.option("--out", default=None)
def tag(log, providers_path, judge_model, out):
    """Tag untagged records with taxonomy labels via a judge model."""
    from .votelog import serialize_record

    providers = judge_mod.load_provider_config(providers_path)
    judge = providers[judge_model]
    lines = []
    failures = 0
    for record in load_log(log):
        if record.tag is None:
            try:
                from dataclasses import replace

                record = replace(record, tag=judge_mod.tag_record(record, judge))
            except judge_mod.TagError:
                failures += 1
        lines.append(serialize_record(record))
    if failures:
        click.echo(f"{failures} records left untagged", err=True)
    _emit("\n".join(lines) + "\n", out)


@cli.command()
@click.argument("pred_csv", type=click.Path(exists=True))
@click.argument("human_csv", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["four_way", "three_way", "binary"]),
              default="four_way")
@click.option("--out", default=None)
def agree(pred_csv, human_csv, mode, out):
    """Agreement metrics between two vote CSVs (single `vote` column)."""

    def read_votes(path):
        with open(path, newline="", encoding="utf-8") as fh:
            return [row["vote"] for row in csv.DictReader(fh)]

    report = judge_mod.agreement(read_votes(pred_csv), read_votes(human_csv), mode)
    _emit(
        json.dumps(
            {
                "f1_macro": report.f1_macro,
                "f1_micro": report.f1_micro,
                "f1_weighted": report.f1_weighted,
                "cohen_kappa": report.cohen_kappa,
                "pearson": report.pearson,
                "percent_agreement": report.percent_agreement,
                "collapse_mode": report.collapse_mode,
                "n_pairs": report.n_pairs,
                "degenerate": report.degenerate,
            },
            indent=2,
        )
        + "\n",
        out,
    )


@cli.command()
@click.argument("log", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True)
@click.option("--images", "image_dir", type=click.Path(exists=True), default=None,
              help="directory of <image_id> files referenced by the log")
@click.option("--target-size", type=int, default=500)
@click.option("--nsfw-threshold", type=float, default=0.5)
@click.option("--near-dup-hamming", type=int, default=4)
@click.option("--seed", type=int, default=0)
def curate(log, out_dir, image_dir, target_size, nsfw_threshold, near_dup_hamming, seed):
    """Safety filter, dedup and diversity-sample a bench set from a log."""
    import hashlib

    records = load_log(log)
    cfg = curation_mod.CurationConfig(
        target_size=target_size,
        nsfw_threshold=nsfw_threshold,
        near_dup_hamming=near_dup_hamming,
        seed=seed,
    )

    def image_loader(image_id: str) -> bytes:
        if image_dir is None:
            raise FileNotFoundError("no --images directory given")
        matches = list(Path(image_dir).glob(f"{image_id}*"))
        if not matches:
            raise FileNotFoundError(image_id)
        return matches[0].read_bytes()

    safe = curation_mod.safety_filter(records, lambda _iid: 0.0, cfg.nsfw_threshold)
    if image_dir is not None:
        unique = curation_mod.dedup(safe.kept, image_loader, cfg.near_dup_hamming)
    else:
        unique = curation_mod.FilterResult(kept=safe.kept)
    samples = curation_mod.diversity_sample(unique.kept, cfg)
    curation_mod.export_bench(
        samples,
        out_dir,
        image_loader if image_dir is not None else None,
        config=cfg,
        source_log_hash=hashlib.sha256(Path(log).read_bytes()).hexdigest(),
    )
    out = Path(out_dir)
    curation_mod.write_audit_log(out / "removed.jsonl", safe.removed + unique.removed)
    curation_mod.write_audit_log(out / "quarantined.jsonl", safe.quarantined)
    click.echo(f"wrote {len(samples)} samples to {out_dir}", err=True)


@cli.command()
@click.argument("ranking_a", type=click.Path(exists=True))
@click.argument("ranking_b", type=click.Path(exists=True))
@click.option("--out", default=None)
def correlate(ranking_a, ranking_b, out):
    """Spearman rank correlation between two (model, value) CSVs."""

    def read_table(path):
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            value_col = next(c for c in reader.fieldnames if c != "model")
            return {row["model"]: float(row[value_col]) for row in reader}

    rho = lb.spearman(read_table(ranking_a), read_table(ranking_b))
    _emit(json.dumps({"spearman": rho}) + "\n", out)


@cli.command()
@click.option("--config", "config_path", type=click.Path(exists=True), required=True)
def serve(config_path):
    """Run the arena HTTP service (config: listen, providers, log, interval)."""
    import uvicorn

    from .service import PairSampler, ServiceConfig, create_app

    with open(config_path, encoding="utf-8") as fh:
        cfg = json.load(fh)
    providers = judge_mod.load_provider_config(cfg["providers"])
    service_cfg = ServiceConfig(
        log_path=cfg.get("log_path", "votes.jsonl"),
        image_dir=cfg.get("image_dir"),
        recompute_interval=cfg.get("recompute_interval", 3 * 3600.0),
        max_sessions=cfg.get("max_sessions", 1000),
        sampler=PairSampler(**cfg.get("sampler", {})),
    )
    app = create_app(providers, service_cfg)
    app.state.arena.recompute_now()
    app.state.arena.start_ticker()
    host, _, port = cfg.get("listen", "127.0.0.1:8000").partition(":")
    uvicorn.run(app, host=host, port=int(port or 8000))


def main() -> int:
    try:
        cli.main(standalone_mode=False)
        return EXIT_OK
    except click.UsageError as e:
        e.show()
        return EXIT_VALIDATION
    except click.ClickException as e:
        e.show()
        return EXIT_VALIDATION
    except click.exceptions.Abort:
        return EXIT_VALIDATION
    except (ValueError, KeyError, OSError, rating.RatingError,
            curation_mod.CurationError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
