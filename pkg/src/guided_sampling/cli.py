"""Command-line entry points.

Exit codes: 0 success, 1 run error, 2 configuration error. Failures print a
single-line JSON error record to stderr so wrappers can parse them.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import click

from .backend import HttpBackend, load_script, scripted_backend_from_table
from .config import (
    BackendSpec,
    RunConfig,
    load_config,
    with_overrides,
)
from .core import Budget, DOMAIN_KINDS, allocate_budget, load_questions
from .datasynth import SELECTION_POLICIES, synthesize, write_corpus
from .errors import ConfigError, GuidedSamplingError
from .eval import diversity_report, extract_concept, passk_report, verify_candidate
from .prompts import load_template_overrides, templates_for
from .sampler import (
    DecodingParams,
    RunArtifact,
    read_artifact,
    run_experiment,
    update_artifact_candidates,
)
from .store import SampleStore
from .theory import (
    SyntheticModel,
    condition_lhs,
    k_min,
    lower_bound,
    p_gs,
    p_rs,
    sweep_models,
    sweep_to_csv,
)

logger = logging.getLogger(__name__)


def _emit_error(kind: str, exc: BaseException, violations: Optional[tuple] = None) -> None:
    record: dict = {"error": kind, "message": str(exc)}
    if violations:
        record["violations"] = list(violations)
    click.echo(json.dumps(record), err=True)


def _guard(fn):
    """Translate exceptions into exit codes and stderr error records."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ConfigError as exc:
            _emit_error("config", exc, exc.violations)
            sys.exit(2)
        except (GuidedSamplingError, OSError) as exc:
            _emit_error("run", exc)
            sys.exit(1)

    return wrapper


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError([f"{what} must be a comma-separated list of integers, got {text!r}"])
    if not values:
        raise ConfigError([f"{what} is empty"])
    return values


def _build_backend(spec: BackendSpec):
    if spec.kind == "scripted":
        script = load_script(spec.script_path) if spec.script_path else {}
        fallback = spec.fallback
        return scripted_backend_from_table(script, fallback=fallback, seed=spec.seed)
    return HttpBackend(base_url=spec.base_url, model=spec.model, api_key=spec.api_key)


def _build_templates(cfg: RunConfig):
    base = {domain: templates_for(domain) for domain in DOMAIN_KINDS}
    if cfg.template_overrides:
        return load_template_overrides(base, cfg.template_overrides)
    return base


def _budget_from_config(cfg: RunConfig) -> Budget:
    if cfg.max_concepts == 0:
        return Budget(cfg.total_generation_calls, 0, ())
    if cfg.per_concept:
        return Budget(cfg.total_generation_calls, cfg.max_concepts, cfg.per_concept)
    return allocate_budget(cfg.total_generation_calls, cfg.max_concepts)


def _execute_run(cfg: RunConfig) -> RunArtifact:
    questions = load_questions(cfg.dataset_path)
    backend = _build_backend(cfg.solver)
    templates = _build_templates(cfg)
    store = SampleStore(Path(cfg.store_root))
    artifact = run_experiment(
        questions,
        cfg.strategy,
        _budget_from_config(cfg),
        backend,
        templates,
        store,
        run_id=cfg.run_id,
        seed=cfg.seed,
        decoding=DecodingParams(temperature=cfg.temperature, max_tokens=cfg.max_tokens),
        parallelism=cfg.parallelism,
        keep_duplicates=cfg.keep_duplicates,
        on_empty_exploration=cfg.on_empty_exploration,
        config_snapshot=cfg.snapshot(),
    )
    return artifact


def _verify_artifact(artifact_dir: Path, strict_boxed: bool):
    """Verification pass over every candidate; persists the verdicts."""
    artifact, questions = read_artifact(artifact_dir)
    by_id = {q.id: q for q in questions}
    verified = {}
    for qid in sorted(artifact.per_question):
        spec = by_id[qid].ground_truth
        verified[qid] = [
            verify_candidate(c, spec, strict_boxed_only=strict_boxed)
            for c in artifact.per_question[qid].candidates
        ]
    update_artifact_candidates(artifact_dir, verified)
    return artifact, verified


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    """Concept-guided sampling experiments: run, score, and distill them."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("-c", "--config", "config_path", required=True, type=click.Path(), help="TOML config file.")
@click.option("--run-id", default=None, help="Override the configured run id.")
@click.option("--strategy", default=None, type=click.Choice(["rs", "guided"]))
@click.option("--seed", default=None, type=int)
@click.option("--store-root", default=None, type=click.Path())
@_guard
def run(config_path, run_id, strategy, seed, store_root) -> None:
    """Execute a sampling run and write its artifact."""
    cfg = load_config(
        config_path,
        overrides={
            "run_id": run_id,
            "strategy": strategy,
            "seed": seed,
            "store_root": store_root,
        },
    )
    artifact = _execute_run(cfg)
    click.echo(
        json.dumps(
            {
                "run_id": artifact.run_id,
                "strategy": artifact.strategy,
                "artifact": str(artifact.path),
                "exploration_calls": artifact.manifest["exploration_calls"],
                "generation_calls": artifact.manifest["generation_calls"],
            },
            sort_keys=True,
        )
    )


@main.command("eval")
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--ks", default="1,5,10", help="Comma-separated k values.")
@click.option("--strict-boxed", is_flag=True, help="Only accept boxed answers.")
@click.option(
    "--exclude-unverified",
    is_flag=True,
    help="Drop candidates whose answer could not be extracted instead of failing.",
)
@click.option("-o", "--output", default=None, type=click.Path(), help="CSV path (default: <artifact>/passk.csv).")
@click.option("--json", "json_output", default=None, type=click.Path(), help="Also write the full report as JSON.")
@_guard
def eval_cmd(artifact_dir, ks, strict_boxed, exclude_unverified, output, json_output) -> None:
    """Verify an artifact's candidates and report pass@k."""
    ks_list = _parse_int_list(ks, "--ks")
    artifact, verified = _verify_artifact(Path(artifact_dir), strict_boxed)
    report = passk_report(
        verified, ks_list, artifact.strategy, exclude_unverified=exclude_unverified
    )
    csv_text = report.to_csv()
    out_path = Path(output) if output else Path(artifact_dir) / "passk.csv"
    out_path.write_text(csv_text, encoding="utf-8")
    if json_output:
        Path(json_output).write_text(report.to_json() + "\n", encoding="utf-8")
    click.echo(csv_text.rstrip("\n"))


@main.command()
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False))
@click.option("-c", "--config", "config_path", required=True, type=click.Path(), help="Config with a [judge] section.")
@click.option("-o", "--output", default=None, type=click.Path(), help="JSON path (default: <artifact>/diversity.json).")
@_guard
def diversity(artifact_dir, config_path, output) -> None:
    """Label candidates with the judge and report distinct concepts per question."""
    cfg = load_config(config_path)
    if cfg.judge is None:
        raise ConfigError(["a [judge] section is required for diversity"])
    judge = _build_backend(cfg.judge)
    artifact, _questions = read_artifact(artifact_dir)
    cache: dict = {}
    labeled = {}
    for qid in sorted(artifact.per_question):
        labeled[qid] = [
            dataclasses.replace(c, judge_concept=extract_concept(c, judge, cache=cache))
            for c in artifact.per_question[qid].candidates
        ]
    update_artifact_candidates(Path(artifact_dir), labeled)
    report = diversity_report(labeled)
    out_path = Path(output) if output else Path(artifact_dir) / "diversity.json"
    out_path.write_text(report.to_json() + "\n", encoding="utf-8")
    click.echo(
        json.dumps(
            {
                "mean_distinct": report.mean_distinct,
                "label_coverage": report.label_coverage,
                "histogram": {str(k): v for k, v in sorted(report.histogram.items())},
            },
            sort_keys=True,
        )
    )


@main.command()
@click.option("-c", "--config", "config_path", required=True, type=click.Path())
@click.option("--k-list", default="0,2,4", help="Concept caps to sweep, 0 meaning plain repeated sampling.")
@click.option("--ks", default="1", help="k values for pass@k columns.")
@click.option("--strict-boxed", is_flag=True)
@click.option("-o", "--output", default=None, type=click.Path(), help="CSV path (default: <store>/sweep.csv).")
@_guard
def sweep(config_path, k_list, ks, strict_boxed, output) -> None:
    """Run the same dataset and budget at several concept caps and tabulate pass@k."""
    cfg = load_config(config_path)
    caps = _parse_int_list(k_list, "--k-list")
    ks_list = _parse_int_list(ks, "--ks")
    header = "K,strategy,exploration_calls,generation_calls," + ",".join(
        f"pass_at_{k}" for k in ks_list
    )
    lines = [header]
    for cap in caps:
        sub = with_overrides(
            cfg,
            run_id=f"{cfg.run_id}-K{cap}",
            strategy="guided" if cap > 0 else "rs",
            max_concepts=cap,
            per_concept=(),
        )
        artifact = _execute_run(sub)
        _unused, verified = _verify_artifact(artifact.path, strict_boxed)
        report = passk_report(verified, ks_list, artifact.strategy)
        values = ",".join(repr(v) for _k, v in report.rows)
        lines.append(
            f"{cap},{artifact.strategy},{artifact.manifest['exploration_calls']},"
            f"{artifact.manifest['generation_calls']},{values}"
        )
    csv_text = "\n".join(lines) + "\n"
    out_path = Path(output) if output else Path(cfg.store_root) / "sweep.csv"
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text(csv_text, encoding="utf-8")
    click.echo(csv_text.rstrip("\n"))


@main.command()
@click.option("--random", "random_count", type=int, default=None, help="Number of random synthetic models.")
@click.option("--seed", type=int, default=0)
@click.option("--concepts", type=int, default=None, help="Fix the concept count per model.")
@click.option("--spec", "spec_path", type=click.Path(exists=True), default=None, help="JSON file describing one synthetic model.")
@click.option("-o", "--output", default=None, type=click.Path())
@_guard
def simulate(random_count, seed, concepts, spec_path, output) -> None:
    """Evaluate the synthetic success model: one spec, or a random sweep."""
    if spec_path is None and random_count is None:
        raise ConfigError(["simulate needs --random N or --spec FILE"])
    if spec_path is not None:
        model = SyntheticModel.from_json(spec_path)
        result = {
            "p_rs": p_rs(model),
            "p_gs": p_gs(model),
            "condition_lhs": condition_lhs(model),
            "condition_satisfied": bool(condition_lhs(model, exact=True) > 0),
            "lower_bound": lower_bound(model),
            "k_min": k_min(model),
        }
        text = json.dumps(result, indent=2, sort_keys=True)
        if output:
            Path(output).write_text(text + "\n", encoding="utf-8")
        click.echo(text)
        return
    if random_count < 1:
        raise ConfigError(["--random must be >= 1"])
    rows = sweep_models(random_count, seed, num_concepts=concepts)
    csv_text = sweep_to_csv(rows)
    if output:
        Path(output).write_text(csv_text, encoding="utf-8")
        click.echo(
            json.dumps(
                {
                    "rows": len(rows),
                    "satisfied": sum(1 for r in rows if r.satisfied),
                    "sufficiency_holds_all": all(r.sufficiency_holds for r in rows),
                    "output": str(output),
                },
                sort_keys=True,
            )
        )
    else:
        click.echo(csv_text.rstrip("\n"))


@main.command()
@click.argument("artifact_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--regime", type=click.Choice(["fa", "caa"]), required=True)
@click.option("--policy", type=click.Choice(list(SELECTION_POLICIES)), default="one_per_concept")
@click.option("-o", "--output", "out_dir", default=None, type=click.Path(), help="Corpus directory (default: <artifact>/corpus-<regime>).")
@_guard
def synth(artifact_dir, regime, policy, out_dir) -> None:
    """Build a training corpus from an evaluated artifact."""
    artifact, questions = read_artifact(artifact_dir)
    unverified = sum(
        1
        for qr in artifact.per_question.values()
        for c in qr.candidates
        if c.verdict == "unverified"
    )
    if unverified:
        click.echo(
            f"warning: {unverified} candidates are unverified and will be skipped; "
            "run eval first to include them",
            err=True,
        )
    records, stats = synthesize(artifact, questions, regime, policy)
    out = Path(out_dir) if out_dir else Path(artifact_dir) / f"corpus-{regime}"
    write_corpus(records, stats, out)
    stats = dict(stats)
    stats["output"] = str(out)
    click.echo(json.dumps(stats, sort_keys=True))


if __name__ == "__main__":
    main()
