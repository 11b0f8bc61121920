"""Command line entry point.

Exit codes: 0 success, 2 run failed / input rejected, 3 configuration error,
4 provider terminal error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import metrics
from .cad import EmitError, emit_scad, load_scad_template, verify_render
from .config import ConfigError, RunConfig, load_config
from .grammar import GrammarError, expand, parse_grammar
from .llm import ProviderConfigError, ProviderError
from .model import ArtifactError, GraspType, InvariantError, canonical_json, deserialize_artifact
from .params import check_constraints, derive_all
from .pipeline import (
    MODES,
    batch_eval,
    load_tasks,
    packaged_path,
    prior_for,
    provider_from_config,
    run_task,
)
from .validator import run_rule_checks

EXIT_OK = 0
EXIT_FAILED = 2
EXIT_CONFIG = 3
EXIT_PROVIDER = 4


def _config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    overrides = {}
    if getattr(args, "task", None) is not None:
        overrides["task"] = args.task
    if getattr(args, "variants", None) is not None:
        overrides["variants"] = args.variants
    if getattr(args, "out", None) is not None:
        overrides["output_dir"] = args.out
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "no_cues", False):
        overrides["diversity_cues"] = ()
    provider = config.provider
    if getattr(args, "provider", None) is not None:
        provider = dataclasses.replace(provider, kind=args.provider)
    if getattr(args, "fixtures", None) is not None:
        provider = dataclasses.replace(provider, fixtures=args.fixtures)
    if getattr(args, "renderer", None) is not None:
        overrides["render"] = dataclasses.replace(config.render, renderer=args.renderer)
    return dataclasses.replace(config, provider=provider, **overrides)


def cmd_run(args) -> int:
    config = _config(args)
    provider = provider_from_config(config)
    summary = run_task(config, provider)
    data = summary.data
    print(f"run {summary.run_id}: {data['status']}, {len(data['survivors'])}/{data['variants']} survivors, "
          f"mvr {data['mvr']:.3f}")
    if data["rank"]:
        print(f"chosen {data['rank']['chosen']} (refinement: {data['rank']['refinement']})")
    print(f"artifacts in {summary.run_dir}")
    if summary.status == "failed":
        return EXIT_PROVIDER if summary.provider_failed else EXIT_FAILED
    return EXIT_OK


def cmd_batch(args) -> int:
    config = _config(args)
    tasks = load_tasks(args.tasks)
    provider = None if args.mode == "random" else provider_from_config(config)
    paths = batch_eval(tasks, config, provider, Path(config.output_dir), args.mode)
    with open(paths["mvr"], newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            print(f"{row['mode']:10s} {row['group']:18s} mvr {row['mvr']} ({row['valid']}/{row['total']})")
    print(f"tables in {paths['mvr'].parent}")
    return EXIT_OK


def cmd_metrics_report(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    run_dir = Path(args.run)
    files = sorted(run_dir.glob("v*/candidate_v*.json"))
    if not files:
        print(f"no candidates under {run_dir}", file=sys.stderr)
        return EXIT_CONFIG
    candidates = [deserialize_artifact(f.read_text(encoding="utf-8"), "candidate") for f in files]
    survivors = [c for c in candidates if c.survived]
    rows, gfl = [], {}
    for c in survivors:
        geometry = derive_all(c.params, config.ratios, prior_for(config, c.schema))
        fv = metrics.feature_vector(c.params, geometry)
        rows.append([c.variant_id, *[f"{v:.6g}" for v in dataclasses.astuple(fv)]])
        gfl[c.variant_id] = metrics.gfl(geometry, c.params, config.constraints, config.gfl)
    with open(run_dir / "features.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", *metrics.FeatureVector.names()])
        w.writerows(rows)
    valid = sum(1 for c in candidates if c.filter_result is not None and c.filter_result.passed)
    report = {"variants": len(candidates), "valid": valid, "mvr": metrics.mvr(valid, len(candidates)),
              "gfl": gfl, "diversity": None}
    if len(survivors) >= 2:
        report["diversity"] = metrics.task_diversity(survivors, config.diversity, config.ranges).score
    (run_dir / "metrics.json").write_text(canonical_json(report), encoding="utf-8")
    print(canonical_json(report), end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    text = Path(args.grammar).read_text(encoding="utf-8")
    try:
        grammar = parse_grammar(text)
        graph = expand(grammar)
    except GrammarError as e:
        print(json.dumps({"check_id": e.check_id, "error": str(e)}))
        return EXIT_FAILED
    findings, score = run_rule_checks(graph, grammar)
    out = {"rule_score": score,
           "findings": [{"check_id": f.check_id, "severity": f.severity.value, "message": f.message}
                        for f in findings]}
    print(json.dumps(out, indent=2))
    return EXIT_FAILED if any(f.severity.value == "critical" for f in findings) else EXIT_OK


def cmd_emit(args) -> int:
    config = load_config(args.config) if args.config else RunConfig()
    text = Path(args.params).read_text(encoding="utf-8")
    params = deserialize_artifact(text, "params")
    prior = config.priors[GraspType(args.grasp_type)] if args.grasp_type else None
    geometry = derive_all(params, config.ratios, prior)
    verdict = check_constraints(params, geometry, config.constraints)
    if not verdict.passed and not args.force:
        for v in verdict.violations:
            print(f"{v.check_id}: {v.message}", file=sys.stderr)
        return EXIT_FAILED
    template = load_scad_template(args.template_name, args.template_dir)
    scad = emit_scad(params, geometry, template)
    if args.out:
        Path(args.out).write_text(scad, encoding="utf-8")
        result = verify_render(args.out, args.renderer)
        print(f"wrote {args.out} (render: {result.status})")
        if result.status == "failure":
            print(result.diagnostics, file=sys.stderr)
            return EXIT_FAILED
    else:
        sys.stdout.write(scad)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="handmorph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def provider_args(p):
        p.add_argument("--provider", choices=("http", "stub", "replay", "record"))
        p.add_argument("--fixtures", help="fixture directory or packaged scenario name")
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--variants", type=int)
        p.add_argument("--no-cues", action="store_true", help="disable per-variant diversity cues")

    run = sub.add_parser("run", help="generate, validate, rank and emit hands for one task")
    run.add_argument("--task", required=True)
    run.add_argument("--renderer", help="OpenSCAD binary used to verify emitted files")
    provider_args(run)
    run.set_defaults(func=cmd_run)

    batch = sub.add_parser("batch", help="evaluate a task file and write metric tables")
    batch.add_argument("--tasks", default=str(packaged_path("tasks", "tasks30.json")))
    batch.add_argument("--mode", choices=MODES, default="full")
    provider_args(batch)
    batch.set_defaults(func=cmd_batch)

    met = sub.add_parser("metrics", help="metric reports")
    msub = met.add_subparsers(dest="metrics_command", required=True)
    report = msub.add_parser("report", help="features.csv and metrics.json for a run directory")
    report.add_argument("--run", required=True)
    report.add_argument("--config")
    report.set_defaults(func=cmd_metrics_report)

    val = sub.add_parser("validate", help="rule-check a grammar file")
    val.add_argument("--grammar", required=True)
    val.set_defaults(func=cmd_validate)

    emit = sub.add_parser("emit", help="emit OpenSCAD source for a params file")
    emit.add_argument("--params", required=True)
    emit.add_argument("--grasp-type", choices=[g.value for g in GraspType])
    emit.add_argument("--out")
    emit.add_argument("--config")
    emit.add_argument("--renderer")
    emit.add_argument("--template-name", default="oph_hand")
    emit.add_argument("--template-dir")
    emit.add_argument("--force", action="store_true", help="emit even if the constraint filter fails")
    emit.set_defaults(func=cmd_emit)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ProviderConfigError, FileNotFoundError, FileExistsError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArtifactError, InvariantError, EmitError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
