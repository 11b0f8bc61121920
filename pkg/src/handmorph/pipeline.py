"""End-to-end orchestration: schema, variants, validation, parameters, filter, emission,
description, ranking, refinement, and batch evaluation."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import random
import shutil
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from . import metrics
from .cad import emit_scad, load_scad_template, verify_render
from .config import (
    IDENTITY_PRIOR,
    ConstraintConfig,
    RankConfig,
    RunConfig,
)
from .grammar import parse_grammar
from .llm import (
    ChatRequest,
    HttpProvider,
    LLMProvider,
    ProviderConfigError,
    ProviderError,
    RecordingProvider,
    ReplyError,
    StubProvider,
    build_request,
    request_json,
)
from .model import (
    DerivedFingerGeometry,
    DesignCandidate,
    FilterResult,
    GraspType,
    HandGraph,
    OphParams,
    SemanticSchema,
    canonical_json,
    serialize_artifact,
)
from .params import (
    apply_priors,
    check_constraints,
    derive_all,
    generate_params,
    params_from_reply,
    params_json,
    params_summary,
    sample_random_params,
    structure_summary,
)
from .validator import RevisionExhausted, revision_loop

log = logging.getLogger(__name__)

# Fixed stage order; manifest entries are sorted by it.
STAGES = ("schema", "grammar", "report", "graph", "params", "filter", "scad", "describe",
          "rank", "refine", "candidate", "summary")

# Rejection stages recorded on candidates.
REJECT_GRAMMAR = "grammar"
REJECT_VALIDATION = "validation"
REJECT_PARAMS = "params"
REJECT_FILTER = "filter"
REJECT_PROVIDER = "provider"


def packaged_path(*parts: str) -> Path:
    root = resources.files("handmorph").joinpath("data")
    for p in parts:
        root = root.joinpath(p)
    return Path(str(root))


def scenario_dir(name: str) -> Path:
    return packaged_path("fixtures", name)


# --------------------------------------------------------------------------
# Provider selection and call accounting


class CountingProvider:
    """Pass-through provider that tallies calls per (scope, purpose)."""

    def __init__(self, inner: LLMProvider):
        self.inner = inner
        self._lock = threading.Lock()
        self.counts: Dict[str, Dict[str, int]] = defaultdict(lambda: defaultdict(int))

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            self.counts[request.scope][request.purpose] += 1
        return self.inner.complete(request)

    def snapshot(self) -> Dict[str, Dict[str, int]]:
        with self._lock:
            return {s: dict(sorted(c.items())) for s, c in sorted(self.counts.items())}


def provider_from_config(config: RunConfig) -> LLMProvider:
    pc = config.provider
    if pc.kind in ("stub", "replay"):
        if pc.fixtures is None:
            if pc.kind == "replay":
                raise ProviderConfigError("replay provider needs a fixture directory")
            return StubProvider.from_dir(scenario_dir("happy_path"))
        path = Path(pc.fixtures)
        if not path.is_dir() and scenario_dir(pc.fixtures).is_dir():
            path = scenario_dir(pc.fixtures)
        return StubProvider.from_dir(path)
    http = HttpProvider.from_env(model=pc.model or None, timeout=pc.timeout_s,
                                 max_in_flight=pc.max_in_flight)
    if pc.kind == "record":
        if pc.fixtures is None:
            raise ProviderConfigError("record provider needs a fixture output directory")
        return RecordingProvider(http, Path(pc.fixtures))
    return http


# --------------------------------------------------------------------------
# Small helpers


def run_id_for(config: RunConfig) -> str:
    key = json.dumps({
        "task": config.task, "variants": config.variants, "cues": list(config.diversity_cues),
        "seed": config.seed,
    }, sort_keys=True)
    return "run-" + hashlib.sha256(key.encode("utf-8")).hexdigest()[:10]


def variant_id(index: int) -> str:
    return f"v{index + 1}"


def cue_for(config: RunConfig, index: int) -> str:
    cues = config.diversity_cues
    return cues[index % len(cues)] if cues else ""


def _scope(prefix: str, name: str) -> str:
    return f"{prefix}/{name}" if prefix else name


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def object_summary(schema: SemanticSchema) -> str:
    x, y, z = schema.object_size_mm
    return (f"{schema.object_name}: {x:g} x {y:g} x {z:g} mm, {schema.object_mass_g:g} g, "
            f"{schema.material}, fragility {schema.fragility.value}, friction {schema.surface_friction.value}")


def constraints_summary(c: ConstraintConfig) -> str:
    return "\n".join([
        f"finger count {c.finger_count_range[0]}-{c.finger_count_range[1]}",
        f"joint diameter {c.joint_diameter_range_mm[0]:g}-{c.joint_diameter_range_mm[1]:g} mm",
        f"link width {c.link_width_range_mm[0]:g}-{c.link_width_range_mm[1]:g} mm",
        f"link length/width {c.slenderness_range[0]:g}-{c.slenderness_range[1]:g}",
        f"finger length {c.finger_total_length_range_mm[0]:g}-{c.finger_total_length_range_mm[1]:g} mm",
        f"|mount angle| <= {c.mount_angle_abs_max_deg:g} deg, mounts >= {c.min_mount_separation_mm:g} mm apart",
        "build volume " + " x ".join(f"{v:g}" for v in c.build_volume_mm) + " mm",
    ])


def prior_for(config: RunConfig, schema: Optional[SemanticSchema]):
    return config.priors[schema.grasp_type] if schema is not None else IDENTITY_PRIOR


# --------------------------------------------------------------------------
# Per-variant generation


@dataclass
class VariantResult:
    index: int
    candidate: DesignCandidate
    geometry: Optional[List[DerivedFingerGeometry]] = None
    rationale: str = ""
    iterations: int = 0
    description_fallback: bool = False
    render_status: str = "skipped"
    rejection_stage: Optional[str] = None
    error: str = ""
    files: List[Tuple[str, str]] = field(default_factory=list)  # (stage, relative path)

    @property
    def vid(self) -> str:
        return self.candidate.variant_id


def extract_schema(task: str, provider: LLMProvider, *, scope: str = "", model: str = "") -> SemanticSchema:
    request = build_request("schema", {"task": task}, model=model, scope=scope)
    return request_json(provider, request, "semantic_schema", SemanticSchema.from_dict)


def generate_grammar(task: str, schema: SemanticSchema, cue: str, provider: LLMProvider, *,
                     scope: str = "", model: str = ""):
    request = build_request("grammar", {
        "task": task,
        "schema_json": serialize_artifact(schema).strip(),
        "design_cue": cue or "none; use your own judgement",
    }, model=model, scope=scope)
    return request_json(provider, request, "grammar", parse_grammar)


def describe_summary(graph: Optional[HandGraph], params: OphParams,
                     geometry: Sequence[DerivedFingerGeometry]) -> str:
    """Deterministic structure + geometry summary; also the fallback description."""
    parts = []
    if graph is not None:
        parts.append(structure_summary(graph))
    parts.append(params_summary(params, geometry))
    return "\n".join(parts)


def describe_candidate(
    candidate: DesignCandidate,
    geometry: Sequence[DerivedFingerGeometry],
    provider: LLMProvider,
    *,
    scope: str = "",
    model: str = "",
) -> Tuple[str, bool]:
    """Returns (description, fallback_used)."""
    summary = describe_summary(candidate.graph, candidate.params, geometry)
    request = build_request("describe", {"summary": summary}, model=model, scope=scope)
    try:
        reply = provider.complete(request).strip()
    except ProviderError as e:
        log.warning("describe failed for %s: %s", candidate.variant_id, e)
        return summary, True
    return (reply, False) if reply else (summary, True)


class _VariantRun:
    def __init__(self, config: RunConfig, provider: LLMProvider, schema: SemanticSchema, run_dir: Path,
                 run_id: str, scope_prefix: str):
        self.config = config
        self.provider = provider
        self.schema = schema
        self.run_dir = run_dir
        self.run_id = run_id
        self.scope_prefix = scope_prefix
        self.template = load_scad_template()

    def __call__(self, index: int) -> VariantResult:
        vid = variant_id(index)
        cue = cue_for(self.config, index)
        scope = _scope(self.scope_prefix, vid)
        model = self.config.provider.model
        vdir = self.run_dir / vid
        vdir.mkdir(parents=True, exist_ok=True)
        base = DesignCandidate(vid, self.schema, semantic_weight=self.config.ranking.w_sem, cue=cue)
        result = VariantResult(index, base)

        def save(stage: str, name: str, text: str):
            _write(vdir / name, text)
            result.files.append((stage, f"{vid}/{name}"))

        def reject(stage: str, reason: str, **changes):
            result.rejection_stage = stage
            result.candidate = dataclasses.replace(result.candidate, rejection=f"{stage}: {reason}", **changes)
            return result

        try:
            try:
                grammar = generate_grammar(self.config.task, self.schema, cue, self.provider,
                                           scope=scope, model=model)
            except ReplyError as e:
                return reject(REJECT_GRAMMAR, str(e))
            save("grammar", f"grammar_{vid}_0.json", serialize_artifact(grammar))

            def on_report(iteration, report, current):
                save("report", f"report_{vid}_{iteration}.json", serialize_artifact(report))
                if iteration > 1:
                    save("grammar", f"grammar_{vid}_{iteration - 1}.json", serialize_artifact(current))

            try:
                outcome = revision_loop(grammar, self.schema, self.provider, config=self.config.validator,
                                        scope=scope, model=model, on_report=on_report)
            except RevisionExhausted as e:
                result.iterations = len(e.reports)
                save("report", f"report_{vid}.json", serialize_artifact(e.reports[-1]))
                save("grammar", f"grammar_{vid}.json", serialize_artifact(e.grammar))
                return reject(REJECT_VALIDATION, str(e), grammar=e.grammar, graph=e.graph)
            result.iterations = outcome.iterations
            save("report", f"report_{vid}.json", serialize_artifact(outcome.report))
            save("grammar", f"grammar_{vid}.json", serialize_artifact(outcome.grammar))
            save("graph", f"graph_{vid}.json", serialize_artifact(outcome.graph))
            result.candidate = dataclasses.replace(result.candidate, grammar=outcome.grammar, graph=outcome.graph)

            try:
                raw, rationale = generate_params(outcome.graph, self.schema, self.provider,
                                                 scope=scope, model=model)
            except ReplyError as e:
                return reject(REJECT_PARAMS, str(e))
            result.rationale = rationale
            save("params", f"params_{vid}_raw.json", serialize_artifact(raw))
            params = apply_priors(raw, self.schema.grasp_type, self.config.priors)
            geometry = derive_all(params, self.config.ratios, prior_for(self.config, self.schema))
            result.geometry = geometry
            verdict = check_constraints(params, geometry, self.config.constraints)
            save("params", f"params_{vid}.json", serialize_artifact(params))
            save("filter", f"filter_{vid}.json", serialize_artifact(verdict))
            result.candidate = dataclasses.replace(result.candidate, params=params, filter_result=verdict)
            if not verdict.passed:
                return reject(REJECT_FILTER, "violated " + ", ".join(verdict.violated_checks))

            scad_name = f"hand_{self.run_id}_{vid}.scad"
            save("scad", scad_name, emit_scad(params, geometry, self.template))
            render = self._render(vdir / scad_name)
            result.render_status = render.status
            result.candidate = dataclasses.replace(result.candidate, scad_path=f"{vid}/{scad_name}")

            text, fallback = describe_candidate(result.candidate, geometry, self.provider, scope=scope,
                                                model=model)
            result.description_fallback = fallback
            result.candidate = dataclasses.replace(result.candidate, description=text)
            return result
        except ProviderError as e:
            result.error = str(e)
            return reject(REJECT_PROVIDER, str(e))

    def _render(self, path: Path):
        rc = self.config.render
        png = str(path.with_suffix(".png")) if rc.preview else None
        return verify_render(path, rc.renderer, timeout_s=rc.timeout_s, preview_png=png,
                             image_size=rc.image_size)


# --------------------------------------------------------------------------
# Ranking and refinement


@dataclass(frozen=True)
class RankEntry:
    variant_id: str
    index: int
    semantic_score: float
    size_score: float
    total_score: float
    semantic_justification: str = ""
    size_justification: str = ""
    flags: Tuple[str, ...] = ()


@dataclass(frozen=True)
class RankOutcome:
    entries: Tuple[RankEntry, ...]
    order: Tuple[str, ...]
    chosen: str
    refinement: str = "not_needed"  # not_needed | disabled | applied | reverted | unparseable
    refined: bool = False

    def __post_init__(self):
        by_id = {e.variant_id: e for e in self.entries}
        keys = [(-by_id[v].total_score, by_id[v].index) for v in self.order]
        if keys != sorted(keys) or set(self.order) != set(by_id):
            raise ValueError("rank order must sort by total descending, then variant index")

    def entry(self, vid: str) -> RankEntry:
        return next(e for e in self.entries if e.variant_id == vid)

    def to_dict(self) -> dict:
        return {
            "entries": [dataclasses.asdict(e) for e in self.entries],
            "order": list(self.order),
            "chosen": self.chosen,
            "refinement": self.refinement,
            "refined": self.refined,
        }


def _clamp10(x: float) -> float:
    return min(10.0, max(0.0, float(x)))


def _score(provider, name: str, bindings, scope: str, model: str) -> Tuple[float, str, Optional[str]]:
    request = build_request(name, bindings, model=model, scope=scope)
    try:
        value = request_json(provider, request, "rank_score")
    except ReplyError:
        return 0.0, "", f"{name}_unparseable"
    return _clamp10(value["score"]), value.get("justification", ""), None


def score_candidate(
    candidate: DesignCandidate,
    index: int,
    geometry: Sequence[DerivedFingerGeometry],
    rationale: str,
    task: str,
    provider: LLMProvider,
    weights: RankConfig,
    *,
    scope: str = "",
    model: str = "",
) -> RankEntry:
    summary = params_summary(candidate.params, geometry)
    sem, sem_j, f1 = _score(provider, "rank_semantic", {
        "task": task, "rationale": rationale or "(none given)", "params_summary": summary,
        "description": candidate.description,
    }, scope, model)
    size, size_j, f2 = _score(provider, "rank_size", {
        "task": task, "object_summary": object_summary(candidate.schema), "params_summary": summary,
        "description": candidate.description,
    }, scope, model)
    total = weights.w_sem * sem + weights.w_size * size
    return RankEntry(candidate.variant_id, index, sem, size, total, sem_j, size_j,
                     tuple(f for f in (f1, f2) if f))


def order_entries(entries: Sequence[RankEntry]) -> Tuple[str, ...]:
    return tuple(e.variant_id for e in sorted(entries, key=lambda e: (-e.total_score, e.index)))


def rank(
    survivors: Sequence[VariantResult],
    task: str,
    provider: LLMProvider,
    weights: RankConfig = RankConfig(),
    *,
    scope_prefix: str = "",
    model: str = "",
) -> RankOutcome:
    if not survivors:
        raise ValueError("nothing to rank")
    entries = tuple(
        score_candidate(r.candidate, r.index, r.geometry, r.rationale, task, provider, weights,
                        scope=_scope(scope_prefix, r.vid), model=model)
        for r in sorted(survivors, key=lambda r: r.index)
    )
    order = order_entries(entries)
    return RankOutcome(entries, order, order[0])


def with_scores(candidate: DesignCandidate, entry: RankEntry) -> DesignCandidate:
    return dataclasses.replace(candidate, semantic_score=entry.semantic_score, size_score=entry.size_score,
                               total_score=entry.total_score)


def apply_delta(params: OphParams, delta: Mapping) -> OphParams:
    """Apply a refine delta: listed fields take the given values, everything else is kept."""
    fingers = list(params.fingers)
    for item in delta.get("fingers", ()):
        i = item["index"]
        if not 0 <= i < len(fingers):
            raise ValueError(f"finger index {i} out of range for {len(fingers)} fingers")
        changes = {k: float(v) for k, v in item.items() if k != "index"}
        fingers[i] = dataclasses.replace(fingers[i], **changes)
    return OphParams(
        tuple(fingers),
        float(delta.get("palm_width_mm", params.palm_width_mm)),
        float(delta.get("palm_curvature", params.palm_curvature)),
    )


@dataclass
class RefineResult:
    status: str
    result: VariantResult
    entry: Optional[RankEntry] = None
    delta: Optional[dict] = None
    filter_result: Optional[FilterResult] = None


def refine(
    winner: VariantResult,
    entry: RankEntry,
    config: RunConfig,
    provider: LLMProvider,
    *,
    save=None,
    scope: str = "",
) -> RefineResult:
    """Optional single parameter refinement of the winner when it scores below the threshold."""
    rc = config.ranking
    if entry.total_score >= rc.quality_threshold:
        return RefineResult("not_needed", winner)
    if rc.max_refinements < 1:
        return RefineResult("disabled", winner)
    model = config.provider.model
    cand = winner.candidate
    request = build_request("refine", {
        "task": config.task,
        "params_json": params_json(cand.params),
        "scores": f"semantic {entry.semantic_score:g}/10, size {entry.size_score:g}/10, "
                  f"total {entry.total_score:g}/10",
        "justifications": f"- semantic: {entry.semantic_justification or '(none)'}\n"
                          f"- size: {entry.size_justification or '(none)'}",
        "constraints": constraints_summary(config.constraints),
    }, model=model, scope=scope)

    def check(value):
        return value, apply_delta(cand.params, value)

    try:
        delta, params = request_json(provider, request, "refine_delta", check)
    except ReplyError as e:
        log.warning("refine delta rejected: %s", e)
        return RefineResult("unparseable", winner)
    geometry = derive_all(params, config.ratios, prior_for(config, cand.schema))
    verdict = check_constraints(params, geometry, config.constraints)
    if save is not None:
        save("refine", f"refine_delta_{winner.vid}.json", canonical_json(delta))
    if not verdict.passed:
        return RefineResult("reverted", winner, delta=delta, filter_result=verdict)

    refined = dataclasses.replace(winner, geometry=geometry,
                                  candidate=dataclasses.replace(cand, params=params, filter_result=verdict))
    template = load_scad_template()
    if save is not None:
        save("refine", f"params_{winner.vid}_refined.json", serialize_artifact(params))
        save("scad", Path(cand.scad_path).name, emit_scad(params, geometry, template))
    text, fallback = describe_candidate(refined.candidate, geometry, provider, scope=scope, model=model)
    refined.description_fallback = fallback
    refined.candidate = dataclasses.replace(refined.candidate, description=text)
    new_entry = score_candidate(refined.candidate, winner.index, geometry, winner.rationale, config.task,
                                provider, rc, scope=scope, model=model)
    return RefineResult("applied", refined, new_entry, delta, verdict)


# --------------------------------------------------------------------------
# Run


@dataclass
class RunSummary:
    run_id: str
    run_dir: Path
    status: str  # ok | failed
    schema: Optional[SemanticSchema]
    results: List[VariantResult]
    outcome: Optional[RankOutcome]
    data: dict

    @property
    def survivors(self) -> List[VariantResult]:
        return [r for r in self.results if r.candidate.survived]

    @property
    def provider_failed(self) -> bool:
        return bool(self.results) and all(r.rejection_stage == REJECT_PROVIDER for r in self.results)


def _prepare_dir(run_dir: Path) -> None:
    if run_dir.exists():
        if not (run_dir / "manifest.json").is_file():
            raise FileExistsError(f"{run_dir} exists and is not a previous run directory")
        shutil.rmtree(run_dir)
    run_dir.mkdir(parents=True)


def run_task(
    config: RunConfig,
    provider: LLMProvider,
    *,
    out_dir: Optional[Path] = None,
    scope_prefix: str = "",
    clock=None,
) -> RunSummary:
    """Execute every stage for one task and persist the artifacts under ``<out>/<run_id>``."""
    if not config.task.strip():
        raise ValueError("task text is empty")
    counter = CountingProvider(provider)
    run_id = run_id_for(config)
    run_dir = Path(out_dir if out_dir is not None else config.output_dir) / run_id
    _prepare_dir(run_dir)
    files: List[Tuple[str, str]] = []

    def save(stage, name, text):
        _write(run_dir / name, text)
        files.append((stage, name))

    schema = extract_schema(config.task, counter, scope=scope_prefix, model=config.provider.model)
    save("schema", "schema.json", serialize_artifact(schema))

    worker = _VariantRun(config, counter, schema, run_dir, run_id, scope_prefix)
    with ThreadPoolExecutor(max_workers=min(config.workers, config.variants)) as pool:
        results = list(pool.map(worker, range(config.variants)))
    for r in results:
        files.extend(r.files)

    survivors = [r for r in results if r.candidate.survived]
    outcome = None
    if survivors:
        outcome = rank(survivors, config.task, counter, config.ranking, scope_prefix=scope_prefix,
                       model=config.provider.model)
        winner = next(r for r in survivors if r.vid == outcome.chosen)

        def vsave(stage, name, text):
            _write(run_dir / winner.vid / name, text)
            files.append((stage, f"{winner.vid}/{name}"))

        ref = refine(winner, outcome.entry(winner.vid), config, counter, save=vsave,
                     scope=_scope(scope_prefix, winner.vid))
        if ref.status == "applied":
            results[winner.index] = ref.result
            entries = tuple(ref.entry if e.variant_id == winner.vid else e for e in outcome.entries)
            outcome = RankOutcome(entries, order_entries(entries), winner.vid, "applied", True)
        else:
            outcome = dataclasses.replace(outcome, refinement=ref.status)
        for r in results:
            if r.candidate.survived:
                r.candidate = with_scores(r.candidate, outcome.entry(r.vid))
        save("rank", "rank.json", canonical_json(outcome.to_dict()))

    for r in results:
        name = f"{r.vid}/candidate_{r.vid}.json"
        save("candidate", name, serialize_artifact(r.candidate))

    data = summarize_run(config, run_id, schema, results, outcome, counter.snapshot())
    save("summary", "summary.json", canonical_json(data))
    write_manifest(run_dir, run_id, files, clock)
    status = data["status"]
    return RunSummary(run_id, run_dir, status, schema, results, outcome, data)


def summarize_run(config: RunConfig, run_id: str, schema, results: Sequence[VariantResult],
                  outcome: Optional[RankOutcome], calls) -> dict:
    survivors = [r for r in results if r.candidate.survived]
    valid = sum(1 for r in results if r.candidate.filter_result is not None and r.candidate.filter_result.passed)
    diversity = None
    if len(survivors) >= 2:
        td = metrics.task_diversity([r.candidate for r in survivors], config.diversity, config.ranges)
        diversity = {"score": td.score, "pairs": [
            {"a": survivors[p.a].vid, "b": survivors[p.b].vid, "text": p.text, "graph": p.graph,
             "geometry": p.geometry, "combined": p.combined} for p in td.pairs]}
    return {
        "run_id": run_id,
        "task": config.task,
        "status": "ok" if survivors else "failed",
        "grasp_type": schema.grasp_type.value if schema else None,
        "variants": len(results),
        "survivors": [r.vid for r in survivors],
        "mvr": metrics.mvr(valid, len(results)),
        "diversity": diversity,
        "gfl": {r.vid: metrics.gfl(r.geometry, r.candidate.params, config.constraints, config.gfl)
                for r in survivors},
        "rank": outcome.to_dict() if outcome else None,
        "variant_status": {r.vid: {
            "rejection": r.candidate.rejection,
            "iterations": r.iterations,
            "description_fallback": r.description_fallback,
            "render": r.render_status if r.candidate.survived else None,
            "cue": r.candidate.cue,
        } for r in results},
        "provider_calls": calls,
    }


def write_manifest(run_dir: Path, run_id: str, files: Sequence[Tuple[str, str]], clock=None) -> None:
    rank_of = {s: i for i, s in enumerate(STAGES)}
    latest = {}
    for stage, rel in files:
        latest[rel] = stage  # a re-written file keeps its last stage
    entries = []
    for rel, stage in sorted(latest.items(), key=lambda kv: (rank_of[kv[1]], kv[0])):
        digest = hashlib.sha256((run_dir / rel).read_bytes()).hexdigest()
        entries.append({"path": rel, "stage": stage, "sha256": digest})
    now = clock() if clock else datetime.now(timezone.utc).isoformat(timespec="seconds")
    body = {"run_id": run_id, "created_at": now, "files": entries}
    _write(run_dir / "manifest.json", canonical_json(body))


# --------------------------------------------------------------------------
# Batch evaluation


@dataclass(frozen=True)
class TaskSpec:
    task: str
    grasp_type_label: str


def load_tasks(path) -> List[TaskSpec]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(data, list) or not data:
        raise ValueError("task file must hold a non-empty JSON list")
    out = []
    for i, item in enumerate(data):
        if not isinstance(item, dict) or set(item) != {"task", "grasp_type_label"}:
            raise ValueError(f"task {i}: expected {{task, grasp_type_label}}")
        GraspType(item["grasp_type_label"])
        out.append(TaskSpec(item["task"], item["grasp_type_label"]))
    return out


MODES = ("full", "zero-shot", "random")


@dataclass
class CandidateRecord:
    task_index: int
    label: str
    variant: str
    params: Optional[OphParams]
    filter_result: Optional[FilterResult]
    geometry: Optional[List[DerivedFingerGeometry]] = None
    note: str = ""

    @property
    def valid(self) -> bool:
        return self.filter_result is not None and self.filter_result.passed


def zero_shot_params(task: str, provider: LLMProvider, *, scope: str, model: str = "") -> OphParams:
    request = build_request("params_zero_shot", {"task": task}, model=model, scope=scope)
    return request_json(provider, request, "params", params_from_reply)


def batch_eval(
    tasks: Sequence[TaskSpec],
    config: RunConfig,
    provider: Optional[LLMProvider],
    out_dir,
    mode: str = "full",
) -> Dict[str, Path]:
    """Evaluate a task list in one mode and write the metric tables under ``<out>/tables``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if mode != "random" and provider is None:
        raise ProviderConfigError(f"mode {mode} needs a provider")
    out = Path(out_dir)
    records: List[CandidateRecord] = []
    diversity_rows = []
    rng = random.Random(config.seed)
    for t, spec in enumerate(tasks):
        tid = f"t{t + 1:02d}"
        if mode == "full":
            cfg = dataclasses.replace(config, task=spec.task)
            try:
                summary = run_task(cfg, provider, out_dir=out / "runs" / tid, scope_prefix=tid)
            except ProviderError as e:
                log.warning("task %s failed: %s", tid, e)
                for v in range(config.variants):
                    records.append(CandidateRecord(t, spec.grasp_type_label, variant_id(v), None, None,
                                                   note=f"provider: {e}"))
                continue
            for r in summary.results:
                records.append(CandidateRecord(t, spec.grasp_type_label, r.vid, r.candidate.params,
                                               r.candidate.filter_result, r.geometry,
                                               note=r.candidate.rejection or ""))
            if summary.data["diversity"] is not None:
                diversity_rows.append((t, spec.grasp_type_label, summary.data["diversity"]))
            continue
        for v in range(config.variants):
            vid = variant_id(v)
            if mode == "random":
                params = sample_random_params(rng, config.ranges)
            else:
                try:
                    params = zero_shot_params(spec.task, provider, scope=f"{tid}/{vid}",
                                              model=config.provider.model)
                except ProviderError as e:
                    records.append(CandidateRecord(t, spec.grasp_type_label, vid, None, None,
                                                   note=f"provider: {e}"))
                    continue
            geometry = derive_all(params, config.ratios)
            verdict = check_constraints(params, geometry, config.constraints)
            records.append(CandidateRecord(t, spec.grasp_type_label, vid, params, verdict, geometry))
    return write_tables(out / "tables", mode, tasks, records, diversity_rows, config)


def _csv(path: Path, header: Sequence[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
    return path


def write_tables(tables: Path, mode: str, tasks, records: Sequence[CandidateRecord], diversity_rows,
                 config: RunConfig) -> Dict[str, Path]:
    paths = {}
    paths["filter"] = _csv(tables / "filter.csv", ["task", "grasp_type", "variant", "passed", "violations", "note"], [
        (f"t{r.task_index + 1:02d}", r.label, r.variant, int(r.valid),
         ";".join(r.filter_result.violated_checks) if r.filter_result else "", r.note)
        for r in records])

    groups = [("all", records)] + [
        (g.value, [r for r in records if r.label == g.value]) for g in GraspType]
    mvr_rows = []
    for name, rs in groups:
        if rs:
            valid = sum(r.valid for r in rs)
            mvr_rows.append((mode, name, valid, len(rs), repr(metrics.mvr(valid, len(rs)))))
    paths["mvr"] = _csv(tables / "mvr.csv", ["mode", "group", "valid", "total", "mvr"], mvr_rows)

    scores = [d["score"] for _, _, d in diversity_rows]
    div_rows = [(f"t{t + 1:02d}", label, d["score"]) for t, label, d in diversity_rows]
    if scores:
        s = metrics.summarize(scores)
        div_rows.append(("mean", "all", s["mean"]))
        div_rows.append(("std", "all", s["std"]))
    paths["diversity"] = _csv(tables / "diversity.csv", ["task", "grasp_type", "score"], div_rows)

    valid = [r for r in records if r.valid]
    gfl_rows = [(f"t{r.task_index + 1:02d}", r.label, r.variant,
                 metrics.gfl(r.geometry, r.params, config.constraints, config.gfl)) for r in valid]
    by_type = defaultdict(list)
    for _, label, _, value in gfl_rows:
        by_type[label].append(value)
    summary_rows = []
    for g in GraspType:
        if by_type[g.value]:
            s = metrics.summarize(by_type[g.value])
            summary_rows.append(("mean", g.value, "", s["mean"]))
            summary_rows.append(("std", g.value, "", s["std"]))
    paths["gfl"] = _csv(tables / "gfl.csv", ["task", "grasp_type", "variant", "gfl"], gfl_rows + summary_rows)

    features = [metrics.feature_vector(r.params, r.geometry) for r in valid]
    paths["features"] = _csv(tables / "features.csv", ["task", "grasp_type", "variant", *metrics.FeatureVector.names()], [
        (f"t{r.task_index + 1:02d}", r.label, r.variant, *(float(v) for v in dataclasses.astuple(f)))
        for r, f in zip(valid, features)])
    if len(features) >= 3:
        model = metrics.pca_fit(features, 2)
        points = metrics.pca_project(model, features)
        paths["pca"] = _csv(tables / "pca.csv", ["task", "grasp_type", "variant", "pc1", "pc2"], [
            (f"t{r.task_index + 1:02d}", r.label, r.variant, float(p[0]), float(p[1]))
            for r, p in zip(valid, points)])
    return paths


def recompute_mvr(filter_csv) -> Dict[str, float]:
    """MVR per group straight from a persisted per-candidate filter table."""
    counts = defaultdict(lambda: [0, 0])
    with open(filter_csv, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            for key in ("all", row["grasp_type"]):
                counts[key][0] += int(row["passed"])
                counts[key][1] += 1
    return {k: metrics.mvr(v, n) for k, (v, n) in counts.items()}
