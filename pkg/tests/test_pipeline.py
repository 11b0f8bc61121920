import csv
import dataclasses
import json
import shutil

import pytest

from handmorph.config import RankConfig, RunConfig
from handmorph.llm import StubProvider
from handmorph.model import deserialize_artifact
from handmorph.pipeline import (
    RankEntry,
    RankOutcome,
    apply_delta,
    batch_eval,
    load_tasks,
    order_entries,
    packaged_path,
    recompute_mvr,
    run_task,
    scenario_dir,
)

from conftest import make_params

TASK = "lift a water bottle from a table"
FIXED_CLOCK = lambda: "2026-01-01T00:00:00+00:00"  # noqa: E731


def run(scenario, tmp_path, **changes):
    config = dataclasses.replace(RunConfig(task=TASK), **changes)
    provider = StubProvider.from_dir(scenario if not isinstance(scenario, str) else scenario_dir(scenario))
    return run_task(config, provider, out_dir=tmp_path, clock=FIXED_CLOCK)


def variant_calls(iterations=1, refined=False):
    """Provider calls for one surviving variant: grammar, k assessments, k-1 revisions,
    params, description and two ranking scores; refinement adds a delta, a new
    description and a re-score."""
    calls = {"grammar": 1, "assess": iterations, "params": 1, "describe": 1, "rank_semantic": 1, "rank_size": 1}
    if iterations > 1:
        calls["revise"] = iterations - 1
    if refined:
        calls.update(refine=1, describe=2, rank_semantic=2, rank_size=2)
    return dict(sorted(calls.items()))


# --------------------------------------------------------------------------
# Scenarios


def test_happy_path_artifacts(tmp_path):
    s = run("happy_path", tmp_path)
    assert s.status == "ok" and len(s.survivors) == 3
    for vid in ("v1", "v2", "v3"):
        vdir = s.run_dir / vid
        for name in (f"candidate_{vid}.json", f"grammar_{vid}.json", f"graph_{vid}.json", f"params_{vid}.json",
                     f"filter_{vid}.json", f"report_{vid}.json"):
            assert (vdir / name).is_file(), name
        scad = list(vdir.glob("*.scad"))
        assert len(scad) == 1 and "{{" not in scad[0].read_text()
        cand = deserialize_artifact((vdir / f"candidate_{vid}.json").read_text(), "candidate")
        assert cand.survived and cand.scad_path == f"{vid}/{scad[0].name}"
    manifest = json.loads((s.run_dir / "manifest.json").read_text())
    listed = {f["path"] for f in manifest["files"]}
    on_disk = {p.relative_to(s.run_dir).as_posix() for p in s.run_dir.rglob("*") if p.is_file()}
    assert listed == on_disk - {"manifest.json"}


def test_happy_path_call_counts(tmp_path):
    s = run("happy_path", tmp_path)
    calls = s.data["provider_calls"]
    assert calls[""] == {"schema": 1}
    for vid in ("v1", "v2", "v3"):
        assert calls[vid] == variant_calls()


def test_one_revision_call_counts(tmp_path):
    s = run("one_revision", tmp_path)
    calls = s.data["provider_calls"]
    assert calls["v1"] == variant_calls(iterations=2)
    assert calls["v2"] == calls["v3"] == variant_calls()
    assert s.data["variant_status"]["v1"]["iterations"] == 2
    assert (s.run_dir / "v1" / "grammar_v1_1.json").is_file()


def test_refinement_call_counts(tmp_path):
    s = run("refinement", tmp_path)
    calls = s.data["provider_calls"]
    assert s.outcome.refinement == "applied" and s.outcome.refined
    winner = s.outcome.chosen
    for vid in ("v1", "v2", "v3"):
        assert calls[vid] == variant_calls(refined=vid == winner)
    assert (s.run_dir / winner / f"refine_delta_{winner}.json").is_file()
    assert (s.run_dir / winner / f"params_{winner}_refined.json").is_file()


def test_rank_totals_and_order(tmp_path):
    s = run("happy_path", tmp_path)
    for e in s.outcome.entries:
        assert e.total_score == pytest.approx(0.6 * e.semantic_score + 0.4 * e.size_score, abs=1e-9)
    assert s.outcome.order[0] == s.outcome.chosen
    saved = json.loads((s.run_dir / "rank.json").read_text())
    assert saved["order"] == list(s.outcome.order)


def test_rank_tie_breaks_by_index():
    entries = (RankEntry("v2", 1, 8, 8, 8.0), RankEntry("v1", 0, 8, 8, 8.0), RankEntry("v3", 2, 9, 9, 9.0))
    assert order_entries(entries) == ("v3", "v1", "v2")
    with pytest.raises(ValueError):
        RankOutcome(entries, ("v3", "v2", "v1"), "v3")


def test_filter_fail_scenario(tmp_path):
    s = run("filter_fail", tmp_path)
    assert s.data["mvr"] == pytest.approx(2 / 3)
    assert s.data["variant_status"]["v2"]["rejection"].startswith("filter")
    assert s.data["provider_calls"]["v2"] == {"assess": 1, "grammar": 1, "params": 1}
    assert not list((s.run_dir / "v2").glob("*.scad"))


def test_all_invalid_fails(tmp_path):
    s = run("all_invalid", tmp_path)
    assert s.status == "failed" and s.outcome is None and not s.provider_failed
    assert not (s.run_dir / "rank.json").exists()


def test_no_diversity_vs_cued(tmp_path):
    flat = run("no_diversity", tmp_path / "a", diversity_cues=())
    cued = run("happy_path", tmp_path / "b")
    assert flat.data["diversity"]["score"] == 0.0
    assert cued.data["diversity"]["score"] > 0


def test_rerun_byte_identical(tmp_path):
    a = run("one_revision", tmp_path / "a")
    b = run("one_revision", tmp_path / "b")
    files_a = sorted(p.relative_to(a.run_dir) for p in a.run_dir.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b.run_dir) for p in b.run_dir.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a.run_dir / rel).read_bytes() == (b.run_dir / rel).read_bytes(), rel


def test_rerun_into_same_dir_replaces_previous(tmp_path):
    first = run("happy_path", tmp_path)
    second = run("happy_path", tmp_path)
    assert first.run_dir == second.run_dir and second.status == "ok"


def test_refuses_foreign_directory(tmp_path):
    s = run("happy_path", tmp_path)
    shutil.rmtree(s.run_dir)
    s.run_dir.mkdir()
    (s.run_dir / "notes.txt").write_text("mine")
    with pytest.raises(FileExistsError):
        run("happy_path", tmp_path)


def test_empty_task_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_task(RunConfig(task="  "), StubProvider.from_dir(scenario_dir("happy_path")), out_dir=tmp_path)


# --------------------------------------------------------------------------
# Refinement and description variants


def copy_scenario(name, tmp_path):
    target = tmp_path / name
    shutil.copytree(scenario_dir(name), target)
    return target


def test_refine_disabled(tmp_path):
    s = run("refinement", tmp_path, ranking=RankConfig(max_refinements=0))
    assert s.outcome.refinement == "disabled"
    assert "refine" not in s.data["provider_calls"][s.outcome.chosen]


def test_refine_reverted_when_filter_fails(tmp_path):
    d = copy_scenario("refinement", tmp_path)
    (d / "v1" / "refine_0.json").write_text(json.dumps({"fingers": [{"index": 0, "scale": 3.0}]}))
    s = run(d, tmp_path / "out")
    assert s.outcome.refinement == "reverted" and not s.outcome.refined
    assert s.data["provider_calls"]["v1"]["describe"] == 1


def test_refine_unparseable(tmp_path):
    d = copy_scenario("refinement", tmp_path)
    for i in range(2):
        (d / "v1" / f"refine_{i}.json").write_text("no delta today")
    s = run(d, tmp_path / "out")
    assert s.outcome.refinement == "unparseable"


def test_describe_fallback(tmp_path):
    d = copy_scenario("happy_path", tmp_path)
    (d / "v1" / "describe_0.json").write_text('""')
    s = run(d, tmp_path / "out")
    assert s.data["variant_status"]["v1"]["description_fallback"] is True
    v1 = next(r for r in s.results if r.vid == "v1")
    assert "palm" in v1.candidate.description
    assert s.status == "ok"


def test_apply_delta_keeps_unlisted_fields():
    p = make_params()
    q = apply_delta(p, {"fingers": [{"index": 1, "scale": 0.9}], "palm_width_mm": 85})
    assert q.fingers[1].scale == 0.9 and q.fingers[0] == p.fingers[0]
    assert q.palm_width_mm == 85 and q.palm_curvature == p.palm_curvature


# --------------------------------------------------------------------------
# Batch evaluation


TASKS = load_tasks(packaged_path("tasks", "tasks30.json"))


def read_mvr(path):
    with open(path, newline="") as fh:
        return {r["group"]: r for r in csv.DictReader(fh)}


def test_tasks30_balanced():
    assert len(TASKS) == 30
    labels = [t.grasp_type_label for t in TASKS]
    assert {labels.count(g) for g in set(labels)} == {10}


def test_random_batch_recomputes_exactly(tmp_path):
    paths = batch_eval(TASKS, RunConfig(), None, tmp_path, "random")
    table = read_mvr(paths["mvr"])
    assert table["all"]["total"] == "90"
    for group, value in recompute_mvr(paths["filter"]).items():
        assert table[group]["mvr"] == repr(value)


def test_random_batch_deterministic(tmp_path):
    a = batch_eval(TASKS, RunConfig(seed=7), None, tmp_path / "a", "random")
    b = batch_eval(TASKS, RunConfig(seed=7), None, tmp_path / "b", "random")
    for key in a:
        assert a[key].read_bytes() == b[key].read_bytes()


def test_zero_shot_one_call_per_variant(tmp_path):
    stub = StubProvider.from_dir(scenario_dir("happy_path"))
    paths = batch_eval(TASKS[:4], RunConfig(), stub, tmp_path, "zero-shot")
    assert stub.call_counts() == {"params": 12}
    assert read_mvr(paths["mvr"])["all"]["total"] == "12"
    assert "pca" in paths


def test_full_batch_tables(tmp_path):
    stub = StubProvider.from_dir(scenario_dir("happy_path"))
    paths = batch_eval(TASKS[:3], RunConfig(), stub, tmp_path, "full")
    with open(paths["diversity"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["task"] for r in rows] == ["t01", "t02", "t03", "mean", "std"]
    assert stub.call_counts("t01") == {"schema": 1}
    assert stub.call_counts("t02/v3") == variant_calls()
    assert recompute_mvr(paths["filter"])["all"] == 1.0


def test_mvr_consistent_across_modules(tmp_path):
    """The run summary, the batch table and the candidate files agree on validity."""
    s = run("filter_fail", tmp_path / "run")
    valid = sum(1 for r in s.results if r.candidate.filter_result and r.candidate.filter_result.passed)
    assert s.data["mvr"] == valid / len(s.results)
    stub = StubProvider.from_dir(scenario_dir("filter_fail"))
    paths = batch_eval(TASKS[:1], RunConfig(), stub, tmp_path / "batch", "full")
    assert float(read_mvr(paths["mvr"])["all"]["mvr"]) == s.data["mvr"]


def test_bad_mode_and_missing_provider(tmp_path):
    with pytest.raises(ValueError):
        batch_eval(TASKS, RunConfig(), None, tmp_path, "ablation")
    with pytest.raises(Exception, match="needs a provider"):
        batch_eval(TASKS, RunConfig(), None, tmp_path, "full")


def test_load_tasks_rejects_bad_rows(tmp_path):
    bad = tmp_path / "t.json"
    bad.write_text(json.dumps([{"task": "x", "grasp_type_label": "pinch"}]))
    with pytest.raises(ValueError):
        load_tasks(bad)
    bad.write_text("[]")
    with pytest.raises(ValueError):
        load_tasks(bad)
