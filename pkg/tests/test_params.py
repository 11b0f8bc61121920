import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import PAPER_GRAMMAR, make_params, make_schema
from handmorph.config import IDENTITY_PRIOR, ConstraintConfig, GraspPrior, GraspPriorTable, RatioConfig
from handmorph.grammar import expand, parse_grammar
from handmorph.llm import ReplyError, StubProvider
from handmorph.model import FingerParams, OphParams
from handmorph.params import (
    CHECK_IDS,
    apply_priors,
    check_constraints,
    derive_all,
    derive_geometry,
    footprint,
    generate_params,
)
from oracles import violated_checks

GRAPH = expand(parse_grammar(PAPER_GRAMMAR))
RATIOS = RatioConfig()
CFG = ConstraintConfig()


def params_reply(n, scale=0.8):
    return json.dumps({
        "fingers": [{"mount_angle_deg": 0, "mount_translation_mm": 25 * i, "metacarpal_length_mm": 30,
                     "scale": scale} for i in range(n)],
        "palm_width_mm": 80, "palm_curvature": 0.5, "rationale": "even spacing"})


def as_plain(p):
    return {"width": p.palm_width_mm, "fingers": [
        {"angle": f.mount_angle_deg, "shift": f.mount_translation_mm, "metacarpal": f.metacarpal_length_mm,
         "scale": f.scale} for f in p.fingers]}


# --------------------------------------------------------------------------
# Generation


def test_generate_params_three_fingers():
    stub = StubProvider({"params": [params_reply(3)]})
    params, rationale = generate_params(GRAPH, make_schema(), stub)
    assert params.finger_count == 3 and rationale == "even spacing"
    prompt = stub.requests[0].messages[-1].content
    assert "finger count: 3" in prompt and "3 joints, 2 links" in prompt


def test_generate_params_count_mismatch_repaired():
    stub = StubProvider({"params": [params_reply(4), params_reply(3)]})
    params, _ = generate_params(GRAPH, make_schema(), stub)
    assert params.finger_count == 3
    assert len(stub.calls) == 2
    assert "expected 3 finger entries" in stub.requests[1].messages[-1].content


def test_generate_params_count_mismatch_unfixed():
    stub = StubProvider({"params": [params_reply(4), params_reply(4)]})
    with pytest.raises(ReplyError):
        generate_params(GRAPH, make_schema(), stub)


def test_generate_params_unparseable():
    with pytest.raises(ReplyError):
        generate_params(GRAPH, make_schema(), StubProvider({"params": ["no", "json here"]}))


# --------------------------------------------------------------------------
# Priors


def test_identity_prior_unchanged():
    p = make_params()
    assert apply_priors(p, "force_based", IDENTITY_PRIOR) == p


def test_default_prior_rows():
    p = make_params(scale=1.0, curvature=0.2, metacarpal=30)
    fine = apply_priors(p, "fine_manipulation", GraspPriorTable())
    assert fine.fingers[0].scale == pytest.approx(0.85)
    assert fine.palm_curvature == pytest.approx(0.4)
    assert fine.fingers[0].metacarpal_length_mm == pytest.approx(25)
    force = apply_priors(p, "force_based", GraspPriorTable())
    assert force.fingers[0].scale == pytest.approx(1.2)
    assert force.fingers[0].metacarpal_length_mm == pytest.approx(35)


def test_metacarpal_floor():
    p = make_params(metacarpal=3)
    out = apply_priors(p, "fine_manipulation", GraspPriorTable())
    assert out.fingers[0].metacarpal_length_mm == 1.0


@given(st.floats(0.1, 3), st.floats(0.1, 3), st.floats(0.1, 3))
def test_scale_multipliers_compose(s, m1, m2):
    p = make_params(scale=s)
    twice = apply_priors(apply_priors(p, "tool_based", GraspPrior(m1)), "tool_based", GraspPrior(m2))
    assert twice.fingers[0].scale == pytest.approx(s * m1 * m2, rel=1e-12)


def test_prior_invariants():
    with pytest.raises(ValueError):
        GraspPrior(0)
    with pytest.raises(ValueError):
        GraspPrior(curvature_range=(0.8, 0.2))
    with pytest.raises(ValueError):
        GraspPrior(curvature_range=(0.0, 1.5))


# --------------------------------------------------------------------------
# Derived geometry


def test_total_length_summation():
    ratios = RatioConfig(base_phalanx_lengths_mm=(30, 20, 15), phalanx_ratios=(1, 1, 1))
    g = derive_geometry(FingerParams(0, 0, 40, 1), ratios)
    assert g.total_length_mm == 105
    assert g.segment_lengths_mm == (30, 20, 15)


def test_default_ratio_arithmetic():
    g = derive_geometry(FingerParams(0, 0, 30, 1), RATIOS)
    assert g.segment_lengths_mm == pytest.approx((40, 26, 20))
    assert g.joint_diameters_mm == pytest.approx((14, 12.6, 11.2))


def test_scale_zero_unreachable():
    with pytest.raises(ValueError):
        FingerParams(0, 0, 30, 0)


@given(st.floats(0.05, 5), st.floats(1, 200))
def test_scale_homogeneous(scale, metacarpal):
    one = derive_geometry(FingerParams(0, 0, metacarpal, scale), RATIOS)
    two = derive_geometry(FingerParams(0, 0, metacarpal, 2 * scale), RATIOS)
    for a, b in zip(one.segment_lengths_mm + one.joint_diameters_mm + one.link_widths_mm,
                    two.segment_lengths_mm + two.joint_diameters_mm + two.link_widths_mm):
        assert b == pytest.approx(2 * a, rel=1e-12)
    assert two.total_length_mm - metacarpal == pytest.approx(2 * (one.total_length_mm - metacarpal), rel=1e-12)


def test_priors_scale_joints_and_links():
    prior = GraspPriorTable()["force_based"]
    geo = derive_all(make_params(scale=1.0), RATIOS, prior)
    assert geo[0].joint_diameters_mm[0] == pytest.approx(14 * 1.2)
    assert geo[0].link_widths_mm[0] == pytest.approx(15 * 1.25)


# --------------------------------------------------------------------------
# Constraint filter


def check(p):
    return check_constraints(p, derive_all(p, RATIOS), CFG)


def test_mid_range_three_fingers_pass():
    assert check(make_params()).passed


def test_six_fingers_fail_count():
    r = check(make_params(n=6, spacing=14))
    assert not r.passed and "finger_count" in r.violated_checks


def test_slender_link_fails():
    ratios = RatioConfig(base_phalanx_lengths_mm=(100, 30, 30), base_link_width_mm=10, link_ratios=(1, 1, 1))
    p = make_params(scale=1.0, metacarpal=5)
    g = derive_all(p, ratios)
    assert g[0].segment_lengths_mm[0] / g[0].link_widths_mm[0] == pytest.approx(10)
    r = check_constraints(p, g, ConstraintConfig(finger_total_length_range_mm=(40, 400)))
    assert r.violated_checks == ("slenderness",)


def test_all_violations_reported_sorted():
    p = OphParams((FingerParams(80, 0, 30, 2.0), FingerParams(0, 5, 30, 0.8)), 200, 0.5)
    r = check(p)
    assert set(r.violated_checks) >= {"joint_link_dimensions", "initial_orientation", "fabrication_footprint"}
    keys = [v.check_id for v in r.violations]
    assert keys == sorted(keys)


def test_footprint_fits_for_passing_hand():
    p = make_params()
    box = footprint(p, derive_all(p, RATIOS))
    assert box.x_mm <= 220 and box.y_mm <= 220 and box.z_mm <= 250


def random_hand(rng):
    n = rng.randint(1, 7)
    fingers = tuple(FingerParams(rng.uniform(-90, 90), rng.uniform(-60, 60), rng.uniform(5, 80),
                                 rng.uniform(0.3, 1.8)) for _ in range(n))
    return OphParams(fingers, rng.uniform(30, 180), rng.uniform(0, 1))


@settings(max_examples=200)
@given(st.integers(0, 2**32 - 1))
def test_filter_matches_oracle(seed):
    p = random_hand(random.Random(seed))
    r = check(p)
    assert set(r.violated_checks) == violated_checks(as_plain(p), RATIOS, CFG)
    assert r.passed == (not r.violations)
    assert set(r.violated_checks) <= set(CHECK_IDS)


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_filter_order_independent(seed):
    rng = random.Random(seed)
    p = random_hand(rng)
    shuffled = list(p.fingers)
    rng.shuffle(shuffled)
    q = OphParams(tuple(shuffled), p.palm_width_mm, p.palm_curvature)
    assert check(p).violated_checks == check(q).violated_checks


@settings(max_examples=100)
@given(st.integers(0, 2**32 - 1))
def test_passing_hands_have_positive_lengths(seed):
    p = random_hand(random.Random(seed))
    geo = derive_all(p, RATIOS)
    if check_constraints(p, geo, CFG).passed:
        for g in geo:
            assert all(v > 0 and math.isfinite(v) for v in g.segment_lengths_mm + g.link_widths_mm)


def test_constraint_config_rejects_degenerate_range():
    with pytest.raises(ValueError):
        ConstraintConfig(slenderness_range=(6.0, 1.5))
