"""Reduced hand parameters: generation, grasp priors, derived geometry, constraint filter."""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass
from itertools import combinations
from typing import List, Optional, Sequence, Tuple

from .config import ConstraintConfig, GraspPrior, GraspPriorTable, ParamRanges, RatioConfig
from .grammar import finger_branches
from .llm import LLMProvider, build_request, request_json
from .model import (
    DerivedFingerGeometry,
    FilterResult,
    FingerParams,
    GraspType,
    HandGraph,
    NodeKind,
    OphParams,
    SemanticSchema,
    Violation,
    serialize_artifact,
)

# Constraint check ids, one per category. Violations sort by these strings.
FINGER_COUNT = "finger_count"
DIMENSIONS = "joint_link_dimensions"
SLENDERNESS = "slenderness"
FINGER_LENGTH = "finger_length"
ORIENTATION = "initial_orientation"
FOOTPRINT = "fabrication_footprint"
CHECK_IDS = (FINGER_COUNT, DIMENSIONS, SLENDERNESS, FINGER_LENGTH, ORIENTATION, FOOTPRINT)


# --------------------------------------------------------------------------
# Structure summary and LLM parameter generation


def chain_lengths(graph: HandGraph) -> List[Tuple[int, int]]:
    kinds = {n.id: n.kind for n in graph.nodes}
    out = []
    for branch in finger_branches(graph):
        members = [kinds[m] for m in branch.nodes]
        out.append((members.count(NodeKind.JOINT), members.count(NodeKind.LINK)))
    return out


def structure_summary(graph: HandGraph) -> str:
    chains = chain_lengths(graph)
    lines = [f"finger count: {len(chains)}"]
    for i, (joints, links) in enumerate(chains):
        lines.append(f"finger {i}: {joints} joints, {links} links")
    return "\n".join(lines)


def params_from_reply(value: dict) -> OphParams:
    fingers = tuple(FingerParams(**f) for f in value["fingers"])
    return OphParams(fingers, value["palm_width_mm"], value["palm_curvature"])


def generate_params(
    structure: HandGraph,
    schema: SemanticSchema,
    provider: LLMProvider,
    *,
    scope: str = "",
    model: str = "",
) -> Tuple[OphParams, str]:
    """Ask the provider for a parameter dictionary matching the structure's finger count.

    A count mismatch or invalid record triggers one repair round-trip; a second
    failure raises ``ReplyError``. Returns the params and the model's rationale.
    """
    count = len(chain_lengths(structure))
    request = build_request("params", {
        "schema_json": serialize_artifact(schema).strip(),
        "structure_summary": structure_summary(structure),
        "finger_count": count,
        "grasp_type": schema.grasp_type.value,
    }, model=model, scope=scope)

    def check(value):
        got = len(value["fingers"])
        if got != count:
            raise ValueError(f"expected {count} finger entries to match the structure, got {got}")
        return params_from_reply(value), value.get("rationale", "")

    return request_json(provider, request, "params", check)


# --------------------------------------------------------------------------
# Priors and derived geometry


def apply_priors(params: OphParams, grasp_type, priors) -> OphParams:
    """Scale fingers, offset metacarpals (floored at 1 mm) and clamp curvature."""
    row: GraspPrior = priors[GraspType(grasp_type)] if isinstance(priors, GraspPriorTable) else priors
    lo, hi = row.curvature_range
    fingers = tuple(
        FingerParams(
            f.mount_angle_deg,
            f.mount_translation_mm,
            max(1.0, f.metacarpal_length_mm + row.bone_length_offset_mm),
            f.scale * row.finger_scale_multiplier,
        )
        for f in params.fingers
    )
    return OphParams(fingers, params.palm_width_mm, min(hi, max(lo, params.palm_curvature)))


def derive_geometry(
    finger: FingerParams,
    ratios: RatioConfig,
    joint_multiplier: float = 1.0,
    link_multiplier: float = 1.0,
) -> DerivedFingerGeometry:
    s = finger.scale
    segments = tuple(s * b * r for b, r in zip(ratios.base_phalanx_lengths_mm, ratios.phalanx_ratios))
    joints = tuple(s * ratios.base_joint_diameter_mm * r * joint_multiplier for r in ratios.joint_ratios)
    links = tuple(s * ratios.base_link_width_mm * r * link_multiplier for r in ratios.link_ratios)
    return DerivedFingerGeometry(
        metacarpal_length_mm=finger.metacarpal_length_mm,
        segment_lengths_mm=segments,
        joint_diameters_mm=joints,
        link_widths_mm=links,
        total_length_mm=finger.metacarpal_length_mm + sum(segments),
    )


def derive_all(params: OphParams, ratios: RatioConfig, prior: Optional[GraspPrior] = None):
    jm = prior.joint_size_multiplier if prior else 1.0
    lm = prior.link_width_multiplier if prior else 1.0
    return [derive_geometry(f, ratios, jm, lm) for f in params.fingers]


# --------------------------------------------------------------------------
# Constraint filter


@dataclass(frozen=True)
class Footprint:
    x_mm: float
    y_mm: float
    z_mm: float


def footprint(params: OphParams, geometry: Sequence[DerivedFingerGeometry]) -> Footprint:
    """Conservative axis-aligned box around a flat, fully extended hand.

    x: across the palm, symmetric about its centre, each finger reaching
       |translation| + length*|sin(angle)| plus half its thickest section.
    y: palm depth (taken equal to palm width) plus the longest finger.
    z: thickest joint, the print height of a hand lying flat.
    """
    half_x = params.palm_width_mm / 2
    for f, g in zip(params.fingers, geometry):
        thick = max(*g.joint_diameters_mm, *g.link_widths_mm)
        reach = abs(f.mount_translation_mm) + g.total_length_mm * abs(math.sin(math.radians(f.mount_angle_deg)))
        half_x = max(half_x, reach + thick / 2)
    y = params.palm_width_mm + max(g.total_length_mm for g in geometry)
    z = max(max(g.joint_diameters_mm) for g in geometry)
    return Footprint(2 * half_x, y, z)


def _within(value: float, bounds) -> bool:
    return bounds[0] <= value <= bounds[1]


def check_constraints(
    params: OphParams,
    geometry: Sequence[DerivedFingerGeometry],
    config: ConstraintConfig,
) -> FilterResult:
    """Evaluate every check category and return all violations, sorted by check id."""
    if len(geometry) != params.finger_count:
        raise ValueError("geometry must be derived for every finger")
    out: List[Violation] = []
    n = params.finger_count
    if not _within(n, config.finger_count_range):
        out.append(Violation(FINGER_COUNT, f"{n} fingers outside {list(config.finger_count_range)}"))
    for i, (f, g) in enumerate(zip(params.fingers, geometry)):
        for j, d in enumerate(g.joint_diameters_mm):
            if not _within(d, config.joint_diameter_range_mm):
                out.append(Violation(DIMENSIONS, f"joint {j} diameter {d:.2f} mm outside "
                                                 f"{list(config.joint_diameter_range_mm)}", i))
        for j, w in enumerate(g.link_widths_mm):
            if not _within(w, config.link_width_range_mm):
                out.append(Violation(DIMENSIONS, f"link {j} width {w:.2f} mm outside "
                                                 f"{list(config.link_width_range_mm)}", i))
        for j, (length, w) in enumerate(zip(g.segment_lengths_mm, g.link_widths_mm)):
            ratio = length / w
            if not _within(ratio, config.slenderness_range):
                out.append(Violation(SLENDERNESS, f"link {j} slenderness {ratio:.2f} outside "
                                                  f"{list(config.slenderness_range)}", i))
        if not _within(g.total_length_mm, config.finger_total_length_range_mm):
            out.append(Violation(FINGER_LENGTH, f"finger length {g.total_length_mm:.2f} mm outside "
                                                f"{list(config.finger_total_length_range_mm)}", i))
        if abs(f.mount_angle_deg) > config.mount_angle_abs_max_deg:
            out.append(Violation(ORIENTATION, f"mount angle {f.mount_angle_deg:.1f} deg exceeds "
                                              f"+/-{config.mount_angle_abs_max_deg}", i))
    for i, j in combinations(range(n), 2):
        gap = abs(params.fingers[i].mount_translation_mm - params.fingers[j].mount_translation_mm)
        if gap < config.min_mount_separation_mm:
            out.append(Violation(ORIENTATION, f"fingers {i} and {j} mounted {gap:.1f} mm apart, "
                                              f"below {config.min_mount_separation_mm}", i))
    box = footprint(params, geometry)
    for axis, extent, limit in zip("xyz", (box.x_mm, box.y_mm, box.z_mm), config.build_volume_mm):
        if extent > limit:
            out.append(Violation(FOOTPRINT, f"{axis} extent {extent:.1f} mm exceeds build volume {limit}"))
    return FilterResult(not out, tuple(out))


# --------------------------------------------------------------------------
# Random baseline


def sample_random_params(rng: random.Random, ranges: ParamRanges) -> OphParams:
    """Uniform sample of every reduced parameter within its feasible range, task-agnostic."""
    n = rng.randint(*ranges.finger_count)
    fingers = tuple(
        FingerParams(
            rng.uniform(*ranges.mount_angle_deg),
            rng.uniform(*ranges.mount_translation_mm),
            rng.uniform(*ranges.metacarpal_length_mm),
            rng.uniform(*ranges.scale),
        )
        for _ in range(n)
    )
    return OphParams(fingers, rng.uniform(*ranges.palm_width_mm), rng.uniform(*ranges.palm_curvature))


def params_summary(params: OphParams, geometry: Sequence[DerivedFingerGeometry]) -> str:
    lines = [f"palm width {params.palm_width_mm:.1f} mm, palm curvature {params.palm_curvature:.2f}, "
             f"{params.finger_count} fingers"]
    for i, (f, g) in enumerate(zip(params.fingers, geometry)):
        seg = ", ".join(f"{v:.1f}" for v in g.segment_lengths_mm)
        lines.append(
            f"finger {i}: angle {f.mount_angle_deg:.1f} deg, offset {f.mount_translation_mm:.1f} mm, "
            f"metacarpal {f.metacarpal_length_mm:.1f} mm, scale {f.scale:.3f}, phalanges [{seg}] mm, "
            f"joint diameter {max(g.joint_diameters_mm):.1f} mm, total length {g.total_length_mm:.1f} mm")
    return "\n".join(lines)


def params_json(params: OphParams) -> str:
    return json.dumps(params.to_dict(), sort_keys=True)
