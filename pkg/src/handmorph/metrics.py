"""Evaluation measures: validity rate, grasp force level, variant diversity, PCA."""

from __future__ import annotations

import math
import statistics
from collections import Counter
from dataclasses import astuple, dataclass, fields
from itertools import combinations
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from .config import ConstraintConfig, DiversityWeights, GflWeights, ParamRanges
from .grammar import CONNECTOR_TEXT, graph_distance, signature
from .model import (
    DerivedFingerGeometry,
    DesignCandidate,
    HandGrammar,
    OphParams,
)
from .params import footprint


def mvr(valid_count: int, total_count: int) -> float:
    """Morphology validity rate: valid / total."""
    if total_count <= 0:
        raise ValueError("total_count must be positive")
    if not 0 <= valid_count <= total_count:
        raise ValueError("valid_count must be within [0, total_count]")
    return valid_count / total_count


def _norm(value: float, bounds) -> float:
    lo, hi = bounds
    if hi <= lo:
        raise ValueError(f"degenerate normalization range {bounds}")
    return min(1.0, max(0.0, (value - lo) / (hi - lo)))


# --------------------------------------------------------------------------
# Grasp force level


@dataclass(frozen=True)
class GflFactors:
    joint: float
    width: float
    length: float
    count: float
    harmony: float


def gfl_factors(
    geometry: Sequence[DerivedFingerGeometry],
    params: OphParams,
    norms: ConstraintConfig = ConstraintConfig(),
) -> GflFactors:
    if not geometry:
        raise ValueError("gfl needs at least one finger")
    joints = [d for g in geometry for d in g.joint_diameters_mm]
    widths = [w for g in geometry for w in g.link_widths_mm]
    lengths = [g.total_length_mm for g in geometry]
    scales = [f.scale for f in params.fingers]
    mean_scale = statistics.fmean(scales)
    harmony = 1.0 - statistics.pstdev(scales) / mean_scale if mean_scale > 0 else 0.0
    return GflFactors(
        _norm(statistics.fmean(joints), norms.joint_diameter_range_mm),
        _norm(statistics.fmean(widths), norms.link_width_range_mm),
        _norm(statistics.fmean(lengths), norms.finger_total_length_range_mm),
        _norm(len(geometry), norms.finger_count_range),
        min(1.0, max(0.0, harmony)),
    )


def gfl_from_factors(factors: GflFactors, weights: GflWeights = GflWeights()) -> float:
    total = (weights.w_joint * factors.joint + weights.w_width * factors.width
             + weights.w_length * factors.length + weights.w_count * factors.count
             + weights.w_harmony * factors.harmony)
    return min(1.0, max(0.0, total))


def gfl(
    geometry: Sequence[DerivedFingerGeometry],
    params: OphParams,
    norms: ConstraintConfig = ConstraintConfig(),
    weights: GflWeights = GflWeights(),
) -> float:
    return gfl_from_factors(gfl_factors(geometry, params, norms), weights)


# --------------------------------------------------------------------------
# Feature vectors


@dataclass(frozen=True)
class FeatureVector:
    finger_count: float
    mean_finger_scale: float
    mean_metacarpal_mm: float
    palm_width_mm: float
    palm_curvature: float
    mount_angle_spread_deg: float
    mount_translation_spread_mm: float
    mean_joint_diameter_mm: float
    mean_link_slenderness: float
    total_hand_span_mm: float
    mean_finger_total_length_mm: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in astuple(self)):
            raise ValueError("feature values must be finite")

    @classmethod
    def names(cls) -> Tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)


FEATURE_DIM = len(fields(FeatureVector))


def feature_vector(params: OphParams, geometry: Sequence[DerivedFingerGeometry]) -> FeatureVector:
    angles = [f.mount_angle_deg for f in params.fingers]
    shifts = [f.mount_translation_mm for f in params.fingers]
    slender = [s / w for g in geometry for s, w in zip(g.segment_lengths_mm, g.link_widths_mm)]
    return FeatureVector(
        finger_count=float(params.finger_count),
        mean_finger_scale=statistics.fmean(f.scale for f in params.fingers),
        mean_metacarpal_mm=statistics.fmean(f.metacarpal_length_mm for f in params.fingers),
        palm_width_mm=params.palm_width_mm,
        palm_curvature=params.palm_curvature,
        mount_angle_spread_deg=max(angles) - min(angles),
        mount_translation_spread_mm=max(shifts) - min(shifts),
        mean_joint_diameter_mm=statistics.fmean(d for g in geometry for d in g.joint_diameters_mm),
        mean_link_slenderness=statistics.fmean(slender),
        total_hand_span_mm=footprint(params, geometry).x_mm,
        mean_finger_total_length_mm=statistics.fmean(g.total_length_mm for g in geometry),
    )


# --------------------------------------------------------------------------
# Diversity


def _canon(symbol: str, grammar: HandGrammar) -> str:
    letter = symbol[:1].upper()
    return "N" + letter if symbol in grammar.nonterminals else letter


def rule_tokens(grammar: HandGrammar) -> Counter:
    """Multiset of canonical rule tokens.

    Symbols are reduced to their kind letter (nonterminals get an ``N`` prefix),
    so renaming J1 to J4 changes nothing while adding a joint does.
    """
    tokens: Counter = Counter()
    for rule in grammar.rules:
        tokens[f"lhs:{_canon(rule.lhs, grammar)}"] += 1
        items = rule.rhs
        for item in items:
            tokens[f"sym:{_canon(item.symbol, grammar)}"] += 1
        for left, right in zip(items, items[1:]):
            conn = CONNECTOR_TEXT[left.connector]
            tokens[f"edge:{_canon(left.symbol, grammar)}{conn}{_canon(right.symbol, grammar)}"] += 1
    for sym in sorted(grammar.attributes):
        attrs = grammar.attributes[sym]
        if "via" in attrs:
            tokens[f"via:{_canon(sym, grammar)}:{_canon(attrs['via'], grammar)}"] += 1
    return tokens


def _jaccard(a: Counter, b: Counter) -> float:
    keys = set(a) | set(b)
    top = sum(max(a[k], b[k]) for k in keys)
    if top == 0:
        return 1.0
    return sum(min(a[k], b[k]) for k in keys) / top


def diversity_text(a: HandGrammar, b: HandGrammar) -> float:
    return 1.0 - _jaccard(rule_tokens(a), rule_tokens(b))


def _finger_vector(f, ranges: ParamRanges) -> Tuple[float, float, float, float]:
    return (
        _norm(f.mount_angle_deg, ranges.mount_angle_deg),
        _norm(f.mount_translation_mm, ranges.mount_translation_mm),
        _norm(f.metacarpal_length_mm, ranges.metacarpal_length_mm),
        _norm(f.scale, ranges.scale),
    )


def diversity_geometry(a: OphParams, b: OphParams, norms: ParamRanges = ParamRanges()) -> float:
    """Mean absolute difference of normalised parameters; unmatched fingers count as 1 per dim."""
    n = max(a.finger_count, b.finger_count)
    total = abs(_norm(a.palm_width_mm, norms.palm_width_mm) - _norm(b.palm_width_mm, norms.palm_width_mm))
    total += abs(_norm(a.palm_curvature, norms.palm_curvature) - _norm(b.palm_curvature, norms.palm_curvature))
    for i in range(n):
        if i < a.finger_count and i < b.finger_count:
            va, vb = _finger_vector(a.fingers[i], norms), _finger_vector(b.fingers[i], norms)
            total += sum(abs(x - y) for x, y in zip(va, vb))
        else:
            total += 4.0
    return total / (4 * n + 2)


@dataclass(frozen=True)
class PairDiversity:
    a: int
    b: int
    text: float
    graph: float
    geometry: float
    combined: float


@dataclass(frozen=True)
class TaskDiversity:
    score: float
    pairs: Tuple[PairDiversity, ...]


def pair_diversity(x: DesignCandidate, y: DesignCandidate, weights: DiversityWeights = DiversityWeights(),
                   norms: ParamRanges = ParamRanges()) -> Tuple[float, float, float, float]:
    for c in (x, y):
        if c.grammar is None or c.graph is None:
            raise ValueError(f"variant {c.variant_id} has no grammar/graph; diversity needs both")
    text = diversity_text(x.grammar, y.grammar)
    graph = graph_distance(signature(x.graph), signature(y.graph))
    geom = diversity_geometry(x.params, y.params, norms)
    combined = weights.text * text + weights.graph * graph + weights.geometry * geom
    return text, graph, geom, min(1.0, max(0.0, combined))


def task_diversity(
    variants: Sequence[DesignCandidate],
    weights: DiversityWeights = DiversityWeights(),
    norms: ParamRanges = ParamRanges(),
) -> TaskDiversity:
    """Mean weighted distance over all unordered variant pairs."""
    if len(variants) < 2:
        raise ValueError("task diversity needs at least 2 variants")
    pairs = []
    for i, j in combinations(range(len(variants)), 2):
        t, g, m, c = pair_diversity(variants[i], variants[j], weights, norms)
        pairs.append(PairDiversity(i, j, t, g, m, c))
    return TaskDiversity(statistics.fmean(p.combined for p in pairs), tuple(pairs))


# --------------------------------------------------------------------------
# PCA


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    scale: np.ndarray
    basis: np.ndarray  # (features, k), orthonormal columns
    eigenvalues: np.ndarray  # top k, descending
    explained_variance_ratio: np.ndarray


FeatureInput = Union[Sequence[FeatureVector], np.ndarray]


def _matrix(features: FeatureInput) -> np.ndarray:
    if isinstance(features, np.ndarray):
        x = np.asarray(features, dtype=float)
    else:
        x = np.array([f.as_array() if isinstance(f, FeatureVector) else f for f in features], dtype=float)
    if x.ndim != 2:
        raise ValueError("features must form a 2-D array")
    return x


def pca_fit(features: FeatureInput, k: int = 2) -> PcaModel:
    """Principal components of standardised features (sample statistics, ddof=1)."""
    x = _matrix(features)
    n, d = x.shape
    if not 1 <= k <= d:
        raise ValueError(f"k must be within [1, {d}]")
    if n < k + 1:
        raise ValueError(f"need at least {k + 1} samples for k={k}, got {n}")
    mean = x.mean(axis=0)
    std = x.std(axis=0, ddof=1)
    scale = np.where(std > 0, std, 1.0)
    z = (x - mean) / scale
    z[:, std == 0] = 0.0
    _, s, vt = np.linalg.svd(z, full_matrices=False)
    eig = s ** 2 / (n - 1)
    vectors = vt.T
    # Deterministic sign: largest-magnitude loading of each component is positive.
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    vectors = vectors * np.where(signs == 0, 1.0, signs)
    total = eig.sum()
    ratio = eig[:k] / total if total > 0 else np.zeros(k)
    return PcaModel(mean, scale, vectors[:, :k].copy(), eig[:k].copy(), ratio)


def pca_project(model: PcaModel, features: FeatureInput) -> np.ndarray:
    x = _matrix(features)
    if x.shape[1] != model.mean.shape[0]:
        raise ValueError(f"expected {model.mean.shape[0]} features, got {x.shape[1]}")
    z = (x - model.mean) / model.scale
    return z @ model.basis


def summarize(values: Sequence[float]) -> Dict[str, Optional[float]]:
    vals = list(values)
    if not vals:
        return {"n": 0, "mean": None, "std": None}
    return {"n": len(vals), "mean": statistics.fmean(vals),
            "std": statistics.pstdev(vals) if len(vals) > 1 else 0.0}
