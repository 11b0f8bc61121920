"""Strict JSON schemas for every structured model reply, keyed by schema id."""

LEVEL = {"enum": ["low", "medium", "high"]}
NUMBER = {"type": "number"}
TEXT_LIST = {"type": "array", "items": {"type": "string"}}

SEMANTIC_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": [
        "task_goal", "object_name", "object_size_mm", "object_mass_g", "material",
        "fragility", "surface_friction", "force_level", "precision_level", "grasp_type",
    ],
    "properties": {
        "task_goal": {"type": "string", "minLength": 1},
        "object_name": {"type": "string"},
        "object_size_mm": {
            "type": "array", "minItems": 3, "maxItems": 3,
            "items": {"type": "number", "exclusiveMinimum": 0},
        },
        "object_mass_g": {"type": "number", "minimum": 0},
        "material": {"type": "string"},
        "fragility": LEVEL,
        "surface_friction": LEVEL,
        "force_level": LEVEL,
        "precision_level": LEVEL,
        "grasp_type": {"enum": ["force_based", "fine_manipulation", "tool_based"]},
    },
}

GRAMMAR = {
    "type": "object",
    "additionalProperties": False,
    "required": ["components", "structure_rules", "connection_rules", "layout_hints"],
    "properties": {
        "start_symbol": {"type": "string"},
        "components": {"type": ["object", "array"]},
        "structure_rules": {"type": "array"},
        "connection_rules": {"type": "array"},
        "layout_hints": {"type": "object"},
    },
}

ASSESSMENT = {
    "type": "object",
    "additionalProperties": False,
    "required": ["score"],
    "properties": {"score": NUMBER, "issues": TEXT_LIST, "suggestions": TEXT_LIST},
}

FINGER = {
    "type": "object",
    "additionalProperties": False,
    "required": ["mount_angle_deg", "mount_translation_mm", "metacarpal_length_mm", "scale"],
    "properties": {
        "mount_angle_deg": NUMBER,
        "mount_translation_mm": NUMBER,
        "metacarpal_length_mm": NUMBER,
        "scale": NUMBER,
    },
}

PARAMS = {
    "type": "object",
    "additionalProperties": False,
    "required": ["fingers", "palm_width_mm", "palm_curvature"],
    "properties": {
        "fingers": {"type": "array", "minItems": 1, "items": FINGER},
        "palm_width_mm": NUMBER,
        "palm_curvature": NUMBER,
        "rationale": {"type": "string"},
    },
}

RANK_SCORE = {
    "type": "object",
    "additionalProperties": False,
    "required": ["score"],
    "properties": {"score": NUMBER, "justification": {"type": "string"}},
}

REFINE_DELTA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "palm_width_mm": NUMBER,
        "palm_curvature": NUMBER,
        "fingers": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["index"],
                "properties": {"index": {"type": "integer", "minimum": 0}, **FINGER["properties"]},
            },
        },
        "rationale": {"type": "string"},
    },
}

REPLY_SCHEMAS = {
    "semantic_schema": SEMANTIC_SCHEMA,
    "grammar": GRAMMAR,
    "assessment": ASSESSMENT,
    "params": PARAMS,
    "rank_score": RANK_SCORE,
    "refine_delta": REFINE_DELTA,
}
