"""OpenSCAD emission by placeholder substitution, plus optional render verification."""

from __future__ import annotations

import json
import re
import subprocess
import tempfile
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .llm.prompts import PLACEHOLDER
from .model import DerivedFingerGeometry, OphParams

DEFAULT_TEMPLATE = "oph_hand"
VALUE_TYPES = ("number", "integer", "vector", "matrix")


class TemplateError(ValueError):
    pass


class EmitError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    name: str
    type: str
    unit: str = ""


@dataclass(frozen=True)
class ScadTemplate:
    name: str
    text: str
    slots: Tuple[Slot, ...]
    capacity: int = 8

    def __post_init__(self):
        tokens = set(PLACEHOLDER.findall(self.text))
        declared = {s.name for s in self.slots}
        missing = sorted(tokens - declared)
        unused = sorted(declared - tokens)
        if missing:
            raise TemplateError(f"template {self.name}: placeholder {missing[0]} not in manifest")
        if unused:
            raise TemplateError(f"template {self.name}: manifest entry {unused[0]} not used in template")
        for s in self.slots:
            if s.type not in VALUE_TYPES:
                raise TemplateError(f"template {self.name}: slot {s.name} has unknown type {s.type!r}")
        if self.capacity < 1:
            raise TemplateError("capacity must be >= 1")


def parse_manifest(data: Mapping) -> Tuple[Tuple[Slot, ...], int]:
    slots = tuple(
        Slot(name, spec.get("type", "number"), spec.get("unit", ""))
        for name, spec in sorted(data.get("placeholders", {}).items())
    )
    return slots, int(data.get("capacity", 8))


def load_scad_template(name: str = DEFAULT_TEMPLATE, directory: Optional[Path] = None) -> ScadTemplate:
    """Load ``<name>.scad`` and ``<name>.manifest.json`` from a directory or the package data."""
    if directory is not None:
        base = Path(directory)
        text = (base / f"{name}.scad").read_text(encoding="utf-8")
        manifest = json.loads((base / f"{name}.manifest.json").read_text(encoding="utf-8"))
    else:
        root = resources.files("handmorph").joinpath("data").joinpath("templates")
        text = root.joinpath(f"{name}.scad").read_text(encoding="utf-8")
        manifest = json.loads(root.joinpath(f"{name}.manifest.json").read_text(encoding="utf-8"))
    slots, capacity = parse_manifest(manifest)
    return ScadTemplate(name, text, slots, capacity)


def scad_number(x: float) -> str:
    """Six significant digits, no trailing zeros; OpenSCAD-compatible."""
    text = f"{float(x):.6g}"
    return "0" if text == "-0" else text


def _literal(value, kind: str) -> str:
    if kind == "integer":
        return str(int(value))
    if kind == "number":
        return scad_number(value)
    if kind == "vector":
        return "[" + ", ".join(scad_number(v) for v in value) + "]"
    return "[" + ", ".join("[" + ", ".join(scad_number(v) for v in row) + "]" for row in value) + "]"


def scad_values(params: OphParams, geometry: Sequence[DerivedFingerGeometry]) -> Dict[str, object]:
    """Every quantity a template may bind, keyed by placeholder name."""
    return {
        "finger_count": params.finger_count,
        "palm_width_mm": params.palm_width_mm,
        "palm_curvature": params.palm_curvature,
        "mount_angles_deg": [f.mount_angle_deg for f in params.fingers],
        "mount_translations_mm": [f.mount_translation_mm for f in params.fingers],
        "metacarpal_lengths_mm": [f.metacarpal_length_mm for f in params.fingers],
        "finger_scales": [f.scale for f in params.fingers],
        "segment_lengths_mm": [list(g.segment_lengths_mm) for g in geometry],
        "joint_diameters_mm": [list(g.joint_diameters_mm) for g in geometry],
        "link_widths_mm": [list(g.link_widths_mm) for g in geometry],
        "total_lengths_mm": [g.total_length_mm for g in geometry],
    }


def emit_scad(
    params: OphParams,
    geometry: Sequence[DerivedFingerGeometry],
    template: Optional[ScadTemplate] = None,
) -> str:
    template = template or load_scad_template()
    if len(geometry) != params.finger_count:
        raise EmitError("geometry must be derived for every finger")
    if params.finger_count > template.capacity:
        raise EmitError(f"{params.finger_count} fingers exceed template capacity {template.capacity}")
    values = scad_values(params, geometry)
    kinds = {s.name: s.type for s in template.slots}
    for slot in template.slots:
        if slot.name not in values:
            raise EmitError(f"placeholder {slot.name} is not covered by the hand parameters")

    text = PLACEHOLDER.sub(lambda m: _literal(values[m.group(1)], kinds[m.group(1)]), template.text)
    if "{{" in text:
        raise EmitError("unfilled placeholder left in output")
    return text


# --------------------------------------------------------------------------
# Rendering


@dataclass(frozen=True)
class RenderResult:
    status: str  # ok | skipped | failure
    returncode: Optional[int] = None
    diagnostics: str = ""
    outputs: Tuple[str, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def verify_render(
    scad_path,
    renderer_path: Optional[str] = None,
    *,
    timeout_s: float = 120.0,
    preview_png: Optional[str] = None,
    image_size: Tuple[int, int] = (800, 600),
) -> RenderResult:
    """Compile the file with an external renderer. Never raises when no renderer is configured."""
    if not renderer_path:
        return RenderResult("skipped", diagnostics="no renderer configured")
    scad_path = Path(scad_path)
    with tempfile.TemporaryDirectory() as tmp:
        result = _run([renderer_path, "-o", str(Path(tmp) / "check.csg"), str(scad_path)], timeout_s)
    if result.ok and preview_png:
        preview = _run([renderer_path, "-o", str(preview_png),
                        f"--imgsize={image_size[0]},{image_size[1]}", str(scad_path)], timeout_s)
        if not preview.ok:
            return preview
        return RenderResult("ok", preview.returncode, result.diagnostics + preview.diagnostics,
                            (str(preview_png),))
    return result


def _run(cmd: List[str], timeout_s: float) -> RenderResult:
    try:
        proc = subprocess.run(cmd, capture_output=True, text=True, timeout=timeout_s)
    except subprocess.TimeoutExpired as e:
        return RenderResult("failure", None, f"renderer timed out after {timeout_s} s: {e.stderr or ''}")
    except OSError as e:
        return RenderResult("failure", None, f"renderer could not start: {e}")
    diagnostics = (proc.stderr or "") + (proc.stdout or "")
    if proc.returncode != 0 or re.search(r"^(ERROR|Parser error)", diagnostics, re.MULTILINE):
        return RenderResult("failure", proc.returncode, diagnostics)
    return RenderResult("ok", proc.returncode, diagnostics)
