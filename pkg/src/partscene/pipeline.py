"""
End-to-end reconstruction: fit parts, infer part trees, refine, assemble the
scene, export URDF/JSON/OBJ; plus evaluation against a ground-truth graph.
"""

from __future__ import annotations

import hashlib
import json
import logging
import time
import warnings
import zlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .cloud_io import ObjectInput, load_scene_input
from .errors import (
    ConfigError,
    DegenerateGeometryError,
    DisconnectedStructureError,
    FittingFailedError,
    LabelMismatchError,
    NoConvergenceError,
    PartSceneError,
)
from .geometry import RigidTransform, fit_obb
from .kinematics import ContactThresholds, JointRuleTable, infer_parse_tree
from .mesh import PrimitiveKind, TriMesh, merge_meshes, sample_mesh, template_mesh
from .metrics import EvaluationReport, ObjectScore, chamfer_distance, normalize_jointly, structure_map, voxel_iou
from .primitives import PartEntity, fit_part
from .refinement import refine_tree
from .scene import ContactGraph, ObjectNode, assemble_scene, refine_object_poses
from .serialization import serialize_graph
from .urdf import export_urdf, link_name

log = logging.getLogger(__name__)

FORMATS = ("urdf", "json", "obj", "all")


class PipelineFailure(PartSceneError, RuntimeError):
    """Too many parts failed for the run to produce a usable scene."""


@dataclass(frozen=True)
class PipelineConfig:
    theta_a: float = 0.95
    theta_d: float = 0.03
    theta_c: float = 0.15
    refine_gate: float = 0.9
    n_samples: int = 1000
    seed: int = 0
    proximity_radius: float = 0.1
    joint_rules: Optional[str] = None
    refine: bool = True
    refine_objects: bool = True
    contact_snap: bool = False
    icp_restarts: bool = True
    failure_ratio: float = 0.5
    eval_samples: int = 50000
    voxel_resolution: int = 32

    def __post_init__(self):
        self.thresholds  # validates theta_*
        if not 0 < self.refine_gate < 1:
            raise ConfigError("refine_gate must be in (0, 1)")
        if self.n_samples < 500:
            raise ConfigError("n_samples must be >= 500")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.proximity_radius <= 0:
            raise ConfigError("proximity_radius must be positive")
        if not 0 < self.failure_ratio <= 1:
            raise ConfigError("failure_ratio must be in (0, 1]")
        if self.eval_samples < 100 or self.voxel_resolution < 4:
            raise ConfigError("eval_samples must be >= 100 and voxel_resolution >= 4")

    @property
    def thresholds(self) -> ContactThresholds:
        return ContactThresholds(self.theta_a, self.theta_d, self.theta_c)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelineConfig":
        if not isinstance(d, Mapping):
            raise ConfigError("config must be a JSON object")
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(d) - set(known))
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        kwargs = {}
        for k, v in d.items():
            default = known[k].default
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(f"{k}: expected true or false")
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(f"{k}: expected an integer")
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(f"{k}: expected a number")
                v = float(v)
            elif v is not None and not isinstance(v, str):
                raise ConfigError(f"{k}: expected a string or null")
            kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "PipelineConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()

    def rules(self) -> Optional[JointRuleTable]:
        return None if self.joint_rules is None else JointRuleTable.load(self.joint_rules)


def part_seed(seed: int, object_label: str, part_label: str) -> int:
    """Per-part seed that does not depend on processing order."""
    return (int(seed) * 1_000_003 + zlib.crc32(f"{object_label}/{part_label}".encode())) % (2 ** 32)


@dataclass
class PipelineResult:
    graph: ContactGraph
    urdf: str
    scene_json: str
    warnings: List[str] = field(default_factory=list)
    dropped_parts: List[Tuple[str, str, str]] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)
    config: PipelineConfig = field(default_factory=PipelineConfig)

    def manifest(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "config_hash": self.config.digest(),
            "seed": self.config.seed,
            "timings_s": {k: round(v, 4) for k, v in self.timings.items()},
            "warnings": list(self.warnings),
            "dropped_parts": [{"object": o, "part": p, "reason": r} for o, p, r in self.dropped_parts],
            "objects": self.graph.labels,
            "part_count": sum(len(o.part_tree.nodes) for o in self.graph.object_nodes),
        }

    def write(self, out_dir: Union[str, Path], fmt: str = "all") -> List[Path]:
        if fmt not in FORMATS:
            raise ConfigError(f"unknown output format {fmt!r}")
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        written = []
        if fmt in ("urdf", "all"):
            written.append(_write(out / "scene.urdf", self.urdf))
            for kind in PrimitiveKind:
                written.append(_write(out / "meshes" / f"{kind.value}.obj", template_mesh(kind).to_obj()))
        if fmt in ("json", "all"):
            written.append(_write(out / "scene.json", self.scene_json))
        if fmt in ("obj", "all"):
            for obj in self.graph.object_nodes:
                for part in obj.world_parts():
                    if part.model is not None:
                        name = link_name(obj.object_label, part.instance_label)
                        written.append(_write(out / "parts" / f"{name}.obj", part.model.mesh().to_obj()))
        written.append(_write(out / "manifest.json", json.dumps(self.manifest(), indent=2) + "\n"))
        return written


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


_FIT_ERRORS = (FittingFailedError, NoConvergenceError, DegenerateGeometryError)


def fit_object_parts(obj: ObjectInput, config: PipelineConfig,
                     dropped: List[Tuple[str, str, str]]) -> List[PartEntity]:
    fitted = []
    for p in obj.parts:
        try:
            fitted.append(fit_part(p.label, p.semantic_class, p.points, n_samples=config.n_samples,
                                   seed=part_seed(config.seed, obj.label, p.label),
                                   restarts=config.icp_restarts))
        except _FIT_ERRORS as exc:
            dropped.append((obj.label, p.label, f"fitting failed: {exc}"))
    return fitted


def build_object_tree(label: str, parts: List[PartEntity], config: PipelineConfig,
                      dropped: List[Tuple[str, str, str]], rules=None):
    """Parse tree of one object; parts unreachable from the root are dropped."""
    th = config.thresholds
    try:
        tree = infer_parse_tree(parts, th, rules)
    except DisconnectedStructureError as exc:
        bad = set(exc.unreachable)
        for lab in sorted(bad):
            dropped.append((label, lab, "not connected to the object's root part"))
        parts = [p for p in parts if p.instance_label not in bad]
        tree = infer_parse_tree(parts, th, rules)
    if config.refine:
        tree = refine_tree(tree, config.refine_gate, snap=config.contact_snap)
    return tree


def reconstruct(objects: Sequence[ObjectInput], config: PipelineConfig = PipelineConfig()) -> PipelineResult:
    """Fit, infer, refine, assemble and export a scene from segmented part clouds."""
    if not objects:
        raise ConfigError("scene has no objects")
    rules = config.rules()
    timings: Dict[str, float] = {}
    dropped: List[Tuple[str, str, str]] = []
    msgs: List[str] = []
    total = sum(len(o.parts) for o in objects)

    t0 = time.perf_counter()
    fitted = {o.label: fit_object_parts(o, config, dropped) for o in objects}
    timings["fit"] = time.perf_counter() - t0
    n_failed = len(dropped)
    if n_failed > config.failure_ratio * total:
        raise PipelineFailure(f"{n_failed} of {total} parts failed to fit")

    t0 = time.perf_counter()
    nodes = []
    for o in objects:
        parts = fitted[o.label]
        if not parts:
            msgs.append(f"object {o.label} dropped: no part could be fitted")
            continue
        tree = build_object_tree(o.label, parts, config, dropped, rules)
        nodes.append(ObjectNode(o.label, o.semantic_class, RigidTransform.identity(), tree))
    timings["infer"] = time.perf_counter() - t0
    if not nodes:
        raise PipelineFailure("no object could be reconstructed")

    t0 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        graph = assemble_scene(nodes, config.thresholds, config.proximity_radius)
        if config.refine and config.refine_objects:
            graph = refine_object_poses(graph, config.refine_gate)
    msgs.extend(str(w.message) for w in caught)
    timings["assemble"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    urdf = export_urdf(graph)
    scene_json = serialize_graph(graph)
    timings["export"] = time.perf_counter() - t0
    msgs.extend(f"part {o}/{p} dropped: {r}" for o, p, r in dropped)
    return PipelineResult(graph, urdf, scene_json, msgs, dropped, timings, config)


def run_pipeline(input_path: Union[str, Path], config: PipelineConfig = PipelineConfig(),
                 out_dir: Optional[Union[str, Path]] = None, fmt: str = "all") -> PipelineResult:
    result = reconstruct(load_scene_input(input_path), config)
    if out_dir is not None:
        result.write(out_dir, fmt)
    return result


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def object_meshes(obj: ObjectNode) -> List[TriMesh]:
    return [p.model.mesh() for p in obj.world_parts() if p.model is not None]


def obb_baseline_mesh(points) -> TriMesh:
    """Object-level baseline: the whole object replaced by one oriented box."""
    box = fit_obb(points)
    return template_mesh(PrimitiveKind.BOX).scaled(box.extents).transformed(box.pose)


def _scored_edges(obj: ObjectNode):
    return [(e.parent, e.child, 0.0 if e.evidence is None else e.evidence.contact_ratio)
            for e in obj.part_tree.edges]


def _geometry_scores(pred: Sequence[TriMesh], truth: Sequence[TriMesh], config: PipelineConfig,
                     seed: int) -> Tuple[float, float]:
    a = sample_mesh(merge_meshes(pred), config.eval_samples, seed)
    b = sample_mesh(merge_meshes(truth), config.eval_samples, seed)
    cd = chamfer_distance(*normalize_jointly(a, b))
    iou = voxel_iou(list(pred), list(truth), config.voxel_resolution)
    return cd, iou


def evaluate(
    predicted: ContactGraph,
    truth: ContactGraph,
    config: PipelineConfig = PipelineConfig(),
    clouds: Optional[Mapping[str, np.ndarray]] = None,
    annotated: Optional[Mapping[str, Sequence[Sequence[str]]]] = None,
) -> EvaluationReport:
    """Chamfer and IoU per object against the truth meshes, structure mAP per
    category, and the single-box baseline when object clouds are available
    (given, or taken from the predicted parts)."""
    pred_labels, truth_labels = set(predicted.labels), set(truth.labels)
    if pred_labels != truth_labels:
        raise LabelMismatchError(
            f"object labels differ: missing {sorted(truth_labels - pred_labels)}, "
            f"unexpected {sorted(pred_labels - truth_labels)}")
    scores = []
    for lab in truth.labels:
        t_obj, p_obj = truth.node(lab), predicted.node(lab)
        t_mesh, p_mesh = object_meshes(t_obj), object_meshes(p_obj)
        seed = part_seed(config.seed, lab, "__eval__")
        cd, iou = _geometry_scores(p_mesh, t_mesh, config, seed)
        pts = None
        if clouds is not None and lab in clouds:
            pts = np.asarray(clouds[lab], dtype=float)
        else:
            own = [p.cloud for p in p_obj.world_parts() if p.cloud is not None]
            pts = np.concatenate(own) if own else None
        bcd = biou = None
        if pts is not None and len(pts) >= 4:
            bcd, biou = _geometry_scores([obb_baseline_mesh(pts)], t_mesh, config, seed)
        scores.append(ObjectScore(lab, t_obj.semantic_class, cd, iou, bcd, biou))
    return EvaluationReport(scores, structure_scores(predicted, truth, annotated))


def structure_scores(
    predicted: ContactGraph,
    truth: ContactGraph,
    annotated: Optional[Mapping[str, Sequence[Sequence[str]]]] = None,
) -> Dict[str, float]:
    """Per-category mAP of the predicted part-tree edges (scored by contact
    ratio) against the annotated edges, by default the truth trees' edges."""
    if annotated is None:
        annotated = {o.object_label: [(e.parent, e.child) for e in o.part_tree.edges] for o in truth.object_nodes}
    categories = {o.object_label: o.semantic_class for o in truth.object_nodes}
    predicted_edges = {o.object_label: _scored_edges(o) for o in predicted.object_nodes}
    part_labels = {o.object_label: o.part_tree.labels for o in truth.object_nodes}
    return structure_map(predicted_edges, annotated, categories, part_labels)
