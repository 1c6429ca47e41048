"""
JSON form of a contact graph (``schema_version`` 1) and its loader.

Floats are rounded to 13 decimals so that a load/dump cycle reproduces the
same bytes.
"""

from __future__ import annotations

import base64
import json
from typing import Any, Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import SchemaError
from .geometry import PlanarPolygon, Plane, RigidTransform
from .kinematics import ContactEvidence, Joint, JointType, PartParseTree, TreeEdge
from .mesh import PrimitiveKind
from .primitives import PartEntity, PrimitiveModel
from .scene import FLOOR, ContactGraph, ObjectNode

SCHEMA_VERSION = 1
DECIMALS = 13


def _r(x: float) -> float:
    v = round(float(x), DECIMALS)
    return 0.0 if v == 0 else v


def _vec(v) -> List[float]:
    return [_r(x) for x in np.asarray(v, dtype=float).ravel()]


def encode_cloud(points) -> str:
    """Base64 of little-endian float32 xyz triples."""
    return base64.b64encode(np.asarray(points, dtype="<f4").reshape(-1, 3).tobytes()).decode("ascii")


def decode_cloud(text: str, path: str = "cloud") -> np.ndarray:
    try:
        raw = base64.b64decode(text.encode("ascii"), validate=True)
    except (ValueError, AttributeError) as exc:
        raise SchemaError(path, f"invalid base64 ({exc})") from exc
    if len(raw) % 12:
        raise SchemaError(path, "byte length is not a multiple of 12 (xyz float32 triples)")
    return np.frombuffer(raw, dtype="<f4").reshape(-1, 3).astype(float)


def pose_to_dict(t: RigidTransform) -> Dict[str, List[float]]:
    return {"translation": _vec(t.translation), "quaternion_wxyz": _vec(t.quaternion_wxyz())}


def _plane_to_dict(p: PlanarPolygon) -> Dict[str, Any]:
    return {"normal": _vec(p.plane.normal), "offset": _r(p.plane.offset), "vertices": [_vec(v) for v in p.vertices]}


def _part_to_dict(part: PartEntity, include_clouds: bool) -> Dict[str, Any]:
    d: Dict[str, Any] = {"label": part.instance_label, "class": part.semantic_class}
    d["primitive"] = None if part.model is None else {"kind": part.model.kind.value, "scale": _vec(part.model.scale)}
    d["pose"] = pose_to_dict(part.pose)
    d["planes"] = [_plane_to_dict(p) for p in part.planes]
    if include_clouds and part.cloud is not None:
        d["cloud"] = encode_cloud(part.cloud)
    return d


def _edge_to_dict(e: TreeEdge) -> Dict[str, Any]:
    j = e.joint
    joint = {
        "type": j.joint_type.value,
        "origin": pose_to_dict(j.parent_to_child),
        "axis": None if j.axis is None else _vec(j.axis),
        "limits": None if j.limits is None else _vec(j.limits),
        "pivot": _vec(j.pivot),
        "flags": list(j.flags),
    }
    ev = None
    if e.evidence is not None:
        x = e.evidence
        ev = {
            "parent_plane_index": x.parent_plane_index,
            "child_plane_index": x.child_plane_index,
            "align_score": _r(x.align_score),
            "distance": _r(x.distance),
            "contact_ratio": _r(x.contact_ratio),
        }
    return {"parent": e.parent, "child": e.child, "joint": joint, "evidence": ev}


def graph_to_dict(graph: ContactGraph, include_clouds: bool = False,
                  annotated_edges: Optional[Mapping[str, Sequence[Sequence[str]]]] = None) -> Dict[str, Any]:
    objects = []
    for o in graph.object_nodes:
        tree = o.part_tree
        objects.append({
            "label": o.object_label,
            "class": o.semantic_class,
            "pose": pose_to_dict(o.world_pose),
            "root": tree.root,
            "parts": [_part_to_dict(p, include_clouds) for p in sorted(tree.nodes, key=lambda p: p.instance_label)],
            "edges": [_edge_to_dict(e) for e in tree.edges],
        })
    doc: Dict[str, Any] = {
        "schema_version": SCHEMA_VERSION,
        "root": graph.root,
        "objects": objects,
        "supporting": [list(e) for e in graph.supporting_edges],
        "proximal": [list(e) for e in graph.proximal_edges],
    }
    if annotated_edges is not None:
        doc["annotated_edges"] = {k: sorted(sorted(e) for e in v) for k, v in sorted(annotated_edges.items())}
    return doc


def serialize_graph(graph: ContactGraph, include_clouds: bool = False,
                    annotated_edges: Optional[Mapping[str, Sequence[Sequence[str]]]] = None) -> str:
    return json.dumps(graph_to_dict(graph, include_clouds, annotated_edges), indent=2, sort_keys=False) + "\n"


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _get(d: Any, key: str, path: str, kind=None, optional: bool = False):
    if not isinstance(d, dict):
        raise SchemaError(path, "expected an object")
    if key not in d:
        if optional:
            return None
        raise SchemaError(f"{path}.{key}", "missing required field")
    v = d[key]
    if v is None and optional:
        return None
    if kind is not None and not isinstance(v, kind):
        raise SchemaError(f"{path}.{key}", f"expected {getattr(kind, '__name__', kind)}")
    return v


def _floats(v: Any, n: int, path: str) -> np.ndarray:
    if not isinstance(v, list) or len(v) != n or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
        raise SchemaError(path, f"expected a list of {n} numbers")
    return np.array(v, dtype=float)


def pose_from_dict(d: Any, path: str) -> RigidTransform:
    t = _floats(_get(d, "translation", path), 3, f"{path}.translation")
    q = _floats(_get(d, "quaternion_wxyz", path), 4, f"{path}.quaternion_wxyz")
    if abs(np.linalg.norm(q) - 1.0) > 1e-6:
        raise SchemaError(f"{path}.quaternion_wxyz", "quaternion is not unit length")
    return RigidTransform.from_quaternion(q / np.linalg.norm(q), t)


def _part_from_dict(d: Any, path: str, with_geometry: bool = True) -> PartEntity:
    label = _get(d, "label", path, str)
    cls = _get(d, "class", path, str)
    cloud = None
    c = _get(d, "cloud", path, str, optional=True)
    if c is not None:
        cloud = decode_cloud(c, f"{path}.cloud")
    model = None
    prim = _get(d, "primitive", path, dict, optional=True)
    if prim is not None:
        kind = _get(prim, "kind", f"{path}.primitive", str)
        try:
            kind = PrimitiveKind(kind)
        except ValueError:
            raise SchemaError(f"{path}.primitive.kind", f"unknown primitive kind {kind!r}") from None
        scale = _floats(_get(prim, "scale", f"{path}.primitive"), 3, f"{path}.primitive.scale")
        if np.any(scale <= 0):
            raise SchemaError(f"{path}.primitive.scale", "scale must be positive")
        model = PrimitiveModel(kind, scale, pose_from_dict(_get(d, "pose", path), f"{path}.pose"))
    planes = []
    for k, pd in enumerate(_get(d, "planes", path, list, optional=True) or []):
        pp = f"{path}.planes[{k}]"
        n = _floats(_get(pd, "normal", pp), 3, f"{pp}.normal")
        off = _get(pd, "offset", pp, (int, float))
        verts = _get(pd, "vertices", pp, list)
        v = np.array([_floats(x, 3, f"{pp}.vertices[{i}]") for i, x in enumerate(verts)]).reshape(-1, 3)
        try:
            planes.append(PlanarPolygon(v, Plane(n, off)))
        except ValueError as exc:
            raise SchemaError(pp, str(exc)) from exc
    return PartEntity(label, cls, cloud, model, tuple(planes))


def _edge_from_dict(d: Any, path: str) -> TreeEdge:
    parent = _get(d, "parent", path, str)
    child = _get(d, "child", path, str)
    jd = _get(d, "joint", path, dict)
    jp = f"{path}.joint"
    jt = _get(jd, "type", jp, str)
    try:
        jt = JointType(jt)
    except ValueError:
        raise SchemaError(f"{jp}.type", f"unknown joint type {jt!r}") from None
    origin = pose_from_dict(_get(jd, "origin", jp), f"{jp}.origin")
    axis = _get(jd, "axis", jp, list, optional=True)
    limits = _get(jd, "limits", jp, list, optional=True)
    pivot = _get(jd, "pivot", jp, list, optional=True)
    flags = _get(jd, "flags", jp, list, optional=True) or []
    try:
        joint = Joint(
            jt, origin,
            None if axis is None else _floats(axis, 3, f"{jp}.axis"),
            None if limits is None else tuple(_floats(limits, 2, f"{jp}.limits")),
            np.zeros(3) if pivot is None else _floats(pivot, 3, f"{jp}.pivot"),
            tuple(str(f) for f in flags),
        )
    except ValueError as exc:
        raise SchemaError(jp, str(exc)) from exc
    ev = None
    ed = _get(d, "evidence", path, dict, optional=True)
    if ed is not None:
        ep = f"{path}.evidence"
        ev = ContactEvidence(
            int(_get(ed, "parent_plane_index", ep, int)),
            int(_get(ed, "child_plane_index", ep, int)),
            float(_get(ed, "align_score", ep, (int, float))),
            float(_get(ed, "distance", ep, (int, float))),
            float(_get(ed, "contact_ratio", ep, (int, float))),
        )
    return TreeEdge(parent, child, joint, ev)


def graph_from_dict(doc: Any) -> ContactGraph:
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected a JSON object")
    version = _get(doc, "schema_version", "$", int)
    if version != SCHEMA_VERSION:
        raise SchemaError("$.schema_version", f"unsupported version {version}")
    root = _get(doc, "root", "$", str, optional=True) or FLOOR
    nodes = []
    for i, od in enumerate(_get(doc, "objects", "$", list)):
        op = f"$.objects[{i}]"
        parts = [_part_from_dict(pd, f"{op}.parts[{k}]") for k, pd in enumerate(_get(od, "parts", op, list))]
        edges = [_edge_from_dict(ed, f"{op}.edges[{k}]") for k, ed in enumerate(_get(od, "edges", op, list, optional=True) or [])]
        try:
            tree = PartParseTree(_get(od, "root", op, str), tuple(parts), tuple(edges))
            nodes.append(ObjectNode(_get(od, "label", op, str), _get(od, "class", op, str),
                                    pose_from_dict(_get(od, "pose", op), f"{op}.pose"), tree))
        except ValueError as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(op, str(exc)) from exc
    sup = [tuple(_pair(e, f"$.supporting[{k}]")) for k, e in enumerate(_get(doc, "supporting", "$", list))]
    prox = [tuple(_pair(e, f"$.proximal[{k}]")) for k, e in enumerate(_get(doc, "proximal", "$", list, optional=True) or [])]
    try:
        return ContactGraph(tuple(nodes), tuple(sup), tuple(prox), root)
    except ValueError as exc:
        raise SchemaError("$", str(exc)) from exc


def _pair(e: Any, path: str) -> List[str]:
    if not isinstance(e, list) or len(e) != 2 or not all(isinstance(x, str) for x in e):
        raise SchemaError(path, "expected a pair of labels")
    return e


def load_graph(text: str) -> ContactGraph:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON ({exc})") from exc
    return graph_from_dict(doc)


def annotated_edges_from_dict(doc: Mapping) -> Dict[str, List[frozenset]]:
    block = doc.get("annotated_edges")
    if block is None:
        raise SchemaError("$.annotated_edges", "missing annotation block")
    if not isinstance(block, dict):
        raise SchemaError("$.annotated_edges", "expected an object keyed by object label")
    return {k: [frozenset(_pair(e, f"$.annotated_edges.{k}[{i}]")) for i, e in enumerate(v)] for k, v in block.items()}


# ---------------------------------------------------------------------------
# comparison helper
# ---------------------------------------------------------------------------


def _same_pose(a: RigidTransform, b: RigidTransform, atol: float) -> bool:
    return a.allclose(b, atol=atol)


def graphs_equal(a: ContactGraph, b: ContactGraph, atol: float = 1e-12) -> bool:
    """Field-by-field comparison with poses and coordinates within ``atol``."""
    if (a.root, a.labels, a.supporting_edges, a.proximal_edges) != (b.root, b.labels, b.supporting_edges, b.proximal_edges):
        return False
    for oa, ob in zip(a.object_nodes, b.object_nodes):
        if oa.semantic_class != ob.semantic_class or not _same_pose(oa.world_pose, ob.world_pose, atol):
            return False
        ta, tb = oa.part_tree, ob.part_tree
        if ta.root != tb.root or sorted(ta.labels) != sorted(tb.labels):
            return False
        for lab in ta.labels:
            pa, pb = ta.node(lab), tb.node(lab)
            if pa.semantic_class != pb.semantic_class or len(pa.planes) != len(pb.planes):
                return False
            if (pa.model is None) != (pb.model is None):
                return False
            if pa.model is not None:
                if pa.model.kind != pb.model.kind or not np.allclose(pa.model.scale, pb.model.scale, atol=atol, rtol=0):
                    return False
            if not _same_pose(pa.pose, pb.pose, atol):
                return False
            for x, y in zip(pa.planes, pb.planes):
                if x.vertices.shape != y.vertices.shape or not np.allclose(x.vertices, y.vertices, atol=atol, rtol=0):
                    return False
        ea = {(e.parent, e.child): e for e in ta.edges}
        eb = {(e.parent, e.child): e for e in tb.edges}
        if set(ea) != set(eb):
            return False
        for k, e in ea.items():
            ja, jb = e.joint, eb[k].joint
            if ja.joint_type != jb.joint_type or ja.flags != jb.flags:
                return False
            if not _same_pose(ja.parent_to_child, jb.parent_to_child, atol):
                return False
            for x, y in ((ja.axis, jb.axis), (ja.limits, jb.limits)):
                if (x is None) != (y is None) or (x is not None and not np.allclose(x, y, atol=atol, rtol=0)):
                    return False
            if not np.allclose(ja.pivot, jb.pivot, atol=atol, rtol=0):
                return False
    return True
