"""
Contact relations between parts, the weighted contact digraph, the maximum
arborescence over it and joint assignment from a rule table.
"""

from __future__ import annotations

import enum
import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import NDArray

from .arborescence import max_arborescence
from .errors import ConfigError, DegenerateGeometryError
from .geometry import (
    PlanarPolygon,
    RigidTransform,
    clip_convex,
    compose,
    polygon_area,
    polygon_intersection_area,
    project_polygon,
)
from .primitives import PartEntity

BASE_CLASSES = ("base", "top", "seat", "frame")


@dataclass(frozen=True)
class ContactThresholds:
    theta_a: float = 0.95
    theta_d: float = 0.03
    theta_c: float = 0.15

    def __post_init__(self):
        if not 0 < self.theta_a <= 1:
            raise ConfigError(f"theta_a must be in (0, 1], got {self.theta_a}")
        if not self.theta_d > 0:
            raise ConfigError(f"theta_d must be positive, got {self.theta_d}")
        if not 0 < self.theta_c <= 1:
            raise ConfigError(f"theta_c must be in (0, 1], got {self.theta_c}")


@dataclass(frozen=True)
class ContactEvidence:
    parent_plane_index: int
    child_plane_index: int
    align_score: float
    distance: float
    contact_ratio: float


class JointType(str, enum.Enum):
    FIXED = "fixed"
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"


@dataclass(frozen=True, eq=False)
class Joint:
    """Parametric joint between a parent and a child part.

    ``axis`` and ``pivot`` are expressed in the child frame; ``pivot`` is a
    point on a revolute axis (zero for other joint types).
    """

    joint_type: JointType
    parent_to_child: RigidTransform
    axis: Optional[NDArray[np.float64]] = None
    limits: Optional[Tuple[float, float]] = None
    pivot: NDArray[np.float64] = field(default_factory=lambda: np.zeros(3))
    flags: Tuple[str, ...] = ()

    def __post_init__(self):
        jt = JointType(self.joint_type)
        object.__setattr__(self, "joint_type", jt)
        object.__setattr__(self, "pivot", np.array(self.pivot, dtype=float).reshape(3))
        object.__setattr__(self, "flags", tuple(self.flags))
        if jt is JointType.FIXED:
            if self.axis is not None or self.limits is not None:
                raise ValueError("fixed joints carry no axis or limits")
            return
        if self.axis is None:
            raise ValueError(f"{jt.value} joint needs an axis")
        a = np.array(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ValueError("joint axis must be unit length")
        object.__setattr__(self, "axis", a)
        if self.limits is not None:
            lo, hi = (float(x) for x in self.limits)
            if not lo < hi:
                raise ValueError(f"joint limits must satisfy lower < upper, got ({lo}, {hi})")
            object.__setattr__(self, "limits", (lo, hi))

    def with_transform(self, t: RigidTransform) -> "Joint":
        return replace(self, parent_to_child=t)


@dataclass(frozen=True, eq=False)
class TreeEdge:
    parent: str
    child: str
    joint: Joint
    evidence: Optional[ContactEvidence] = None


@dataclass(frozen=True, eq=False)
class PartParseTree:
    """Rooted tree over an object's parts with joints on the edges."""

    root: str
    nodes: Tuple[PartEntity, ...]
    edges: Tuple[TreeEdge, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "edges", tuple(self.edges))
        labels = [n.instance_label for n in self.nodes]
        if len(set(labels)) != len(labels):
            raise ValueError("instance labels must be unique within an object")
        if self.root not in labels:
            raise ValueError(f"root {self.root!r} is not a node")
        if len(self.edges) != len(self.nodes) - 1:
            raise ValueError("a parse tree needs exactly |nodes| - 1 edges")
        parents: Dict[str, str] = {}
        for e in self.edges:
            if e.child == self.root or e.child in parents or e.child not in labels or e.parent not in labels:
                raise ValueError(f"invalid tree edge {e.parent} -> {e.child}")
            parents[e.child] = e.parent
        for lab in labels:
            seen, cur = set(), lab
            while cur != self.root:
                if cur in seen:
                    raise ValueError("parse tree contains a cycle")
                seen.add(cur)
                cur = parents[cur]

    @property
    def labels(self) -> List[str]:
        return [n.instance_label for n in self.nodes]

    def node(self, label: str) -> PartEntity:
        for n in self.nodes:
            if n.instance_label == label:
                return n
        raise KeyError(label)

    def children(self, label: str) -> List[str]:
        return sorted(e.child for e in self.edges if e.parent == label)

    def parent(self, label: str) -> Optional[str]:
        for e in self.edges:
            if e.child == label:
                return e.parent
        return None

    def edge(self, parent: str, child: str) -> TreeEdge:
        for e in self.edges:
            if e.parent == parent and e.child == child:
                return e
        raise KeyError((parent, child))

    def edge_for(self, child: str) -> TreeEdge:
        for e in self.edges:
            if e.child == child:
                return e
        raise KeyError(child)

    def breadth_first(self) -> List[str]:
        order, queue = [], deque([self.root])
        while queue:
            u = queue.popleft()
            order.append(u)
            queue.extend(self.children(u))
        return order

    def get_edge_transform(self, parent: str, child: str) -> RigidTransform:
        return self.edge(parent, child).joint.parent_to_child

    def with_edge_transforms(self, transforms: Mapping[Tuple[str, str], RigidTransform]) -> "PartParseTree":
        """Replace edge transforms and re-pose every node from the root down."""
        edges = tuple(
            replace(e, joint=e.joint.with_transform(transforms[(e.parent, e.child)]))
            if (e.parent, e.child) in transforms else e
            for e in self.edges
        )
        tree = replace(self, edges=edges)
        return tree.reposed()

    def update_edge_transform(self, parent: str, child: str, t: RigidTransform) -> "PartParseTree":
        return self.with_edge_transforms({(parent, child): t})

    def reposed(self) -> "PartParseTree":
        """Recompute node poses from the root pose and the edge transforms."""
        poses = {self.root: self.node(self.root).pose}
        for lab in self.breadth_first()[1:]:
            p = self.parent(lab)
            poses[lab] = compose(poses[p], self.get_edge_transform(p, lab))
        nodes = tuple(n.with_pose(poses[n.instance_label]) for n in self.nodes)
        return replace(self, nodes=nodes)

    def moved(self, delta: RigidTransform) -> "PartParseTree":
        return replace(self, nodes=tuple(n.moved(delta) for n in self.nodes))

    def undirected_edges(self) -> set:
        return {frozenset((e.parent, e.child)) for e in self.edges}


# ---------------------------------------------------------------------------
# contact predicates
# ---------------------------------------------------------------------------


def plane_alignment(parent: PlanarPolygon, child: PlanarPolygon) -> float:
    """|n_p . n_c|; symmetric in its arguments."""
    return abs(float(parent.plane.normal @ child.plane.normal))


def plane_distance(parent: PlanarPolygon, child: PlanarPolygon) -> float:
    """Mean signed distance of the child polygon's vertices to the parent plane."""
    return float(np.mean(parent.plane.signed_distance(child.vertices)))


def contact_ratio(parent: PlanarPolygon, child: PlanarPolygon) -> float:
    """Share of the child polygon's area overlapping the parent polygon after projection."""
    try:
        projected = project_polygon(child, parent.plane, parent.plane.point())
    except DegenerateGeometryError:
        return 0.0
    return polygon_intersection_area(parent, projected) / polygon_area(child)


def contact_polygon(parent: PlanarPolygon, child: PlanarPolygon) -> Optional[PlanarPolygon]:
    """Overlap of the parent polygon and the projected child polygon, on the parent plane."""
    projected = project_polygon(child, parent.plane, parent.plane.point())
    xy = clip_convex(parent._to_2d(projected.vertices), parent.to_2d())
    if len(xy) < 3:
        return None
    e1, e2 = parent.plane.basis()
    pts = parent.plane.point() + np.outer(xy[:, 0], e1) + np.outer(xy[:, 1], e2)
    return PlanarPolygon(pts, parent.plane)


def check_contact(parent: PartEntity, child: PartEntity, th: ContactThresholds = ContactThresholds()
                  ) -> Optional[ContactEvidence]:
    """Best plane pair (by contact ratio) satisfying all three contact thresholds."""
    best: Optional[ContactEvidence] = None
    for i, pp in enumerate(parent.planes):
        for j, pc in enumerate(child.planes):
            align = plane_alignment(pp, pc)
            if align < th.theta_a:
                continue
            dist = plane_distance(pp, pc)
            # signed Dist <= theta_d plus |Dist| <= theta_d against interpenetration
            if abs(dist) > th.theta_d:
                continue
            cont = contact_ratio(pp, pc)
            if cont < th.theta_c:
                continue
            if best is None or cont > best.contact_ratio:
                best = ContactEvidence(i, j, align, dist, cont)
    return best


@dataclass(frozen=True)
class ContactDigraph:
    nodes: Tuple[str, ...]
    edges: Mapping[Tuple[str, str], ContactEvidence]

    def weight(self, parent: str, child: str) -> float:
        return self.edges[(parent, child)].contact_ratio

    @property
    def weights(self) -> Dict[Tuple[str, str], float]:
        return {k: ev.contact_ratio for k, ev in self.edges.items()}


def build_contact_digraph(parts: Sequence[PartEntity], th: ContactThresholds = ContactThresholds()) -> ContactDigraph:
    if not parts:
        raise ValueError("need at least one part")
    edges: Dict[Tuple[str, str], ContactEvidence] = {}
    for p in parts:
        for c in parts:
            if p is c:
                continue
            ev = check_contact(p, c, th)
            if ev is not None:
                edges[(p.instance_label, c.instance_label)] = ev
    return ContactDigraph(tuple(p.instance_label for p in parts), edges)


def _matches_base(semantic_class: str, name: str) -> bool:
    return semantic_class == name or semantic_class.endswith("_" + name)


def select_root(parts: Sequence[PartEntity], digraph: Optional[ContactDigraph] = None) -> str:
    """Root part: first base-class match, else the largest volume, then label order."""
    if not parts:
        raise ValueError("need at least one part")
    pool = list(parts)
    for name in BASE_CLASSES:
        hits = [p for p in parts if _matches_base(p.semantic_class, name)]
        if hits:
            pool = hits
            break
    return min(pool, key=lambda p: (-p.volume, p.instance_label)).instance_label


# ---------------------------------------------------------------------------
# joint rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JointRule:
    joint_type: JointType
    axis_rule: Optional[str] = None
    limit_rule: Optional[str] = None
    fraction: float = 1.0


class JointRuleTable:
    """Joint templates keyed by ``"parent_class/child_class"``.

    ``*`` may stand for either class.  Unknown pairs resolve to ``None``.
    """

    AXIS_RULES = ("contact_normal", "rim_edge")
    LIMIT_RULES = ("child_depth", "quarter_turn")

    def __init__(self, rules: Mapping[str, JointRule], version: int = 1):
        self.rules = dict(rules)
        self.version = version

    @classmethod
    def from_dict(cls, doc: Mapping) -> "JointRuleTable":
        rules = {}
        for key, spec in doc.get("rules", {}).items():
            if key.count("/") != 1:
                raise ConfigError(f"rule key {key!r} must look like parent_class/child_class")
            try:
                jt = JointType(spec["type"])
            except (KeyError, ValueError) as exc:
                raise ConfigError(f"rules.{key}.type: unknown joint type {spec.get('type')!r}") from exc
            axis_rule, limit_rule = spec.get("axis_rule"), spec.get("limit_rule")
            if jt is not JointType.FIXED:
                if axis_rule not in cls.AXIS_RULES:
                    raise ConfigError(f"rules.{key}.axis_rule: expected one of {cls.AXIS_RULES}")
                if limit_rule not in cls.LIMIT_RULES:
                    raise ConfigError(f"rules.{key}.limit_rule: expected one of {cls.LIMIT_RULES}")
            rules[key] = JointRule(jt, axis_rule, limit_rule, float(spec.get("fraction", 1.0)))
        return cls(rules, int(doc.get("version", 1)))

    @classmethod
    def load(cls, path: Union[str, Path, None] = None) -> "JointRuleTable":
        if path is None:
            text = resources.files("partscene").joinpath("joint_rules.json").read_text(encoding="utf-8")
        else:
            text = Path(path).read_text(encoding="utf-8")
        return cls.from_dict(json.loads(text))

    def lookup(self, parent_class: str, child_class: str) -> Optional[JointRule]:
        for key in (f"{parent_class}/{child_class}", f"*/{child_class}", f"{parent_class}/*"):
            if key in self.rules:
                return self.rules[key]
        return None


_DEFAULT_RULES: Optional[JointRuleTable] = None


def default_rules() -> JointRuleTable:
    global _DEFAULT_RULES
    if _DEFAULT_RULES is None:
        _DEFAULT_RULES = JointRuleTable.load()
    return _DEFAULT_RULES


def _outward(normal: NDArray[np.float64], poly: PlanarPolygon, centroid: NDArray[np.float64]) -> NDArray[np.float64]:
    return normal if normal @ (poly.centroid - centroid) >= 0 else -normal


def _support_width(part: PartEntity, direction: NDArray[np.float64]) -> float:
    """Extent of the part's bounding box along a world direction."""
    if part.model is not None:
        local = part.pose.rotation.T @ direction
        return float(np.abs(local) @ part.model.scale)
    if part.cloud is not None and len(part.cloud):
        h = part.cloud @ direction
        return float(h.max() - h.min())
    return 0.0


def _rim_edge(contact: PlanarPolygon, parent_centroid: NDArray[np.float64]):
    edges = contact.edges()
    lengths = np.array([np.linalg.norm(b - a) for a, b in edges])
    keep = lengths >= 0.25 * lengths.max()
    best, best_d = None, -1.0
    for (a, b), ok in zip(edges, keep):
        if not ok:
            continue
        d = float(np.linalg.norm((a + b) / 2.0 - parent_centroid))
        if d > best_d + 1e-12:
            best, best_d = (a, b), d
    return best


def assign_joint(
    parent: PartEntity,
    child: PartEntity,
    evidence: Optional[ContactEvidence],
    rules: Optional[JointRuleTable] = None,
) -> Joint:
    """Joint for a parent/child pair from the rule table and the contact geometry.

    Unknown class pairs (or a missing contact) give a fixed joint flagged
    ``defaulted``.
    """
    rules = rules or default_rules()
    t_pc = compose(parent.pose.inverse(), child.pose)
    rule = rules.lookup(parent.semantic_class, child.semantic_class)
    if rule is None:
        return Joint(JointType.FIXED, t_pc, flags=("defaulted",))
    if rule.joint_type is JointType.FIXED:
        return Joint(JointType.FIXED, t_pc)
    if evidence is None:
        return Joint(JointType.FIXED, t_pc, flags=("defaulted", "no-contact"))

    pp = parent.planes[evidence.parent_plane_index]
    pc = child.planes[evidence.child_plane_index]
    n_out = _outward(pp.plane.normal, pp, parent.centroid)
    child_rot = child.pose.rotation
    pivot_world = None

    if rule.axis_rule == "contact_normal":
        axis_world = n_out
    else:
        contact = contact_polygon(pp, pc)
        if contact is None:
            return Joint(JointType.FIXED, t_pc, flags=("defaulted", "no-contact"))
        a, b = _rim_edge(contact, parent.centroid)
        edge_dir = (b - a) / np.linalg.norm(b - a)
        mid = (a + b) / 2.0
        # positive rotation swings the child's free side outward
        swing = np.cross(contact.centroid - mid, n_out)
        axis_world = edge_dir if edge_dir @ swing >= 0 else -edge_dir
        pivot_world = mid

    if rule.limit_rule == "child_depth":
        depth = _support_width(child, axis_world)
        limits = (0.0, depth) if depth > 0 else None
    else:
        limits = (0.0, math.pi / 2.0 * rule.fraction)

    axis_child = child_rot.T @ axis_world
    axis_child /= np.linalg.norm(axis_child)
    pivot = np.zeros(3) if pivot_world is None else child.pose.inverse().apply(pivot_world)
    return Joint(rule.joint_type, t_pc, axis_child, limits, pivot)


# ---------------------------------------------------------------------------
# parse tree inference
# ---------------------------------------------------------------------------


def infer_parse_tree(
    parts: Sequence[PartEntity],
    th: ContactThresholds = ContactThresholds(),
    rules: Optional[JointRuleTable] = None,
) -> PartParseTree:
    """Contact digraph -> root -> maximum arborescence -> joints.

    Parts without planes (spheres) cannot take part in plane contacts; each is
    attached with a fixed joint flagged ``heuristic-attach`` to the closest
    part (by centroid) already in the tree.
    """
    if not parts:
        raise ValueError("need at least one part")
    parts = sorted(parts, key=lambda p: p.instance_label)
    by_label = {p.instance_label: p for p in parts}
    planar = [p for p in parts if p.planes]
    planeless = [p for p in parts if not p.planes]

    core = planar if planar else [by_label[select_root(parts)]]
    digraph = build_contact_digraph(core, th)
    root = select_root(core, digraph)
    chosen = max_arborescence(digraph.nodes, digraph.weights, root)

    edges: List[TreeEdge] = []
    for p, c in chosen:
        ev = digraph.edges[(p, c)]
        edges.append(TreeEdge(p, c, assign_joint(by_label[p], by_label[c], ev, rules), ev))

    placed = [by_label[lab] for lab in digraph.nodes]
    for part in planeless:
        if part.instance_label in {q.instance_label for q in placed}:
            continue
        host = min(placed, key=lambda q: (float(np.linalg.norm(q.centroid - part.centroid)), q.instance_label))
        t_pc = compose(host.pose.inverse(), part.pose)
        edges.append(TreeEdge(host.instance_label, part.instance_label,
                              Joint(JointType.FIXED, t_pc, flags=("heuristic-attach",)), None))
        placed.append(part)

    tree = PartParseTree(root, tuple(parts), tuple(edges))
    order = {lab: i for i, lab in enumerate(tree.breadth_first())}
    return replace(tree, edges=tuple(sorted(tree.edges, key=lambda e: order[e.child])))
