"""
Scene-level contact graph: objects with part trees, support and proximity
relations between objects, and object pose refinement against supporters.
"""

from __future__ import annotations

import warnings
from collections import deque
from dataclasses import dataclass, replace
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .errors import DegenerateGeometryError, SceneWarning
from .geometry import (
    OrientedBox,
    PlanarPolygon,
    RigidTransform,
    angle_between,
    compose,
    fit_obb,
    obb_distance,
    polygon_from_rectangle,
)
from .kinematics import ContactThresholds, PartParseTree, contact_ratio, plane_alignment, plane_distance
from .primitives import PartEntity
from .refinement import DEFAULT_GATE, NormalCorrespondences, refine_rotation

FLOOR = "floor"
FLOOR_HALF_SIZE = 10.0
PROXIMITY_RADIUS = 0.1
UP = np.array([0.0, 0.0, 1.0])


def floor_polygon(half_size: float = FLOOR_HALF_SIZE) -> PlanarPolygon:
    return polygon_from_rectangle([0.0, 0.0, 0.0], [half_size, 0.0, 0.0], [0.0, half_size, 0.0])


@dataclass(frozen=True, eq=False)
class ObjectNode:
    """An object: its pose in the world and its part tree in the object frame."""

    object_label: str
    semantic_class: str
    world_pose: RigidTransform
    part_tree: PartParseTree

    def __post_init__(self):
        if not self.part_tree.nodes:
            raise ValueError("object needs at least one part")

    def world_parts(self) -> List[PartEntity]:
        return [p.moved(self.world_pose) for p in self.part_tree.nodes]

    def world_part(self, label: str) -> PartEntity:
        return self.part_tree.node(label).moved(self.world_pose)

    def moved(self, delta: RigidTransform) -> "ObjectNode":
        return replace(self, world_pose=compose(delta, self.world_pose))

    def part_boxes(self) -> List[OrientedBox]:
        boxes = []
        for p in self.world_parts():
            if p.model is not None:
                boxes.append(p.model.bounding_box())
            elif p.cloud is not None and len(p.cloud) >= 4:
                try:
                    boxes.append(fit_obb(p.cloud))
                except DegenerateGeometryError:
                    pass
        return boxes

    def min_z(self) -> float:
        zs = []
        for p in self.world_parts():
            if p.model is not None:
                zs.append(p.model.bounding_box().corners()[:, 2].min())
            elif p.cloud is not None and len(p.cloud):
                zs.append(p.cloud[:, 2].min())
        return float(min(zs)) if zs else float(self.world_pose.translation[2])


@dataclass(frozen=True, eq=False)
class ContactGraph:
    """Floor-rooted support tree over objects plus undirected proximal pairs."""

    object_nodes: Tuple[ObjectNode, ...] = ()
    supporting_edges: Tuple[Tuple[str, str], ...] = ()
    proximal_edges: Tuple[Tuple[str, str], ...] = ()
    root: str = FLOOR

    def __post_init__(self):
        nodes = tuple(sorted(self.object_nodes, key=lambda o: o.object_label))
        labels = [o.object_label for o in nodes]
        if len(set(labels)) != len(labels):
            raise ValueError("object labels must be unique")
        if self.root in labels:
            raise ValueError(f"object label {self.root!r} clashes with the scene root")
        sup = tuple(sorted((str(a), str(b)) for a, b in self.supporting_edges))
        prox = tuple(sorted({tuple(sorted((str(a), str(b)))) for a, b in self.proximal_edges}))
        supporter = {}
        for a, b in sup:
            if b not in labels or (a != self.root and a not in labels):
                raise ValueError(f"supporting edge {a} -> {b} references an unknown object")
            if b in supporter:
                raise ValueError(f"object {b} has more than one supporter")
            supporter[b] = a
        if set(supporter) != set(labels):
            raise ValueError("every object needs exactly one supporter")
        for lab in labels:
            seen, cur = set(), lab
            while cur != self.root:
                if cur in seen:
                    raise ValueError("supporting relation contains a cycle")
                seen.add(cur)
                cur = supporter[cur]
        for a, b in prox:
            if a == b or a not in labels or b not in labels:
                raise ValueError(f"invalid proximal edge {a} - {b}")
        object.__setattr__(self, "object_nodes", nodes)
        object.__setattr__(self, "supporting_edges", sup)
        object.__setattr__(self, "proximal_edges", prox)

    @property
    def labels(self) -> List[str]:
        return [o.object_label for o in self.object_nodes]

    def node(self, label: str) -> ObjectNode:
        for o in self.object_nodes:
            if o.object_label == label:
                return o
        raise KeyError(label)

    def supporter(self, label: str) -> str:
        for a, b in self.supporting_edges:
            if b == label:
                return a
        raise KeyError(label)

    def supported_by(self, label: str) -> List[str]:
        return sorted(b for a, b in self.supporting_edges if a == label)

    def top_down(self) -> List[str]:
        order, queue = [], deque(self.supported_by(self.root))
        while queue:
            u = queue.popleft()
            order.append(u)
            queue.extend(self.supported_by(u))
        return order

    def subtree(self, label: str) -> List[str]:
        out, queue = [], deque([label])
        while queue:
            u = queue.popleft()
            out.append(u)
            queue.extend(self.supported_by(u))
        return out

    def with_nodes(self, nodes: Sequence[ObjectNode]) -> "ContactGraph":
        return replace(self, object_nodes=tuple(nodes))


# ---------------------------------------------------------------------------
# support estimation
# ---------------------------------------------------------------------------


def _facing(obj_or_parts, up: bool, theta_a: float) -> List[PlanarPolygon]:
    parts = obj_or_parts.world_parts() if isinstance(obj_or_parts, ObjectNode) else obj_or_parts
    sign = 1.0 if up else -1.0
    return [pl for p in parts for pl in p.planes if sign * float(pl.plane.normal @ UP) >= theta_a]


def _support_score(tops: Sequence[PlanarPolygon], bottoms: Sequence[PlanarPolygon], th: ContactThresholds) -> float:
    best = 0.0
    for pp in tops:
        for pc in bottoms:
            if plane_alignment(pp, pc) < th.theta_a:
                continue
            if abs(plane_distance(pp, pc)) > th.theta_d:
                continue
            cont = contact_ratio(pp, pc)
            if cont >= th.theta_c:
                best = max(best, cont)
    return best


def estimate_support(
    objects: Sequence[ObjectNode], th: ContactThresholds = ContactThresholds()
) -> Tuple[List[Tuple[str, str]], List[str]]:
    """Greedy max-contact supporter for every object.

    A supporter must reach lower than its supportee, which keeps the relation
    acyclic.  Objects without any admissible supporter go to the floor and are
    returned in the second list.
    """
    floor = [floor_polygon()]
    lows = {o.object_label: o.min_z() for o in objects}
    edges, floating = [], []
    for obj in objects:
        bottoms = _facing(obj, False, th.theta_a)
        best_label, best_score = None, 0.0
        cands = [(FLOOR, floor)] + [
            (o.object_label, _facing(o, True, th.theta_a))
            for o in objects
            if o is not obj and lows[o.object_label] < lows[obj.object_label] - 1e-9
        ]
        for lab, tops in cands:
            score = _support_score(tops, bottoms, th)
            if score > best_score + 1e-12:
                best_label, best_score = lab, score
        if best_label is None:
            floating.append(obj.object_label)
            best_label = FLOOR
        edges.append((best_label, obj.object_label))
    return edges, floating


def proximal_pairs(
    objects: Sequence[ObjectNode], supporting: Sequence[Tuple[str, str]], radius: float = PROXIMITY_RADIUS
) -> List[Tuple[str, str]]:
    """Object pairs, not in a support relation, whose part boxes come closer than ``radius``."""
    sup = {frozenset(e) for e in supporting}
    boxes = {o.object_label: o.part_boxes() for o in objects}
    out = []
    objs = sorted(objects, key=lambda o: o.object_label)
    for i, a in enumerate(objs):
        for b in objs[i + 1:]:
            if frozenset((a.object_label, b.object_label)) in sup:
                continue
            d = min((obb_distance(x, y) for x in boxes[a.object_label] for y in boxes[b.object_label]),
                    default=np.inf)
            if d < radius:
                out.append((a.object_label, b.object_label))
    return out


def assemble_scene(
    objects: Sequence[ObjectNode],
    th: ContactThresholds = ContactThresholds(),
    proximity_radius: float = PROXIMITY_RADIUS,
) -> ContactGraph:
    """Support tree and proximal relations over ``objects``.

    Floating objects are attached to the floor with a :class:`SceneWarning`.
    """
    if not objects:
        raise ValueError("need at least one object")
    supporting, floating = estimate_support(objects, th)
    for lab in floating:
        warnings.warn(f"object {lab} has no supporter; attached to the floor", SceneWarning, stacklevel=2)
    prox = proximal_pairs(objects, supporting, proximity_radius)
    return ContactGraph(tuple(objects), tuple(supporting), tuple(prox))


# ---------------------------------------------------------------------------
# object pose refinement
# ---------------------------------------------------------------------------


def _best_support_pair(tops, bottoms, gate: float):
    best = None
    for pp in tops:
        for pc in bottoms:
            if plane_alignment(pp, pc) < gate:
                continue
            cont = contact_ratio(pp, pc)
            if cont <= 0.0:
                continue
            key = (cont, -abs(plane_distance(pp, pc)))
            if best is None or key > best[0]:
                best = (key, pp, pc)
    return None if best is None else best[1:]


def support_misalignment(graph: ContactGraph, gate: float = DEFAULT_GATE) -> Dict[str, float]:
    """Angle (radians) between each object's contact plane and its supporter's plane."""
    out = {}
    for lab in graph.labels:
        pair = _support_pair(graph, lab, gate)
        if pair is None:
            continue
        pp, pc = pair
        out[lab] = angle_between(-pc.plane.normal, pp.plane.normal)
    return out


def _support_pair(graph: ContactGraph, label: str, gate: float):
    sup = graph.supporter(label)
    tops = [floor_polygon()] if sup == FLOOR else _facing(graph.node(sup), True, gate)
    bottoms = _facing(graph.node(label), False, gate)
    return _best_support_pair(tops, bottoms, gate)


def refine_object_poses(graph: ContactGraph, gate: float = DEFAULT_GATE) -> ContactGraph:
    """Make every object sit flush on its supporter, top-down.

    The object is rotated about its contact patch so its bottom contact plane is
    parallel to the supporter's plane, then slid along the supporter normal
    until its lowest overlapping bottom plane has zero distance.  The same rigid
    correction is applied to everything the object supports.
    """
    nodes = {o.object_label: o for o in graph.object_nodes}
    for lab in graph.top_down():
        g = graph.with_nodes(tuple(nodes.values()))
        pair = _support_pair(g, lab, gate)
        if pair is None:
            continue
        pp, pc = pair
        corr = NormalCorrespondences([pp.plane.normal], [-pc.plane.normal])
        rot = refine_rotation(corr).rotation
        delta = RigidTransform.from_rotation(rot, about=pc.centroid)

        moved = nodes[lab].moved(delta)
        bottoms = [b for b in _facing(moved, False, gate) if plane_alignment(pp, b) >= gate
                   and contact_ratio(pp, b) > 0.0]
        if bottoms:
            dist = min(plane_distance(pp, b) for b in bottoms)
            delta = compose(RigidTransform.from_translation(-dist * pp.plane.normal), delta)
        for sub in graph.subtree(lab):
            nodes[sub] = nodes[sub].moved(delta)
    return graph.with_nodes(tuple(nodes.values()))
