"""URDF export of a contact graph and a structural validator for URDF text."""

from __future__ import annotations

import re
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import NamingCollisionError
from .geometry import RigidTransform, compose
from .kinematics import JointType, PartParseTree
from .mesh import PrimitiveKind
from .primitives import PartEntity
from .scene import FLOOR, ContactGraph

DENSITY = 500.0  # kg/m^3, only used for plausible inertials
JOINT_EFFORT = 100.0
JOINT_VELOCITY = 1.0
_NAME_RE = re.compile(r"[^A-Za-z0-9_]")


def sanitize(name: str) -> str:
    s = _NAME_RE.sub("_", name.strip())
    if not s or s[0].isdigit():
        s = "_" + s
    return s


def fmt(x: float) -> str:
    s = "%.9g" % float(x)
    return "0" if s in ("-0", "0") else s


def fmt_vec(v) -> str:
    return " ".join(fmt(x) for x in v)


def rpy(rotation) -> np.ndarray:
    """Fixed-axis roll, pitch, yaw with R = Rz(yaw) Ry(pitch) Rx(roll)."""
    with warnings.catch_warnings():
        # gimbal lock still yields a valid decomposition (yaw absorbs roll)
        warnings.filterwarnings("ignore", message="Gimbal lock")
        return Rotation.from_matrix(np.asarray(rotation, dtype=float)).as_euler("xyz")


def link_name(object_label: str, part_label: str) -> str:
    return sanitize(f"{object_label}_{part_label}")


def _origin(parent: ET.Element, t: RigidTransform) -> None:
    ET.SubElement(parent, "origin", {"xyz": fmt_vec(t.translation), "rpy": fmt_vec(rpy(t.rotation))})


def _geometry(parent: ET.Element, part: PartEntity, as_mesh: bool, mesh_dir: str) -> None:
    geom = ET.SubElement(parent, "geometry")
    kind, scale = part.model.kind, part.model.scale
    if as_mesh:
        ET.SubElement(geom, "mesh", {"filename": f"{mesh_dir}/{kind.value}.obj", "scale": fmt_vec(scale)})
    elif kind is PrimitiveKind.BOX:
        ET.SubElement(geom, "box", {"size": fmt_vec(scale)})
    elif kind is PrimitiveKind.CYLINDER:
        ET.SubElement(geom, "cylinder", {"radius": fmt(scale[0] / 2.0), "length": fmt(scale[2])})
    else:
        ET.SubElement(geom, "sphere", {"radius": fmt(scale[0] / 2.0)})


def _inertia(part: PartEntity) -> Tuple[float, np.ndarray]:
    kind, (a, b, c) = part.model.kind, part.model.scale
    m = DENSITY * part.model.volume
    if kind is PrimitiveKind.BOX:
        d = m / 12.0 * np.array([b * b + c * c, a * a + c * c, a * a + b * b])
    elif kind is PrimitiveKind.CYLINDER:
        r = a / 2.0
        side = m * (3 * r * r + c * c) / 12.0
        d = np.array([side, side, m * r * r / 2.0])
    else:
        d = np.full(3, 2.0 / 5.0 * m * (a / 2.0) ** 2)
    return m, d


def _pivots(tree: PartParseTree) -> Dict[str, np.ndarray]:
    """Offset of each link frame from its part frame (the hinge point for revolute children)."""
    out = {lab: np.zeros(3) for lab in tree.labels}
    for e in tree.edges:
        if e.joint.joint_type is JointType.REVOLUTE:
            out[e.child] = np.array(e.joint.pivot, dtype=float)
    return out


def _link(robot: ET.Element, name: str, part: PartEntity, pivot: np.ndarray, mesh_dir: str) -> None:
    link = ET.SubElement(robot, "link", {"name": name})
    if part.model is None:
        return
    back = RigidTransform.from_translation(-pivot)
    mass, diag = _inertia(part)
    inertial = ET.SubElement(link, "inertial")
    _origin(inertial, back)
    ET.SubElement(inertial, "mass", {"value": fmt(mass)})
    ET.SubElement(inertial, "inertia", {
        "ixx": fmt(diag[0]), "ixy": "0", "ixz": "0", "iyy": fmt(diag[1]), "iyz": "0", "izz": fmt(diag[2]),
    })
    visual = ET.SubElement(link, "visual")
    _origin(visual, back)
    _geometry(visual, part, True, mesh_dir)
    collision = ET.SubElement(link, "collision")
    _origin(collision, back)
    _geometry(collision, part, False, mesh_dir)


def _joint(robot: ET.Element, name: str, jtype: str, parent: str, child: str, origin: RigidTransform,
           axis=None, limits=None) -> None:
    j = ET.SubElement(robot, "joint", {"name": name, "type": jtype})
    ET.SubElement(j, "parent", {"link": parent})
    ET.SubElement(j, "child", {"link": child})
    _origin(j, origin)
    if axis is not None:
        ET.SubElement(j, "axis", {"xyz": fmt_vec(axis)})
    if limits is not None:
        ET.SubElement(j, "limit", {
            "lower": fmt(limits[0]), "upper": fmt(limits[1]),
            "effort": fmt(JOINT_EFFORT), "velocity": fmt(JOINT_VELOCITY),
        })


def export_urdf(graph: ContactGraph, robot_name: str = "scene", mesh_dir: str = "meshes") -> str:
    """URDF text for the whole scene rooted at a ``floor`` link.

    Each part becomes a link whose frame is the part frame shifted to the joint
    pivot, so a revolute door turns about its hinge.  Part-tree edges become
    joints with their stored type, axis and limits; support edges become fixed
    joints between the objects' root links.
    """
    names: Dict[Tuple[str, str], str] = {}
    seen: Dict[str, List[str]] = {FLOOR: [FLOOR]}
    for obj in graph.object_nodes:
        for lab in obj.part_tree.labels:
            n = link_name(obj.object_label, lab)
            names[(obj.object_label, lab)] = n
            seen.setdefault(n, []).append(f"{obj.object_label}/{lab}")
    clashes = [n for n, src in seen.items() if len(src) > 1]
    if clashes:
        raise NamingCollisionError(clashes)

    robot = ET.Element("robot", {"name": sanitize(robot_name)})
    ET.SubElement(robot, "link", {"name": FLOOR})
    frames: Dict[Tuple[str, str], RigidTransform] = {}
    for obj in graph.object_nodes:
        tree = obj.part_tree
        piv = _pivots(tree)
        for lab in tree.breadth_first():
            part = obj.world_part(lab)
            frames[(obj.object_label, lab)] = compose(part.pose, RigidTransform.from_translation(piv[lab]))
            _link(robot, names[(obj.object_label, lab)], part, piv[lab], mesh_dir)

    for sup, obj_label in graph.supporting_edges:
        obj = graph.node(obj_label)
        child = (obj_label, obj.part_tree.root)
        if sup == FLOOR:
            parent_name, parent_frame = FLOOR, RigidTransform.identity()
        else:
            key = (sup, graph.node(sup).part_tree.root)
            parent_name, parent_frame = names[key], frames[key]
        origin = compose(parent_frame.inverse(), frames[child])
        _joint(robot, sanitize(f"{obj_label}_support"), "fixed", parent_name, names[child], origin)

    for obj in graph.object_nodes:
        tree = obj.part_tree
        order = {lab: i for i, lab in enumerate(tree.breadth_first())}
        for e in sorted(tree.edges, key=lambda e: order[e.child]):
            pk, ck = (obj.object_label, e.parent), (obj.object_label, e.child)
            origin = compose(frames[pk].inverse(), frames[ck])
            jt = e.joint.joint_type
            _joint(robot, f"{names[ck]}_joint", jt.value, names[pk], names[ck], origin,
                   None if jt is JointType.FIXED else e.joint.axis,
                   None if jt is JointType.FIXED else e.joint.limits)

    ET.indent(robot, space="  ")
    return '<?xml version="1.0" encoding="utf-8"?>\n' + ET.tostring(robot, encoding="unicode") + "\n"


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass
class URDFReport:
    links: List[str] = field(default_factory=list)
    joints: List[str] = field(default_factory=list)
    root: Optional[str] = None
    joint_types: Dict[str, str] = field(default_factory=dict)
    errors: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def _floats(text: Optional[str], n: int) -> Optional[np.ndarray]:
    try:
        v = np.array([float(x) for x in (text or "").split()])
    except ValueError:
        return None
    return v if len(v) == n and np.all(np.isfinite(v)) else None


def validate_urdf(text: str) -> URDFReport:
    """Structural checks: one root link, every other link the child of exactly
    one joint, no cycles, known joint types, unit axes and ordered limits."""
    rep = URDFReport()
    try:
        robot = ET.fromstring(text.encode("utf-8") if isinstance(text, str) else text)
    except ET.ParseError as exc:
        rep.errors.append(f"malformed XML: {exc}")
        return rep
    if robot.tag != "robot":
        rep.errors.append(f"root element is <{robot.tag}>, expected <robot>")
        return rep
    rep.links = [l.get("name") for l in robot.findall("link")]
    if len(set(rep.links)) != len(rep.links):
        rep.errors.append("duplicate link names")
    links = set(rep.links)
    parent_of: Dict[str, str] = {}
    for j in robot.findall("joint"):
        name, jtype = j.get("name"), j.get("type")
        rep.joints.append(name)
        rep.joint_types[name] = jtype
        if jtype not in {t.value for t in JointType}:
            rep.errors.append(f"joint {name}: unsupported type {jtype!r}")
        p, c = j.find("parent"), j.find("child")
        if p is None or c is None:
            rep.errors.append(f"joint {name}: missing parent or child")
            continue
        pl, cl = p.get("link"), c.get("link")
        for lk in (pl, cl):
            if lk not in links:
                rep.errors.append(f"joint {name}: unknown link {lk!r}")
        if cl in parent_of:
            rep.errors.append(f"link {cl} is the child of more than one joint")
        parent_of[cl] = pl
        o = j.find("origin")
        if o is not None and (_floats(o.get("xyz", "0 0 0"), 3) is None or _floats(o.get("rpy", "0 0 0"), 3) is None):
            rep.errors.append(f"joint {name}: malformed origin")
        if jtype in ("revolute", "prismatic"):
            ax = j.find("axis")
            v = None if ax is None else _floats(ax.get("xyz"), 3)
            if v is None or abs(np.linalg.norm(v) - 1.0) > 1e-6:
                rep.errors.append(f"joint {name}: axis missing or not unit length")
            lim = j.find("limit")
            if lim is None:
                rep.errors.append(f"joint {name}: missing limit")
            else:
                lo, hi = _floats(lim.get("lower"), 1), _floats(lim.get("upper"), 1)
                if lo is None or hi is None or not lo[0] < hi[0]:
                    rep.errors.append(f"joint {name}: limits must satisfy lower < upper")
    if len(set(rep.joints)) != len(rep.joints):
        rep.errors.append("duplicate joint names")
    roots = [l for l in rep.links if l not in parent_of]
    if len(roots) != 1:
        rep.errors.append(f"expected exactly one root link, found {len(roots)}: {roots}")
    else:
        rep.root = roots[0]
    if len(rep.joints) != len(rep.links) - 1:
        rep.errors.append(f"{len(rep.joints)} joints for {len(rep.links)} links")
    for lk in rep.links:
        seen, cur = set(), lk
        while cur in parent_of:
            if cur in seen:
                rep.errors.append(f"joint graph has a cycle through {lk}")
                break
            seen.add(cur)
            cur = parent_of[cur]
    return rep
