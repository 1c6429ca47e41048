"""
Top-down rotation refinement of a part tree from nearly aligned plane normals.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import RigidTransform, compose, kabsch_rotation, orthonormalize, rotation_about
from .kinematics import PartParseTree
from .primitives import PartEntity

DEFAULT_GATE = 0.9
RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class NormalCorrespondences:
    """Index-paired unit normals; child normals already sign-matched to the parent."""

    parent_normals: NDArray[np.float64]
    child_normals: NDArray[np.float64]

    def __post_init__(self):
        p = np.array(self.parent_normals, dtype=float).reshape(-1, 3)
        c = np.array(self.child_normals, dtype=float).reshape(-1, 3)
        if p.shape != c.shape:
            raise ValueError("parent and child normal lists differ in length")
        object.__setattr__(self, "parent_normals", p)
        object.__setattr__(self, "child_normals", c)

    def __len__(self) -> int:
        return len(self.parent_normals)

    def residual(self, rotation: Optional[ArrayLike] = None) -> float:
        """Sum of squared residuals |R u_c - u_p|^2 (identity R by default)."""
        c = self.child_normals if rotation is None else self.child_normals @ np.asarray(rotation).T
        return float(((c - self.parent_normals) ** 2).sum())

    def rotated_child(self, rotation: ArrayLike) -> "NormalCorrespondences":
        return NormalCorrespondences(self.parent_normals, self.child_normals @ np.asarray(rotation).T)


def unique_directions(normals: Sequence[ArrayLike], tol: float = 1e-6) -> List[NDArray[np.float64]]:
    """Drop normals that are (anti)parallel to an earlier one."""
    out: List[NDArray[np.float64]] = []
    for n in normals:
        n = np.asarray(n, dtype=float)
        if all(abs(abs(float(n @ m)) - 1.0) > tol for m in out):
            out.append(n)
    return out


def aligned_plane_normals(parent: PartEntity, child: PartEntity, gate: float = DEFAULT_GATE) -> NormalCorrespondences:
    """Greedy one-to-one pairing of roughly parallel plane normals.

    Opposite faces of a primitive share a direction, so each part's normals are
    deduplicated up to sign first.  Pairs are accepted by descending |dot|.
    """
    if not 0 < gate < 1:
        raise ValueError(f"gate must be in (0, 1), got {gate}")
    pn = unique_directions([p.plane.normal for p in parent.planes])
    cn = unique_directions([p.plane.normal for p in child.planes])
    if not pn or not cn:
        return NormalCorrespondences(np.zeros((0, 3)), np.zeros((0, 3)))
    dots = np.array(pn) @ np.array(cn).T
    order = sorted(
        ((abs(float(dots[i, j])), i, j) for i in range(len(pn)) for j in range(len(cn))),
        key=lambda x: (-x[0], x[1], x[2]),
    )
    used_p, used_c = set(), set()
    xp, xc = [], []
    for score, i, j in order:
        if score < gate:
            break
        if i in used_p or j in used_c:
            continue
        used_p.add(i)
        used_c.add(j)
        xp.append(pn[i])
        xc.append(cn[j] if dots[i, j] >= 0 else -cn[j])
    return NormalCorrespondences(np.array(xp).reshape(-1, 3), np.array(xc).reshape(-1, 3))


def minimal_rotation(src: ArrayLike, dst: ArrayLike) -> NDArray[np.float64]:
    """Smallest rotation taking direction ``src`` onto direction ``dst``."""
    a = np.asarray(src, dtype=float)
    b = np.asarray(dst, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(a @ b)
    if s < 1e-15:
        if c > 0:
            return np.eye(3)
        # antiparallel: half turn about any axis perpendicular to a
        perp = np.cross(a, np.eye(3)[int(np.argmin(np.abs(a)))])
        return rotation_about(perp / np.linalg.norm(perp), np.pi)
    return rotation_about(axis / s, float(np.arctan2(s, c)))


def refine_rotation(corr: NormalCorrespondences) -> RigidTransform:
    """Rotation-only transform R minimising sum |R u_c - u_p|^2 over the pairs.

    With rank-1 data (all normals parallel) only the angle between the shared
    directions is corrected; the spin about them is left alone.
    """
    if len(corr) == 0:
        return RigidTransform.identity()
    sv = np.linalg.svd(corr.child_normals, compute_uv=False)
    if len(sv) < 2 or sv[1] <= RANK_TOL * max(1.0, sv[0]):
        c = corr.child_normals.sum(axis=0)
        p = corr.parent_normals.sum(axis=0)
        if np.linalg.norm(c) < 1e-12 or np.linalg.norm(p) < 1e-12:
            return RigidTransform.identity()
        return RigidTransform(minimal_rotation(c, p), np.zeros(3))
    r = orthonormalize(kabsch_rotation(corr.child_normals, corr.parent_normals))
    return RigidTransform(r, np.zeros(3))


@dataclass(frozen=True)
class RefinementStep:
    parent: str
    child: str
    pairs: int
    residual_before: float
    residual_after: float
    correction_deg: float


def _snap(parent: PartEntity, child: PartEntity, tree: PartParseTree) -> Optional[NDArray[np.float64]]:
    """Translation along the parent contact normal bringing the child's Dist to zero."""
    ev = tree.edge_for(child.instance_label).evidence
    if ev is None:
        return None
    pp = parent.planes[ev.parent_plane_index]
    pc = child.planes[ev.child_plane_index]
    dist = float(np.mean(pp.plane.signed_distance(pc.vertices)))
    return -dist * pp.plane.normal


def refine_tree(
    tree: PartParseTree,
    gate: float = DEFAULT_GATE,
    snap: bool = False,
    trace: Optional[List[RefinementStep]] = None,
) -> PartParseTree:
    """Breadth-first rotation refinement, parents before children.

    Each child is posed from its (already refined) parent and the current edge
    transform, its normals are registered to the parent's and the edge is
    updated as ``T_pc <- T_pc . T_r``.  Descendants follow their parent rigidly
    because their own edge transforms are relative.  With ``snap`` the child is
    also slid along the parent contact normal until the contact distance is 0.
    """
    tree = tree.reposed()
    world: Dict[str, PartEntity] = {tree.root: tree.node(tree.root)}
    new_t: Dict[Tuple[str, str], RigidTransform] = {}
    queue = deque(tree.children(tree.root))
    while queue:
        lab = queue.popleft()
        p = tree.parent(lab)
        parent = world[p]
        t_pc = tree.get_edge_transform(p, lab)
        child = tree.node(lab).with_pose(compose(parent.pose, t_pc))

        corr = aligned_plane_normals(parent, child, gate)
        r_w = refine_rotation(corr).rotation
        r_c = child.pose.rotation
        t_r = RigidTransform(orthonormalize(r_c.T @ r_w @ r_c), np.zeros(3))
        t_pc = compose(t_pc, t_r)
        child = child.with_pose(compose(parent.pose, t_pc))
        if snap:
            shift = _snap(parent, child, tree)
            if shift is not None:
                child = child.moved(RigidTransform.from_translation(shift))
                t_pc = compose(parent.pose.inverse(), child.pose)
        if trace is not None:
            angle = float(np.degrees(np.arccos(np.clip((np.trace(r_w) - 1.0) / 2.0, -1.0, 1.0))))
            trace.append(RefinementStep(p, lab, len(corr), corr.residual(), corr.residual(r_w), angle))
        new_t[(p, lab)] = t_pc
        world[lab] = child
        queue.extend(tree.children(lab))
    return tree.with_edge_transforms(new_t)
