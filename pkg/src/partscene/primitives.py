"""
Primitive candidates for a part point cloud, ICP alignment and selection of
the best primitive, plus the part entity that carries the fitted model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .errors import DegenerateGeometryError, FittingFailedError, NoConvergenceError
from .geometry import OrientedBox, PlanarPolygon, RigidTransform, compose, fit_obb, rigid_fit
from .mesh import PrimitiveKind, TriMesh, sample_mesh, template_mesh

log = logging.getLogger(__name__)

N_SURFACE_SAMPLES = 1000
ICP_MAX_ITER = 100
ICP_TOL = 1e-6
# inset depths tried per candidate, as multiples of the best plain-fit cost
INSET_FACTORS = (0.5, 1.0, 2.0)
INSET_ICP_ITER = 30

# proper rotations mapping the template z axis onto OBB axis 0, 1, 2
_AXIS_ORIENTATIONS = (
    np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]),
    np.eye(3),
)

# axis transpositions made proper by negating the remaining axis
_RESTARTS = (
    np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]),
    np.array([[-1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]),
    np.array([[0.0, 0.0, 1.0], [0.0, -1.0, 0.0], [1.0, 0.0, 0.0]]),
)


@dataclass(frozen=True, eq=False)
class PrimitiveCandidate:
    """A template scaled along its own axes.

    ``orientation`` rotates the template frame into the OBB frame it was
    derived from; it only matters for choosing the ICP initialisation.
    """

    kind: PrimitiveKind
    scale: NDArray[np.float64]
    orientation: NDArray[np.float64] = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        s = np.array(self.scale, dtype=float)
        if s.shape != (3,) or np.any(s <= 0):
            raise ValueError(f"scale must be three positive numbers, got {s}")
        kind = PrimitiveKind(self.kind)
        if kind is not PrimitiveKind.BOX and not np.isclose(s[0], s[1]):
            raise ValueError("cylinder and sphere candidates need equal radial scales")
        if kind is PrimitiveKind.SPHERE and not np.isclose(s[0], s[2]):
            raise ValueError("sphere candidates need a uniform scale")
        s.setflags(write=False)
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "scale", s)
        object.__setattr__(self, "orientation", np.array(self.orientation, dtype=float))

    @property
    def model_mesh(self) -> TriMesh:
        return template_mesh(self.kind).scaled(self.scale)


@dataclass(frozen=True, eq=False)
class PrimitiveModel:
    """A fitted primitive: template kind, per-axis scale and pose in its parent frame."""

    kind: PrimitiveKind
    scale: NDArray[np.float64]
    pose: RigidTransform

    def __post_init__(self):
        s = np.array(self.scale, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "kind", PrimitiveKind(self.kind))
        object.__setattr__(self, "scale", s)

    @property
    def local_mesh(self) -> TriMesh:
        return template_mesh(self.kind).scaled(self.scale)

    def mesh(self, frame: Optional[RigidTransform] = None) -> TriMesh:
        pose = self.pose if frame is None else compose(frame, self.pose)
        return self.local_mesh.transformed(pose)

    @property
    def volume(self) -> float:
        sx, sy, sz = self.scale
        if self.kind is PrimitiveKind.BOX:
            return float(sx * sy * sz)
        if self.kind is PrimitiveKind.CYLINDER:
            return float(np.pi * sx * sy / 4.0 * sz)
        return float(np.pi / 6.0 * sx * sy * sz)

    def bounding_box(self, frame: Optional[RigidTransform] = None) -> OrientedBox:
        pose = self.pose if frame is None else compose(frame, self.pose)
        return OrientedBox(pose.translation, pose.rotation, self.scale / 2.0)

    def with_pose(self, pose: RigidTransform) -> "PrimitiveModel":
        return replace(self, pose=pose)


@dataclass(frozen=True, eq=False)
class AlignmentResult:
    model: PrimitiveCandidate
    transform: RigidTransform
    cost: float
    # (kind, candidate index, restart index, inset depth, cost) per ICP run
    trials: Tuple[Tuple[str, int, int, float, float], ...] = ()

    def fitted(self) -> PrimitiveModel:
        return PrimitiveModel(self.model.kind, self.model.scale, self.transform)


@dataclass(frozen=True, eq=False)
class PartEntity:
    """One object part: labels, observed cloud, fitted model and surface planes."""

    instance_label: str
    semantic_class: str
    cloud: Optional[NDArray[np.float64]] = None
    model: Optional[PrimitiveModel] = None
    planes: Tuple[PlanarPolygon, ...] = ()

    def __post_init__(self):
        if self.cloud is not None:
            c = np.array(self.cloud, dtype=float).reshape(-1, 3)
            c.setflags(write=False)
            object.__setattr__(self, "cloud", c)
        object.__setattr__(self, "planes", tuple(self.planes))

    @property
    def pose(self) -> RigidTransform:
        if self.model is not None:
            return self.model.pose
        if self.cloud is not None and len(self.cloud):
            return RigidTransform.from_translation(self.cloud.mean(axis=0))
        return RigidTransform.identity()

    @property
    def centroid(self) -> NDArray[np.float64]:
        return self.pose.translation

    @property
    def volume(self) -> float:
        if self.model is not None:
            return self.model.volume
        if self.cloud is not None and len(self.cloud) >= 4:
            try:
                return fit_obb(self.cloud).volume
            except DegenerateGeometryError:
                return 0.0
        return 0.0

    def with_pose(self, pose: RigidTransform) -> "PartEntity":
        """Move the part rigidly so that its pose becomes ``pose``."""
        delta = compose(pose, self.pose.inverse())
        return self.moved(delta)

    def moved(self, delta: RigidTransform) -> "PartEntity":
        """Apply the rigid motion ``delta`` to model, planes and cloud."""
        return replace(
            self,
            cloud=None if self.cloud is None else delta.apply(self.cloud),
            model=None if self.model is None else self.model.with_pose(compose(delta, self.model.pose)),
            planes=tuple(p.transformed(delta) for p in self.planes),
        )


# ---------------------------------------------------------------------------
# candidates and sampling
# ---------------------------------------------------------------------------


def _as_cloud(cloud: ArrayLike) -> NDArray[np.float64]:
    c = np.asarray(cloud, dtype=float)
    if c.ndim != 2 or c.shape[1] != 3:
        c = c.reshape(-1, 3)
    return c


def candidate_set(cloud: ArrayLike, obb: Optional[OrientedBox] = None) -> List[PrimitiveCandidate]:
    """Scaled box, three cylinder orientations and a sphere from the cloud's OBB."""
    c = _as_cloud(cloud)
    if len(c) < 4:
        raise DegenerateGeometryError("need at least 4 points to build candidates")
    box = obb if obb is not None else fit_obb(c)
    ext = box.extents
    out = [PrimitiveCandidate(PrimitiveKind.BOX, ext.copy())]
    for k in range(3):
        others = [ext[i] for i in range(3) if i != k]
        d = float(np.mean(others))
        out.append(PrimitiveCandidate(PrimitiveKind.CYLINDER, [d, d, ext[k]], _AXIS_ORIENTATIONS[k]))
    d = float(ext.mean())
    out.append(PrimitiveCandidate(PrimitiveKind.SPHERE, [d, d, d]))
    return out


def inset_candidate(candidate: PrimitiveCandidate, depth: float) -> Optional[PrimitiveCandidate]:
    """The candidate with every face moved inward by ``depth`` (None if it would collapse)."""
    scale = candidate.scale - 2.0 * depth
    if depth <= 0 or np.any(scale < 0.5 * candidate.scale):
        return None
    return PrimitiveCandidate(candidate.kind, scale, candidate.orientation)


def sample_surface(candidate: PrimitiveCandidate, n: int = N_SURFACE_SAMPLES, seed: int = 0) -> NDArray[np.float64]:
    """``n`` area-weighted surface samples of the scaled candidate (template frame)."""
    if n < 100:
        raise ValueError("sample_surface needs n >= 100")
    return sample_mesh(candidate.model_mesh, n, seed)


# ---------------------------------------------------------------------------
# ICP
# ---------------------------------------------------------------------------


def alignment_cost(samples: ArrayLike, cloud_or_tree, transform: RigidTransform) -> float:
    """Mean distance from transformed model samples to their closest cloud point."""
    tree = cloud_or_tree if isinstance(cloud_or_tree, cKDTree) else cKDTree(_as_cloud(cloud_or_tree))
    d, _ = tree.query(transform.apply(samples))
    return float(d.mean())


def icp_align(
    candidate: PrimitiveCandidate,
    cloud: ArrayLike,
    init: RigidTransform,
    *,
    n_samples: int = N_SURFACE_SAMPLES,
    seed: int = 0,
    gate: Optional[float] = None,
    max_iter: int = ICP_MAX_ITER,
    tol: float = ICP_TOL,
    trace: Optional[list] = None,
    tree: Optional[cKDTree] = None,
    abandon_above: Optional[float] = None,
) -> Tuple[RigidTransform, float]:
    """Point-to-point ICP of the candidate's surface samples onto ``cloud``.

    Minimises the mean closest-point distance from model samples to the cloud.
    A step that would raise the cost is rejected, so the accepted costs
    (appended to ``trace`` when given) never increase.  Correspondences
    farther than ``gate`` (default: twice the cloud OBB diagonal) are ignored
    in the update step.  With ``abandon_above`` set, the run stops after five
    iterations if its cost is still above that value.
    """
    c = _as_cloud(cloud)
    if len(c) == 0:
        raise ValueError("cloud is empty")
    if n_samples < 500:
        raise ValueError("icp_align needs at least 500 surface samples")
    if gate is None:
        try:
            gate = 2.0 * fit_obb(c).diagonal
        except DegenerateGeometryError:
            gate = 2.0 * float(np.linalg.norm(c.max(0) - c.min(0)))
    samples = sample_surface(candidate, n_samples, seed)
    tree = tree if tree is not None else cKDTree(c)

    t = init
    dist, idx = tree.query(t.apply(samples))
    cost = float(dist.mean())
    if trace is not None:
        trace.append(cost)
    for it in range(max_iter):
        if abandon_above is not None and it == 5 and cost > abandon_above:
            break
        mask = dist <= gate
        if mask.sum() < 3:
            raise NoConvergenceError("no correspondences within the gating radius")
        t_new = rigid_fit(samples[mask], c[idx[mask]])
        dist_new, idx_new = tree.query(t_new.apply(samples))
        cost_new = float(dist_new.mean())
        if cost_new > cost:
            break
        t, dist, idx = t_new, dist_new, idx_new
        improvement = cost - cost_new
        cost = cost_new
        if trace is not None:
            trace.append(cost)
        if improvement < tol:
            break
    return t, cost


def best_primitive(
    cloud: ArrayLike,
    *,
    n_samples: int = N_SURFACE_SAMPLES,
    seed: int = 0,
    restarts: bool = True,
    insets: bool = True,
) -> AlignmentResult:
    """Fit every candidate by ICP from the OBB pose and keep the cheapest.

    Each candidate also gets three restarts from axis-transposed OBB frames
    (skipped for spheres, whose surface is rotation invariant).  With
    ``insets``, every candidate is then re-tried slightly shrunk (see
    :func:`inset_candidate`) from its converged pose; sensor noise inflates
    the OBB, and the shrunk variants only win when they lower the cost.
    Ties go to box, then cylinder, then sphere.
    """
    c = _as_cloud(cloud)
    if len(c) < 4:
        raise FittingFailedError("need at least 4 points to fit a primitive")
    try:
        obb = fit_obb(c)
        candidates = candidate_set(c, obb)
    except DegenerateGeometryError as exc:
        raise FittingFailedError(f"cannot build candidates: {exc}") from exc

    tree = cKDTree(c)
    gate = 2.0 * obb.diagonal
    best: Optional[Tuple[float, int, PrimitiveCandidate, RigidTransform]] = None
    per_candidate: dict = {}
    trials = []
    for ci, cand in enumerate(candidates):
        inits = [cand.orientation]
        if restarts and cand.kind is not PrimitiveKind.SPHERE:
            inits += [p @ cand.orientation for p in _RESTARTS]
        for ri, rot in enumerate(inits):
            init = RigidTransform(obb.axes @ rot, obb.center)
            try:
                t, cost = icp_align(
                    cand, c, init, n_samples=n_samples, seed=seed, gate=gate, tree=tree,
                    abandon_above=None if best is None else 1.5 * best[0],
                )
            except NoConvergenceError:
                log.debug("candidate %d restart %d did not converge", ci, ri)
                continue
            trials.append((cand.kind.value, ci, ri, 0.0, cost))
            if ci not in per_candidate or cost < per_candidate[ci][0]:
                per_candidate[ci] = (cost, t)
            key = (cost, cand.kind.order)
            if best is None or key < (best[0], best[2].kind.order):
                best = (cost, ci, cand, t)
    if best is None:
        raise FittingFailedError("no primitive candidate converged")
    if insets:
        base_cost = best[0]
        for ci in sorted(per_candidate):
            cost0, t0 = per_candidate[ci]
            if cost0 > 1.5 * base_cost:
                continue
            for factor in INSET_FACTORS:
                cand = inset_candidate(candidates[ci], factor * base_cost)
                if cand is None:
                    continue
                try:
                    t, cost = icp_align(cand, c, t0, n_samples=n_samples, seed=seed, gate=gate, tree=tree,
                                        max_iter=INSET_ICP_ITER)
                except NoConvergenceError:
                    continue
                trials.append((cand.kind.value, ci, 0, factor * base_cost, cost))
                if (cost, cand.kind.order) < (best[0], best[2].kind.order):
                    best = (cost, ci, cand, t)
    cost, _, cand, t = best
    return AlignmentResult(cand, t, cost, tuple(trials))


def fit_part(label: str, semantic_class: str, cloud: ArrayLike, **kwargs) -> PartEntity:
    """Fit the best primitive to ``cloud`` and extract its surface planes."""
    from .planes import extract_planes

    result = best_primitive(cloud, **kwargs)
    part = PartEntity(label, semantic_class, _as_cloud(cloud), result.fitted())
    return replace(part, planes=tuple(extract_planes(part)))


def sample_part_surfaces(parts: Sequence[PartEntity], n: int, seed: int = 0,
                         frame: Optional[RigidTransform] = None) -> NDArray[np.float64]:
    """Area-weighted samples over the union of fitted part surfaces."""
    from .mesh import merge_meshes

    meshes = [p.model.mesh(frame) for p in parts if p.model is not None]
    return sample_mesh(merge_meshes(meshes), n, seed)
