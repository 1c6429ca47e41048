"""
Rigid transforms, planes, planar polygons and oriented bounding boxes.

All value types are frozen dataclasses wrapping read-only float64 arrays, so
they can be shared freely between threads and worker processes.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateGeometryError,
    GeometryWarning,
    InvalidPolygonError,
    PreconditionError,
)

ON_PLANE_TOL = 1e-6
ORTHO_TOL = 1e-9
PLANAR_THICKNESS = 1e-4
PARALLEL_TOL = 1e-3


def _frozen(a: ArrayLike, shape: Tuple[int, ...] | None = None) -> NDArray[np.float64]:
    arr = np.array(a, dtype=np.float64)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


def skew(v: ArrayLike) -> NDArray[np.float64]:
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rotation_about(axis: ArrayLike, angle: float) -> NDArray[np.float64]:
    """Rodrigues rotation matrix for ``angle`` radians about ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = skew(a)
    return np.eye(3) + math.sin(angle) * k + (1.0 - math.cos(angle)) * (k @ k)


def rotation_angle(rotation: ArrayLike) -> float:
    """Angle in radians of a rotation matrix."""
    c = (np.trace(np.asarray(rotation)) - 1.0) / 2.0
    return float(math.acos(min(1.0, max(-1.0, c))))


def angle_between(u: ArrayLike, v: ArrayLike) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    # atan2 form stays accurate for nearly parallel vectors
    return float(math.atan2(np.linalg.norm(np.cross(u, v)), float(np.dot(u, v))))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: NDArray[np.float64]
    translation: NDArray[np.float64]

    def __post_init__(self):
        r = _frozen(self.rotation, (3, 3))
        t = _frozen(self.translation, (3,))
        if np.abs(r.T @ r - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(r) - 1.0) > ORTHO_TOL:
            raise PreconditionError("rotation is not a proper orthonormal matrix")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_translation(cls, t: ArrayLike) -> "RigidTransform":
        return cls(np.eye(3), t)

    @classmethod
    def from_rotation(cls, r: ArrayLike, about: ArrayLike | None = None) -> "RigidTransform":
        """Pure rotation, optionally about the point ``about`` instead of the origin."""
        r = np.asarray(r, dtype=float)
        if about is None:
            return cls(r, np.zeros(3))
        c = np.asarray(about, dtype=float)
        return cls(r, c - r @ c)

    @classmethod
    def from_matrix(cls, m: ArrayLike) -> "RigidTransform":
        m = np.asarray(m, dtype=float)
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_quaternion(cls, wxyz: ArrayLike, translation: ArrayLike = (0.0, 0.0, 0.0)) -> "RigidTransform":
        w, x, y, z = np.asarray(wxyz, dtype=float)
        r = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(orthonormalize(r), translation)

    def quaternion_wxyz(self) -> NDArray[np.float64]:
        """Unit quaternion (w, x, y, z) with the first nonzero component positive."""
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        for c in q:
            if abs(c) > 1e-12:
                if c < 0:
                    q = -q
                break
        return q

    def matrix(self) -> NDArray[np.float64]:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def __matmul__(self, other: "RigidTransform") -> "RigidTransform":
        return compose(self, other)

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        return apply(self, points)

    def apply_vector(self, v: ArrayLike) -> NDArray[np.float64]:
        """Rotate directions; translation is ignored."""
        return np.asarray(v, dtype=float) @ self.rotation.T

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )

    def __repr__(self) -> str:
        rpy = Rotation.from_matrix(self.rotation).as_euler("xyz")
        return f"RigidTransform(t={np.round(self.translation, 6).tolist()}, rpy={np.round(rpy, 6).tolist()})"


def orthonormalize(r: ArrayLike) -> NDArray[np.float64]:
    """Closest proper rotation to ``r`` (polar decomposition)."""
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """``a`` after ``b``."""
    return RigidTransform(orthonormalize(a.rotation @ b.rotation), a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return t.inverse()


def apply(t: RigidTransform, points: ArrayLike) -> NDArray[np.float64]:
    p = np.asarray(points, dtype=float)
    return p @ t.rotation.T + t.translation


# ---------------------------------------------------------------------------
# planes and polygons
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``normal . u + offset = 0`` with a unit normal."""

    normal: NDArray[np.float64]
    offset: float

    def __post_init__(self):
        n = _frozen(self.normal, (3,))
        if abs(np.linalg.norm(n) - 1.0) > ORTHO_TOL:
            raise PreconditionError(f"plane normal must be unit length, |n|={np.linalg.norm(n)}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", float(self.offset))

    @classmethod
    def from_point_normal(cls, point: ArrayLike, normal: ArrayLike) -> "Plane":
        n = np.asarray(normal, dtype=float)
        n = n / np.linalg.norm(n)
        return cls(n, -float(n @ np.asarray(point, dtype=float)))

    def homogeneous(self) -> NDArray[np.float64]:
        return np.append(self.normal, self.offset)

    def point(self) -> NDArray[np.float64]:
        """The point of the plane closest to the origin."""
        return -self.offset * self.normal

    def signed_distance(self, points: ArrayLike) -> NDArray[np.float64] | float:
        return np.asarray(points, dtype=float) @ self.normal + self.offset

    def flipped(self) -> "Plane":
        return Plane(-self.normal, -self.offset)

    def transformed(self, t: RigidTransform) -> "Plane":
        n = t.rotation @ self.normal
        return Plane.from_point_normal(t.apply(self.point()), n)

    def basis(self) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
        return plane_basis(self.normal)


def plane_basis(normal: ArrayLike) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Orthonormal in-plane axes (e1, e2) with e1 x e2 = normal."""
    n = np.asarray(normal, dtype=float)
    helper = np.eye(3)[int(np.argmin(np.abs(n)))]
    e1 = np.cross(helper, n)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    return e1, e2


def plane_coords(plane: Plane, pts: ArrayLike) -> NDArray[np.float64]:
    """2D coordinates of points in the plane's local frame."""
    e1, e2 = plane.basis()
    d = np.asarray(pts, dtype=float) - plane.point()
    return np.stack([d @ e1, d @ e2], axis=-1)


def _signed_area_2d(xy: NDArray[np.float64]) -> float:
    x, y = xy[:, 0], xy[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


@dataclass(frozen=True, eq=False)
class PlanarPolygon:
    """Polygon in 3D lying on ``plane``.

    Vertices are stored counter-clockwise as seen from the +normal side; a
    clockwise input is reversed on construction.
    """

    vertices: NDArray[np.float64]
    plane: Plane

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 3 or len(v) < 3:
            raise InvalidPolygonError(f"polygon needs >= 3 vertices of dimension 3, got shape {v.shape}")
        dev = np.abs(self.plane.signed_distance(v)).max()
        if dev > ON_PLANE_TOL:
            raise PreconditionError(f"polygon vertex off its plane by {dev:.3g}")
        if _signed_area_2d(self._to_2d(v)) < 0:
            v = v[::-1].copy()
        object.__setattr__(self, "vertices", _frozen(v))

    def _to_2d(self, pts: NDArray[np.float64]) -> NDArray[np.float64]:
        return plane_coords(self.plane, pts)

    def to_2d(self) -> NDArray[np.float64]:
        """Vertices in the plane's local 2D frame (counter-clockwise)."""
        return self._to_2d(self.vertices)

    @property
    def centroid(self) -> NDArray[np.float64]:
        return self.vertices.mean(axis=0)

    def transformed(self, t: RigidTransform) -> "PlanarPolygon":
        return PlanarPolygon(t.apply(self.vertices), self.plane.transformed(t))

    def edges(self) -> list[Tuple[NDArray[np.float64], NDArray[np.float64]]]:
        v = self.vertices
        return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


def project_point(u: ArrayLike, plane: Plane, anchor: ArrayLike | None = None) -> NDArray[np.float64]:
    """Orthogonal projection ``u - n^T (u - anchor) n`` of point(s) onto ``plane``.

    ``anchor`` is any point on the plane; it defaults to the plane point closest
    to the origin.
    """
    a = plane.point() if anchor is None else np.asarray(anchor, dtype=float)
    if abs(float(plane.signed_distance(a))) > ON_PLANE_TOL:
        raise PreconditionError("projection anchor does not lie on the plane")
    u = np.asarray(u, dtype=float)
    n = plane.normal
    s = (u - a) @ n
    return u - np.multiply.outer(s, n)


def project_polygon(poly: PlanarPolygon, target: Plane, anchor: ArrayLike | None = None) -> PlanarPolygon:
    """Project every vertex of ``poly`` onto ``target``.

    When ``poly`` faces away from ``target`` the projected ring comes out
    clockwise and is stored reversed to keep the orientation invariant.
    """
    if abs(float(poly.plane.normal @ target.normal)) <= PARALLEL_TOL:
        raise DegenerateGeometryError("polygon is perpendicular to the target plane")
    projected = project_point(poly.vertices, target, anchor)
    xy = plane_coords(target, projected)
    if abs(_signed_area_2d(xy)) < 1e-15:
        raise DegenerateGeometryError("projected polygon collapsed to zero area")
    return PlanarPolygon(projected, target)


def polygon_area(p: PlanarPolygon) -> float:
    """Shoelace area of ``p`` in its local 2D frame."""
    if len(p.vertices) < 3:
        raise InvalidPolygonError("polygon needs at least 3 vertices")
    return abs(_signed_area_2d(p.to_2d()))


def _is_convex(xy: NDArray[np.float64], tol: float = 1e-12) -> bool:
    d1 = np.roll(xy, -1, axis=0) - xy
    d2 = np.roll(d1, -1, axis=0)
    cross = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    return bool(np.all(cross >= -tol * max(1.0, float(np.abs(xy).max()) ** 2)))


def _convex_ccw(xy: NDArray[np.float64]) -> Tuple[NDArray[np.float64], bool]:
    if _signed_area_2d(xy) < 0:
        xy = xy[::-1]
    if _is_convex(xy):
        return xy, False
    try:
        hull = ConvexHull(xy)
    except QhullError:
        return xy, True
    return xy[hull.vertices], True


def clip_convex(subject: NDArray[np.float64], clipper: NDArray[np.float64]) -> NDArray[np.float64]:
    """Sutherland-Hodgman clipping of a 2D polygon by a convex CCW polygon."""
    out = [tuple(p) for p in subject]
    m = len(clipper)
    for i in range(m):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % m]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inp = out
        out = []
        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
            prev, sp = cur, sc
    return np.array(out, dtype=float).reshape(-1, 2)


def polygon_intersection_area(a: PlanarPolygon, b: PlanarPolygon) -> float:
    """Area of ``a`` intersected with ``b``; both must lie on the same plane.

    Non-convex inputs are replaced by their convex hull and a
    :class:`GeometryWarning` is emitted.
    """
    if abs(abs(float(a.plane.normal @ b.plane.normal)) - 1.0) > ON_PLANE_TOL:
        raise PreconditionError("polygons are not coplanar (normals differ)")
    if np.abs(a.plane.signed_distance(b.vertices)).max() > ON_PLANE_TOL or \
            np.abs(b.plane.signed_distance(a.vertices)).max() > ON_PLANE_TOL:
        raise PreconditionError("polygons are not coplanar (offsets differ)")
    pa, fa = _convex_ccw(a.to_2d())
    pb, fb = _convex_ccw(a._to_2d(b.vertices))
    if fa or fb:
        warnings.warn("non-convex polygon replaced by its convex hull", GeometryWarning, stacklevel=2)
    clipped = clip_convex(pb, pa)
    if len(clipped) < 3:
        return 0.0
    area = abs(_signed_area_2d(clipped))
    return float(min(area, polygon_area(a), polygon_area(b)))


# ---------------------------------------------------------------------------
# oriented bounding boxes
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class OrientedBox:
    center: NDArray[np.float64]
    axes: NDArray[np.float64]  # columns are the box axes
    half_extents: NDArray[np.float64]

    def __post_init__(self):
        c = _frozen(self.center, (3,))
        ax = _frozen(self.axes, (3, 3))
        h = _frozen(self.half_extents, (3,))
        if np.any(h <= 0):
            raise PreconditionError("half extents must be positive")
        if np.abs(ax.T @ ax - np.eye(3)).max() > ORTHO_TOL or abs(np.linalg.det(ax) - 1) > ORTHO_TOL:
            raise PreconditionError("box axes must be a proper rotation")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "axes", ax)
        object.__setattr__(self, "half_extents", h)

    @property
    def extents(self) -> NDArray[np.float64]:
        return 2.0 * self.half_extents

    @property
    def volume(self) -> float:
        return float(np.prod(self.extents))

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.extents))

    @property
    def pose(self) -> RigidTransform:
        return RigidTransform(self.axes, self.center)

    def local(self, points: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(points, dtype=float) - self.center) @ self.axes

    def signed_distance(self, points: ArrayLike) -> NDArray[np.float64]:
        """Signed distance to the box surface (negative inside)."""
        q = np.abs(self.local(points)) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def contains(self, points: ArrayLike, tol: float = ON_PLANE_TOL) -> NDArray[np.bool_]:
        return self.signed_distance(points) <= tol

    def corners(self) -> NDArray[np.float64]:
        signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)], dtype=float)
        return self.center + (signs * self.half_extents) @ self.axes.T


POLISH_CANDIDATES = 3
SO3_COVER_SIZE = 4096


def _min_area_rect(xy: NDArray[np.float64]) -> Tuple[float, float]:
    """(area, angle) of the minimum-area rectangle enclosing 2D points."""
    try:
        hull = xy[ConvexHull(xy).vertices]
    except QhullError:
        hull = xy
    edges = np.roll(hull, -1, axis=0) - hull
    ang = np.unique(np.round(np.mod(np.arctan2(edges[:, 1], edges[:, 0]), math.pi / 2), 12))
    c, s = np.cos(ang), np.sin(ang)
    u = hull[:, :1] * c + hull[:, 1:] * s
    v = -hull[:, :1] * s + hull[:, 1:] * c
    areas = (u.max(0) - u.min(0)) * (v.max(0) - v.min(0))
    k = int(np.argmin(areas))
    return float(areas[k]), float(ang[k])


def _frame_from_normal(n: NDArray[np.float64], pts: NDArray[np.float64]) -> Tuple[float, NDArray[np.float64]]:
    e1, e2 = plane_basis(n)
    xy = np.stack([pts @ e1, pts @ e2], axis=1)
    area, th = _min_area_rect(xy)
    a1 = math.cos(th) * e1 + math.sin(th) * e2
    a2 = np.cross(n, a1)
    h = pts @ n
    return area * float(h.max() - h.min()), np.stack([a1, a2, n], axis=1)


def _box_volume(axes: NDArray[np.float64], pts: NDArray[np.float64]) -> float:
    p = pts @ axes
    return float(np.prod(p.max(0) - p.min(0)))


def fit_obb(points: ArrayLike, max_face_normals: int = 120) -> OrientedBox:
    """Approximate minimum-volume oriented bounding box.

    Candidate axes come from the principal axes and every convex hull facet
    normal (each paired with the minimum-area rectangle of the hull projected
    along it), plus a fixed cover of SO(3); the best few of each are polished
    by a coordinate search over small rotations.  Point sets that lie on a plane receive a thickness of
    ``PLANAR_THICKNESS`` along the plane normal.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 3 or len(pts) < 4:
        raise DegenerateGeometryError("fit_obb needs at least 4 three-dimensional points")
    centered = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centered, full_matrices=False)
    scale = sv[0]
    if scale <= 1e-12 or sv[1] <= 1e-9 * scale:
        raise DegenerateGeometryError("point set has zero extent in at least two directions")

    if sv[2] <= 1e-9 * scale:
        n = vt[2] / np.linalg.norm(vt[2])
        _, axes = _frame_from_normal(n, centered)
        return _box_from_axes(axes, pts, planar_axis=2)

    try:
        hull = ConvexHull(centered)
        hull_pts = centered[hull.vertices]
        normals = hull.equations[:, :3]
    except QhullError:
        hull_pts = centered
        normals = np.zeros((0, 3))

    normals = normals * np.where(normals[:, [0]] < 0, -1.0, 1.0)
    normals = np.unique(np.round(normals, 6), axis=0)
    if len(normals) > max_face_normals:
        idx = np.linspace(0, len(normals) - 1, max_face_normals).round().astype(int)
        normals = normals[idx]
    candidates = [vt[i] for i in range(3)] + list(normals)

    # candidate scoring on a thinned hull; the polish and final box use all of it
    scoring = hull_pts
    if len(scoring) > 300:
        scoring = scoring[np.linspace(0, len(scoring) - 1, 300).round().astype(int)]
    scored = []
    for n in candidates:
        nn = np.linalg.norm(n)
        if nn < 1e-9:
            continue
        vol, axes = _frame_from_normal(n / nn, scoring)
        scored.append((vol, len(scored), axes))
    scored.sort(key=lambda t: (t[0], t[1]))
    starts = [axes for _, _, axes in scored[:POLISH_CANDIDATES]]

    # a fixed cover of SO(3) catches optima that touch no facet or edge direction
    grid = _so3_cover()
    local = np.einsum("rji,nj->rni", grid, scoring)
    vols = np.prod(local.max(axis=1) - local.min(axis=1), axis=1)
    starts += [grid[k] for k in np.argsort(vols, kind="stable")[:POLISH_CANDIDATES]]

    best_vol, best_axes = math.inf, None
    for axes in starts:
        axes = _polish_rotation(axes, hull_pts)
        vol = _box_volume(axes, hull_pts)
        if vol < best_vol * (1 - 1e-12):
            best_vol, best_axes = vol, axes
    return _box_from_axes(best_axes, pts)


@functools.lru_cache(maxsize=1)
def _so3_cover(n: int = SO3_COVER_SIZE) -> NDArray[np.float64]:
    """Deterministic near-uniform rotations (columns are box axes)."""
    return Rotation.random(n, random_state=0).as_matrix()


def _polish_rotation(axes: NDArray[np.float64], pts: NDArray[np.float64]) -> NDArray[np.float64]:
    best = _box_volume(axes, pts)
    step = math.radians(2.0)
    gens = [skew(e) for e in np.eye(3)]
    while step > math.radians(0.005):
        improved = False
        for g in gens:
            for sgn in (1.0, -1.0):
                r = np.eye(3) + math.sin(sgn * step) * g + (1 - math.cos(step)) * (g @ g)
                cand = axes @ r
                vol = _box_volume(cand, pts)
                if vol < best * (1 - 1e-12):
                    best, axes, improved = vol, cand, True
        if not improved:
            step /= 2.0
    return orthonormalize(axes)


def _box_from_axes(axes: NDArray[np.float64], pts: NDArray[np.float64], planar_axis: Optional[int] = None) -> OrientedBox:
    axes = orthonormalize(axes)
    local = pts @ axes
    lo, hi = local.min(0), local.max(0)
    half = (hi - lo) / 2.0
    if planar_axis is not None:
        half[planar_axis] = PLANAR_THICKNESS / 2.0
    if np.any(half <= 0):
        raise DegenerateGeometryError("zero-extent point set")
    center = axes @ ((hi + lo) / 2.0)
    return OrientedBox(center, axes, half)


def aabb_volume(points: ArrayLike) -> float:
    p = np.asarray(points, dtype=float)
    return float(np.prod(p.max(0) - p.min(0)))


def polygon_from_rectangle(center: ArrayLike, u: ArrayLike, v: ArrayLike) -> PlanarPolygon:
    """Rectangle with half-edge vectors ``u`` and ``v`` whose normal is u x v."""
    c, u, v = (np.asarray(x, dtype=float) for x in (center, u, v))
    n = np.cross(u, v)
    verts = np.array([c - u - v, c + u - v, c + u + v, c - u + v])
    return PlanarPolygon(verts, Plane.from_point_normal(c, n))


def regular_polygon(center: ArrayLike, normal: ArrayLike, radius: float, sides: int) -> PlanarPolygon:
    n = np.asarray(normal, dtype=float)
    n = n / np.linalg.norm(n)
    e1, e2 = plane_basis(n)
    th = 2 * np.pi * np.arange(sides) / sides
    verts = np.asarray(center, dtype=float) + radius * (np.outer(np.cos(th), e1) + np.outer(np.sin(th), e2))
    return PlanarPolygon(verts, Plane.from_point_normal(center, n))


def obb_distance(a: OrientedBox, b: OrientedBox) -> float:
    """Minimum Euclidean distance between two solid oriented boxes."""
    from scipy.optimize import lsq_linear

    # find a in box A, b in box B minimising |(cA + RA a) - (cB + RB b)|
    mat = np.hstack([a.axes, -b.axes])
    rhs = b.center - a.center
    lo = np.concatenate([-a.half_extents, -b.half_extents])
    res = lsq_linear(mat, rhs, bounds=(lo, -lo), method="bvls", tol=1e-12)
    return float(np.linalg.norm(mat @ res.x - rhs))


def polygons_from_points(points: Sequence[ArrayLike], plane: Plane) -> PlanarPolygon:
    """Convex hull of points (projected onto ``plane``) as a polygon."""
    p = project_point(np.asarray(points, dtype=float), plane)
    e1, e2 = plane.basis()
    xy = np.stack([p @ e1, p @ e2], axis=1)
    hull = ConvexHull(xy)
    return PlanarPolygon(p[hull.vertices], plane)


# ---------------------------------------------------------------------------
# least-squares rotation / rigid alignment of paired points
# ---------------------------------------------------------------------------


def kabsch_rotation(src: ArrayLike, dst: ArrayLike, weights: ArrayLike | None = None) -> NDArray[np.float64]:
    """Rotation R minimising sum_i w_i |R src_i - dst_i|^2 (no centering).

    SVD of the cross-covariance with the reflection correction.
    """
    s = np.asarray(src, dtype=float)
    d = np.asarray(dst, dtype=float)
    if weights is not None:
        s = s * np.asarray(weights, dtype=float)[:, None]
    h = s.T @ d
    u, _, vt = np.linalg.svd(h)
    sign = 1.0 if np.linalg.det(vt.T @ u.T) >= 0 else -1.0
    return vt.T @ np.diag([1.0, 1.0, sign]) @ u.T


def rigid_fit(src: ArrayLike, dst: ArrayLike) -> RigidTransform:
    """Least-squares rigid transform mapping ``src`` onto ``dst``."""
    s = np.asarray(src, dtype=float)
    d = np.asarray(dst, dtype=float)
    cs, cd = s.mean(axis=0), d.mean(axis=0)
    r = orthonormalize(kabsch_rotation(s - cs, d - cd))
    return RigidTransform(r, cd - r @ cs)
