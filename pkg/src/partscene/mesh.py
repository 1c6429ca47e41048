"""Triangle meshes, the canonical primitive templates and surface sampling."""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .geometry import RigidTransform

CYLINDER_SEGMENTS = 64
SPHERE_SUBDIVISIONS = 3


class PrimitiveKind(str, enum.Enum):
    BOX = "box"
    CYLINDER = "cylinder"
    SPHERE = "sphere"

    @property
    def order(self) -> int:
        return _KIND_ORDER[self]


_KIND_ORDER = {PrimitiveKind.BOX: 0, PrimitiveKind.CYLINDER: 1, PrimitiveKind.SPHERE: 2}


@dataclass(frozen=True, eq=False)
class TriMesh:
    vertices: NDArray[np.float64]
    faces: NDArray[np.int64]

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def triangles(self) -> NDArray[np.float64]:
        return self.vertices[self.faces]

    def face_normals(self) -> NDArray[np.float64]:
        t = self.triangles
        n = np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0])
        return n / np.linalg.norm(n, axis=1, keepdims=True)

    def face_areas(self) -> NDArray[np.float64]:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())

    @property
    def volume(self) -> float:
        t = self.triangles
        return float(np.einsum("ij,ij->i", t[:, 0], np.cross(t[:, 1], t[:, 2])).sum() / 6.0)

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces, with opposite orientation."""
        f = self.faces
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        undirected = np.sort(directed, axis=1)
        _, counts = np.unique(undirected, axis=0, return_counts=True)
        if not np.all(counts == 2):
            return False
        _, dcounts = np.unique(directed, axis=0, return_counts=True)
        return bool(np.all(dcounts == 1))

    def transformed(self, t: RigidTransform) -> "TriMesh":
        return TriMesh(t.apply(self.vertices), self.faces)

    def scaled(self, scale: ArrayLike) -> "TriMesh":
        return TriMesh(self.vertices * np.asarray(scale, dtype=float), self.faces)

    def to_obj(self) -> str:
        """Wavefront OBJ text: vertices then 1-based faces, 6-decimal coordinates."""
        buf = io.StringIO()
        for x, y, z in self.vertices:
            buf.write(f"v {_fmt6(x)} {_fmt6(y)} {_fmt6(z)}\n")
        for a, b, c in self.faces + 1:
            buf.write(f"f {a} {b} {c}\n")
        return buf.getvalue()


def _fmt6(x: float) -> str:
    s = f"{x:.6f}"
    return "0.000000" if s == "-0.000000" else s


def merge_meshes(meshes: Iterable[TriMesh]) -> TriMesh:
    verts, faces, off = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + off)
        off += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


def load_obj(text: str) -> TriMesh:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return TriMesh(np.array(verts), np.array(faces))


# ---------------------------------------------------------------------------
# canonical templates (unit cube, unit-diameter/unit-height cylinder,
# unit-diameter sphere), all centred at the origin
# ---------------------------------------------------------------------------


def _unit_box() -> TriMesh:
    v = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    # index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    f = []
    for a, b, c, d in quads:
        f += [(a, b, c), (a, c, d)]
    return TriMesh(v, f)


def _unit_cylinder(segments: int = CYLINDER_SEGMENTS) -> TriMesh:
    th = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([0.5 * np.cos(th), 0.5 * np.sin(th)], axis=1)
    bottom = np.c_[ring, np.full(segments, -0.5)]
    top = np.c_[ring, np.full(segments, 0.5)]
    v = np.vstack([bottom, top, [[0, 0, -0.5], [0, 0, 0.5]]])
    cb, ct = 2 * segments, 2 * segments + 1
    f = []
    for i in range(segments):
        j = (i + 1) % segments
        f += [(i, j, segments + j), (i, segments + j, segments + i)]
        f.append((cb, j, i))
        f.append((ct, segments + i, segments + j))
    return TriMesh(v, f)


def _unit_sphere(subdivisions: int = SPHERE_SUBDIVISIONS) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=float) / np.linalg.norm(p) for p in v]
    for _ in range(subdivisions):
        cache: dict[Tuple[int, int], int] = {}

        def mid(a: int, b: int) -> int:
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriMesh(0.5 * np.array(verts), f)


@lru_cache(maxsize=None)
def template_mesh(kind: Union[PrimitiveKind, str]) -> TriMesh:
    kind = PrimitiveKind(kind)
    if kind is PrimitiveKind.BOX:
        return _unit_box()
    if kind is PrimitiveKind.CYLINDER:
        return _unit_cylinder()
    return _unit_sphere()


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def _allocate(weights: NDArray[np.float64], n: int, rng: np.random.Generator) -> NDArray[np.int64]:
    # floor of each face's quota, remainders by systematic sampling so that
    # every face gets its expected share (largest-remainder starves small faces)
    quota = weights / weights.sum() * n
    counts = np.floor(quota).astype(np.int64)
    rest = n - int(counts.sum())
    if rest > 0:
        cum = np.cumsum(quota - counts)
        cum *= rest / cum[-1]
        marks = rng.random() + np.arange(rest)
        hits = np.searchsorted(cum, marks, side="right")
        counts += np.bincount(np.minimum(hits, len(counts) - 1), minlength=len(counts))
    return counts


def sample_mesh(
    mesh: TriMesh,
    n: int,
    seed: int = 0,
    return_normals: bool = False,
) -> Union[NDArray[np.float64], Tuple[NDArray[np.float64], NDArray[np.float64]]]:
    """Area-weighted samples on the surface of ``mesh``.

    Sample counts are apportioned to faces by area (stratified), positions
    within each face are uniform.  Identical ``seed`` gives identical output.
    """
    rng = np.random.default_rng(seed)
    counts = _allocate(mesh.face_areas(), n, rng)
    face_idx = np.repeat(np.arange(len(mesh.faces)), counts)
    tri = mesh.triangles[face_idx]
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    a = (1 - r1)[:, None]
    b = (r1 * (1 - r2))[:, None]
    c = (r1 * r2)[:, None]
    pts = a * tri[:, 0] + b * tri[:, 1] + c * tri[:, 2]
    if return_normals:
        return pts, mesh.face_normals()[face_idx]
    return pts


def point_triangle_distance(points: ArrayLike, triangles: ArrayLike) -> NDArray[np.float64]:
    """Unsigned distance from each point to each triangle, shape (P, T)."""
    p = np.asarray(points, dtype=float)[:, None, :]
    tri = np.asarray(triangles, dtype=float)[None]
    a, b, c = tri[..., 0, :], tri[..., 1, :], tri[..., 2, :]
    n = np.cross(b - a, c - a)
    nn = np.linalg.norm(n, axis=-1, keepdims=True)
    n = n / nn
    dist_plane = np.einsum("...i,...i->...", p - a, n)
    proj = p - dist_plane[..., None] * n

    def inside(q):
        c1 = np.einsum("...i,...i->...", np.cross(b - a, q - a), n)
        c2 = np.einsum("...i,...i->...", np.cross(c - b, q - b), n)
        c3 = np.einsum("...i,...i->...", np.cross(a - c, q - c), n)
        return (c1 >= 0) & (c2 >= 0) & (c3 >= 0)

    def seg(q, s0, s1):
        d = s1 - s0
        t = np.clip(np.einsum("...i,...i->...", q - s0, d) / np.einsum("...i,...i->...", d, d), 0, 1)
        return np.linalg.norm(q - (s0 + t[..., None] * d), axis=-1)

    edge = np.minimum(np.minimum(seg(p, a, b), seg(p, b, c)), seg(p, c, a))
    return np.where(inside(proj), np.abs(dist_plane), edge)


def surface_distance(points: ArrayLike, mesh: TriMesh, chunk: int = 256) -> NDArray[np.float64]:
    """Brute-force distance from points to the mesh surface."""
    p = np.asarray(points, dtype=float)
    out = np.empty(len(p))
    for i in range(0, len(p), chunk):
        out[i:i + chunk] = point_triangle_distance(p[i:i + chunk], mesh.triangles).min(axis=1)
    return out

