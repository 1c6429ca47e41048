"""Surface-plane extraction from fitted primitives, with a RANSAC path for raw clouds."""

from __future__ import annotations

from typing import List

import numpy as np
from numpy.typing import ArrayLike
from scipy.spatial import ConvexHull, QhullError

from .geometry import PlanarPolygon, Plane, plane_coords, project_point
from .mesh import CYLINDER_SEGMENTS, PrimitiveKind
from .primitives import PartEntity, PrimitiveModel

RANSAC_THRESHOLD = 0.005
RANSAC_MIN_INLIERS = 50
RANSAC_MAX_PLANES = 8
RANSAC_ITERATIONS = 400


def primitive_planes(model: PrimitiveModel) -> List[PlanarPolygon]:
    """Analytic face polygons of a fitted primitive, in the model's parent frame."""
    half = model.scale / 2.0
    local: List[PlanarPolygon] = []
    if model.kind is PrimitiveKind.BOX:
        eye = np.eye(3)
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            for s in (1.0, -1.0):
                center = s * half[i] * eye[i]
                u = half[j] * eye[j]
                v = s * half[k] * eye[k]
                verts = np.array([center - u - v, center + u - v, center + u + v, center - u + v])
                local.append(PlanarPolygon(verts, Plane.from_point_normal(center, s * eye[i])))
    elif model.kind is PrimitiveKind.CYLINDER:
        th = 2 * np.pi * np.arange(CYLINDER_SEGMENTS) / CYLINDER_SEGMENTS
        ring = np.stack([half[0] * np.cos(th), half[1] * np.sin(th)], axis=1)
        for s in (1.0, -1.0):
            verts = np.c_[ring, np.full(len(ring), s * half[2])]
            local.append(PlanarPolygon(verts, Plane.from_point_normal([0, 0, s * half[2]], [0, 0, s])))
    return [p.transformed(model.pose) for p in local]


def ransac_planes(
    cloud: ArrayLike,
    threshold: float = RANSAC_THRESHOLD,
    min_inliers: int = RANSAC_MIN_INLIERS,
    max_planes: int = RANSAC_MAX_PLANES,
    iterations: int = RANSAC_ITERATIONS,
    seed: int = 0,
) -> List[PlanarPolygon]:
    """Iteratively peel planes off a point cloud.

    Each plane is refit by least squares on its inliers; its boundary is the
    convex hull of the inliers projected onto it.  Normals point away from the
    cloud centroid.
    """
    pts = np.asarray(cloud, dtype=float).reshape(-1, 3)
    rng = np.random.default_rng(seed)
    centroid = pts.mean(axis=0) if len(pts) else np.zeros(3)
    remaining = pts
    out: List[PlanarPolygon] = []
    while len(out) < max_planes and len(remaining) >= max(3, min_inliers):
        best_count, best_mask = 0, None
        for _ in range(iterations):
            a, b, c = remaining[rng.choice(len(remaining), 3, replace=False)]
            n = np.cross(b - a, c - a)
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                continue
            n /= nn
            mask = np.abs((remaining - a) @ n) <= threshold
            count = int(mask.sum())
            if count > best_count:
                best_count, best_mask = count, mask
        if best_mask is None or best_count < min_inliers:
            break
        inl = remaining[best_mask]
        mu = inl.mean(axis=0)
        n = np.linalg.svd(inl - mu, full_matrices=False)[2][2]
        mask = np.abs((remaining - mu) @ n) <= threshold
        if mask.sum() >= best_count:
            inl = remaining[mask]
            mu = inl.mean(axis=0)
            n = np.linalg.svd(inl - mu, full_matrices=False)[2][2]
        else:
            mask = best_mask
        if n @ (mu - centroid) < 0:
            n = -n
        plane = Plane.from_point_normal(mu, n)
        poly = _hull_polygon(inl, plane)
        if poly is not None:
            out.append(poly)
        remaining = remaining[~mask]
    return out


def _hull_polygon(points: np.ndarray, plane: Plane):
    proj = project_point(points, plane)
    try:
        hull = ConvexHull(plane_coords(plane, proj))
    except QhullError:
        return None
    return PlanarPolygon(proj[hull.vertices], plane)


def extract_planes(entity: PartEntity, **ransac_kwargs) -> List[PlanarPolygon]:
    """Surface planes of a part.

    Fitted boxes give their 6 faces, cylinders their 2 caps and spheres
    nothing.  Parts without a model fall back to RANSAC on the raw cloud.
    """
    if entity.model is not None:
        return primitive_planes(entity.model)
    if entity.cloud is None:
        return []
    return ransac_planes(entity.cloud, **ransac_kwargs)
