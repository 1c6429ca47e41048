"""
Evaluation metrics: Chamfer distance on jointly normalized clouds, solid voxel
IoU and average precision of predicted structure edges.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Hashable, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .errors import LabelMismatchError, VoxelizationError
from .geometry import OrientedBox, fit_obb
from .mesh import TriMesh

VOXEL_RESOLUTION = 32
FRAME_MARGIN = 0.05
# tiny offset of the ray origins so rays never graze shared triangle edges
_RAY_JITTER = (1.234567e-7, 2.345679e-7)

MeshLike = Union[TriMesh, Sequence[TriMesh]]


# ---------------------------------------------------------------------------
# Chamfer
# ---------------------------------------------------------------------------


def normalize_jointly(a: ArrayLike, b: ArrayLike) -> Tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Map both sets with one similarity so the union's bounding box fits the unit cube.

    The scale is uniform (largest box side), so shapes are not distorted and
    relative pose errors survive normalization.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if not len(a) or not len(b):
        raise ValueError("point sets must be nonempty")
    both = np.concatenate([a, b])
    lo = both.min(axis=0)
    side = float((both.max(axis=0) - lo).max())
    s = 1.0 / side if side > 0 else 1.0
    return (a - lo) * s, (b - lo) * s


def _nn_brute(src: NDArray[np.float64], dst: NDArray[np.float64], chunk: int = 512) -> NDArray[np.float64]:
    out = np.empty(len(src))
    for i in range(0, len(src), chunk):
        d = src[i:i + chunk, None, :] - dst[None, :, :]
        out[i:i + chunk] = np.sqrt(np.min(np.einsum("ijk,ijk->ij", d, d), axis=1))
    return out


def _nn_tree(src: NDArray[np.float64], dst: NDArray[np.float64]) -> NDArray[np.float64]:
    _, idx = cKDTree(dst).query(src)
    d = src - dst[idx]
    # recompute the distance the same way as the brute-force scan
    return np.sqrt(np.einsum("ij,ij->i", d, d))


def chamfer_distance(a: ArrayLike, b: ArrayLike, brute_force: bool = False, squared: bool = False) -> float:
    """Mean nearest-neighbour distance from a to b plus from b to a."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    if not len(a) or not len(b):
        raise ValueError("chamfer distance needs two nonempty point sets")
    nn = _nn_brute if brute_force else _nn_tree
    dab, dba = nn(a, b), nn(b, a)
    if squared:
        dab, dba = dab ** 2, dba ** 2
    return float(dab.mean() + dba.mean())


def normalized_chamfer(a: ArrayLike, b: ArrayLike, **kwargs) -> float:
    return chamfer_distance(*normalize_jointly(a, b), **kwargs)


# ---------------------------------------------------------------------------
# voxel IoU
# ---------------------------------------------------------------------------


def _as_meshes(m: MeshLike) -> List[TriMesh]:
    return [m] if isinstance(m, TriMesh) else list(m)


def voxel_frame(ground_truth: MeshLike, predicted: Optional[MeshLike] = None,
                margin: float = FRAME_MARGIN) -> OrientedBox:
    """Ground-truth OBB grown by ``margin``; grown further only if the prediction pokes out."""
    gt = np.concatenate([m.vertices for m in _as_meshes(ground_truth)])
    obb = fit_obb(gt)
    local = gt @ obb.axes
    lo, hi = local.min(axis=0), local.max(axis=0)
    pad = (hi - lo) * margin / 2.0
    lo, hi = lo - pad, hi + pad
    if predicted is not None:
        pl = np.concatenate([m.vertices for m in _as_meshes(predicted)]) @ obb.axes
        if np.any(pl.min(axis=0) < lo) or np.any(pl.max(axis=0) > hi):
            lo, hi = np.minimum(lo, pl.min(axis=0)), np.maximum(hi, pl.max(axis=0))
            pad = (hi - lo) * margin / 2.0
            lo, hi = lo - pad, hi + pad
    return OrientedBox(obb.axes @ ((hi + lo) / 2.0), obb.axes, (hi - lo) / 2.0)


def voxelize(mesh: MeshLike, frame: OrientedBox, resolution: int = VOXEL_RESOLUTION) -> NDArray[np.bool_]:
    """Solid occupancy of voxel centres by ray-crossing parity along the frame's x axis.

    Each watertight component is filled on its own and the results are OR-ed,
    so overlapping parts do not cancel.
    """
    n = int(resolution)
    if n < 1:
        raise ValueError("resolution must be positive")
    size = 2.0 * frame.half_extents
    centers = [(np.arange(n) + 0.5) / n * size[k] - frame.half_extents[k] for k in range(3)]
    yy, zz = np.meshgrid(centers[1] + _RAY_JITTER[0], centers[2] + _RAY_JITTER[1], indexing="ij")
    ry, rz = yy.ravel(), zz.ravel()
    grid = np.zeros((n, n, n), dtype=bool)
    for m in _as_meshes(mesh):
        if len(m.faces) == 0:
            continue
        if not m.is_watertight():
            raise VoxelizationError("mesh is not watertight; parity voxelization would be meaningless")
        tri = frame.local(m.vertices)[m.faces]
        grid |= _fill(tri, ry, rz, centers[0]).reshape(n, n, n).transpose(2, 0, 1)
    return grid


def _fill(tri: NDArray[np.float64], ry: NDArray[np.float64], rz: NDArray[np.float64],
          xs: NDArray[np.float64], chunk: int = 512) -> NDArray[np.bool_]:
    """Occupancy (columns, x) for rays parallel to x through (ry, rz)."""
    crossings: List[List[float]] = [[] for _ in range(len(ry))]
    for s in range(0, len(tri), chunk):
        t = tri[s:s + chunk]
        a, b, c = t[:, 0], t[:, 1], t[:, 2]
        # 2D barycentric test in the y-z plane
        d = (b[:, 1] - a[:, 1]) * (c[:, 2] - a[:, 2]) - (c[:, 1] - a[:, 1]) * (b[:, 2] - a[:, 2])
        ok = np.abs(d) > 1e-18
        a, b, c, d = a[ok], b[ok], c[ok], d[ok]
        py = ry[:, None] - a[None, :, 1]
        pz = rz[:, None] - a[None, :, 2]
        u = (py * (c[None, :, 2] - a[None, :, 2]) - pz * (c[None, :, 1] - a[None, :, 1])) / d
        v = (pz * (b[None, :, 1] - a[None, :, 1]) - py * (b[None, :, 2] - a[None, :, 2])) / d
        hit = (u >= 0) & (v >= 0) & (u + v <= 1)
        ri, ti = np.nonzero(hit)
        x = a[ti, 0] + u[ri, ti] * (b[ti, 0] - a[ti, 0]) + v[ri, ti] * (c[ti, 0] - a[ti, 0])
        for r, xv in zip(ri.tolist(), x.tolist()):
            crossings[r].append(xv)
    occ = np.zeros((len(ry), len(xs)), dtype=bool)
    for r, xc in enumerate(crossings):
        if xc:
            count = np.searchsorted(np.sort(xc), xs)
            occ[r] = count % 2 == 1
    return occ


def voxel_iou(predicted: MeshLike, ground_truth: MeshLike, resolution: int = VOXEL_RESOLUTION,
              frame: Optional[OrientedBox] = None) -> float:
    """IoU of solid voxelizations in a shared frame (see :func:`voxel_frame`)."""
    if frame is None:
        frame = voxel_frame(ground_truth, predicted)
    a = voxelize(predicted, frame, resolution)
    b = voxelize(ground_truth, frame, resolution)
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


# ---------------------------------------------------------------------------
# structure average precision
# ---------------------------------------------------------------------------


def average_precision(ranked_hits: Sequence[bool], n_positive: int) -> float:
    """All-points interpolated AP of a ranked list of hit/miss flags."""
    if n_positive <= 0:
        return 1.0 if not any(ranked_hits) else 0.0
    hits = np.asarray(ranked_hits, dtype=bool)
    if not len(hits):
        return 0.0
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(hits) + 1)
    recall = tp / n_positive
    mrec = np.concatenate([[0.0], recall, [recall[-1]]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


ScoredEdge = Tuple[Hashable, Hashable, float]


def structure_ap(predicted: Iterable[ScoredEdge], annotated: Iterable[Tuple[Hashable, Hashable]]) -> float:
    """AP of predicted edges ranked by score against an undirected edge set.

    Directed predictions are collapsed to undirected ones (keeping the best
    score).  An object with no annotated and no predicted edges scores 1.
    """
    truth = {frozenset(e) for e in annotated}
    best: Dict[frozenset, float] = {}
    for u, v, s in predicted:
        k = frozenset((u, v))
        best[k] = max(best.get(k, -np.inf), float(s))
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], sorted(map(str, kv[0]))))
    return average_precision([k in truth for k, _ in ranked], len(truth))


def structure_map(
    predicted: Mapping[str, Iterable[ScoredEdge]],
    annotated: Mapping[str, Iterable[Tuple[Hashable, Hashable]]],
    categories: Mapping[str, str],
    part_labels: Optional[Mapping[str, Iterable[Hashable]]] = None,
) -> Dict[str, float]:
    """Mean AP per category over the annotated objects."""
    per_cat: Dict[str, List[float]] = {}
    for obj in sorted(annotated):
        if obj not in categories:
            raise LabelMismatchError(f"annotated object {obj!r} has no category")
        ann = [tuple(e) for e in annotated[obj]]
        pred = list(predicted.get(obj, ()))
        if part_labels is not None:
            if obj not in part_labels:
                raise LabelMismatchError(f"annotated object {obj!r} is missing from the prediction")
            known = set(part_labels[obj])
            bad = sorted({str(x) for e in ann for x in e} - {str(k) for k in known})
            if bad:
                raise LabelMismatchError(f"annotation for {obj!r} references unknown parts: {', '.join(bad)}")
        per_cat.setdefault(categories[obj], []).append(structure_ap(pred, ann))
    return {c: float(np.mean(v)) for c, v in sorted(per_cat.items())}


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


@dataclass
class ObjectScore:
    label: str
    category: str
    chamfer: float
    iou: float
    baseline_chamfer: Optional[float] = None
    baseline_iou: Optional[float] = None

    def __post_init__(self):
        if self.chamfer < 0 or not 0 <= self.iou <= 1:
            raise ValueError(f"out-of-range score for {self.label}")


@dataclass
class EvaluationReport:
    per_object: List[ObjectScore] = field(default_factory=list)
    per_category_map: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for c, m in self.per_category_map.items():
            if not 0 <= m <= 1:
                raise ValueError(f"mAP for {c} out of range: {m}")

    @property
    def aggregates(self) -> Dict[str, Optional[float]]:
        def mean(xs):
            xs = [x for x in xs if x is not None]
            return float(np.mean(xs)) if xs else None

        po = self.per_object
        return {
            "chamfer": mean(o.chamfer for o in po),
            "iou": mean(o.iou for o in po),
            "baseline_chamfer": mean(o.baseline_chamfer for o in po),
            "baseline_iou": mean(o.baseline_iou for o in po),
            "map": mean(self.per_category_map.values()),
        }

    def to_dict(self) -> dict:
        return {
            "per_object": [asdict(o) for o in self.per_object],
            "per_category_map": [{"category": c, "map": m} for c, m in sorted(self.per_category_map.items())],
            "aggregates": self.aggregates,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    def to_table(self) -> str:
        def f(x):
            return "-" if x is None else f"{x:.4f}"

        rows = [("object", "category", "chamfer", "iou", "obb_chamfer", "obb_iou")]
        for o in self.per_object:
            rows.append((o.label, o.category, f(o.chamfer), f(o.iou), f(o.baseline_chamfer), f(o.baseline_iou)))
        agg = self.aggregates
        rows.append(("mean", "", f(agg["chamfer"]), f(agg["iou"]), f(agg["baseline_chamfer"]), f(agg["baseline_iou"])))
        widths = [max(len(r[i]) for r in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows]
        lines.append("")
        w = max([len("category")] + [len(c) for c in self.per_category_map])
        lines.append(f"{'category'.ljust(w)}  mAP")
        for c, m in sorted(self.per_category_map.items()):
            lines.append(f"{c.ljust(w)}  {m:.4f}")
        return "\n".join(lines) + "\n"
