import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import cdist

from partscene.errors import LabelMismatchError, VoxelizationError
from partscene.geometry import OrientedBox, RigidTransform, rotation_about
from partscene.mesh import PrimitiveKind, TriMesh, template_mesh
from partscene.metrics import (
    EvaluationReport,
    ObjectScore,
    average_precision,
    chamfer_distance,
    normalize_jointly,
    structure_ap,
    structure_map,
    voxel_frame,
    voxel_iou,
)

from conftest import random_rotation
from oracles import all_points_ap


def cube(size=1.0, center=(0, 0, 0), rotation=None):
    r = np.eye(3) if rotation is None else rotation
    return template_mesh(PrimitiveKind.BOX).scaled([size] * 3).transformed(RigidTransform(r, center))


def brute_chamfer(a, b):
    d = cdist(a, b)
    return d.min(axis=1).mean() + d.min(axis=0).mean()


# --- chamfer ---


def test_chamfer_identity_and_symmetry():
    a = np.random.default_rng(0).normal(size=(300, 3))
    b = np.random.default_rng(1).normal(size=(200, 3))
    assert chamfer_distance(a, a) == 0.0
    assert chamfer_distance(a, b) == chamfer_distance(b, a)


def test_cube_corners_offset_example():
    corners = np.array([[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float)
    a, b = normalize_jointly(corners, corners + [0.1, 0, 0])
    # union spans 1.1 along x, so the 0.1 offset becomes 0.1/1.1 on each side
    assert chamfer_distance(a, b) == pytest.approx(brute_chamfer(a, b), abs=1e-12)
    assert chamfer_distance(a, b) == pytest.approx(2 * 0.1 / 1.1, abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 2000), st.integers(1, 2000))
@settings(max_examples=25)
def test_tree_matches_brute_force(seed, n, m):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(n, 3))
    b = rng.normal(size=(m, 3)) + rng.normal(size=3)
    fast = chamfer_distance(a, b)
    assert abs(fast - chamfer_distance(a, b, brute_force=True)) <= 1e-12
    assert abs(fast - brute_chamfer(a, b)) <= 1e-12


def test_normalization_is_uniform():
    a = np.array([[0, 0, 0], [2, 1, 0.5]], dtype=float)
    na, nb = normalize_jointly(a, a + [0, 0, 0.5])
    np.testing.assert_allclose(na[1], [1, 0.5, 0.25])
    assert max(np.max(na), np.max(nb)) == pytest.approx(1.0)


# --- voxel IoU ---


def test_identical_and_disjoint_meshes():
    m = cube(rotation=rotation_about([1, 2, 3], 0.5))
    assert voxel_iou(m, m) == 1.0
    frame = OrientedBox(np.zeros(3), np.eye(3), np.full(3, 3.0))
    assert voxel_iou(cube(center=(-1.5, 0, 0)), cube(center=(1.5, 0, 0)), frame=frame) == 0.0


def test_half_shifted_cube_one_third():
    iou = voxel_iou(cube(center=(0.5, 0, 0)), cube())
    assert iou == pytest.approx(1 / 3, abs=0.04)


def test_overlapping_components_do_not_cancel():
    a = cube(center=(0, 0, 0))
    b = cube(center=(0.5, 0, 0))
    union_box = template_mesh(PrimitiveKind.BOX).scaled([1.5, 1, 1]).transformed(RigidTransform.from_translation([0.25, 0, 0]))
    assert voxel_iou([a, b], union_box) == pytest.approx(1.0, abs=0.02)


def test_open_mesh_rejected():
    m = cube()
    open_mesh = TriMesh(m.vertices, m.faces[:-1])
    with pytest.raises(VoxelizationError):
        voxel_iou(open_mesh, m)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=20)
def test_iou_bounds_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    a = cube(rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5, 3), random_rotation(rng))
    b = cube(rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5, 3), random_rotation(rng))
    frame = voxel_frame(b, a)
    ab = voxel_iou(a, b, frame=frame)
    assert 0.0 <= ab <= 1.0
    assert ab == voxel_iou(b, a, frame=frame)


def test_resolution_convergence():
    rng = np.random.default_rng(0)
    err16, err64 = [], []
    for _ in range(50):
        dx = rng.uniform(0.05, 0.6)
        analytic = (1 - dx) / (1 + dx)
        a, b = cube(center=(dx, 0, 0)), cube()
        err16.append(abs(voxel_iou(a, b, 16) - analytic))
        err64.append(abs(voxel_iou(a, b, 64) - analytic))
    assert np.mean(err64) <= np.mean(err16)


# --- AP ---


def test_ap_examples():
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([], 2) == 0.0
    assert average_precision([True, False], 2) == pytest.approx(0.5)
    assert all_points_ap([True, False], 2) == pytest.approx(0.5)
    assert structure_ap([("a", "b", 0.9), ("b", "c", 0.8)], [("b", "a"), ("c", "b")]) == 1.0
    assert structure_ap([], [("a", "b")]) == 0.0
    assert structure_ap([], []) == 1.0


@given(st.lists(st.booleans(), max_size=30), st.integers(0, 10))
def test_ap_matches_reference(hits, extra):
    n_pos = sum(hits) + extra
    ours = average_precision(hits, n_pos)
    assert 0.0 <= ours <= 1.0
    assert ours == pytest.approx(all_points_ap(hits, n_pos), abs=1e-12)


def test_structure_ap_collapses_directions():
    pred = [("a", "b", 0.3), ("b", "a", 0.9), ("a", "c", 0.5)]
    assert structure_ap(pred, [("a", "b")]) == 1.0


def test_structure_map_groups_and_checks_labels():
    pred = {"t0": [("top", "leg", 1.0)], "t1": []}
    ann = {"t0": [("top", "leg")], "t1": [("top", "leg")]}
    cats = {"t0": "table", "t1": "table"}
    assert structure_map(pred, ann, cats) == {"table": 0.5}
    with pytest.raises(LabelMismatchError):
        structure_map(pred, ann, {"t0": "table"})
    with pytest.raises(LabelMismatchError):
        structure_map(pred, ann, cats, {"t0": ["top", "leg"], "t1": ["top"]})


def test_report_serialization():
    r = EvaluationReport([ObjectScore("a", "table", 0.01, 0.9, 0.1, 0.5)], {"table": 1.0})
    d = r.to_dict()
    assert d["aggregates"]["chamfer"] == pytest.approx(0.01)
    assert "table" in r.to_table()
    assert r.to_json().endswith("\n")
