import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partscene.geometry import RigidTransform, angle_between, compose, rotation_about, rotation_angle
from partscene.kinematics import infer_parse_tree
from partscene.mesh import PrimitiveKind
from partscene.refinement import (
    NormalCorrespondences,
    aligned_plane_normals,
    minimal_rotation,
    refine_rotation,
    refine_tree,
)
from partscene.synthetic import build_object

from conftest import make_part, random_rotation
from oracles import horn_rotation


def tilt(tree, parent, child, angle_deg, axis=(1, 0, 0)):
    t = tree.get_edge_transform(parent, child)
    r = rotation_about(axis, math.radians(angle_deg))
    return tree.update_edge_transform(parent, child, compose(t, RigidTransform.from_rotation(r)))


def relative_angle(tree, parent, child):
    return math.degrees(rotation_angle(tree.node(parent).pose.rotation.T @ tree.node(child).pose.rotation))


# --- correspondences ---


def test_rotated_cube_gives_three_pairs():
    a = make_part("a", "x", [1, 1, 1], [0, 0, 0])
    b = make_part("b", "x", [1, 1, 1], [0, 0, 1], rotation=rotation_about([1, 2, 3], math.radians(5)))
    corr = aligned_plane_normals(a, b, 0.9)
    assert len(corr) == 3
    assert np.linalg.matrix_rank(corr.parent_normals) == 3
    assert np.all(np.einsum("ij,ij->i", corr.parent_normals, corr.child_normals) > 0.99)


def test_perpendicular_planes_give_no_pairs():
    a = make_part("a", "x", [0.2, 0.2, 1], [0, 0, 0], kind=PrimitiveKind.CYLINDER)
    b = make_part("b", "x", [0.2, 0.2, 1], [0, 0, 1], kind=PrimitiveKind.CYLINDER, rotation=rotation_about([1, 0, 0], math.pi / 2))
    assert len(aligned_plane_normals(a, b, 0.9)) == 0


def test_identical_orientation_pairs_have_unit_dot():
    a = make_part("a", "x", [1, 2, 3], [0, 0, 0])
    b = make_part("b", "x", [0.5, 0.5, 0.5], [3, 0, 0])
    corr = aligned_plane_normals(a, b, 0.9)
    np.testing.assert_allclose(np.einsum("ij,ij->i", corr.parent_normals, corr.child_normals), 1.0, atol=1e-12)


# --- rotation solve ---


def test_refine_rotation_identity_and_known_rotation():
    x = np.eye(3)
    assert np.allclose(refine_rotation(NormalCorrespondences(x, x)).rotation, np.eye(3), atol=1e-12)
    r = rotation_about([0.3, -0.2, 1.0], 0.4)
    out = refine_rotation(NormalCorrespondences(x, x @ r.T))
    np.testing.assert_allclose(out.rotation, r.T, atol=1e-9)


def test_rank_one_minimal_rotation():
    u = np.array([0.0, 0.0, 1.0])
    v = rotation_about([1, 1, 0], 0.3) @ u
    out = refine_rotation(NormalCorrespondences([u], [v])).rotation
    assert angle_between(out @ v, u) < 1e-9
    # minimal: rotation angle equals the angle between the vectors
    assert rotation_angle(out) == pytest.approx(angle_between(u, v), abs=1e-9)
    assert np.allclose(minimal_rotation(u, u), np.eye(3))
    anti = minimal_rotation(u, -u)
    np.testing.assert_allclose(anti @ u, -u, atol=1e-12)


def test_empty_correspondences_give_identity():
    out = refine_rotation(NormalCorrespondences(np.zeros((0, 3)), np.zeros((0, 3))))
    assert out.allclose(RigidTransform.identity())


def _noisy_pairs(rng, k):
    parent = rng.normal(size=(k, 3))
    parent /= np.linalg.norm(parent, axis=1, keepdims=True)
    r = random_rotation(rng)
    child = parent @ r.T + rng.normal(0, 0.05, (k, 3))
    child /= np.linalg.norm(child, axis=1, keepdims=True)
    return NormalCorrespondences(parent, child)


@given(st.integers(0, 2 ** 32 - 1), st.integers(2, 8))
def test_rotation_only_contract_and_horn_oracle(seed, k):
    rng = np.random.default_rng(seed)
    corr = _noisy_pairs(rng, k)
    out = refine_rotation(corr)
    assert np.all(out.translation == 0.0)
    r = out.rotation
    np.testing.assert_allclose(r.T @ r, np.eye(3), atol=1e-9)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)
    horn = horn_rotation(corr.child_normals, corr.parent_normals)
    assert corr.residual(r) == pytest.approx(corr.residual(horn), abs=1e-9)


def test_kabsch_beats_random_rotations():
    rng = np.random.default_rng(0)
    corr = _noisy_pairs(rng, 5)
    best = corr.residual(refine_rotation(corr).rotation)
    q = rng.normal(size=(10 ** 4, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    from scipy.spatial.transform import Rotation

    rs = Rotation.from_quat(q).as_matrix()
    residuals = ((np.einsum("nij,kj->nki", rs, corr.child_normals) - corr.parent_normals) ** 2).sum(axis=(1, 2))
    assert best <= residuals.min() + 1e-12


# --- tree refinement ---


def table_tree():
    return build_object("table", "t").part_tree


def test_aligned_tree_is_fixed_point():
    tree = table_tree()
    out = refine_tree(tree)
    for e in tree.edges:
        assert out.get_edge_transform(e.parent, e.child).allclose(tree.get_edge_transform(e.parent, e.child), atol=1e-9)


def test_tilted_leg_realigns():
    tree = tilt(table_tree(), "top", "leg_0", 4.0)
    assert relative_angle(tree, "top", "leg_0") == pytest.approx(4.0)
    out = refine_tree(tree)
    leg_axis = out.node("leg_0").pose.rotation[:, 2]
    top_normal = out.node("top").pose.rotation[:, 2]
    assert math.degrees(angle_between(leg_axis, top_normal)) < 0.1
    # translation at the refinement fixed point (the child origin) is kept
    np.testing.assert_allclose(out.node("leg_0").pose.translation, tree.node("leg_0").pose.translation, atol=1e-12)


def test_chain_each_level_corrected():
    parts = [make_part("a", "base", [1, 1, 0.2], [0, 0, 0.1]),
             make_part("b", "block", [0.8, 0.8, 0.2], [0, 0, 0.3]),
             make_part("c", "block", [0.6, 0.6, 0.2], [0, 0, 0.5])]
    tree = infer_parse_tree(parts)
    assert {(e.parent, e.child) for e in tree.edges} == {("a", "b"), ("b", "c")}
    tree = tilt(tilt(tree, "a", "b", 3.0, (1, 0, 0)), "b", "c", 3.0, (0, 1, 0))
    before = [relative_angle(tree, "a", "b"), relative_angle(tree, "b", "c")]
    steps = []
    out = refine_tree(tree, trace=steps)
    after = [relative_angle(out, "a", "b"), relative_angle(out, "b", "c")]
    assert all(x < y for x, y in zip(after, before))
    assert max(after) < 1e-6
    # world misalignment against the root shrinks too
    assert relative_angle(out, "a", "c") < relative_angle(tree, "a", "c")
    assert [(s.parent, s.child) for s in steps] == [("a", "b"), ("b", "c")]


@given(st.integers(0, 2 ** 32 - 1))
def test_refinement_non_worsening_and_complete(seed):
    rng = np.random.default_rng(seed)
    tree = build_object(["table", "chair", "bed"][seed % 3], "o").part_tree
    for e in tree.edges:
        tree = tilt(tree, e.parent, e.child, rng.uniform(-8, 8), rng.normal(size=3))
    steps = []
    refine_tree(tree, trace=steps)
    assert sorted(s.child for s in steps) == sorted(e.child for e in tree.edges)
    for s in steps:
        assert s.residual_after <= s.residual_before + 1e-12
