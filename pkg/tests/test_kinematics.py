import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partscene.errors import ConfigError
from partscene.geometry import RigidTransform, polygon_intersection_area, project_polygon, rotation_about
from partscene.kinematics import (
    ContactThresholds,
    Joint,
    JointRuleTable,
    JointType,
    assign_joint,
    build_contact_digraph,
    check_contact,
    contact_ratio,
    infer_parse_tree,
    plane_alignment,
    plane_distance,
    select_root,
)
from partscene.mesh import PrimitiveKind
from partscene.synthetic import build_object

from conftest import make_part, random_rotation


def template_parts(name, scale=1.0):
    return list(build_object(name, name, scale).part_tree.nodes)


# --- contact predicate ---


def test_stacked_cubes_perfect_contact():
    a = make_part("a", "block", [1, 1, 1], [0, 0, 0.5])
    b = make_part("b", "block", [1, 1, 1], [0, 0, 1.5])
    ev = check_contact(a, b)
    assert ev.align_score == 1.0
    assert ev.distance == pytest.approx(0.0, abs=1e-12)
    assert ev.contact_ratio == pytest.approx(1.0, abs=1e-12)
    assert a.planes[ev.parent_plane_index].plane.normal @ [0, 0, 1] == pytest.approx(1.0)


def test_separated_cubes_no_contact():
    th = ContactThresholds()
    a = make_part("a", "block", [1, 1, 1], [0, 0, 0.5])
    b = make_part("b", "block", [1, 1, 1], [0, 0, 1.5 + 2 * th.theta_d])
    assert check_contact(a, b, th) is None


def test_half_overhang_contact_ratio():
    a = make_part("a", "block", [1, 1, 1], [0, 0, 0.5])
    b = make_part("b", "block", [1, 1, 1], [0.5, 0, 1.5])
    ev = check_contact(a, b)
    assert ev.contact_ratio == pytest.approx(0.5, abs=1e-12)
    pp, pc = a.planes[ev.parent_plane_index], b.planes[ev.child_plane_index]
    oracle = polygon_intersection_area(pp, project_polygon(pc, pp.plane, pp.plane.point())) / 1.0
    assert ev.contact_ratio == pytest.approx(oracle, abs=1e-12)


def test_thresholds_validated():
    with pytest.raises(ConfigError):
        ContactThresholds(theta_a=1.5)
    with pytest.raises(ConfigError):
        ContactThresholds(theta_d=0.0)
    with pytest.raises(ConfigError):
        ContactThresholds(theta_c=0.0)


@given(st.integers(0, 2 ** 32 - 1))
def test_align_symmetric(seed):
    rng = np.random.default_rng(seed)
    a = make_part("a", "x", rng.uniform(0.1, 1, 3), rng.normal(size=3), rotation=random_rotation(rng))
    b = make_part("b", "x", rng.uniform(0.1, 1, 3), rng.normal(size=3), rotation=random_rotation(rng))
    for pa in a.planes:
        for pb in b.planes:
            assert plane_alignment(pa, pb) == plane_alignment(pb, pa)


def _random_layout(rng, n=4):
    parts = [make_part("p0", "base", [1, 1, 0.2], [0, 0, 0.1])]
    for i in range(1, n):
        size = rng.uniform(0.1, 0.6, 3)
        x, y = rng.uniform(-0.6, 0.6, 2)
        z = 0.2 + size[2] / 2 + rng.choice([0.0, 0.01, 0.05, 0.5])
        parts.append(make_part(f"p{i}", "thing", size, [x, y, z], rotation=rotation_about([0, 0, 1], rng.uniform(0, 0.2))))
    return parts


@given(st.integers(0, 2 ** 32 - 1))
def test_evidence_admissible(seed):
    rng = np.random.default_rng(seed)
    th = ContactThresholds()
    parts = _random_layout(rng)
    dg = build_contact_digraph(parts, th)
    by = {p.instance_label: p for p in parts}
    for (p, c), ev in dg.edges.items():
        pp, pc = by[p].planes[ev.parent_plane_index], by[c].planes[ev.child_plane_index]
        assert abs(pp.plane.normal @ pc.plane.normal) >= th.theta_a
        assert abs(np.mean(pp.plane.signed_distance(pc.vertices))) <= th.theta_d
        assert contact_ratio(pp, pc) >= th.theta_c
        assert ev.distance == pytest.approx(plane_distance(pp, pc), abs=1e-12)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.5), st.floats(0.01, 0.5))
def test_raising_theta_c_never_adds_edges(seed, c1, c2):
    lo, hi = sorted((c1, c2))
    parts = _random_layout(np.random.default_rng(seed))
    e_lo = set(build_contact_digraph(parts, ContactThresholds(theta_c=lo)).edges)
    e_hi = set(build_contact_digraph(parts, ContactThresholds(theta_c=hi)).edges)
    assert e_hi <= e_lo


# --- digraph, root, joints ---


def test_table_digraph_edges():
    parts = template_parts("table")
    # default theta_c keeps only top -> leg: a leg end covers a tiny share of the top
    strict = build_contact_digraph(parts, ContactThresholds())
    assert sorted(strict.edges) == [("top", f"leg_{i}") for i in range(4)]
    loose = build_contact_digraph(parts, ContactThresholds(theta_c=0.001))
    assert len(loose.edges) == 8
    assert {frozenset(e) for e in loose.edges} == {frozenset(("top", f"leg_{i}")) for i in range(4)}


def test_disjoint_and_single_part_digraphs():
    a = make_part("a", "x", [1, 1, 1], [0, 0, 0])
    b = make_part("b", "x", [1, 1, 1], [5, 0, 0])
    assert build_contact_digraph([a, b]).edges == {}
    single = build_contact_digraph([a])
    assert single.nodes == ("a",) and single.edges == {}


def test_select_root_rules():
    assert select_root(template_parts("microwave")) == "base"
    assert select_root(template_parts("table")) == "top"
    big = make_part("u", "thing", [1.0, 0.3, 1.0], [0, 0, 0])
    small = make_part("v", "thing", [1.0, 0.1, 1.0], [2, 0, 0])
    assert big.volume == pytest.approx(0.3) and small.volume == pytest.approx(0.1)
    assert select_root([small, big]) == "u"


def test_table_joints_fixed():
    tree = infer_parse_tree(template_parts("table"))
    assert tree.root == "top"
    assert len(tree.edges) == 4
    assert all(e.joint.joint_type is JointType.FIXED and e.parent == "top" for e in tree.edges)


def test_microwave_door_revolute_on_vertical_rim():
    parts = {p.instance_label: p for p in template_parts("microwave")}
    tree = infer_parse_tree(list(parts.values()))
    (edge,) = tree.edges
    assert (edge.parent, edge.child) == ("base", "door")
    j = edge.joint
    assert j.joint_type is JointType.REVOLUTE
    door = parts["door"]
    world_axis = door.pose.rotation @ j.axis
    assert abs(world_axis @ [0, 0, 1]) == pytest.approx(1.0, abs=1e-9)  # the door's vertical edge
    # pivot on the rim: a door side, not the middle
    pivot_world = door.pose.apply(j.pivot)
    assert abs(pivot_world[0] - door.pose.translation[0]) == pytest.approx(door.model.scale[0] / 2, abs=1e-9)
    assert j.limits == pytest.approx((0.0, math.pi / 2))
    # axis parallel to the contact plane
    n = tree.node("base").planes[edge.evidence.parent_plane_index].plane.normal
    assert abs(world_axis @ n) < 1e-6


def test_cabinet_drawer_prismatic():
    parts = {p.instance_label: p for p in template_parts("cabinet")}
    tree = infer_parse_tree(list(parts.values()))
    base = parts["base"]
    for e in tree.edges:
        assert e.parent == "base"
        j = e.joint
        assert j.joint_type is JointType.PRISMATIC
        drawer = parts[e.child]
        world_axis = drawer.pose.rotation @ j.axis
        np.testing.assert_allclose(world_axis, [0, -1, 0], atol=1e-9)  # outward front normal
        assert j.limits == pytest.approx((0.0, drawer.model.scale[1]))
        # at q = 0 the drawer footprint stays within the base footprint
        lo = drawer.pose.translation - drawer.model.scale / 2
        hi = drawer.pose.translation + drawer.model.scale / 2
        assert np.all(lo[:2] >= base.pose.translation[:2] - base.model.scale[:2] / 2 - 1e-9)
        assert np.all(hi[:2] <= base.pose.translation[:2] + base.model.scale[:2] / 2 + 1e-9)


def test_unknown_pair_defaults_to_fixed():
    a = make_part("a", "lamp_base", [1, 1, 1], [0, 0, 0.5])
    b = make_part("b", "lamp_shade", [1, 1, 1], [0, 0, 1.5])
    j = assign_joint(a, b, check_contact(a, b))
    assert j.joint_type is JointType.FIXED and "defaulted" in j.flags


def test_single_part_tree():
    tree = infer_parse_tree([make_part("solo", "x", [1, 1, 1], [0, 0, 0])])
    assert tree.root == "solo" and tree.edges == ()


def test_sphere_part_attached_heuristically():
    parts = [make_part("top", "table_top", [1, 1, 0.1], [0, 0, 0.5]),
             make_part("ball", "knob", [0.1, 0.1, 0.1], [0, 0, 0.6], kind=PrimitiveKind.SPHERE)]
    tree = infer_parse_tree(parts)
    (edge,) = tree.edges
    assert edge.child == "ball" and "heuristic-attach" in edge.joint.flags


@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 6))
def test_inferred_trees_are_well_formed(seed, n):
    from partscene.errors import DisconnectedStructureError

    parts = _random_layout(np.random.default_rng(seed), n)
    try:
        tree = infer_parse_tree(parts)
    except DisconnectedStructureError as exc:
        assert exc.unreachable
        return
    assert len(tree.edges) == len(tree.nodes) - 1
    children = [e.child for e in tree.edges]
    assert len(set(children)) == len(children) and tree.root not in children
    assert set(tree.breadth_first()) == set(tree.labels)
    for e in tree.edges:
        if e.joint.axis is not None:
            assert np.linalg.norm(e.joint.axis) == pytest.approx(1.0, abs=1e-12)


def test_joint_validation():
    with pytest.raises(ValueError):
        Joint(JointType.FIXED, RigidTransform.identity(), axis=[0, 0, 1])
    with pytest.raises(ValueError):
        Joint(JointType.REVOLUTE, RigidTransform.identity(), axis=[0, 0, 2], limits=(0, 1))
    with pytest.raises(ValueError):
        Joint(JointType.PRISMATIC, RigidTransform.identity(), axis=[0, 0, 1], limits=(1, 0))


def test_rule_table_validation_and_lookup():
    with pytest.raises(ConfigError):
        JointRuleTable.from_dict({"rules": {"a/b": {"type": "ball"}}})
    with pytest.raises(ConfigError):
        JointRuleTable.from_dict({"rules": {"a/b": {"type": "prismatic", "axis_rule": "nope", "limit_rule": "child_depth"}}})
    t = JointRuleTable.from_dict({"rules": {"*/door": {"type": "revolute", "axis_rule": "rim_edge",
                                                      "limit_rule": "quarter_turn", "fraction": 0.5}}})
    assert t.lookup("oven", "door").joint_type is JointType.REVOLUTE
    assert t.lookup("oven", "handle") is None
    default = JointRuleTable.load()
    assert default.lookup("table_top", "table_leg").joint_type is JointType.FIXED


def test_parse_tree_reposing_follows_edges():
    tree = infer_parse_tree(template_parts("table"))
    delta = RigidTransform(rotation_about([0, 0, 1], 0.4), [1, 2, 0])
    moved = tree.moved(delta)
    for lab in tree.labels:
        assert moved.node(lab).pose.allclose(RigidTransform.identity().__class__(
            delta.rotation @ tree.node(lab).pose.rotation, delta.apply(tree.node(lab).pose.translation)), atol=1e-12)
    e = tree.edges[0]
    assert moved.get_edge_transform(e.parent, e.child).allclose(tree.get_edge_transform(e.parent, e.child), atol=1e-12)
