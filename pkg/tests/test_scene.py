import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from partscene.errors import SceneWarning
from partscene.geometry import RigidTransform, angle_between, compose, rotation_about
from partscene.kinematics import PartParseTree
from partscene.scene import ContactGraph, ObjectNode, assemble_scene, refine_object_poses, support_misalignment
from partscene.synthetic import build_object

from conftest import make_part


def single_box_object(label, size, center, cls="display"):
    part = make_part("body", cls, size, [0, 0, 0])
    return ObjectNode(label, cls, RigidTransform.from_translation(center), PartParseTree("body", (part,)))


def table_top_z(obj):
    top = obj.world_part("top")
    return float(top.model.bounding_box().corners()[:, 2].max())


def test_single_table_on_floor():
    g = assemble_scene([build_object("table", "table_0")])
    assert g.supporting_edges == (("floor", "table_0"),)
    assert g.proximal_edges == ()


def test_display_on_table():
    table = build_object("table", "table_0", world_pose=RigidTransform.from_translation([2, 0, 0]))
    z = table_top_z(table)
    display = single_box_object("display_0", [0.5, 0.1, 0.3], [2.0, 0.0, z + 0.15])
    g = assemble_scene([table, display])
    assert set(g.supporting_edges) == {("floor", "table_0"), ("table_0", "display_0")}
    assert g.top_down() == ["table_0", "display_0"]


def test_close_chairs_are_proximal():
    a = build_object("chair", "chair_0")
    # chair seats are 0.45 wide; 0.5 between centers leaves a 0.05 gap
    b = build_object("chair", "chair_1", world_pose=RigidTransform.from_translation([0.5, 0, 0]))
    g = assemble_scene([a, b])
    assert g.proximal_edges == (("chair_0", "chair_1"),)
    far = assemble_scene([a, build_object("chair", "chair_1", world_pose=RigidTransform.from_translation([2, 0, 0]))])
    assert far.proximal_edges == ()


def test_floating_object_warns():
    box = single_box_object("ufo", [0.3, 0.3, 0.3], [0, 0, 2.0])
    with pytest.warns(SceneWarning):
        g = assemble_scene([box])
    assert g.supporter("ufo") == "floor"


def test_graph_rejects_bad_support_relations():
    a = single_box_object("a", [1, 1, 1], [0, 0, 0.5])
    b = single_box_object("b", [1, 1, 1], [0, 0, 1.5])
    with pytest.raises(ValueError):
        ContactGraph((a, b), (("floor", "a"),))
    with pytest.raises(ValueError):
        ContactGraph((a, b), (("floor", "a"), ("floor", "b"), ("a", "b")))
    with pytest.raises(ValueError):
        ContactGraph((a, b), (("b", "a"), ("a", "b")))


def tilted(obj, deg, axis=(1, 0, 0)):
    return obj.moved(RigidTransform.from_rotation(rotation_about(axis, math.radians(deg)), about=obj.world_pose.translation))


def test_flush_object_unchanged():
    g = assemble_scene([build_object("table", "table_0")])
    out = refine_object_poses(g)
    assert out.node("table_0").world_pose.allclose(g.node("table_0").world_pose, atol=1e-9)


def test_tilted_table_is_leveled():
    table = tilted(build_object("table", "table_0"), 3.0)
    g = assemble_scene([table])
    out = refine_object_poses(g).node("table_0")
    top_normal = out.world_part("top").pose.rotation[:, 2]
    assert math.degrees(angle_between(top_normal, [0, 0, 1])) < 0.1
    for i in range(4):
        leg_bottom = out.world_part(f"leg_{i}").model.bounding_box().corners()[:, 2].min()
        assert abs(leg_bottom) < 1e-6


def test_stacked_object_inherits_correction():
    table = build_object("table", "table_0")
    mw_pose = RigidTransform(np.eye(3), [0, 0, table_top_z(table)])
    mw = build_object("microwave", "microwave_0", world_pose=mw_pose)
    delta = RigidTransform.from_rotation(rotation_about([0, 1, 0], math.radians(2.0)), about=[0, 0, 0])
    g = assemble_scene([table.moved(delta), mw.moved(delta)])
    assert g.supporter("microwave_0") == "table_0"
    out = refine_object_poses(g)
    d_table = compose(out.node("table_0").world_pose, g.node("table_0").world_pose.inverse())
    d_mw = compose(out.node("microwave_0").world_pose, g.node("microwave_0").world_pose.inverse())
    assert d_table.allclose(d_mw, atol=1e-9)
    # leveled again; the pivot is the contact patch, so only rotation and height are restored
    leveled = out.node("table_0").world_pose
    np.testing.assert_allclose(leveled.rotation, np.eye(3), atol=1e-9)
    assert leveled.translation[2] == pytest.approx(0.0, abs=1e-9)


@given(st.floats(-4, 4), st.floats(-4, 4))
def test_support_misalignment_non_increasing(ax, ay):
    table = build_object("table", "table_0")
    table = tilted(tilted(table, ax, (1, 0, 0)), ay, (0, 1, 0))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SceneWarning)
        g = assemble_scene([table])
    before = sum(support_misalignment(g).values())
    after = sum(support_misalignment(refine_object_poses(g)).values())
    assert after <= before + 1e-12
    for a, b in g.supporting_edges:
        assert b in g.labels

