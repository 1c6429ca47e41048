import json

import numpy as np
import pytest

from partscene.cloud_io import ObjectInput, PartInput, load_scene_input, read_ply, scene_input_from_dict, write_ply
from partscene.errors import ConfigError, LabelMismatchError, SchemaError
from partscene.kinematics import JointType
from partscene.mesh import surface_distance
from partscene.pipeline import PipelineConfig, PipelineFailure, evaluate, reconstruct, run_pipeline
from partscene.serialization import serialize_graph
from partscene.synthetic import SyntheticSceneSpec, generate_synthetic_scene
from partscene.urdf import validate_urdf


def scene(templates, seed=0, **kw):
    return generate_synthetic_scene(SyntheticSceneSpec(seed=seed, templates=tuple(templates), **kw))


def inputs(s):
    return scene_input_from_dict(s.to_input_dict())


# --- generator ---


def test_noiseless_table_clouds_on_surfaces():
    s = scene(["table"])
    obj = s.truth.node("table_0")
    for c in s.clouds:
        part = obj.world_part(c.part_label)
        assert surface_distance(c.points, part.model.mesh()).max() < 1e-9
    tree = obj.part_tree
    assert tree.root == "top" and len(tree.edges) == 4
    assert all(e.joint.joint_type is JointType.FIXED for e in tree.edges)


def test_cabinet_truth_has_prismatic_drawers():
    obj = scene(["cabinet"]).truth.node("cabinet_0")
    for e in obj.part_tree.edges:
        assert e.joint.joint_type is JointType.PRISMATIC
        drawer = obj.part_tree.node(e.child)
        base = obj.part_tree.node("base")
        front = [p for p in base.planes if p.plane.normal @ [0, -1, 0] > 0.999][0]
        np.testing.assert_allclose(drawer.pose.rotation @ e.joint.axis, front.plane.normal, atol=1e-12)


def test_generator_deterministic_and_seed_sensitive():
    a = scene(["table", "chair"], seed=4, noise_sigma=0.005, dropout=0.2)
    b = scene(["table", "chair"], seed=4, noise_sigma=0.005, dropout=0.2)
    assert a.to_input_json() == b.to_input_json()
    assert serialize_graph(a.truth) == serialize_graph(b.truth)
    assert a.to_input_json() != scene(["table", "chair"], seed=5, noise_sigma=0.005, dropout=0.2).to_input_json()


def test_generator_rejects_unknown_template():
    with pytest.raises(ConfigError):
        SyntheticSceneSpec(templates=("sofa",))
    with pytest.raises(ConfigError):
        SyntheticSceneSpec(dropout=1.0)


def test_partial_view_removes_points():
    full = sum(len(c.points) for c in scene(["cabinet"], seed=1).clouds)
    partial = sum(len(c.points) for c in scene(["cabinet"], seed=1, partial_view=True).clouds)
    assert partial < full


def test_microwave_sits_on_table():
    g = scene(["table", "microwave"]).truth
    assert g.supporter("microwave_0") == "table_0"


# --- input formats ---


def test_ply_round_trip(tmp_path):
    pts = np.random.default_rng(0).normal(size=(20, 3))
    text = write_ply(pts, {"object": "o", "object_class": "box", "part": "p", "class": "lid"})
    back, meta = read_ply(text)
    np.testing.assert_allclose(back, pts, rtol=1e-8)
    assert meta == {"object": "o", "object_class": "box", "part": "p", "class": "lid"}
    (tmp_path / "p.ply").write_text(text)
    (objs,) = load_scene_input(tmp_path)
    assert objs.label == "o" and objs.parts[0].semantic_class == "lid"


def test_bad_inputs_name_the_field(tmp_path):
    empty = tmp_path / "empty.json"
    empty.write_text("")
    with pytest.raises(SchemaError):
        load_scene_input(empty)
    no_objects = tmp_path / "a.json"
    no_objects.write_text(json.dumps({"schema_version": 1}))
    with pytest.raises(SchemaError) as exc:
        load_scene_input(no_objects)
    assert exc.value.path == "$.objects"
    with pytest.raises(SchemaError) as exc:
        scene_input_from_dict({"schema_version": 1, "objects": [{"label": "a", "class": "b", "parts": [{"label": "x"}]}]})
    assert exc.value.path == "$.objects[0].parts[0].class"
    with pytest.raises(SchemaError):
        read_ply("ply\nformat binary_little_endian 1.0\nend_header\n")


# --- config ---


def test_config_round_trip_and_validation(tmp_path):
    cfg = PipelineConfig(theta_c=0.2, seed=9, refine=False)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    back = PipelineConfig.load(path)
    assert back == cfg and back.digest() == cfg.digest()
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"theta_a": "high"})
    with pytest.raises(ConfigError):
        PipelineConfig.from_dict({"unknown": 1})
    with pytest.raises(ConfigError):
        PipelineConfig(refine_gate=1.5)
    with pytest.raises(ConfigError):
        PipelineConfig(seed=-1)


# --- end to end ---


@pytest.fixture(scope="module")
def table_run():
    s = scene(["table"], seed=0)
    return s, reconstruct(inputs(s), PipelineConfig(seed=0))


def test_table_pipeline_output(table_run, tmp_path):
    s, res = table_run
    report = validate_urdf(res.urdf)
    assert report.ok
    assert len(report.links) == 6  # 5 parts + floor
    types = sorted(report.joint_types.values())
    assert types == ["fixed"] * 5
    assert sum(1 for n in report.joint_types if n.endswith("_support")) == 1
    written = res.write(tmp_path, "all")
    names = {p.relative_to(tmp_path).as_posix() for p in written}
    assert {"scene.urdf", "scene.json", "manifest.json", "meshes/box.obj"} <= names
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config_hash"] == PipelineConfig(seed=0).digest()
    assert set(manifest["timings_s"]) == {"fit", "infer", "assemble", "export"}


def test_noiseless_table_evaluation(table_run):
    s, res = table_run
    rep = evaluate(res.graph, s.truth)
    (score,) = rep.per_object
    assert score.iou >= 0.9 and score.chamfer <= 0.02
    assert score.chamfer < score.baseline_chamfer
    assert rep.per_category_map == {"table": 1.0}


def test_truth_against_itself():
    s = scene(["table", "microwave"], seed=2)
    rep = evaluate(s.truth, s.truth)
    for o in rep.per_object:
        assert o.chamfer == 0.0 and o.iou == 1.0
    assert set(rep.per_category_map.values()) == {1.0}


def test_evaluate_label_mismatch():
    a = scene(["table"]).truth
    b = scene(["chair"]).truth
    with pytest.raises(LabelMismatchError):
        evaluate(a, b)


def test_microwave_pipeline_revolute(tmp_path):
    s = scene(["microwave"], seed=3)
    path = tmp_path / "in.json"
    path.write_text(s.to_input_json())
    res = run_pipeline(path, PipelineConfig(seed=3), out_dir=tmp_path / "out", fmt="urdf")
    assert validate_urdf(res.urdf).joint_types["microwave_0_door_joint"] == "revolute"
    assert (tmp_path / "out" / "scene.urdf").exists()
    assert not (tmp_path / "out" / "scene.json").exists()


def test_pipeline_deterministic():
    objs = inputs(scene(["chair", "cabinet"], seed=6, noise_sigma=0.003))
    a = reconstruct(objs, PipelineConfig(seed=6))
    b = reconstruct(objs, PipelineConfig(seed=6))
    assert a.urdf == b.urdf and a.scene_json == b.scene_json


def _with_broken_parts(objs, n_bad):
    o = objs[0]
    bad = tuple(PartInput(f"zz_bad_{i}", "junk", np.zeros((2, 3))) for i in range(n_bad))
    return [ObjectInput(o.label, o.semantic_class, o.parts + bad)] + list(objs[1:])


def test_pipeline_closure_with_failed_parts():
    objs = _with_broken_parts(inputs(scene(["table"], seed=1)), 2)
    res = reconstruct(objs, PipelineConfig(seed=1))
    kept = {(o.object_label, p) for o in res.graph.object_nodes for p in o.part_tree.labels}
    dropped = {(o, p) for o, p, _ in res.dropped_parts}
    every = {(o.label, p.label) for o in objs for p in o.parts}
    assert kept | dropped == every and not kept & dropped
    assert dropped == {("table_0", "zz_bad_0"), ("table_0", "zz_bad_1")}
    assert any("zz_bad_0" in w for w in res.warnings)


def test_pipeline_fails_when_most_parts_fail():
    objs = _with_broken_parts(inputs(scene(["microwave"], seed=1)), 3)
    with pytest.raises(PipelineFailure):
        reconstruct(objs, PipelineConfig(seed=1))


def test_no_refine_toggle():
    s = scene(["table"], seed=8, noise_sigma=0.004)
    a = reconstruct(inputs(s), PipelineConfig(seed=8, refine=False))
    b = reconstruct(inputs(s), PipelineConfig(seed=8))
    assert a.urdf != b.urdf


def test_iou_degrades_with_noise():
    clean, noisy = [], []
    for seed in range(20):
        tpl = ["table", "cabinet", "microwave", "chair"][seed % 4]
        for sigma, bucket in ((0.0, clean), (0.01, noisy)):
            s = scene([tpl], seed=seed, noise_sigma=sigma)
            res = reconstruct(inputs(s), PipelineConfig(seed=seed, eval_samples=4000))
            bucket.append(evaluate(res.graph, s.truth, PipelineConfig(eval_samples=4000)).aggregates["iou"])
    assert np.mean(clean) >= np.mean(noisy)
