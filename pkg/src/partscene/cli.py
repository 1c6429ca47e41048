"""
Command line interface.

    partscene fit INPUT [--object O] [--part P]
    partscene infer INPUT [--object O]
    partscene reconstruct INPUT
    partscene synth [--templates table,chair] [--noise 0.005] [--dropout 0.2]
    partscene eval PREDICTED_JSON TRUTH_JSON [--input CLOUDS]
    partscene validate PATH

Exit codes: 0 success, 1 validation error, 2 pipeline failure, 3 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .cloud_io import ObjectInput, load_scene_input, scene_input_from_dict, write_ply
from .errors import (
    ConfigError,
    LabelMismatchError,
    NamingCollisionError,
    PartSceneError,
    SchemaError,
)
from .pipeline import FORMATS, PipelineConfig, PipelineFailure, evaluate, part_seed, reconstruct
from .primitives import fit_part
from .serialization import annotated_edges_from_dict, graph_from_dict, load_graph, pose_to_dict, serialize_graph
from .synthetic import TEMPLATES, SyntheticSceneSpec, generate_synthetic_scene
from .urdf import export_urdf, link_name, validate_urdf

log = logging.getLogger("partscene")

EXIT_OK, EXIT_VALIDATION, EXIT_PIPELINE, EXIT_INTERNAL = 0, 1, 2, 3
_VALIDATION_ERRORS = (SchemaError, ConfigError, LabelMismatchError, NamingCollisionError,
                      FileNotFoundError, IsADirectoryError)


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("pipeline options")
    g.add_argument("--config", type=Path, help="JSON config file (flags below override it)")
    g.add_argument("--seed", type=_u64, help="master random seed")
    g.add_argument("--theta-a", type=float, help="normal alignment threshold")
    g.add_argument("--theta-d", type=float, help="plane distance threshold in meters")
    g.add_argument("--theta-c", type=float, help="contact overlap ratio threshold")
    g.add_argument("--no-refine", action="store_true", help="skip part and object pose refinement")
    g.add_argument("--contact-snap", action="store_true", help="also snap contact planes after refinement")
    g.add_argument("--out", type=Path, help="output directory")
    g.add_argument("--format", choices=FORMATS, default="all", help="what to write into --out")
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="partscene", description=__doc__.split("\n\n")[0].strip())
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit a primitive to one part cloud")
    p.add_argument("input", type=Path, help="PLY file, PLY directory or scene JSON")
    p.add_argument("--object", help="object label (needed when the input holds several)")
    p.add_argument("--part", help="part label (needed when the object holds several)")

    p = sub.add_parser("infer", parents=[common], help="reconstruct the part tree of one object")
    p.add_argument("input", type=Path)
    p.add_argument("--object", help="object label (needed when the input holds several)")

    p = sub.add_parser("reconstruct", parents=[common], help="reconstruct a full scene")
    p.add_argument("input", type=Path)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic scene with ground truth")
    p.add_argument("--templates", default=",".join(TEMPLATES),
                   help=f"comma separated list from {', '.join(TEMPLATES)}")
    p.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sigma in meters")
    p.add_argument("--dropout", type=float, default=0.0, help="fraction of points removed")
    p.add_argument("--partial-view", action="store_true", help="drop points facing away from the camera")
    p.add_argument("--ply", action="store_true", help="also write one PLY file per part")

    p = sub.add_parser("eval", parents=[common], help="score a reconstruction against ground truth")
    p.add_argument("predicted", type=Path, help="scene.json written by reconstruct")
    p.add_argument("truth", type=Path, help="truth.json written by synth")
    p.add_argument("--input", type=Path, help="input clouds for the single-box baseline")

    p = sub.add_parser("validate", parents=[common], help="check a URDF, scene, input or config file")
    p.add_argument("path", type=Path)
    return parser


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    overrides = {}
    for flag, name in (("seed", "seed"), ("theta_a", "theta_a"), ("theta_d", "theta_d"), ("theta_c", "theta_c")):
        v = getattr(args, flag)
        if v is not None:
            overrides[name] = v
    if args.no_refine:
        overrides["refine"] = False
    if args.contact_snap:
        overrides["contact_snap"] = True
    return replace(config, **overrides) if overrides else config


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def _select_object(objects: Sequence[ObjectInput], label: Optional[str]) -> ObjectInput:
    if label is None:
        if len(objects) != 1:
            raise SchemaError("$.objects", f"input holds {len(objects)} objects; pick one with --object")
        return objects[0]
    for o in objects:
        if o.label == label:
            return o
    raise SchemaError("$.objects", f"no object labelled {label!r}")


def _emit(text: str, out: Optional[Path], name: str) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8")
    print(f"wrote {out / name}")


def cmd_fit(args, config: PipelineConfig) -> int:
    obj = _select_object(load_scene_input(args.input), args.object)
    if args.part is None:
        if len(obj.parts) != 1:
            raise SchemaError("$.parts", f"object {obj.label!r} has {len(obj.parts)} parts; pick one with --part")
        part_in = obj.parts[0]
    else:
        matches = [p for p in obj.parts if p.label == args.part]
        if not matches:
            raise SchemaError("$.parts", f"object {obj.label!r} has no part {args.part!r}")
        part_in = matches[0]
    part = fit_part(part_in.label, part_in.semantic_class, part_in.points, n_samples=config.n_samples,
                    seed=part_seed(config.seed, obj.label, part_in.label), restarts=config.icp_restarts)
    doc = {
        "object": obj.label,
        "part": part.instance_label,
        "class": part.semantic_class,
        "primitive": {"kind": part.model.kind.value, "scale": [float(x) for x in part.model.scale]},
        "pose": pose_to_dict(part.model.pose),
        "planes": len(part.planes),
        "points": int(len(part_in.points)),
    }
    _emit(json.dumps(doc, indent=2) + "\n", args.out, "fit.json")
    if args.out is not None and args.format in ("obj", "all"):
        _emit(part.model.mesh().to_obj(), args.out, f"{link_name(obj.label, part.instance_label)}.obj")
    return EXIT_OK


def _report_result(result, args) -> None:
    for w in result.warnings:
        log.warning(w)
    if args.out is not None:
        for path in result.write(args.out, args.format):
            log.info("wrote %s", path)
        print(f"wrote {args.format} output to {args.out}")
    elif args.format in ("json",):
        sys.stdout.write(result.scene_json)
    else:
        sys.stdout.write(result.urdf)
    n_parts = sum(len(o.part_tree.nodes) for o in result.graph.object_nodes)
    n_joints = sum(len(o.part_tree.edges) for o in result.graph.object_nodes)
    print(f"{len(result.graph.object_nodes)} objects, {n_parts} parts, {n_joints} part joints, "
          f"{len(result.dropped_parts)} dropped parts", file=sys.stderr)


def cmd_infer(args, config: PipelineConfig) -> int:
    obj = _select_object(load_scene_input(args.input), args.object)
    _report_result(reconstruct([obj], config), args)
    return EXIT_OK


def cmd_reconstruct(args, config: PipelineConfig) -> int:
    _report_result(reconstruct(load_scene_input(args.input), config), args)
    return EXIT_OK


def cmd_synth(args, config: PipelineConfig) -> int:
    templates = tuple(t.strip() for t in args.templates.split(",") if t.strip())
    spec = SyntheticSceneSpec(seed=config.seed, templates=templates, noise_sigma=args.noise,
                              dropout=args.dropout, partial_view=args.partial_view)
    scene = generate_synthetic_scene(spec)
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    (out / "input.json").write_text(scene.to_input_json(), encoding="utf-8")
    (out / "truth.json").write_text(serialize_graph(scene.truth, annotated_edges=scene.annotated_edges()),
                                    encoding="utf-8")
    (out / "truth.urdf").write_text(export_urdf(scene.truth), encoding="utf-8")
    if args.ply:
        ply_dir = out / "ply"
        ply_dir.mkdir(exist_ok=True)
        for c in scene.clouds:
            meta = {"object": c.object_label, "object_class": c.object_class, "part": c.part_label,
                    "class": c.part_class}
            (ply_dir / f"{c.object_label}__{c.part_label}.ply").write_text(write_ply(c.points, meta),
                                                                          encoding="utf-8")
    print(f"wrote {len(scene.truth.object_nodes)} objects, {len(scene.clouds)} part clouds to {out}")
    return EXIT_OK


def cmd_eval(args, config: PipelineConfig) -> int:
    predicted = load_graph(args.predicted.read_text(encoding="utf-8"))
    truth_doc = _read_json(args.truth)
    truth = graph_from_dict(truth_doc)
    annotated = annotated_edges_from_dict(truth_doc) if "annotated_edges" in truth_doc else None
    clouds = None
    if args.input is not None:
        clouds = {o.label: np.concatenate([p.points for p in o.parts]) for o in load_scene_input(args.input)}
    report = evaluate(predicted, truth, config, clouds=clouds, annotated=annotated)
    print(report.to_table())
    if args.out is not None:
        _emit(report.to_json(), args.out, "report.json")
    return EXIT_OK


def _read_json(path: Path):
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise SchemaError("$", "empty document")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON ({exc})") from exc


def detect_kind(path: Path) -> str:
    """``urdf``, ``ply``, ``scene``, ``input`` or ``config``."""
    if path.is_dir() or path.suffix.lower() == ".ply":
        return "ply"
    head = path.read_text(encoding="utf-8").lstrip()[:1]
    if path.suffix.lower() in (".urdf", ".xml") or head == "<":
        return "urdf"
    doc = _read_json(path)
    if isinstance(doc, dict) and "objects" in doc:
        return "scene" if "root" in doc else "input"
    return "config"


def cmd_validate(args, config: PipelineConfig) -> int:
    kind = detect_kind(args.path)
    if kind == "urdf":
        report = validate_urdf(args.path.read_text(encoding="utf-8"))
        if not report.ok:
            for e in report.errors:
                print(f"error: {e}", file=sys.stderr)
            return EXIT_VALIDATION
        print(f"ok: urdf with {len(report.links)} links, {len(report.joints)} joints, root {report.root}")
    elif kind == "scene":
        g = graph_from_dict(_read_json(args.path))
        print(f"ok: scene graph with {len(g.object_nodes)} objects")
    elif kind in ("input", "ply"):
        objs = load_scene_input(args.path) if kind == "ply" else scene_input_from_dict(_read_json(args.path))
        print(f"ok: scene input with {len(objs)} objects, {sum(len(o.parts) for o in objs)} parts")
    else:
        PipelineConfig.load(args.path)
        print("ok: pipeline config")
    return EXIT_OK


COMMANDS = {
    "fit": cmd_fit,
    "infer": cmd_infer,
    "reconstruct": cmd_reconstruct,
    "synth": cmd_synth,
    "eval": cmd_eval,
    "validate": cmd_validate,
}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = resolve_config(args)
        return COMMANDS[args.command](args, config)
    except _VALIDATION_ERRORS as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PipelineFailure, PartSceneError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except Exception as exc:  # noqa: BLE001
        if args.verbose:
            traceback.print_exc()
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
