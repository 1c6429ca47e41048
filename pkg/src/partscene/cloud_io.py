"""
Reading segmented part clouds: ASCII PLY files and the scene JSON input
document with base64-embedded clouds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import SchemaError
from .serialization import SCHEMA_VERSION, decode_cloud, encode_cloud


@dataclass(frozen=True, eq=False)
class PartInput:
    label: str
    semantic_class: str
    points: NDArray[np.float64]


@dataclass(frozen=True, eq=False)
class ObjectInput:
    label: str
    semantic_class: str
    parts: Tuple[PartInput, ...]


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------


def write_ply(points: ArrayLike, comments: Optional[Mapping[str, str]] = None) -> str:
    """ASCII PLY with x y z vertex properties; ``comments`` become ``comment key value`` lines."""
    p = np.asarray(points, dtype=float).reshape(-1, 3)
    lines = ["ply", "format ascii 1.0"]
    for k, v in (comments or {}).items():
        lines.append(f"comment {k} {v}")
    lines += [f"element vertex {len(p)}", "property float x", "property float y", "property float z", "end_header"]
    lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in p]
    return "\n".join(lines) + "\n"


def read_ply(text: str, path: str = "ply") -> Tuple[NDArray[np.float64], Dict[str, str]]:
    """Points and ``comment key value`` metadata of an ASCII PLY document."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise SchemaError(path, "missing 'ply' magic line")
    comments: Dict[str, str] = {}
    n_vertex, props, in_vertex, fmt = None, [], False, None
    i = 1
    while i < len(lines):
        tok = lines[i].split()
        i += 1
        if not tok:
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1] if len(tok) > 1 else None
        elif tok[0] == "comment" and len(tok) >= 2:
            comments[tok[1]] = " ".join(tok[2:])
        elif tok[0] == "element":
            in_vertex = len(tok) == 3 and tok[1] == "vertex"
            if in_vertex:
                n_vertex = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
    else:
        raise SchemaError(path, "missing end_header")
    if fmt != "ascii":
        raise SchemaError(f"{path}.format", f"only ascii PLY is supported, got {fmt!r}")
    if n_vertex is None:
        raise SchemaError(f"{path}.element vertex", "missing vertex element")
    try:
        cols = [props.index(a) for a in ("x", "y", "z")]
    except ValueError:
        raise SchemaError(f"{path}.property", "vertex element needs x, y and z properties") from None
    body = [l.split() for l in lines[i:i + n_vertex]]
    if len(body) < n_vertex:
        raise SchemaError(path, f"expected {n_vertex} vertices, found {len(body)}")
    try:
        pts = np.array([[float(row[c]) for c in cols] for row in body], dtype=float).reshape(-1, 3)
    except (ValueError, IndexError) as exc:
        raise SchemaError(path, f"malformed vertex line ({exc})") from exc
    return pts, comments


def load_ply_file(path: Union[str, Path]) -> Tuple[NDArray[np.float64], Dict[str, str]]:
    p = Path(path)
    return read_ply(p.read_text(encoding="utf-8"), str(p))


# ---------------------------------------------------------------------------
# scene input
# ---------------------------------------------------------------------------


def scene_input_from_dict(doc) -> List[ObjectInput]:
    if not isinstance(doc, dict):
        raise SchemaError("$", "expected a JSON object")
    if "schema_version" not in doc:
        raise SchemaError("$.schema_version", "missing required field")
    if doc["schema_version"] != SCHEMA_VERSION:
        raise SchemaError("$.schema_version", f"unsupported version {doc['schema_version']!r}")
    if "objects" not in doc:
        raise SchemaError("$.objects", "missing required field")
    objs = doc["objects"]
    if not isinstance(objs, list) or not objs:
        raise SchemaError("$.objects", "expected a nonempty list of objects")
    out, seen = [], set()
    for i, od in enumerate(objs):
        op = f"$.objects[{i}]"
        if not isinstance(od, dict):
            raise SchemaError(op, "expected an object")
        for key in ("label", "class", "parts"):
            if key not in od:
                raise SchemaError(f"{op}.{key}", "missing required field")
        if od["label"] in seen:
            raise SchemaError(f"{op}.label", f"duplicate object label {od['label']!r}")
        seen.add(od["label"])
        if not isinstance(od["parts"], list) or not od["parts"]:
            raise SchemaError(f"{op}.parts", "expected a nonempty list of parts")
        parts, plabels = [], set()
        for k, pd in enumerate(od["parts"]):
            pp = f"{op}.parts[{k}]"
            if not isinstance(pd, dict):
                raise SchemaError(pp, "expected an object")
            for key in ("label", "class", "cloud"):
                if key not in pd:
                    raise SchemaError(f"{pp}.{key}", "missing required field")
            if pd["label"] in plabels:
                raise SchemaError(f"{pp}.label", f"duplicate part label {pd['label']!r}")
            plabels.add(pd["label"])
            if not isinstance(pd["cloud"], str):
                raise SchemaError(f"{pp}.cloud", "expected a base64 string")
            pts = decode_cloud(pd["cloud"], f"{pp}.cloud")
            if not np.all(np.isfinite(pts)):
                raise SchemaError(f"{pp}.cloud", "cloud contains non-finite coordinates")
            parts.append(PartInput(str(pd["label"]), str(pd["class"]), pts))
        out.append(ObjectInput(str(od["label"]), str(od["class"]), tuple(sorted(parts, key=lambda p: p.label))))
    return sorted(out, key=lambda o: o.label)


def scene_input_to_dict(objects: Sequence[ObjectInput]) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "objects": [
            {"label": o.label, "class": o.semantic_class,
             "parts": [{"label": p.label, "class": p.semantic_class, "cloud": encode_cloud(p.points)} for p in o.parts]}
            for o in objects
        ],
    }


def load_scene_input(path: Union[str, Path]) -> List[ObjectInput]:
    """Scene JSON document, a directory of part PLY files, or a single PLY file.

    PLY files carry their labels in header comments: ``object``,
    ``object_class``, ``part`` and ``class``.
    """
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.ply"))
        if not files:
            raise SchemaError(str(p), "directory holds no .ply files")
        return _from_plys(files)
    if p.suffix.lower() == ".ply":
        return _from_plys([p])
    text = p.read_text(encoding="utf-8")
    if not text.strip():
        raise SchemaError("$", "empty document; expected schema_version and objects")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError("$", f"invalid JSON ({exc})") from exc
    return scene_input_from_dict(doc)


def _from_plys(files: Sequence[Path]) -> List[ObjectInput]:
    groups: Dict[str, Tuple[str, List[PartInput]]] = {}
    for f in files:
        pts, meta = load_ply_file(f)
        obj = meta.get("object", "object")
        part = meta.get("part", f.stem)
        cls = meta.get("class", part)
        ocls, parts = groups.setdefault(obj, (meta.get("object_class", obj), []))
        if any(x.label == part for x in parts):
            raise SchemaError(str(f), f"duplicate part label {part!r} in object {obj!r}")
        parts.append(PartInput(part, cls, pts))
    return [ObjectInput(k, groups[k][0], tuple(sorted(groups[k][1], key=lambda p: p.label))) for k in sorted(groups)]
