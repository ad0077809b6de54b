"""PLY point clouds, the SFL1 flow container and scene directories."""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .core import FlowField, PointCloud, PseudoLabelSet

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}

FLOW_MAGIC = b"SFL1"
_FLOW_HEADER = struct.Struct("<4sIB")


class PlyError(ValueError):
    pass


class FlowFormatError(ValueError):
    pass


def _parse_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise PlyError("malformed header: missing 'ply' magic")
    fmt = None
    elements = []
    while True:
        line = fh.readline()
        if not line:
            raise PlyError("malformed header: missing end_header")
        words = line.decode("ascii", errors="replace").split()
        if not words or words[0] in ("comment", "obj_info"):
            continue
        if words[0] == "end_header":
            break
        if words[0] == "format":
            if len(words) < 2:
                raise PlyError("malformed header: bad format line")
            fmt = words[1]
        elif words[0] == "element":
            if len(words) != 3:
                raise PlyError("malformed header: bad element line")
            elements.append((words[1], int(words[2]), []))
        elif words[0] == "property":
            if not elements:
                raise PlyError("malformed header: property before element")
            if words[1] == "list":
                if len(words) != 5:
                    raise PlyError("malformed header: bad list property")
                elements[-1][2].append((words[4], ("list", words[2], words[3])))
            else:
                if len(words) != 3 or words[1] not in _PLY_TYPES:
                    raise PlyError(f"malformed header: bad property line {line!r}")
                elements[-1][2].append((words[2], _PLY_TYPES[words[1]]))
        else:
            raise PlyError(f"malformed header: unexpected keyword {words[0]!r}")
    if fmt == "binary_big_endian":
        raise PlyError("unsupported format binary_big_endian")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"malformed header: unknown format {fmt!r}")
    return fmt, elements


def _columns(values: dict, count: int) -> PointCloud:
    try:
        pos = np.column_stack([values[k] for k in ("x", "y", "z")]).astype(np.float64)
    except KeyError:
        raise PlyError("vertex element lacks x, y, z") from None
    colors = None
    if all(k in values for k in ("red", "green", "blue")):
        raw = [values[k] for k in ("red", "green", "blue")]
        if np.issubdtype(raw[0].dtype, np.integer):
            colors = np.column_stack(raw).astype(np.float64) / 255.0
        else:
            colors = np.column_stack(raw).astype(np.float64)
    normals = valid = None
    if all(k in values for k in ("nx", "ny", "nz")):
        normals = np.column_stack([values[k] for k in ("nx", "ny", "nz")]).astype(np.float64)
        valid = np.linalg.norm(normals, axis=1) > 0
    return PointCloud(pos.reshape(count, 3), colors, normals, valid)


def read_cloud(path: Union[str, os.PathLike]) -> PointCloud:
    """Load the vertex element of an ascii or binary little-endian PLY file.

    Recognized properties are ``x y z``, ``red green blue`` (8-bit values are
    scaled to [0, 1], floating ones taken as is) and ``nx ny nz``; others are
    skipped. Zero-length normals are flagged invalid.
    """
    with open(path, "rb") as fh:
        fmt, elements = _parse_header(fh)
        body = fh.read()
    if fmt == "ascii":
        return _read_ascii(body, elements)
    return _read_binary(body, elements)


def _read_ascii(body: bytes, elements) -> PointCloud:
    lines = [ln for ln in body.decode("ascii", errors="replace").splitlines() if ln.strip()]
    cursor = 0
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        if any(isinstance(t, tuple) for _, t in props):
            raise PlyError("list properties on vertex are not supported")
        rows = lines[cursor : cursor + count]
        if len(rows) != count:
            raise PlyError("element count mismatch")
        try:
            table = np.array([r.split() for r in rows], dtype=np.float64).reshape(count, len(props))
        except ValueError:
            raise PlyError("element count mismatch") from None
        values = {}
        for col, (pname, dtype) in enumerate(props):
            values[pname] = table[:, col].astype(dtype)
        return _columns(values, count)
    raise PlyError("no vertex element")


def _read_binary(body: bytes, elements) -> PointCloud:
    offset = 0
    for name, count, props in elements:
        if any(isinstance(t, tuple) for _, t in props):
            if name == "vertex":
                raise PlyError("list properties on vertex are not supported")
            raise PlyError(f"cannot skip list element {name!r} before vertex data")
        dtype = np.dtype([(pname, "<" + t) for pname, t in props])
        size = dtype.itemsize * count
        if name != "vertex":
            offset += size
            continue
        if len(body) < offset + size:
            raise PlyError("element count mismatch")
        rec = np.frombuffer(body, dtype=dtype, count=count, offset=offset)
        return _columns({pname: rec[pname] for pname, _ in props}, count)
    raise PlyError("no vertex element")


def _colors_are_8bit(colors: np.ndarray) -> bool:
    scaled = np.round(colors * 255.0)
    return bool(np.all(scaled / 255.0 == colors))


def write_cloud(path, cloud: PointCloud, binary: bool = True) -> None:
    """Write a PLY file that :func:`read_cloud` reproduces bit-exactly.

    Positions and normals are stored as doubles; colors as ``uchar`` when
    every channel is a multiple of 1/255 and as doubles otherwise.
    """
    props = [("x", "f8"), ("y", "f8"), ("z", "f8")]
    columns = [cloud.positions]
    if cloud.has_colors:
        if _colors_are_8bit(cloud.colors):
            props += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
            columns.append(np.round(cloud.colors * 255.0).astype(np.uint8))
        else:
            props += [("red", "f8"), ("green", "f8"), ("blue", "f8")]
            columns.append(cloud.colors)
    if cloud.has_normals:
        props += [("nx", "f8"), ("ny", "f8"), ("nz", "f8")]
        normals = np.where(cloud.normal_valid[:, None], cloud.normals, 0.0)
        columns.append(normals)
    names = {"f8": "double", "u1": "uchar"}
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(cloud)}"]
    header += [f"property {names[t]} {p}" for p, t in props]
    header.append("end_header")
    rec = np.empty(len(cloud), dtype=[(p, "<" + t) for p, t in props])
    col = 0
    for block in columns:
        for j in range(3):
            rec[props[col][0]] = block[:, j]
            col += 1
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(rec.tobytes())
        else:
            for row in rec:
                fh.write((" ".join(
                    str(int(v)) if t == "u1" else repr(float(v))
                    for v, (_, t) in zip(row, props)
                ) + "\n").encode("ascii"))


def write_flow(path, flow: Union[FlowField, PseudoLabelSet]) -> None:
    """Write the SFL1 container.

    Layout (little-endian): ``b"SFL1"``, u32 count, u8 has-validity flag,
    ``count * 3`` float32 components, then one validity byte per point when
    flagged. Vectors are rounded to float32.
    """
    if isinstance(flow, PseudoLabelSet):
        vectors, valid = flow.labels, flow.valid
    else:
        vectors, valid = flow.vectors, None
    vectors = np.ascontiguousarray(vectors, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_FLOW_HEADER.pack(FLOW_MAGIC, len(vectors), 0 if valid is None else 1))
        fh.write(vectors.tobytes())
        if valid is not None:
            fh.write(np.asarray(valid, dtype=np.uint8).tobytes())


def read_flow(path) -> Union[FlowField, PseudoLabelSet]:
    """Read an SFL1 file: a FlowField, or a PseudoLabelSet if it carries validity."""
    data = Path(path).read_bytes()
    if len(data) < _FLOW_HEADER.size:
        raise FlowFormatError("count mismatch: file shorter than header")
    magic, count, flag = _FLOW_HEADER.unpack_from(data)
    if magic != FLOW_MAGIC:
        raise FlowFormatError("bad magic")
    if flag not in (0, 1):
        raise FlowFormatError(f"bad validity flag {flag}")
    expected = _FLOW_HEADER.size + 12 * count + (count if flag else 0)
    if len(data) != expected:
        raise FlowFormatError(f"count mismatch: expected {expected} bytes, found {len(data)}")
    vectors = np.frombuffer(data, dtype="<f4", count=3 * count, offset=_FLOW_HEADER.size)
    vectors = vectors.reshape(count, 3).astype(np.float64)
    if not flag:
        return FlowField(vectors)
    valid = np.frombuffer(data, dtype=np.uint8, count=count, offset=_FLOW_HEADER.size + 12 * count)
    if np.any(valid > 1):
        raise FlowFormatError("validity bytes must be 0 or 1")
    return PseudoLabelSet(vectors, valid.astype(bool))


def flow_vectors(obj) -> np.ndarray:
    return obj.labels if isinstance(obj, PseudoLabelSet) else obj.vectors


SCENE_FILES = {"P": "p.ply", "Q": "q.ply", "gt": "gt.sfl", "pred": "pred.sfl"}


def write_scene(directory, scene, binary: bool = True) -> Path:
    """Store a synthetic scene as ``p.ply``, ``q.ply`` and ``gt.sfl``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    write_cloud(out / SCENE_FILES["P"], scene.P, binary)
    write_cloud(out / SCENE_FILES["Q"], scene.Q, binary)
    write_flow(out / SCENE_FILES["gt"], scene.gt_flow)
    if scene.spec is not None:
        from .synth import format_scene_spec

        (out / "scene.cfg").write_text(format_scene_spec(scene.spec), encoding="utf-8")
    return out


def read_scene_pair(directory):
    """Load ``(P, Q, gt, pred)`` from a scene directory; absent flows are None.

    Raises ``ValueError`` when a flow file's count differs from its cloud.
    """
    base = Path(directory)
    P = read_cloud(base / SCENE_FILES["P"])
    Q = read_cloud(base / SCENE_FILES["Q"])
    flows = []
    for key in ("gt", "pred"):
        f = base / SCENE_FILES[key]
        if f.exists():
            flow = read_flow(f)
            if len(flow) != len(P):
                raise ValueError(f"{f} holds {len(flow)} vectors but p.ply has {len(P)} points")
            flows.append(FlowField(flow_vectors(flow)))
        else:
            flows.append(None)
    return P, Q, flows[0], flows[1]


def scene_dirs(root) -> list:
    """Scene directories below ``root`` (or ``root`` itself), sorted by name."""
    root = Path(root)
    if (root / SCENE_FILES["P"]).exists():
        return [root]
    return sorted(d for d in root.iterdir() if (d / SCENE_FILES["P"]).exists())
