"""Readers and writers: NRRD volumes, Wavefront OBJ meshes, CSV tables, JSON."""

import hashlib
import json
from pathlib import Path

import numpy as np

from .mesh import QuadMesh, TriMesh

_NRRD_TYPES = {
    np.dtype("uint8"): "uint8",
    np.dtype("int8"): "int8",
    np.dtype("int16"): "int16",
    np.dtype("uint16"): "uint16",
    np.dtype("int32"): "int32",
    np.dtype("float32"): "float",
    np.dtype("float64"): "double",
}
_NRRD_DTYPES = {v: k for k, v in _NRRD_TYPES.items()}
_NRRD_DTYPES.update({"uchar": np.dtype("uint8"), "short": np.dtype("int16"),
                     "int": np.dtype("int32"), "float32": np.dtype("float32"),
                     "float64": np.dtype("float64")})


def write_nrrd(path, grid):
    """Write a VoxelGrid as NRRD with raw little-endian encoding.

    The header carries no timestamp so output is byte-reproducible.
    """
    data = np.asarray(grid.data)
    if data.dtype == bool:
        data = data.astype(np.uint8)
    if data.dtype not in _NRRD_TYPES:
        data = data.astype(np.float64)
    sp = grid.spacing
    org = grid.origin
    header = [
        "NRRD0004",
        f"type: {_NRRD_TYPES[data.dtype]}",
        "dimension: 3",
        "space: left-posterior-superior",
        "sizes: " + " ".join(str(int(s)) for s in data.shape),
        "space directions: " + " ".join(
            "(" + ",".join(repr(float(sp[i]) if i == j else 0.0) for j in range(3)) + ")" for i in range(3)
        ),
        "kinds: domain domain domain",
        "endian: little",
        "encoding: raw",
        "space origin: (" + ",".join(repr(float(o)) for o in org) + ")",
    ]
    # NRRD stores the fastest axis first, i.e. Fortran order for [i, j, k]
    payload = np.asfortranarray(data).astype(data.dtype.newbyteorder("<"), copy=False).tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n\n").encode("ascii"))
        fh.write(payload)


def read_nrrd(path):
    """Read a raw-encoded NRRD written by :func:`write_nrrd` (or compatible)."""
    from .volgrid import VoxelGrid

    raw = Path(path).read_bytes()
    sep = raw.find(b"\n\n")
    if not raw.startswith(b"NRRD") or sep < 0:
        raise ValueError(f"{path}: not a NRRD file")
    fields = {}
    for line in raw[:sep].decode("ascii").splitlines()[1:]:
        if line.startswith("#") or ":" not in line:
            continue
        key, val = line.split(":", 1)
        fields[key.strip()] = val.strip()
    if fields.get("encoding", "raw") != "raw":
        raise ValueError("only raw NRRD encoding is supported")
    dtype = _NRRD_DTYPES[fields["type"]]
    if fields.get("endian", "little") == "big":
        dtype = dtype.newbyteorder(">")
    sizes = tuple(int(s) for s in fields["sizes"].split())
    spacing = (1.0, 1.0, 1.0)
    if "space directions" in fields:
        vecs = [
            [float(x) for x in part.strip("() ").split(",")]
            for part in fields["space directions"].split(")")
            if part.strip()
        ]
        spacing = tuple(float(np.linalg.norm(v)) for v in vecs)
    elif "spacings" in fields:
        spacing = tuple(float(s) for s in fields["spacings"].split())
    origin = (0.0, 0.0, 0.0)
    if "space origin" in fields:
        origin = tuple(float(x) for x in fields["space origin"].strip("() ").split(","))
    data = np.frombuffer(raw[sep + 2:], dtype=dtype, count=int(np.prod(sizes)))
    data = data.reshape(sizes, order="F").astype(dtype.newbyteorder("="))
    return VoxelGrid(np.ascontiguousarray(data), spacing=spacing, origin=origin)


def write_obj(path, mesh, precision=6):
    """Write vertices and polygon faces (1-based) to OBJ."""
    fmt = f"v %.{precision}f %.{precision}f %.{precision}f"
    lines = [fmt % tuple(p) for p in mesh.vertices]
    if mesh.faces.size:
        lines += ["f " + " ".join(str(i + 1) for i in face) for face in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def write_points_obj(path, points, precision=6):
    fmt = f"v %.{precision}f %.{precision}f %.{precision}f"
    Path(path).write_text("\n".join(fmt % tuple(p) for p in np.asarray(points)) + "\n")


def read_obj(path):
    """Read an OBJ file into a QuadMesh, TriMesh, or a bare (n, 3) point array.

    Texture and normal indices (``f 1/2/3``) are ignored. Mixed polygon
    arities are rejected.
    """
    verts = []
    faces = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:]])
    verts = np.array(verts, dtype=float).reshape(-1, 3)
    if not faces:
        return verts
    arity = {len(f) for f in faces}
    if arity == {4}:
        return QuadMesh(verts, faces)
    if arity == {3}:
        return TriMesh(verts, faces)
    raise ValueError(f"{path}: mixed or unsupported face arities {sorted(arity)}")


def write_vertex_csv(path, values, header="value"):
    values = np.asarray(values, dtype=float)
    lines = [f"vertex_id,{header}"]
    lines += [f"{i},{_fmt(v)}" for i, v in enumerate(values)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vertex_csv(path):
    rows = Path(path).read_text().splitlines()[1:]
    return np.array([float(r.split(",")[1]) for r in rows if r])


def write_matrix_csv(path, matrix, row_label="row", col_prefix="c"):
    m = np.atleast_2d(np.asarray(matrix, dtype=float))
    head = [row_label] + [f"{col_prefix}{j}" for j in range(m.shape[1])]
    lines = [",".join(head)]
    lines += [",".join([str(i)] + [_fmt(x) for x in row]) for i, row in enumerate(m)]
    Path(path).write_text("\n".join(lines) + "\n")


def read_matrix_csv(path):
    rows = Path(path).read_text().splitlines()[1:]
    return np.array([[float(x) for x in r.split(",")[1:]] for r in rows if r])


def _fmt(x):
    # repr of a python float is shortest round-trip, hence deterministic
    return repr(float(x))


def write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
