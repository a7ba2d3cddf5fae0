"""Readers and writers for OFF, OBJ and PLY triangle meshes.

Polygons with more than three corners are fan-triangulated on input.
Writers emit triangles only, with shortest round-trip float formatting, so
``parse(serialize(m))`` reproduces vertices and triangles bit-for-bit.
"""
import os
import struct

import numpy as np

from .core import Mesh, MeshError

FORMATS = ("off", "obj", "ply")


class MeshParseError(MeshError):
    """Malformed input; the message names the offending line or byte offset."""


def _fan(poly):
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _text_lines(data):
    try:
        text = data.decode("ascii") if isinstance(data, bytes) else data
    except UnicodeDecodeError as exc:
        raise MeshParseError(f"non-ASCII byte at offset {exc.start}") from None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            yield lineno, line


def _build(verts, faces, where):
    v = np.asarray(verts, dtype=np.float64).reshape(-1, 3)
    f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(f) and (f.min() < 0 or f.max() >= len(v)):
        bad = int(np.argmax((f < 0).any(1) | (f >= len(v)).any(1)))
        raise MeshParseError(f"{where}: face {bad} has a vertex index out of range [0, {len(v)})")
    try:
        return Mesh(v, f)
    except MeshError as exc:
        raise MeshParseError(f"{where}: {exc}") from None


def parse_off(data):
    lines = _text_lines(data)
    try:
        lineno, first = next(lines)
    except StopIteration:
        raise MeshParseError("line 1: empty OFF file") from None
    tokens = first.split()
    if tokens[0] != "OFF":
        raise MeshParseError(f"line {lineno}: expected 'OFF' header, got {tokens[0]!r}")
    tokens = tokens[1:]
    if not tokens:
        try:
            lineno, counts = next(lines)
        except StopIteration:
            raise MeshParseError(f"line {lineno}: missing element counts") from None
        tokens = counts.split()
    try:
        nv, nf = int(tokens[0]), int(tokens[1])
    except (IndexError, ValueError):
        raise MeshParseError(f"line {lineno}: malformed counts line") from None
    verts, faces = [], []
    for _ in range(nv):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"line {lineno}: expected {nv} vertices, file ended") from None
        parts = line.split()
        try:
            verts.append([float(x) for x in parts[:3]])
        except ValueError:
            raise MeshParseError(f"line {lineno}: malformed vertex") from None
        if len(parts) < 3:
            raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
    for _ in range(nf):
        try:
            lineno, line = next(lines)
        except StopIteration:
            raise MeshParseError(f"line {lineno}: expected {nf} faces, file ended") from None
        try:
            parts = [int(x) for x in line.split()]
        except ValueError:
            raise MeshParseError(f"line {lineno}: malformed face") from None
        k = parts[0] if parts else 0
        if k < 3 or len(parts) < k + 1:
            raise MeshParseError(f"line {lineno}: face needs at least 3 indices")
        poly = parts[1:k + 1]
        if min(poly) < 0 or max(poly) >= nv:
            raise MeshParseError(f"line {lineno}: vertex index out of range [0, {nv})")
        faces.extend(_fan(poly))
    return _build(verts, faces, "OFF")


_OBJ_IGNORED = {"vt", "vn", "vp", "g", "o", "s", "usemtl", "mtllib"}


def parse_obj(data):
    verts, faces = [], []
    for lineno, line in _text_lines(data):
        parts = line.split()
        tag = parts[0]
        if tag == "v":
            try:
                verts.append([float(x) for x in parts[1:4]])
            except ValueError:
                raise MeshParseError(f"line {lineno}: malformed vertex") from None
            if len(parts) < 4:
                raise MeshParseError(f"line {lineno}: vertex needs 3 coordinates")
        elif tag == "f":
            poly = []
            for tok in parts[1:]:
                try:
                    i = int(tok.split("/", 1)[0])
                except ValueError:
                    raise MeshParseError(f"line {lineno}: malformed face index {tok!r}") from None
                if i > 0:
                    i -= 1
                elif i < 0:
                    i += len(verts)
                else:
                    raise MeshParseError(f"line {lineno}: OBJ indices are 1-based, got 0")
                if not 0 <= i < len(verts):
                    raise MeshParseError(f"line {lineno}: vertex index out of range")
                poly.append(i)
            if len(poly) < 3:
                raise MeshParseError(f"line {lineno}: face needs at least 3 indices")
            faces.extend(_fan(poly))
        elif tag not in _OBJ_IGNORED:
            raise MeshParseError(f"line {lineno}: unsupported OBJ element {tag!r}")
    return _build(verts, faces, "OBJ")


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _ply_header(data):
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("byte 0: not a PLY file (missing 'ply' magic or 'end_header')")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    fmt = None
    elements = []
    offset = 0
    for raw in data[:body_start].split(b"\n"):
        line = raw.decode("ascii", errors="replace").strip()
        parts = line.split()
        where = f"byte {offset}"
        offset += len(raw) + 1
        if not parts or parts[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
            if fmt not in ("ascii", "binary_little_endian"):
                raise MeshParseError(f"{where}: unsupported PLY format {fmt!r}")
        elif parts[0] == "element":
            if len(parts) != 3:
                raise MeshParseError(f"{where}: malformed element line")
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError(f"{where}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5 or parts[2] not in _PLY_TYPES or parts[3] not in _PLY_TYPES:
                    raise MeshParseError(f"{where}: malformed list property")
                elements[-1]["props"].append((parts[4], "list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise MeshParseError(f"{where}: unknown property type in {line!r}")
                elements[-1]["props"].append((parts[2], "scalar", _PLY_TYPES[parts[1]], None))
        else:
            raise MeshParseError(f"{where}: unexpected header keyword {parts[0]!r}")
    if fmt is None:
        raise MeshParseError("byte 0: PLY header has no format line")
    for el in elements:
        if el["name"] not in ("vertex", "face"):
            raise MeshParseError(f"PLY header: unsupported element {el['name']!r}")
    return fmt, elements, body_start


def _read_ply(data):
    """Return (vertex property dict, face list) from PLY bytes."""
    fmt, elements, pos = _ply_header(data)
    vprops, faces = {}, []
    if fmt == "ascii":
        lines = data[pos:].decode("ascii", errors="replace").split("\n")
        toks_iter = ((pos_i, ln.split()) for pos_i, ln in enumerate(lines) if ln.strip())
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                try:
                    li, toks = next(toks_iter)
                except StopIteration:
                    raise MeshParseError(f"PLY body: element {el['name']!r} truncated") from None
                rows.append((li, toks))
            if el["name"] == "vertex":
                names = [p[0] for p in el["props"]]
                if any(p[1] == "list" for p in el["props"]):
                    raise MeshParseError("PLY header: list property on vertex element is unsupported")
                try:
                    arr = np.array([[float(x) for x in toks[:len(names)]] for _, toks in rows]).reshape(-1, len(names))
                except ValueError:
                    raise MeshParseError("PLY body: malformed vertex row") from None
                vprops = {nm: arr[:, i] for i, nm in enumerate(names)}
            else:
                for li, toks in rows:
                    vals = [int(x) for x in toks]
                    k = vals[0]
                    if k < 3 or len(vals) < k + 1:
                        raise MeshParseError(f"PLY body line {li + 1}: face needs at least 3 indices")
                    faces.extend(_fan(vals[1:k + 1]))
        return vprops, faces
    for el in elements:
        if el["name"] == "vertex":
            if any(p[1] == "list" for p in el["props"]):
                raise MeshParseError("PLY header: list property on vertex element is unsupported")
            dt = np.dtype([(p[0], "<" + p[2]) for p in el["props"]])
            need = dt.itemsize * el["count"]
            if pos + need > len(data):
                raise MeshParseError(f"byte {pos}: vertex block truncated")
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
            vprops = {nm: arr[nm].astype(np.float64) for nm in dt.names}
            pos += need
        else:
            if len(el["props"]) != 1 or el["props"][0][1] != "list":
                raise MeshParseError("PLY header: face element must hold a single list property")
            _, _, ctype, itype = el["props"][0]
            cdt, idt = np.dtype("<" + ctype), np.dtype("<" + itype)
            for _ in range(el["count"]):
                if pos + cdt.itemsize > len(data):
                    raise MeshParseError(f"byte {pos}: face block truncated")
                k = int(np.frombuffer(data, cdt, 1, pos)[0])
                pos += cdt.itemsize
                if k < 3:
                    raise MeshParseError(f"byte {pos}: face needs at least 3 indices")
                if pos + k * idt.itemsize > len(data):
                    raise MeshParseError(f"byte {pos}: face block truncated")
                faces.extend(_fan(np.frombuffer(data, idt, k, pos).astype(np.int64).tolist()))
                pos += k * idt.itemsize
    return vprops, faces


def parse_ply(data):
    return read_ply_with_colors(data)[0]


def read_ply_with_colors(data):
    """Parse PLY bytes; also return (n, 3) uint8 colors when present."""
    vprops, faces = _read_ply(bytes(data))
    if not all(k in vprops for k in "xyz"):
        raise MeshParseError("PLY header: vertex element lacks x, y, z")
    verts = np.column_stack([vprops["x"], vprops["y"], vprops["z"]])
    colors = None
    if all(k in vprops for k in ("red", "green", "blue")):
        colors = np.column_stack([vprops["red"], vprops["green"], vprops["blue"]]).astype(np.uint8)
    return _build(verts, faces, "PLY"), colors


def parse_mesh(data, format):
    """Parse raw bytes in one of the supported formats ('off', 'obj', 'ply')."""
    fmt = format.lower().lstrip(".")
    if fmt == "off":
        return parse_off(data)
    if fmt == "obj":
        return parse_obj(data)
    if fmt == "ply":
        return parse_ply(data)
    raise ValueError(f"unsupported mesh format {format!r}; expected one of {FORMATS}")


def _f(x):
    return repr(float(x))


def serialize_mesh(mesh, format, binary=False, colors=None):
    fmt = format.lower().lstrip(".")
    v, t = mesh.vertices, mesh.triangles
    if fmt == "off":
        out = [f"OFF\n{len(v)} {len(t)} 0\n"]
        out += [f"{_f(a)} {_f(b)} {_f(c)}\n" for a, b, c in v]
        out += [f"3 {a} {b} {c}\n" for a, b, c in t]
        return "".join(out).encode("ascii")
    if fmt == "obj":
        out = [f"v {_f(a)} {_f(b)} {_f(c)}\n" for a, b, c in v]
        out += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in t]
        return "".join(out).encode("ascii")
    if fmt != "ply":
        raise ValueError(f"unsupported mesh format {format!r}")
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(v)}", "property double x", "property double y", "property double z"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8).reshape(len(v), 3)
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header += [f"element face {len(t)}", "property list uchar int vertex_indices", "end_header"]
    head = ("\n".join(header) + "\n").encode("ascii")
    if binary:
        fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
        if colors is not None:
            fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        vrec = np.zeros(len(v), dtype=fields)
        vrec["x"], vrec["y"], vrec["z"] = v[:, 0], v[:, 1], v[:, 2]
        if colors is not None:
            vrec["red"], vrec["green"], vrec["blue"] = colors[:, 0], colors[:, 1], colors[:, 2]
        frec = np.zeros(len(t), dtype=[("n", "u1"), ("i", "<i4", (3,))])
        frec["n"] = 3
        frec["i"] = t
        return head + vrec.tobytes() + frec.tobytes()
    rows = []
    for i, (a, b, c) in enumerate(v):
        row = f"{_f(a)} {_f(b)} {_f(c)}"
        if colors is not None:
            row += " %d %d %d" % tuple(colors[i])
        rows.append(row + "\n")
    rows += [f"3 {a} {b} {c}\n" for a, b, c in t]
    return head + "".join(rows).encode("ascii")


def load_mesh(path):
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    if ext not in FORMATS:
        raise ValueError(f"cannot infer mesh format from {path!r}")
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        return parse_mesh(data, ext)
    except MeshParseError as exc:
        raise MeshParseError(f"{path}: {exc}") from None


def save_mesh(path, mesh, binary=False, colors=None):
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    with open(path, "wb") as fh:
        fh.write(serialize_mesh(mesh, ext, binary=binary, colors=colors))


def read_labels(path):
    """One 0-based vertex index per line."""
    with open(path) as fh:
        return np.array([int(line) for line in fh if line.strip()], dtype=np.int64)


def write_labels(path, idx):
    with open(path, "w") as fh:
        fh.writelines(f"{int(i)}\n" for i in idx)
