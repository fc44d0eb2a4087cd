"""File formats: OBJ and PLY meshes / point clouds, and the text model file."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .decoder import LAYER_ORDER, DecoderWeights, param_count
from .geom import Frame, TriMesh
from .model import RAW_WIDTH, LdifModel

MODEL_MAGIC = "LDIF"
MODEL_VERSION = 1


class FormatError(ValueError):
    pass


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.ravel(values))


# -- model file -------------------------------------------------------------


def dumps_model(model: LdifModel) -> str:
    n, m = model.n_elements, model.latent_dim
    w = model.decoder
    lines = [f"{MODEL_MAGIC} {MODEL_VERSION} {n} {m} {model.sym_count} {model.sym_axis}"]
    lines += [_fmt(row) for row in model.theta]
    lines += [_fmt(row) for row in model.latents]
    lines.append(f"DECODER {w.hidden} {w.latent_dim}")
    lines += [_fmt(np.concatenate([wt.ravel(), b.ravel()])) for _, wt, b in w.layers()]
    if model.frame is not None:
        lines.append("FRAME " + _fmt([model.frame.scale, *model.frame.center]))
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> LdifModel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    try:
        head = lines[0].split()
        if head[0] != MODEL_MAGIC:
            raise FormatError("missing LDIF header")
        if int(head[1]) != MODEL_VERSION:
            raise FormatError(f"unsupported model version {head[1]}")
        n, m, sym_count, sym_axis = map(int, head[2:6])
        pos = 1
        theta = np.array([[float(v) for v in lines[pos + i].split()] for i in range(n)])
        pos += n
        latents = np.array([[float(v) for v in lines[pos + i].split()] for i in range(n)]).reshape(n, m)
        pos += n
        dec_head = lines[pos].split()
        if dec_head[0] != "DECODER":
            raise FormatError("missing DECODER block")
        h, dm = int(dec_head[1]), int(dec_head[2])
        if dm != m:
            raise FormatError(f"decoder latent width {dm} does not match model latent width {m}")
        pos += 1
        flat = np.concatenate([np.array(lines[pos + i].split(), dtype=np.float64) for i in range(len(LAYER_ORDER))])
        pos += len(LAYER_ORDER)
        if flat.size != param_count(m, h):
            raise FormatError("decoder block has the wrong number of weights")
        frame = None
        if pos < len(lines):
            tail = lines[pos].split()
            if tail[0] != "FRAME" or len(tail) != 5:
                raise FormatError(f"unexpected trailing line: {lines[pos][:40]!r}")
            frame = Frame(float(tail[1]), np.array(tail[2:5], dtype=np.float64))
            pos += 1
        if pos != len(lines):
            raise FormatError("trailing content after model")
        if theta.shape != (n, RAW_WIDTH):
            raise FormatError("element rows must hold 10 values")
        return LdifModel(theta, latents, DecoderWeights.unflatten(flat, m, h), sym_count, sym_axis, frame)
    except FormatError:
        raise
    except (IndexError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc


def save_model(model: LdifModel, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> LdifModel:
    return loads_model(Path(path).read_text())


# -- OBJ --------------------------------------------------------------------


def read_obj(path) -> TriMesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for tok in parts[1:]:
                i = int(tok.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    return TriMesh(np.array(verts).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {_fmt(v)}" for v in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


# -- PLY --------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply_header(fh):
    if fh.readline().strip() != b"ply":
        raise FormatError("not a PLY file")
    fmt = None
    elements = []
    while True:
        raw = fh.readline()
        if not raw:
            raise FormatError("unterminated PLY header")
        parts = raw.decode("ascii").split()
        if not parts or parts[0] in ("comment", "obj_info"):
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if parts[1] == "list":
                elements[-1][2].append((parts[4], ("list", _PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])))
            else:
                elements[-1][2].append((parts[2], _PLY_TYPES[parts[1]]))
        elif parts[0] == "end_header":
            return fmt, elements


def read_ply(path, with_properties: bool = False):
    """Read vertices (x, y, z) and faces (vertex_indices, fan-triangulated).

    With ``with_properties`` also returns {element: {property: array}}.
    """
    with open(path, "rb") as fh:
        fmt, elements = _parse_ply_header(fh)
        if fmt == "ascii":
            tokens = fh.read().split()
            pos = 0
        else:
            endian = "<" if fmt == "binary_little_endian" else ">"
            buf = fh.read()
            off = 0
        data: dict[str, dict[str, object]] = {}
        for name, count, props in elements:
            cols: dict[str, list] = {p[0]: [] for p in props}
            has_list = any(isinstance(p[1], tuple) for p in props)
            if fmt != "ascii" and not has_list:
                dt = np.dtype([(p[0], endian + p[1]) for p in props])
                arr = np.frombuffer(buf, dtype=dt, count=count, offset=off)
                off += dt.itemsize * count
                data[name] = {p[0]: arr[p[0]].astype(np.float64 if "f" in p[1] else np.int64) for p in props}
                continue
            for _ in range(count):
                for pname, ptype in props:
                    if isinstance(ptype, tuple):
                        _, ctype, itype = ptype
                        if fmt == "ascii":
                            k = int(tokens[pos]); pos += 1
                            cols[pname].append([int(t) for t in tokens[pos:pos + k]]); pos += k
                        else:
                            cdt = np.dtype(endian + ctype)
                            k = int(np.frombuffer(buf, cdt, 1, off)[0]); off += cdt.itemsize
                            idt = np.dtype(endian + itype)
                            cols[pname].append(np.frombuffer(buf, idt, k, off).astype(np.int64).tolist())
                            off += idt.itemsize * k
                    else:
                        if fmt == "ascii":
                            cols[pname].append(float(tokens[pos])); pos += 1
                        else:
                            dt = np.dtype(endian + ptype)
                            cols[pname].append(np.frombuffer(buf, dt, 1, off)[0]); off += dt.itemsize
            data[name] = {k: (v if any(isinstance(p[1], tuple) and p[0] == k for p in props) else np.array(v, dtype=np.float64))
                          for k, v in cols.items()}
    vert = data.get("vertex", {})
    if not all(k in vert for k in "xyz"):
        raise FormatError("PLY vertex element lacks x, y, z")
    vertices = np.column_stack([vert["x"], vert["y"], vert["z"]]).astype(np.float64)
    tris = []
    faces = data.get("face", {})
    key = "vertex_indices" if "vertex_indices" in faces else ("vertex_index" if "vertex_index" in faces else None)
    if key is not None:
        for poly in faces[key]:
            for k in range(1, len(poly) - 1):
                tris.append((poly[0], poly[k], poly[k + 1]))
    mesh = TriMesh(vertices, np.array(tris, dtype=np.int64).reshape(-1, 3))
    return (mesh, data) if with_properties else mesh


def write_ply(path, vertices, triangles=None, normals=None, face_tags=None, binary: bool = True) -> None:
    """Write a PLY mesh or point cloud. ``face_tags`` adds an integer ``element`` face property."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    has_faces = triangles is not None
    triangles = np.zeros((0, 3), dtype=np.int64) if triangles is None else np.asarray(triangles).reshape(-1, 3)
    header = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
              f"element vertex {len(vertices)}",
              "property double x", "property double y", "property double z"]
    if normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
    if has_faces:
        header += [f"element face {len(triangles)}", "property list uchar int vertex_indices"]
        if face_tags is not None:
            header.append("property int element")
    header.append("end_header")
    vcols = [vertices] if normals is None else [vertices, np.asarray(normals, dtype=np.float64).reshape(-1, 3)]
    vdata = np.hstack(vcols)
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(vdata.astype("<f8").tobytes())
            if not has_faces:
                return
            fields = [("n", "u1"), ("i", "<i4", (3,))]
            if face_tags is not None:
                fields.append(("tag", "<i4"))
            rec = np.zeros(len(triangles), dtype=fields)
            rec["n"] = 3
            rec["i"] = triangles
            if face_tags is not None:
                rec["tag"] = face_tags
            fh.write(rec.tobytes())
        else:
            lines = [_fmt(row) for row in vdata]
            for k, (a, b, c) in enumerate(triangles):
                tail = f" {int(face_tags[k])}" if face_tags is not None else ""
                lines.append(f"3 {a} {b} {c}{tail}")
            fh.write(("\n".join(lines) + "\n").encode("ascii"))


def read_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        return read_obj(path)
    if suffix == ".ply":
        return read_ply(path)
    raise FormatError(f"unsupported mesh format {suffix!r} (expected .obj or .ply)")


def write_mesh(mesh: TriMesh, path, face_tags=None) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".obj":
        write_obj(mesh, path)
    elif suffix == ".ply":
        write_ply(path, mesh.vertices, mesh.triangles, face_tags=face_tags)
    else:
        raise FormatError(f"unsupported mesh format {suffix!r} (expected .obj or .ply)")
