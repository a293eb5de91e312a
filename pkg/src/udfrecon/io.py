"""Readers and writers: PLY / CSV point clouds, PLY / OBJ meshes, PGM rasters, poses."""

from __future__ import annotations

import csv
import io as _io
from pathlib import Path

import numpy as np

from .errors import ReconError
from .mesh import TriangleMesh
from .pointcloud import FeaturedPointCloud

CLOUD_FIELDS = ("x", "y", "z", "intensity", "wx", "wy", "wz")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class FormatError(ReconError):
    pass


def _comment_lines(comments) -> list[str]:
    return [f"comment {c}" for c in (comments or [])]


# ---------------------------------------------------------------- PLY

def _parse_ply_header(fh):
    first = fh.readline()
    if first.strip() != b"ply":
        raise FormatError("not a PLY file")
    fmt = None
    elements = []
    comments = []
    while True:
        line = fh.readline()
        if not line:
            raise FormatError("truncated PLY header")
        tok = line.decode("ascii", "replace").split()
        if not tok:
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "comment":
            comments.append(" ".join(tok[1:]))
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]]))
        elif tok[0] == "end_header":
            break
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, comments


def read_ply(path) -> tuple[dict, list[str]]:
    """Return ({element_name: {prop: array}}, comments). List props come back as lists."""
    data = Path(path).read_bytes()
    fh = _io.BytesIO(data)
    fmt, elements, comments = _parse_ply_header(fh)
    out = {}
    if fmt == "ascii":
        tokens = fh.read().split()
        pos = 0
        for el in elements:
            cols = {p[0]: [] for p in el["props"]}
            for _ in range(el["count"]):
                for p in el["props"]:
                    if p[1] == "list":
                        cnt = int(tokens[pos])
                        pos += 1
                        cols[p[0]].append([int(t) for t in tokens[pos:pos + cnt]])
                        pos += cnt
                    else:
                        cols[p[0]].append(float(tokens[pos]))
                        pos += 1
            out[el["name"]] = {
                p[0]: (cols[p[0]] if p[1] == "list" else np.asarray(cols[p[0]], dtype=p[1]))
                for p in el["props"]
            }
        return out, comments
    buf = fh.read()
    pos = 0
    for el in elements:
        if all(p[1] != "list" for p in el["props"]):
            dt = np.dtype([(p[0], "<" + p[1]) for p in el["props"]])
            n = el["count"] * dt.itemsize
            if pos + n > len(buf):
                raise FormatError("truncated PLY body")
            arr = np.frombuffer(buf[pos:pos + n], dtype=dt)
            pos += n
            out[el["name"]] = {p[0]: arr[p[0]].copy() for p in el["props"]}
            continue
        cols = {p[0]: [] for p in el["props"]}
        for _ in range(el["count"]):
            for p in el["props"]:
                if p[1] == "list":
                    ct, it = np.dtype("<" + p[2]), np.dtype("<" + p[3])
                    cnt = int(np.frombuffer(buf, ct, 1, pos)[0])
                    pos += ct.itemsize
                    cols[p[0]].append(np.frombuffer(buf, it, cnt, pos).tolist())
                    pos += cnt * it.itemsize
                else:
                    t = np.dtype("<" + p[1])
                    cols[p[0]].append(np.frombuffer(buf, t, 1, pos)[0])
                    pos += t.itemsize
        out[el["name"]] = {
            p[0]: (cols[p[0]] if p[1] == "list" else np.asarray(cols[p[0]], dtype=p[1]))
            for p in el["props"]
        }
    return out, comments


def write_cloud_ply(path, cloud: FeaturedPointCloud, binary: bool = True, comments=None) -> None:
    n = len(cloud)
    header = ["ply", "format binary_little_endian 1.0" if binary else "format ascii 1.0"]
    header += _comment_lines(comments)
    header.append(f"element vertex {n}")
    header += [f"property float {f}" for f in CLOUD_FIELDS]
    header.append("end_header")
    arr = np.empty((n, 7), dtype="<f4")
    arr[:, :3] = cloud.positions
    arr[:, 3] = cloud.intensity
    arr[:, 4:] = cloud.wave_dir
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fh.write(arr.tobytes())
        else:
            for row in arr:
                fh.write((" ".join(repr(float(x)) for x in row) + "\n").encode("ascii"))


def read_cloud_ply(path) -> FeaturedPointCloud:
    elements, _ = read_ply(path)
    if "vertex" not in elements:
        raise FormatError("PLY has no vertex element")
    v = elements["vertex"]
    pos = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    if all(k in v for k in ("intensity", "wx", "wy", "wz")):
        wd = np.stack([v["wx"], v["wy"], v["wz"]], axis=1).astype(np.float64)
        return FeaturedPointCloud(pos, v["intensity"].astype(np.float64), wd, True)
    return FeaturedPointCloud.from_positions(pos)


def write_cloud_csv(path, cloud: FeaturedPointCloud, comments=None) -> None:
    with open(path, "w", newline="") as fh:
        for c in comments or []:
            fh.write(f"# {c}\n")
        w = csv.writer(fh)
        w.writerow(CLOUD_FIELDS)
        for p, i, d in zip(cloud.positions, cloud.intensity, cloud.wave_dir):
            w.writerow([repr(float(x)) for x in (*p, i, *d)])


def read_cloud_csv(path) -> FeaturedPointCloud:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    head, body = rows[0], rows[1:]
    arr = np.asarray(body, dtype=np.float64).reshape(-1, len(head))
    col = {name: arr[:, k] for k, name in enumerate(head)}
    pos = np.stack([col["x"], col["y"], col["z"]], axis=1)
    if all(k in col for k in ("intensity", "wx", "wy", "wz")):
        return FeaturedPointCloud(pos, col["intensity"],
                                  np.stack([col["wx"], col["wy"], col["wz"]], axis=1), True)
    return FeaturedPointCloud.from_positions(pos)


def read_cloud(path) -> FeaturedPointCloud:
    if str(path).lower().endswith(".csv"):
        return read_cloud_csv(path)
    return read_cloud_ply(path)


def write_cloud(path, cloud: FeaturedPointCloud, comments=None) -> None:
    if str(path).lower().endswith(".csv"):
        write_cloud_csv(path, cloud, comments)
    else:
        write_cloud_ply(path, cloud, comments=comments)


# ---------------------------------------------------------------- meshes

def write_mesh_ply(path, mesh: TriangleMesh, comments=None) -> None:
    header = ["ply", "format binary_little_endian 1.0"] + _comment_lines(comments)
    header += [f"element vertex {mesh.n_vertices}", "property double x", "property double y",
               "property double z", f"element face {mesh.n_triangles}",
               "property list uchar int vertex_indices", "end_header"]
    faces = np.empty(mesh.n_triangles, dtype=[("n", "u1"), ("v", "<i4", (3,))])
    faces["n"] = 3
    faces["v"] = mesh.triangles
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        fh.write(mesh.vertices.astype("<f8").tobytes())
        fh.write(faces.tobytes())


def read_mesh_ply(path) -> TriangleMesh:
    elements, _ = read_ply(path)
    v = elements["vertex"]
    verts = np.stack([v["x"], v["y"], v["z"]], axis=1).astype(np.float64)
    faces = elements.get("face", {})
    key = "vertex_indices" if "vertex_indices" in faces else ("vertex_index" if faces else None)
    tris = []
    for poly in (faces[key] if key else []):
        for k in range(1, len(poly) - 1):
            tris.append((poly[0], poly[k], poly[k + 1]))
    return TriangleMesh(verts, np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def write_mesh_obj(path, mesh: TriangleMesh, comments=None) -> None:
    lines = [f"# {c}" for c in comments or []]
    lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_mesh_obj(path) -> TriangleMesh:
    verts, tris = [], []
    for line in Path(path).read_text().splitlines():
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "v":
            verts.append([float(t) for t in tok[1:4]])
        elif tok[0] == "f":
            idx = [int(t.split("/")[0]) for t in tok[1:]]
            idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
            for k in range(1, len(idx) - 1):
                tris.append((idx[0], idx[k], idx[k + 1]))
    return TriangleMesh(np.asarray(verts).reshape(-1, 3), np.asarray(tris, dtype=np.int64).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    if str(path).lower().endswith(".obj"):
        return read_mesh_obj(path)
    return read_mesh_ply(path)


def write_mesh(path, mesh: TriangleMesh, comments=None) -> None:
    if str(path).lower().endswith(".obj"):
        write_mesh_obj(path, mesh, comments)
    else:
        write_mesh_ply(path, mesh, comments)


# ---------------------------------------------------------------- rasters / poses

def write_pgm(path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError("PGM image must be 2-D")
    img = np.clip(img, 0, 255).astype(np.uint8)
    h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"{path}: only binary 8-bit PGM (P5) is supported")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise FormatError(f"{path}: 16-bit PGM not supported")
    pos += 1
    body = data[pos:pos + w * h]
    if len(body) != w * h:
        raise FormatError(f"{path}: truncated PGM")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w).copy()


def write_pose(path, pose: np.ndarray) -> None:
    rows = np.asarray(pose, dtype=np.float64).reshape(4, 4)
    Path(path).write_text("\n".join(" ".join(repr(float(x)) for x in r) for r in rows) + "\n")


def read_pose(path) -> np.ndarray:
    vals = [float(t) for t in Path(path).read_text().split()]
    if len(vals) != 16:
        raise FormatError(f"{path}: expected 16 pose values, got {len(vals)}")
    return np.asarray(vals).reshape(4, 4)
