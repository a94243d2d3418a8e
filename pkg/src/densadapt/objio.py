"""Wavefront OBJ reading and writing (positions and faces only)."""

import os

import numpy as np

from .errors import MeshIOError
from .mesh import TriMesh

_IGNORED = {"vn", "vt", "vp", "o", "g", "s", "mtllib", "usemtl", "l", "p"}


def _face_index(token, n_vertices, path, lineno):
    ref = token.split("/", 1)[0]
    try:
        idx = int(ref)
    except ValueError:
        raise MeshIOError(f"bad face index {token!r}", path, lineno) from None
    if idx < 0:
        idx = n_vertices + idx
    else:
        idx -= 1
    return idx


def load_obj(path):
    """Read vertices and faces from an ASCII OBJ file.

    Polygons with more than three vertices are fan-triangulated around their
    first vertex. Normals, texture coordinates, groups and material records
    are skipped.
    """
    path = os.fspath(path)
    if not os.path.isfile(path):
        raise MeshIOError("no such file", path)
    verts = []
    faces = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshIOError("vertex record needs 3 coordinates", path, lineno)
                try:
                    verts.append((float(parts[1]), float(parts[2]), float(parts[3])))
                except ValueError:
                    raise MeshIOError(f"bad vertex coordinate in {line!r}", path, lineno) from None
            elif tag == "f":
                if len(parts) < 4:
                    raise MeshIOError("face record needs at least 3 indices", path, lineno)
                idx = [_face_index(tok, len(verts), path, lineno) for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    faces.append((idx[0], idx[k], idx[k + 1]))
            elif tag in _IGNORED:
                continue
            else:
                raise MeshIOError(f"unknown record type {tag!r}", path, lineno)
    if not verts:
        raise MeshIOError("no vertices found", path)
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh, path):
    """Write ``v`` lines with 9 significant digits followed by ``f`` lines."""
    path = os.fspath(path)
    directory = os.path.dirname(path)
    if directory and not os.path.isdir(directory):
        raise MeshIOError("directory does not exist", directory)
    lines = ["v %.9g %.9g %.9g\n" % tuple(p) for p in mesh.positions.tolist()]
    lines += ["f %d %d %d\n" % (a + 1, b + 1, c + 1) for a, b, c in mesh.faces.tolist()]
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.writelines(lines)
    except OSError as exc:
        raise MeshIOError(str(exc), path) from exc
