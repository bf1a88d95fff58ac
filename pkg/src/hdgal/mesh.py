"""Conforming triangular meshes with oriented faces and boundary tags.

Faces are stored once with a fixed vertex pair. The first adjacent cell
traverses the face in the stored direction (counterclockwise for that
cell), so the stored unit normal is the outward normal of the first cell
and the negated outward normal of the second.

Local face ``e`` of a cell with vertices ``(a0, a1, a2)`` is the edge
``(a_e, a_{e+1 mod 3})``.
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

BOUNDARY_TAGS = ("wall", "lid", "inflow", "outflow")
DIRICHLET_TAGS = ("wall", "lid", "inflow")


class MeshFormatError(ValueError):
    """Malformed mesh file; ``lineno`` is 1-based (0 when unknown)."""

    def __init__(self, message: str, lineno: int = 0):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


@dataclass(frozen=True)
class FaceRecord:
    vertices: tuple[int, int]
    cells: tuple[int, ...]
    normal: np.ndarray
    length: float
    tag: str | None

    @property
    def boundary(self) -> bool:
        return len(self.cells) == 1

    @property
    def dirichlet(self) -> bool:
        return self.tag in DIRICHLET_TAGS


class Mesh:
    """Immutable simplicial 2D mesh.

    Parameters
    ----------
    vertices : (nv, 2) array of coordinates.
    cells : (nc, 3) vertex indices, counterclockwise.
    boundary_tags : mapping from sorted vertex pair to tag, for every
        boundary edge. Missing boundary edges default to ``"wall"``.
    """

    def __init__(self, vertices, cells, boundary_tags: dict[tuple[int, int], str] | None = None):
        vertices = np.array(vertices, dtype=float)
        cells = np.array(cells, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise ValueError("vertices must have shape (n, 2)")
        if cells.ndim != 2 or cells.shape[1] != 3:
            raise ValueError("cells must have shape (n, 3)")
        if cells.size and (cells.min() < 0 or cells.max() >= len(vertices)):
            raise IndexError("cell references a vertex out of range")
        vertices.setflags(write=False)
        cells.setflags(write=False)
        self.vertices = vertices
        self.cells = cells
        if np.any(self.cell_areas <= 0.0):
            bad = int(np.argmin(self.cell_areas))
            raise ValueError(f"cell {bad} has non-positive area (not counterclockwise?)")
        self._build_faces(boundary_tags or {})

    def _build_faces(self, tags: dict[tuple[int, int], str]) -> None:
        index: dict[tuple[int, int], int] = {}
        fverts: list[tuple[int, int]] = []
        fcells: list[list[int]] = []
        cell_faces = np.empty((self.ncells, 3), dtype=np.int64)
        signs = np.empty((self.ncells, 3), dtype=np.int64)
        for c, tri in enumerate(self.cells.tolist()):
            for e in range(3):
                a, b = tri[e], tri[(e + 1) % 3]
                key = (a, b) if a < b else (b, a)
                f = index.get(key)
                if f is None:
                    f = len(fverts)
                    index[key] = f
                    fverts.append((a, b))
                    fcells.append([c])
                    signs[c, e] = 1
                else:
                    if len(fcells[f]) == 2:
                        raise ValueError(f"edge {key} shared by more than two cells")
                    if fverts[f] != (b, a):
                        raise ValueError(f"cells adjacent to edge {key} are not consistently oriented")
                    fcells[f].append(c)
                    signs[c, e] = -1
                cell_faces[c, e] = f
        fv = np.array(fverts, dtype=np.int64).reshape(-1, 2)
        fc = np.full((len(fverts), 2), -1, dtype=np.int64)
        for f, cs in enumerate(fcells):
            fc[f, : len(cs)] = cs
        ftags: list[str | None] = []
        for f, (a, b) in enumerate(fverts):
            if fc[f, 1] >= 0:
                ftags.append(None)
            else:
                key = (a, b) if a < b else (b, a)
                tag = tags.get(key, "wall")
                if tag not in BOUNDARY_TAGS:
                    raise ValueError(f"unknown boundary tag {tag!r}")
                ftags.append(tag)
        for arr in (fv, fc, cell_faces, signs):
            arr.setflags(write=False)
        self.face_vertices = fv
        self.face_cells = fc
        self.cell_faces = cell_faces
        self.cell_face_signs = signs
        self.face_tags = tuple(ftags)

    # sizes -----------------------------------------------------------------
    @property
    def nvertices(self) -> int:
        return len(self.vertices)

    @property
    def ncells(self) -> int:
        return len(self.cells)

    @property
    def nfaces(self) -> int:
        return len(self.face_vertices)

    # geometry ---------------------------------------------------------------
    @cached_property
    def cell_areas(self) -> np.ndarray:
        x = self.vertices[self.cells]
        d1 = x[:, 1] - x[:, 0]
        d2 = x[:, 2] - x[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def cell_edge_lengths(self) -> np.ndarray:
        x = self.vertices[self.cells]
        return np.linalg.norm(np.roll(x, -1, axis=1) - x, axis=2)

    @cached_property
    def cell_diameters(self) -> np.ndarray:
        """h_K: longest edge of each cell."""
        return self.cell_edge_lengths.max(axis=1)

    @cached_property
    def face_lengths(self) -> np.ndarray:
        x = self.vertices[self.face_vertices]
        return np.linalg.norm(x[:, 1] - x[:, 0], axis=1)

    @cached_property
    def face_normals(self) -> np.ndarray:
        """Unit normal of each face, outward from its first cell."""
        x = self.vertices[self.face_vertices]
        t = x[:, 1] - x[:, 0]
        n = np.stack([t[:, 1], -t[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1)[:, None]

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] < 0)

    @cached_property
    def interior_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_cells[:, 1] >= 0)

    def faces_tagged(self, *tags: str) -> np.ndarray:
        return np.array([f for f, t in enumerate(self.face_tags) if t in tags], dtype=np.int64)

    @property
    def boundary_tags(self) -> dict[int, str]:
        return {f: t for f, t in enumerate(self.face_tags) if t is not None}

    @property
    def faces(self) -> list[FaceRecord]:
        out = []
        for f in range(self.nfaces):
            cs = tuple(int(c) for c in self.face_cells[f] if c >= 0)
            out.append(
                FaceRecord(
                    vertices=tuple(int(v) for v in self.face_vertices[f]),
                    cells=cs,
                    normal=self.face_normals[f].copy(),
                    length=float(self.face_lengths[f]),
                    tag=self.face_tags[f],
                )
            )
        return out

    def cell_outward_normals(self) -> np.ndarray:
        """(nc, 3, 2) outward unit normal of each local face."""
        return self.face_normals[self.cell_faces] * self.cell_face_signs[..., None]

    def euler_characteristic(self) -> int:
        return self.nvertices - self.nfaces + self.ncells

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mesh):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and np.array_equal(self.cells, other.cells)
            and self.face_tags == other.face_tags
            and np.array_equal(self.face_vertices, other.face_vertices)
        )

    def __repr__(self) -> str:
        return f"Mesh(nvertices={self.nvertices}, ncells={self.ncells}, nfaces={self.nfaces})"


def _key(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def _structured(points_x: np.ndarray, points_y: np.ndarray, keep_square: Callable[[int, int], bool],
                tag_of: Callable[[np.ndarray, np.ndarray], str]) -> Mesh:
    nx, ny = len(points_x) - 1, len(points_y) - 1
    used = np.zeros((ny + 1, nx + 1), dtype=bool)
    squares = [(i, j) for j in range(ny) for i in range(nx) if keep_square(i, j)]
    for i, j in squares:
        used[j : j + 2, i : i + 2] = True
    vid = -np.ones((ny + 1, nx + 1), dtype=np.int64)
    vid[used] = np.arange(used.sum())
    jj, ii = np.nonzero(used)
    vertices = np.stack([points_x[ii], points_y[jj]], axis=1)
    cells = []
    for i, j in squares:
        v00, v10, v01, v11 = vid[j, i], vid[j, i + 1], vid[j + 1, i], vid[j + 1, i + 1]
        cells.append((v00, v10, v11))
        cells.append((v00, v11, v01))
    cells = np.array(cells, dtype=np.int64)
    # tag every edge; tags are only consulted for boundary edges
    tags = {}
    for tri in cells:
        for e in range(3):
            a, b = int(tri[e]), int(tri[(e + 1) % 3])
            tags[_key(a, b)] = tag_of(vertices[a], vertices[b])
    return Mesh(vertices, cells, tags)


def generate_unit_square(nx: int) -> Mesh:
    """Structured mesh of (0,1)^2 with ``2 nx^2`` cells.

    Each square is split along its lower-left to upper-right diagonal.
    Boundary faces on ``x2 = 1`` are tagged ``"lid"``, all others ``"wall"``.
    """
    if int(nx) != nx or nx < 1:
        raise ValueError("nx must be a positive integer")
    nx = int(nx)
    pts = np.linspace(0.0, 1.0, nx + 1)

    def tag_of(a, b):
        return "lid" if a[1] == 1.0 and b[1] == 1.0 else "wall"

    return _structured(pts, pts, lambda i, j: True, tag_of)


def generate_bfs(n: int) -> Mesh:
    """Backward-facing step ``([0,10] x [0,2]) minus ([0,1] x [0,1])``.

    ``n`` cells per unit length, squares split as in
    :func:`generate_unit_square`. Tags: ``"inflow"`` on ``x1 = 0``,
    ``"outflow"`` on ``x1 = 10``, ``"wall"`` elsewhere.
    """
    if int(n) != n or n < 1:
        raise ValueError("n must be a positive integer")
    n = int(n)
    px = np.linspace(0.0, 10.0, 10 * n + 1)
    py = np.linspace(0.0, 2.0, 2 * n + 1)
    # snap the step corner lines to exact values
    px[n] = 1.0
    py[n] = 1.0

    def tag_of(a, b):
        if a[0] == 0.0 and b[0] == 0.0:
            return "inflow"
        if a[0] == 10.0 and b[0] == 10.0:
            return "outflow"
        return "wall"

    return _structured(px, py, lambda i, j: not (i < n and j < n), tag_of)


# text format ----------------------------------------------------------------
# Coordinates are written with Python's shortest round-trip repr, so
# read(write(m)) reproduces them bit-exactly.

def write_mesh(mesh: Mesh, sink) -> None:
    lines = ["hdgmesh 1", f"{mesh.nvertices} {mesh.ncells} {len(mesh.boundary_faces)}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.vertices.tolist()]
    lines += [f"{a} {b} {c}" for a, b, c in mesh.cells.tolist()]
    for f in mesh.boundary_faces:
        a, b = mesh.face_vertices[f]
        lines.append(f"{a} {b} {mesh.face_tags[f]}")
    text = "\n".join(lines) + "\n"
    if isinstance(sink, io.TextIOBase):
        sink.write(text)
    else:
        sink.write(text.encode())


def read_mesh(source) -> Mesh:
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode()
    lines = data.splitlines()
    if not lines or lines[0].split() != ["hdgmesh", "1"]:
        raise MeshFormatError("expected header 'hdgmesh 1'", 1)
    try:
        nv, nc, nb = (int(t) for t in lines[1].split())
    except (IndexError, ValueError):
        raise MeshFormatError("expected '<nverts> <ncells> <nbfaces>'", 2) from None
    if min(nv, nc, nb) < 0:
        raise MeshFormatError("negative count", 2)
    if len(lines) < 2 + nv + nc + nb:
        raise MeshFormatError("unexpected end of file", len(lines) + 1)

    def fields(lineno: int, count: int) -> list[str]:
        parts = lines[lineno - 1].split()
        if len(parts) != count:
            raise MeshFormatError(f"expected {count} fields", lineno)
        return parts

    vertices = np.empty((nv, 2))
    for i in range(nv):
        lineno = 3 + i
        try:
            vertices[i] = [float(t) for t in fields(lineno, 2)]
        except ValueError:
            raise MeshFormatError("bad coordinate", lineno) from None
    cells = np.empty((nc, 3), dtype=np.int64)
    for i in range(nc):
        lineno = 3 + nv + i
        try:
            tri = [int(t) for t in fields(lineno, 3)]
        except ValueError:
            raise MeshFormatError("bad vertex index", lineno) from None
        if min(tri) < 0 or max(tri) >= nv:
            raise MeshFormatError(f"vertex index out of range (have {nv} vertices)", lineno)
        x = vertices[tri]
        area = 0.5 * ((x[1, 0] - x[0, 0]) * (x[2, 1] - x[0, 1]) - (x[1, 1] - x[0, 1]) * (x[2, 0] - x[0, 0]))
        if not area > 0.0:
            raise MeshFormatError("non-positive cell area", lineno)
        cells[i] = tri
    tags = {}
    for i in range(nb):
        lineno = 3 + nv + nc + i
        parts = fields(lineno, 3)
        try:
            a, b = int(parts[0]), int(parts[1])
        except ValueError:
            raise MeshFormatError("bad vertex index", lineno) from None
        if min(a, b) < 0 or max(a, b) >= nv:
            raise MeshFormatError(f"vertex index out of range (have {nv} vertices)", lineno)
        if parts[2] not in BOUNDARY_TAGS:
            raise MeshFormatError(f"unknown tag {parts[2]!r}", lineno)
        tags[_key(a, b)] = parts[2]
    mesh = Mesh(vertices, cells, tags)
    if len(mesh.boundary_faces) != nb:
        raise MeshFormatError(f"header declares {nb} boundary faces, mesh has {len(mesh.boundary_faces)}", 2)
    return mesh
