import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdgal.mesh import (Mesh, MeshFormatError, generate_bfs, generate_unit_square, read_mesh,
                        write_mesh)


@pytest.mark.parametrize("nx,nc,nv,nf,nb", [(1, 2, 4, 5, 4), (2, 8, 9, 16, 8), (32, 2048, 1089, 3136, 128)])
def test_unit_square_counts(nx, nc, nv, nf, nb):
    m = generate_unit_square(nx)
    assert (m.ncells, m.nvertices, m.nfaces, len(m.boundary_faces)) == (nc, nv, nf, nb)
    assert len(m.interior_faces) == nf - nb


def test_unit_square_counts_formula():
    # edges of an nx x nx grid split by one diagonal each
    for nx in range(1, 9):
        m = generate_unit_square(nx)
        assert m.nfaces == 2 * nx * (nx + 1) + nx * nx
        assert m.euler_characteristic() == 1


def test_unit_square_tags():
    m = generate_unit_square(4)
    lid = m.faces_tagged("lid")
    assert len(lid) == 4
    mid = m.vertices[m.face_vertices[lid]].mean(axis=1)
    assert np.all(mid[:, 1] == 1.0)
    assert len(m.faces_tagged("wall")) == 12
    assert all(f.dirichlet for f in m.faces if f.boundary)


def test_diagonal_direction():
    m = generate_unit_square(1)
    diag = m.interior_faces[0]
    a, b = m.vertices[m.face_vertices[diag]]
    assert sorted([tuple(a), tuple(b)]) == [(0.0, 0.0), (1.0, 1.0)]


@pytest.mark.parametrize("n,nc", [(1, 38), (2, 152)])
def test_bfs_counts(n, nc):
    m = generate_bfs(n)
    assert m.ncells == nc
    assert m.euler_characteristic() == 1


@pytest.mark.parametrize("n", [1, 2, 3])
def test_bfs_tags(n):
    m = generate_bfs(n)
    fv = m.vertices[m.face_vertices]
    out = m.faces_tagged("outflow")
    assert len(out) == n * 2
    assert np.all(fv[out][:, :, 0] == 10.0)
    inflow = m.faces_tagged("inflow")
    assert len(inflow) == n
    assert np.all(fv[inflow][:, :, 0] == 0.0)
    assert np.all(fv[inflow][:, :, 1] >= 1.0)
    assert abs(m.cell_areas.sum() - 19.0) <= 1e-12


def _check_invariants(m: Mesh, area: float):
    assert np.all(m.cell_areas > 0)
    assert abs(m.cell_areas.sum() - area) <= 1e-12
    assert np.all(m.face_lengths > 0)
    assert np.allclose(np.linalg.norm(m.face_normals, axis=1), 1.0, atol=1e-14)
    on = m.cell_outward_normals()
    for f in m.interior_faces:
        (c0, c1) = m.face_cells[f]
        e0 = list(m.cell_faces[c0]).index(f)
        e1 = list(m.cell_faces[c1]).index(f)
        assert np.abs(on[c0, e0] + on[c1, e1]).max() <= 1e-14
        assert np.abs(on[c0, e0] - m.face_normals[f]).max() <= 1e-14
    hK = m.cell_diameters
    for f in range(m.nfaces):
        cs = [c for c in m.face_cells[f] if c >= 0]
        assert m.face_lengths[f] <= max(hK[cs]) + 1e-15
    for f in m.boundary_faces:
        assert m.face_cells[f, 1] == -1


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 10))
def test_unit_square_invariants(nx):
    _check_invariants(generate_unit_square(nx), 1.0)


@settings(max_examples=4, deadline=None)
@given(st.integers(1, 4))
def test_bfs_invariants(n):
    _check_invariants(generate_bfs(n), 19.0)


@pytest.mark.parametrize("m", [generate_unit_square(2), generate_bfs(1)])
def test_roundtrip(m):
    buf = io.StringIO()
    write_mesh(m, buf)
    back = read_mesh(io.StringIO(buf.getvalue()))
    assert back == m
    assert np.array_equal(back.vertices, m.vertices)
    assert back.face_tags == m.face_tags


def test_roundtrip_bytes_exact():
    rng = np.random.default_rng(0)
    m0 = generate_unit_square(3)
    v = m0.vertices + 1e-3 * rng.standard_normal(m0.vertices.shape) / 7.0
    m = Mesh(v, m0.cells)
    buf = io.BytesIO()
    write_mesh(m, buf)
    back = read_mesh(io.BytesIO(buf.getvalue()))
    assert np.array_equal(back.vertices, m.vertices)


def _text(m):
    buf = io.StringIO()
    write_mesh(m, buf)
    return buf.getvalue().splitlines()


def test_read_errors():
    with pytest.raises(MeshFormatError, match="header"):
        read_mesh(io.StringIO(""))
    lines = _text(generate_unit_square(2))
    bad = list(lines)
    bad[2 + 9] = "0 1 999"
    with pytest.raises(MeshFormatError, match="out of range") as ei:
        read_mesh(io.StringIO("\n".join(bad)))
    assert ei.value.lineno == 12
    bad = list(lines)
    a, b, c = bad[2 + 9].split()
    bad[2 + 9] = f"{a} {c} {b}"
    with pytest.raises(MeshFormatError, match="non-positive cell area"):
        read_mesh(io.StringIO("\n".join(bad)))
    with pytest.raises(MeshFormatError, match="line 2"):
        read_mesh(io.StringIO("hdgmesh 1\nx y z\n"))


def test_invalid_construction():
    with pytest.raises(ValueError, match="non-positive area"):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 2, 1]])
    with pytest.raises(IndexError):
        Mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 5]])
