import io
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sac_fv.mesh import (build_uniform_grid, cell_boxes, check_admissibility, parent_index,
                         read_mesh, regularity, write_mesh)


def kinds(report):
    return {v.kind for v in report.violations}


def test_two_by_two_grid():
    m = build_uniform_grid(2, (1, 1), (2, 2))
    assert m.n_cells == 4 and m.n_interior == 4 and m.n_exterior == 8
    np.testing.assert_allclose(m.volumes, 0.25)
    np.testing.assert_allclose(m.int_measure, 0.5)
    np.testing.assert_allclose(m.int_dist, 0.5)
    np.testing.assert_allclose(m.transmissibility, 1.0)


def test_single_cell():
    m = build_uniform_grid(2, (1, 1), (1, 1))
    assert m.n_cells == 1 and m.n_interior == 0 and m.n_exterior == 4
    assert m.volumes[0] == 1.0
    assert check_admissibility(m).passed


def test_cube_lattice_faces():
    m = build_uniform_grid(3, (1, 1, 1), (2, 2, 2))
    assert m.n_cells == 8 and m.n_interior == 12
    np.testing.assert_allclose(m.int_measure, 0.25)
    np.testing.assert_allclose(m.int_dist, 0.5)


def test_four_cubed_face_count():
    m = build_uniform_grid(3, (1, 1, 1), (4, 4, 4))
    assert m.n_cells == 64
    assert m.n_interior == 3 * 4 * 4 * 3


@pytest.mark.parametrize("dim, ext, res", [
    (2, (1, 1), (1, 0)), (2, (1, 0), (2, 2)), (2, (1, 1), (2,)), (4, (1,) * 4, (1,) * 4),
])
def test_bad_grid_arguments(dim, ext, res):
    with pytest.raises(ValueError):
        build_uniform_grid(dim, ext, res)


def test_generated_grid_is_admissible():
    assert check_admissibility(build_uniform_grid(2, (1, 1), (4, 4))).passed


def test_displaced_center_breaks_orthogonality():
    m = build_uniform_grid(2, (1, 1), (4, 4))
    c = np.array(m.centers)
    k = 5
    c[k, 1] += 0.1
    bad = m.with_centers(c)
    rep = check_admissibility(bad)
    assert not rep.passed
    ortho = [v for v in rep.violations if v.kind == "orthogonality"]
    assert ortho
    # every flagged edge touches the moved cell, and every vertical edge of it is flagged
    for v in ortho:
        assert k in bad.int_cells[v.index]
    K, L = bad.int_cells.T
    horizontal_neighbours = np.flatnonzero(((K == k) | (L == k)) & (bad.int_normal[:, 0] == 1.0))
    assert set(horizontal_neighbours) <= {v.index for v in ortho}
    # the angle is the one of the displaced segment
    expected = math.atan2(0.1, 0.25)
    assert any(abs(v.value - expected) < 1e-12 for v in ortho)


def test_coincident_centers():
    m = build_uniform_grid(2, (1, 1), (2, 1))
    bad = m.with_centers([[0.5, 0.5], [0.5, 0.5]])
    rep = check_admissibility(bad)
    assert not rep.passed
    assert "center_distance" in kinds(rep)


def test_volume_partition_violation():
    text = io.StringIO()
    write_mesh(build_uniform_grid(2, (1, 1), (2, 1)), text)
    broken = text.getvalue().replace("V 1\n", "V 1.5\n")
    rep = check_admissibility(read_mesh(io.StringIO(broken)))
    assert "volume_partition" in kinds(rep)


def test_disconnected_mesh():
    text = io.StringIO()
    write_mesh(build_uniform_grid(2, (1, 1), (2, 1)), text)
    lines = [ln for ln in text.getvalue().splitlines() if not ln.startswith("I ")]
    lines[0] = "fvmesh 2 2 0 6"
    rep = check_admissibility(read_mesh(io.StringIO("\n".join(lines))))
    assert "disconnected" in kinds(rep)


def test_missing_normals_are_reported():
    text = io.StringIO()
    write_mesh(build_uniform_grid(2, (1, 1), (2, 1)), text)
    out = []
    for ln in text.getvalue().splitlines():
        if ln.startswith("I "):
            ln = " ".join(ln.split()[:5])
        out.append(ln)
    rep = check_admissibility(read_mesh(io.StringIO("\n".join(out))))
    assert "orthogonality_unverified" in kinds(rep)


def test_regularity_square_cells():
    assert regularity(build_uniform_grid(2, (1, 1), (8, 8))) == pytest.approx(4.0, abs=1e-12)


def test_regularity_aspect_ratio_two():
    m = build_uniform_grid(2, (1, 2), (4, 4))
    assert regularity(m) == pytest.approx(2 * math.sqrt(5), rel=1e-12)


@given(st.integers(1, 5), st.integers(1, 5), st.floats(0.2, 5.0))
def test_regularity_scale_invariant(nx, ny, aspect):
    coarse = build_uniform_grid(2, (1.0, aspect), (nx + 1, ny + 1))
    fine = build_uniform_grid(2, (1.0, aspect), (2 * nx + 2, 2 * ny + 2))
    assert regularity(fine) == pytest.approx(regularity(coarse), rel=1e-12)


@given(st.sampled_from([2, 3]), st.data())
def test_generated_grids_invariants(dim, data):
    res = tuple(data.draw(st.integers(1, 5)) for _ in range(dim))
    ext = tuple(data.draw(st.floats(0.1, 10.0)) for _ in range(dim))
    m = build_uniform_grid(dim, ext, res)
    assert check_admissibility(m).passed
    assert m.volumes.sum() == pytest.approx(np.prod(ext), rel=1e-12)
    assert m.n_cells == np.prod(res)
    assert m.n_interior == sum((r - 1) * np.prod(res) // r for r in res)
    assert m.n_exterior == sum(2 * np.prod(res) // r for r in res)
    # each cell has exactly 2 * dim faces
    count = np.bincount(m.int_cells.ravel(), minlength=m.n_cells) \
        + np.bincount(m.ext_cells, minlength=m.n_cells)
    assert np.all(count == 2 * dim)


def test_round_trip_is_exact(tmp_path):
    m = build_uniform_grid(3, (1.0, 0.3, 2.0 / 3.0), (3, 2, 2))
    write_mesh(m, tmp_path / "m.txt")
    back = read_mesh(tmp_path / "m.txt")
    assert back.hash == m.hash
    for name in ("centers", "volumes", "int_cells", "int_measure", "int_dist", "ext_cells",
                 "ext_measure", "diameters", "int_normal", "int_point", "ext_normal", "ext_point"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.resolution == m.resolution and back.max_vertex_degree == m.max_vertex_degree
    assert check_admissibility(back).passed


def test_read_infers_volume_from_boundary():
    m = build_uniform_grid(2, (2.0, 3.0), (3, 2))
    text = io.StringIO()
    write_mesh(m, text)
    body = "\n".join(ln for ln in text.getvalue().splitlines() if not ln.startswith("V "))
    assert read_mesh(io.StringIO(body)).total_volume == pytest.approx(6.0, rel=1e-14)


@pytest.mark.parametrize("text", [
    "", "C 0 1 0.5 0.5\n", "fvmesh 2 1 0 0\nC 0 1 0.5\n", "fvmesh 2 2 0 0\nC 0 1 0.5 0.5\n",
    "fvmesh 2 1 0 0\nX 1\n", "fvmesh 2 1 0 0\nC 0 one 0.5 0.5\n",
])
def test_malformed_files(text):
    with pytest.raises(ValueError):
        read_mesh(io.StringIO(text))


def test_comments_are_ignored():
    text = "# a comment\nfvmesh 2 1 0 0  # header\nC 0 1 0.5 0.5\n"
    m = read_mesh(io.StringIO(text))
    assert m.n_cells == 1 and m.total_volume == 1.0


def test_parent_index():
    c = build_uniform_grid(2, (1, 1), (2, 2))
    f = build_uniform_grid(2, (1, 1), (4, 4))
    p = parent_index(c, f)
    lo, hi = cell_boxes(c)
    inside = np.all((f.centers >= lo[p]) & (f.centers <= hi[p]), axis=1)
    assert inside.all()
    assert np.all(np.bincount(p) == 4)
    with pytest.raises(ValueError):
        parent_index(c, build_uniform_grid(2, (1, 1), (3, 3)))


def test_arrays_are_read_only():
    m = build_uniform_grid(2, (1, 1), (2, 2))
    with pytest.raises(ValueError):
        m.volumes[0] = 2.0
