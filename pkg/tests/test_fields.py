import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from sac_fv.fields import (CellField, NonFiniteError, SpaceTimeField, evaluate_left,
                           evaluate_right, h1_seminorm, l2_norm, load_space_time,
                           partial_integration_residual, partial_integration_sides, prolong,
                           read_field, restrict, save_space_time, weak_gradient,
                           weak_gradient_norm, write_field)
from sac_fv.mesh import build_uniform_grid

grids = st.tuples(st.integers(1, 16), st.integers(1, 16)).map(
    lambda r: build_uniform_grid(2, (1.0, 1.0), r))


def random_field(mesh, seed, scale=1.0):
    return CellField(mesh, scale * np.random.default_rng(seed).standard_normal(mesh.n_cells))


def test_field_validation(two_cell):
    with pytest.raises(ValueError):
        CellField(two_cell, [1.0])
    with pytest.raises(NonFiniteError):
        CellField(two_cell, [1.0, np.nan])
    f = CellField(two_cell, [0.0, 1.0])
    with pytest.raises(ValueError):
        f.values[0] = 3.0


def test_l2_examples(two_cell):
    unit = build_uniform_grid(2, (1, 1), (3, 5))
    assert l2_norm(CellField.constant(unit, 1.0)) == pytest.approx(1.0, rel=1e-15)
    assert l2_norm(CellField(two_cell, [0.0, 1.0])) == pytest.approx(math.sqrt(0.5), rel=1e-15)
    assert l2_norm(CellField.constant(unit, 0.0)) == 0.0


def test_seminorm_examples(two_cell):
    assert h1_seminorm(CellField(two_cell, [0.0, 1.0])) == pytest.approx(math.sqrt(2), rel=1e-15)
    strip = build_uniform_grid(2, (1, 1), (3, 1))
    assert h1_seminorm(CellField(strip, [0.0, 1.0, 2.0])) == pytest.approx(math.sqrt(6), rel=1e-14)
    assert h1_seminorm(CellField.constant(strip, 3.7)) == 0.0


def test_weak_gradient_examples(two_cell):
    w = CellField(two_cell, [0.0, 1.0])
    assert weak_gradient_norm(w) == pytest.approx(2.0, rel=1e-15)
    g = weak_gradient(w)
    np.testing.assert_allclose(g, [[4.0, 0.0]])
    assert weak_gradient_norm(CellField.constant(two_cell, 2.0)) == 0.0


def test_partial_integration_examples(two_cell):
    w = CellField(two_cell, [0.0, 1.0])
    lhs, rhs = partial_integration_sides(w, w)
    assert lhs == pytest.approx(2.0, rel=1e-15) and rhs == pytest.approx(2.0, rel=1e-15)
    wt = random_field(build_uniform_grid(2, (1, 1), (8, 8)), 3)
    const = CellField.constant(wt.mesh, 0.3)
    assert partial_integration_residual(const, wt) == 0.0


@given(grids, st.integers(0, 2**32 - 1))
def test_partial_integration_identity(mesh, seed):
    w, wt = random_field(mesh, seed), random_field(mesh, seed + 1)
    lhs, rhs = partial_integration_sides(w, wt)
    assert abs(lhs - rhs) <= 1e-12 * (1 + abs(lhs))
    # symmetric in the two arguments
    lhs2, _ = partial_integration_sides(wt, w)
    assert abs(lhs - lhs2) <= 1e-12 * (1 + abs(lhs))


@given(grids, st.integers(0, 2**32 - 1))
def test_gradient_seminorm_relation(mesh, seed):
    w = random_field(mesh, seed)
    g2, s2 = weak_gradient_norm(w) ** 2, h1_seminorm(w) ** 2
    assert abs(g2 - mesh.dim * s2) <= 1e-12 * max(g2, 1e-300)


def test_gradient_relation_in_3d():
    m = build_uniform_grid(3, (1, 2, 0.5), (3, 4, 2))
    w = random_field(m, 9)
    assert weak_gradient_norm(w) ** 2 == pytest.approx(3 * h1_seminorm(w) ** 2, rel=1e-12)


def test_rejects_mixed_meshes(two_cell):
    other = build_uniform_grid(2, (1, 1), (2, 1))
    with pytest.raises(ValueError):
        partial_integration_sides(CellField.constant(two_cell, 1), CellField.constant(other, 1))


@given(arrays(float, 6, elements=st.floats(-1e3, 1e3)))
def test_norm_homogeneity(vals):
    m = build_uniform_grid(2, (1, 1), (3, 2))
    a = CellField(m, vals)
    b = CellField(m, -2.5 * vals)
    assert l2_norm(b) == pytest.approx(2.5 * l2_norm(a), rel=1e-12, abs=1e-300)
    assert h1_seminorm(b) == pytest.approx(2.5 * h1_seminorm(a), rel=1e-12, abs=1e-300)


def make_stf(mesh, n=4, dt=0.25):
    stf = SpaceTimeField(mesh, dt)
    for k in range(n + 1):
        stf.append(np.full(mesh.n_cells, float(k)))
    return stf.freeze()


def test_interpolant_conventions(two_cell):
    stf = make_stf(two_cell)
    assert evaluate_right(stf, 0.0).values[0] == 1.0
    assert evaluate_left(stf, 0.0).values[0] == 0.0
    assert evaluate_right(stf, 1.0).values[0] == 4.0
    assert evaluate_left(stf, 1.0).values[0] == 3.0
    assert evaluate_right(stf, 0.5).values[0] == 3.0      # t = t_2 opens interval 2
    assert evaluate_left(stf, 0.5).values[0] == 2.0
    assert evaluate_right(stf, 0.3).values[0] == 2.0
    with pytest.raises(ValueError):
        evaluate_right(stf, 1.5)
    with pytest.raises(ValueError):
        evaluate_left(stf, -0.1)


def test_space_time_container(two_cell):
    stf = SpaceTimeField(two_cell, 0.1)
    stf.append(CellField(two_cell, [0.0, 1.0]))
    with pytest.raises(ValueError):
        stf.freeze()
    with pytest.raises(ValueError):
        stf.append([1.0])
    with pytest.raises(NonFiniteError):
        stf.append([np.inf, 0.0])
    stf.append([1.0, 1.0])
    assert stf.steps == 1 and stf.horizon == pytest.approx(0.1)
    with pytest.raises(RuntimeError):
        stf.append([0.0, 0.0])
    with pytest.raises(ValueError):
        SpaceTimeField(two_cell, 0.0)


def test_prolong_restrict():
    c = build_uniform_grid(2, (1, 1), (2, 2))
    f = build_uniform_grid(2, (1, 1), (6, 4))
    u = random_field(c, 4)
    up = prolong(u, f)
    np.testing.assert_allclose(restrict(up, c).values, u.values, rtol=1e-15, atol=1e-15)
    assert l2_norm(up) == pytest.approx(l2_norm(u), rel=1e-14)
    assert np.all(restrict(CellField.constant(f, 0.7), c).values == pytest.approx(0.7))
    uf = random_field(f, 5)
    mass = lambda x: float(np.sum(x.mesh.volumes * x.values))
    assert mass(restrict(uf, c)) == pytest.approx(mass(uf), rel=1e-13)


def test_field_io(tmp_path, two_cell):
    f = CellField(two_cell, [1 / 3, math.pi])
    write_field(f, tmp_path / "f.txt")
    np.testing.assert_array_equal(read_field(tmp_path / "f.txt", two_cell).values, f.values)
    with pytest.raises(ValueError):
        read_field(tmp_path / "f.txt", build_uniform_grid(2, (1, 1), (1, 2)))


def test_space_time_io(tmp_path):
    m = build_uniform_grid(2, (1, 1), (3, 3))
    stf = SpaceTimeField(m, 0.125)
    rng = np.random.default_rng(0)
    for _ in range(4):
        stf.append(rng.random(m.n_cells))
    stf.freeze()
    save_space_time(stf, tmp_path / "run", seed=7, sample=2)
    back = load_space_time(tmp_path / "run", m)
    np.testing.assert_array_equal(back.frames, stf.frames)
    assert back.dt == stf.dt
