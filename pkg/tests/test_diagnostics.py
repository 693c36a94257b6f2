import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sac_fv.diagnostics import (DIAGNOSTIC_COLUMNS, RunDiagnostics, cauchy_difference,
                                check_gronwall_bound, collect, constraint_decay,
                                ensemble_reduce, gronwall_bound, write_diagnostics_csv,
                                write_summary_csv)
from sac_fv.fields import CellField, SpaceTimeField, prolong
from sac_fv.mesh import build_uniform_grid
from sac_fv.model import make_beta, make_g, make_u0, preset_heat, preset_stochastic, \
    project_initial
from sac_fv.noise import coarsen, sample_path
from sac_fv.solver import run_path


def stf_from(mesh, dt, frames):
    stf = SpaceTimeField(mesh, dt)
    for f in frames:
        stf.append(np.asarray(f, dtype=float))
    return stf.freeze()


def fake(i, values, energy=None):
    e = np.asarray(energy if energy is not None else [values, values], dtype=float)
    return RunDiagnostics(e, values, values, values, values, values, values, values, i)


def test_steady_run(two_cell):
    d = collect(stf_from(two_cell, 0.1, [[0.4, 0.6]] * 4), preset_stochastic())
    assert d.increment_sum == 0.0 and d.lr_gap_sq == 0.0 and d.dissipation > 0


def test_inside_constraint_terms_vanish(two_cell):
    d = collect(stf_from(two_cell, 0.1, [[0.0, 1.0], [0.2, 0.9], [1.0, 0.0]]),
                preset_stochastic())
    assert d.psi_sq == d.neg_part_sq == d.overshoot_sq == d.phi_terminal == 0.0


def test_two_frame_hand_values(two_cell):
    """Frames (0, 1) then (-0.5, 1.5), dt = 0.2, eps = 0.25, on two 0.5 x 1 cells."""
    spec = preset_stochastic(epsilon=0.25)
    d = collect(stf_from(two_cell, 0.2, [[0.0, 1.0], [-0.5, 1.5]]), spec)
    np.testing.assert_allclose(d.energy, [0.5, 0.5 * 0.25 + 0.5 * 2.25], rtol=1e-15)
    assert d.increment_sum == pytest.approx(0.5 * 0.25 + 0.5 * 0.25, rel=1e-15)
    assert d.dissipation == pytest.approx(0.2 * 2 * 4.0, rel=1e-15)     # tau = 2, jump 2
    assert d.psi_sq == pytest.approx(0.2 * (0.5 * 4 + 0.5 * 4), rel=1e-15)  # psi = -2, 2
    assert d.neg_part_sq == pytest.approx(0.2 * 0.5 * 0.25, rel=1e-15)
    assert d.overshoot_sq == pytest.approx(0.2 * 0.5 * 0.25, rel=1e-15)
    assert d.lr_gap_sq == pytest.approx(0.2 * 0.25, rel=1e-15)
    assert d.phi_terminal == pytest.approx(0.5 * 0.25 / 0.5 * 2, rel=1e-15)
    assert d.energy_max == d.energy_final == pytest.approx(1.25)


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_run_identities(seed):
    rng = np.random.default_rng(seed)
    m = build_uniform_grid(2, (1, 1), (int(rng.integers(1, 5)), int(rng.integers(1, 5))))
    eps = float(rng.uniform(0.05, 0.9))
    frames = rng.uniform(-1, 2, size=(int(rng.integers(2, 8)), m.n_cells))
    d = collect(stf_from(m, 0.05, frames), preset_stochastic(epsilon=eps))
    assert d.lr_gap_sq == pytest.approx(0.05 * d.increment_sum, rel=1e-13, abs=1e-300)
    assert d.psi_sq == pytest.approx((d.neg_part_sq + d.overshoot_sq) / eps ** 2, rel=1e-12,
                                     abs=1e-300)
    for v in d.scalars().values():
        assert v >= 0 and math.isfinite(v)


def test_reduce_single_and_pairs():
    s = ensemble_reduce([fake(0, 2.0)])
    assert s["psi_sq"].mean == 2.0 and not s["psi_sq"].std_defined
    assert math.isnan(s["psi_sq"].std)
    s = ensemble_reduce([fake(0, 2.0), fake(1, 2.0)])
    assert s["psi_sq"].std == 0.0 and s.count == 2
    with pytest.raises(ValueError):
        ensemble_reduce([])


def test_reduce_order_independent():
    rng = np.random.default_rng(1)
    runs = [fake(i, float(rng.random()), rng.random(5)) for i in range(20)]
    a = ensemble_reduce(runs)
    b = ensemble_reduce(list(reversed(runs)))
    rng.shuffle(runs)
    c = ensemble_reduce(runs)
    for k in RunDiagnostics.SCALARS:
        assert a[k].mean == b[k].mean == c[k].mean
        assert a[k].std == c[k].std
    assert a.energy.mean.tobytes() == c.energy.mean.tobytes()
    assert a["energy"].stderr[0] == pytest.approx(a.energy.std[0] / math.sqrt(20))


def test_gronwall_formula():
    spec = preset_stochastic()
    rate = 4 * 1.0 * (2 * 1 + 2 * 1 + 1)
    assert gronwall_bound(spec, 0.3, 0.1) == pytest.approx((0.3 + 0.4) * math.exp(rate))


def test_gronwall_zero_data():
    spec = preset_heat(u0=make_u0("constant", c=0.0))
    stats = ensemble_reduce([fake(0, 0.0, np.zeros(4)), fake(1, 0.0, np.zeros(4))])
    rep = check_gronwall_bound(stats, spec, 0.0, 0.0)
    assert rep.holds and rep.estimate == 0.0 and rep.bound == 0.0


def test_gronwall_deterministic_single_sample():
    m = build_uniform_grid(2, (1, 1), (8, 8))
    spec = preset_stochastic(g=make_g("zero"))
    u0 = project_initial(spec.u0, m)
    stf, _ = run_path(u0, sample_path(0, 0, 16, 1 / 16), spec, m)
    stats = ensemble_reduce([collect(stf, spec)])
    rep = check_gronwall_bound(stats, spec, float(np.sum(m.volumes * u0.values ** 2)))
    assert rep.holds and rep.margin > 0 and "single sample" in rep.note


def test_gronwall_detects_violation():
    stats = ensemble_reduce([fake(0, 0.0, [1.0, 5.0]), fake(1, 0.0, [1.0, 5.0])])
    spec = preset_heat()
    rep = check_gronwall_bound(stats, spec, 1.0)     # bound = 1 * e^0.4
    assert not rep.holds and rep.worst_step == 1


def _decay_levels(violations):
    out = []
    for eps, v in violations:
        st_ = ensemble_reduce([RunDiagnostics(np.zeros(2), 0, 0, 0, v, 0, 0, 0, 0),
                               RunDiagnostics(np.zeros(2), 0, 0, 0, v, 0, 0, 0, 1)])
        out.append((eps, st_))
    return out


def test_decay_slope():
    rep = constraint_decay(_decay_levels([(e, 3 * e ** 2) for e in (0.5, 0.4, 0.3)]))
    assert rep.active and rep.slope == pytest.approx(2.0, rel=1e-12) and rep.passed()
    assert rep.ratios[0] == pytest.approx(0.64)
    rep = constraint_decay(_decay_levels([(e, e) for e in (0.5, 0.4, 0.3)]))
    assert not rep.passed()


def test_decay_inactive_and_errors():
    rep = constraint_decay(_decay_levels([(e, 0.0) for e in (0.5, 0.4, 0.3)]))
    assert not rep.active and rep.passed() and "never active" in rep.summary()
    with pytest.raises(ValueError):
        constraint_decay(_decay_levels([(0.5, 1.0), (0.4, 0.5)]))


def test_cauchy_examples():
    c = build_uniform_grid(2, (1, 1), (2, 2))
    f = build_uniform_grid(2, (1, 1), (4, 4))
    rng = np.random.default_rng(0)
    frames = rng.random((5, 4))
    coarse = stf_from(c, 0.25, frames)
    assert cauchy_difference(coarse, coarse) == 0.0
    fine_frames = [prolong(CellField(c, frames[0]), f).values]
    for n in range(1, 5):
        v = prolong(CellField(c, frames[n]), f).values
        fine_frames += [v, v]
    fine = stf_from(f, 0.125, fine_frames)
    assert cauchy_difference(coarse, fine, f) <= 1e-14
    with pytest.raises(ValueError):
        cauchy_difference(coarse, stf_from(f, 0.1, fine_frames[:4]), f)
    with pytest.raises(ValueError):
        cauchy_difference(coarse, fine, build_uniform_grid(2, (1, 1), (8, 8)))


def test_cauchy_hand_value():
    """Constant coarse run 0 against fine run 1 on the second half only."""
    c = build_uniform_grid(2, (1, 1), (1, 1))
    f = build_uniform_grid(2, (1, 1), (2, 2))
    coarse = stf_from(c, 1.0, [[0.0], [0.0]])
    fine = stf_from(f, 0.5, [np.zeros(4), np.zeros(4), np.ones(4)])
    assert cauchy_difference(coarse, fine) == pytest.approx(math.sqrt(0.5), rel=1e-15)


def test_csv_outputs(tmp_path):
    runs = [fake(i, float(i), [1.0, 2.0]) for i in (2, 0, 1)]
    write_diagnostics_csv(tmp_path / "d.csv", [(0, r) for r in runs])
    rows = list(csv.reader(open(tmp_path / "d.csv")))
    assert tuple(rows[0]) == DIAGNOSTIC_COLUMNS
    assert [r[1] for r in rows[1:]] == ["0", "1", "2"]
    write_summary_csv(tmp_path / "s.csv", ensemble_reduce(runs))
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    names = [r[0] for r in rows[1:]]
    assert names[: len(RunDiagnostics.SCALARS)] == list(RunDiagnostics.SCALARS)
    assert names[-2:] == ["energy[0]", "energy[1]"]


def test_shared_path_study_smoke():
    spec = preset_stochastic()
    meshes = [build_uniform_grid(2, (1, 1), (r, r)) for r in (2, 4)]
    fine = sample_path(4, 0, 32, 1 / 32)
    runs = []
    for m, factor in zip(meshes, (2, 1)):
        p = coarsen(fine, factor)
        runs.append(run_path(project_initial(spec.u0, m), p, spec, m)[0])
    d = cauchy_difference(runs[0], runs[1], meshes[1])
    assert 0 < d < 1
