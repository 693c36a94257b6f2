"""Stability quantities per path, Monte Carlo reduction, and refinement studies."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import (CellField, SpaceTimeField, evaluate_left, evaluate_right, h1_seminorm,
                     l2_norm, prolong)
from .model import ModelSpec, negative_part, overshoot, yosida, yosida_antiderivative


@dataclass
class RunDiagnostics:
    """Time-integrated quantities of one path.

    Time integrals of the piecewise-constant interpolants are exact
    ``dt``-weighted frame sums.
    """

    energy: np.ndarray
    increment_sum: float
    dissipation: float
    psi_sq: float
    neg_part_sq: float
    overshoot_sq: float
    lr_gap_sq: float
    phi_terminal: float
    sample_index: int = 0
    epsilon: float = float("nan")
    dt: float = float("nan")

    SCALARS = ("energy_max", "energy_final", "increment_sum", "dissipation", "psi_sq",
               "neg_part_sq", "overshoot_sq", "lr_gap_sq", "phi_terminal")

    @property
    def energy_max(self) -> float:
        return float(np.max(self.energy))

    @property
    def energy_final(self) -> float:
        return float(self.energy[-1])

    @property
    def violation_sq(self) -> float:
        return self.neg_part_sq + self.overshoot_sq

    def scalars(self) -> dict:
        return {k: float(getattr(self, k)) for k in self.SCALARS}


def collect(stf: SpaceTimeField, spec: ModelSpec, sample_index: int = 0) -> RunDiagnostics:
    mesh, dt, eps = stf.mesh, stf.dt, spec.epsilon
    frames = [stf.frame(n) for n in range(stf.steps + 1)]
    energy = np.array([l2_norm(u) ** 2 for u in frames])

    increment_sum = dissipation = psi_sq = neg = over = 0.0
    for prev, cur in zip(frames[:-1], frames[1:]):
        v = cur.values
        increment_sum += l2_norm(CellField(mesh, v - prev.values)) ** 2
        dissipation += dt * h1_seminorm(cur) ** 2
        psi_sq += dt * l2_norm(CellField(mesh, yosida(v, eps))) ** 2
        neg += dt * l2_norm(CellField(mesh, negative_part(v))) ** 2
        over += dt * l2_norm(CellField(mesh, overshoot(v))) ** 2

    lr_gap = 0.0
    for n in range(stf.steps):
        mid = (n + 0.5) * dt
        r, l = evaluate_right(stf, mid), evaluate_left(stf, mid)
        lr_gap += dt * l2_norm(CellField(mesh, r.values - l.values)) ** 2

    phi = float(np.sum(mesh.volumes * yosida_antiderivative(frames[-1].values, eps)))
    return RunDiagnostics(energy, increment_sum, dissipation, psi_sq, neg, over, lr_gap, phi,
                          sample_index, eps, dt)


# -------------------------------------------------------------- ensembles

@dataclass
class QuantityStats:
    mean: np.ndarray | float
    std: np.ndarray | float
    count: int
    stderr: np.ndarray | float

    @property
    def std_defined(self) -> bool:
        return self.count >= 2


@dataclass
class EnsembleStats:
    quantities: dict[str, QuantityStats]
    energy: QuantityStats
    sample_indices: tuple[int, ...] = field(default=())

    @property
    def count(self) -> int:
        return self.energy.count

    def __getitem__(self, name) -> QuantityStats:
        return self.energy if name == "energy" else self.quantities[name]


def _stats(rows: np.ndarray) -> QuantityStats:
    n = rows.shape[0]
    mean = rows.mean(axis=0)
    if n >= 2:
        std = rows.std(axis=0, ddof=1)
        se = std / math.sqrt(n)
    else:
        std = se = np.full_like(mean, np.nan)
    if np.ndim(mean) == 0:
        mean, std, se = float(mean), float(std), float(se)
    return QuantityStats(mean, std, n, se)


def ensemble_reduce(per_sample) -> EnsembleStats:
    """Means and spreads, reduced in ascending sample-index order."""
    runs = sorted(per_sample, key=lambda d: d.sample_index)
    if not runs:
        raise ValueError("cannot reduce an empty ensemble")
    quantities = {k: _stats(np.array([r.scalars()[k] for r in runs])) for k in RunDiagnostics.SCALARS}
    energy = _stats(np.stack([r.energy for r in runs]))
    return EnsembleStats(quantities, energy, tuple(r.sample_index for r in runs))


# ------------------------------------------------------------ bound checks

@dataclass
class BoundReport:
    holds: bool
    estimate: float
    bound: float
    margin: float
    worst_step: int
    note: str = ""


def gronwall_bound(spec: ModelSpec, u0norm_sq: float, f_norm_sq: float) -> float:
    """``(E||u^0||^2 + 4||f||^2) exp(4T(2 L_g^2 + 2 L_beta + 1))``."""
    rate = 4.0 * spec.horizon * (2.0 * spec.lipschitz_g ** 2 + 2.0 * spec.lipschitz_beta + 1.0)
    return (u0norm_sq + 4.0 * f_norm_sq) * math.exp(rate)


def check_gronwall_bound(stats: EnsembleStats, spec: ModelSpec, u0norm_sq: float,
                         f_norm_sq: float = 0.0) -> BoundReport:
    """Compare ``max_n (mean + 3 stderr)`` of the energy with the Gronwall bound."""
    mean = np.asarray(stats.energy.mean)
    se = np.asarray(stats.energy.stderr)
    note = ""
    if not stats.energy.std_defined:
        se = np.zeros_like(mean)
        note = "single sample: no standard error"
    upper = mean + 3.0 * se
    worst = int(np.argmax(upper))
    est = float(upper[worst])
    bound = gronwall_bound(spec, u0norm_sq, f_norm_sq)
    return BoundReport(est <= bound, est, bound, bound - est, worst, note)


@dataclass
class DecayReport:
    active: bool
    slope: float
    epsilons: tuple[float, ...]
    violations: tuple[float, ...]
    ratios: tuple[float, ...]

    def passed(self, min_slope: float = 1.5) -> bool:
        return (not self.active) or self.slope >= min_slope

    def summary(self) -> str:
        if not self.active:
            return "constraint never active"
        lines = [f"log-log slope of violation energy vs epsilon: {self.slope:.4f}"]
        for e, v in zip(self.epsilons, self.violations):
            lines.append(f"  eps = {e:.6g}  neg+over = {v:.6e}")
        return "\n".join(lines)


def constraint_decay(levels) -> DecayReport:
    """Least-squares slope of ``log(neg_part_sq + overshoot_sq)`` against ``log eps``.

    ``levels`` is a sequence of ``(epsilon, EnsembleStats)``.
    """
    levels = list(levels)
    if len(levels) < 3:
        raise ValueError("constraint decay needs at least three levels")
    eps = np.array([float(e) for e, _ in levels])
    viol = np.array([s["neg_part_sq"].mean + s["overshoot_sq"].mean for _, s in levels])
    ratios = tuple(float(viol[i + 1] / viol[i]) if viol[i] > 0 else float("nan")
                   for i in range(len(viol) - 1))
    if np.all(viol == 0.0):
        return DecayReport(False, float("nan"), tuple(eps), tuple(viol), ratios)
    pos = viol > 0
    if pos.sum() < 2:
        slope = float("inf")
    else:
        slope = float(np.polyfit(np.log(eps[pos]), np.log(viol[pos]), 1)[0])
    return DecayReport(True, slope, tuple(eps), tuple(viol), ratios)


def cauchy_difference(coarse: SpaceTimeField, fine: SpaceTimeField, fine_mesh=None) -> float:
    """``L^2(0, T; L^2)`` distance between right interpolants of nested runs.

    The coarse run is injected onto the fine mesh and the integral is taken
    over the fine time grid, which refines the coarse one.
    """
    fine_mesh = fine.mesh if fine_mesh is None else fine_mesh
    if fine.mesh is not fine_mesh and fine.mesh.hash != fine_mesh.hash:
        raise ValueError("fine field does not live on fine_mesh")
    if fine.steps % coarse.steps:
        raise ValueError("time grids are not nested")
    r = fine.steps // coarse.steps
    if abs(coarse.dt - r * fine.dt) > 1e-12 * coarse.dt:
        raise ValueError("time steps are inconsistent with the step counts")
    lifted = [prolong(coarse.frame(n), fine_mesh).values for n in range(coarse.steps + 1)]
    total = 0.0
    for j in range(fine.steps):
        d = lifted[j // r + 1] - fine.frames[j + 1]
        total += fine.dt * float(np.sum(fine_mesh.volumes * d * d))
    return math.sqrt(total)


# ----------------------------------------------------------------- CSV out

def _fmt(x) -> str:
    return format(float(x), ".17g")


DIAGNOSTIC_COLUMNS = ("level", "sample", "epsilon", "dt") + RunDiagnostics.SCALARS


def write_diagnostics_csv(path, rows) -> None:
    """``rows`` are ``(level, RunDiagnostics)`` pairs, written sorted."""
    rows = sorted(rows, key=lambda r: (r[0], r[1].sample_index))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for level, d in rows:
            sc = d.scalars()
            w.writerow([level, d.sample_index, _fmt(d.epsilon), _fmt(d.dt)]
                       + [_fmt(sc[k]) for k in RunDiagnostics.SCALARS])


SUMMARY_COLUMNS = ("quantity", "mean", "std", "count", "stderr")


def write_summary_csv(path, stats: EnsembleStats) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for k in RunDiagnostics.SCALARS:
            q = stats[k]
            w.writerow([k, _fmt(q.mean), _fmt(q.std), q.count, _fmt(q.stderr)])
        for n in range(len(np.atleast_1d(stats.energy.mean))):
            e = stats.energy
            w.writerow([f"energy[{n}]", _fmt(e.mean[n]), _fmt(e.std[n]), e.count, _fmt(e.stderr[n])])
