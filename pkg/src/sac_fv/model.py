"""Problem data: Yosida penalty, coefficient presets, projections, schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .fields import CellField
from .mesh import Mesh, cell_boxes

SMALLNESS_LIMIT = 0.75
SPACE_QUAD_ORDER = 3
TIME_QUAD_ORDER = 2


# ----------------------------------------------------------- Yosida penalty

def _eps(eps):
    if not eps > 0:
        raise ValueError(f"epsilon must be positive, got {eps}")


def yosida(v, eps):
    """Moreau-Yosida approximation of the subdifferential of I_[0,1].

    ``v/eps`` below 0, zero on [0, 1], ``(v - 1)/eps`` above 1.
    """
    _eps(eps)
    v = np.asarray(v, dtype=float)
    out = (np.minimum(v, 0.0) + np.maximum(v - 1.0, 0.0)) / eps
    return out if out.ndim else float(out)


def yosida_antiderivative(v, eps):
    """Convex antiderivative of :func:`yosida`, zero on [0, 1]."""
    _eps(eps)
    v = np.asarray(v, dtype=float)
    lo = np.minimum(v, 0.0)
    hi = np.maximum(v - 1.0, 0.0)
    out = (lo * lo + hi * hi) / (2.0 * eps)
    return out if out.ndim else float(out)


def yosida_slope(v, eps):
    """Element of the generalized derivative; 0 at the kinks v = 0 and v = 1."""
    _eps(eps)
    v = np.asarray(v, dtype=float)
    out = np.where((v < 0.0) | (v > 1.0), 1.0 / eps, 0.0)
    return out if out.ndim else float(out)


def negative_part(v):
    return np.maximum(-np.asarray(v, dtype=float), 0.0)


def overshoot(v):
    return np.maximum(np.asarray(v, dtype=float) - 1.0, 0.0)


# ------------------------------------------------------------------ presets

@dataclass(frozen=True)
class ScalarFunction:
    """Named scalar nonlinearity ``u -> value`` with a declared Lipschitz bound."""

    name: str
    params: dict
    fn: Callable = field(repr=False, compare=False)
    deriv: Callable | None = field(default=None, repr=False, compare=False)
    lipschitz: float = 0.0

    def __call__(self, u):
        return self.fn(np.asarray(u, dtype=float))

    def slope(self, u):
        """Exact derivative when available, else a central secant with delta 1e-8."""
        u = np.asarray(u, dtype=float)
        if self.deriv is not None:
            return self.deriv(u)
        d = 1e-8
        return (self.fn(u + d) - self.fn(u - d)) / (2 * d)


@dataclass(frozen=True)
class SpaceFunction:
    """Named function of ``x`` with shape ``(..., dim)``."""

    name: str
    params: dict
    fn: Callable = field(repr=False, compare=False)

    def __call__(self, x):
        return self.fn(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class SourceFunction:
    """Named deterministic source ``(t, x) -> value``."""

    name: str
    params: dict
    fn: Callable = field(repr=False, compare=False)

    def __call__(self, t, x):
        return self.fn(np.asarray(t, dtype=float), np.asarray(x, dtype=float))


def make_beta(name: str, **params) -> ScalarFunction:
    lam = float(params.get("lam", 0.0))
    if name == "zero":
        return ScalarFunction(name, {}, lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), 0.0)
    if name == "linear":
        return ScalarFunction(name, {"lam": lam}, lambda u: lam * u,
                              lambda u: np.full_like(u, lam), abs(lam))
    if name == "sine":
        return ScalarFunction(name, {"lam": lam}, lambda u: lam * np.sin(u),
                              lambda u: lam * np.cos(u), abs(lam))
    raise ValueError(f"unknown beta preset {name!r}")


def make_g(name: str, **params) -> ScalarFunction:
    sigma = float(params.get("sigma", 0.0))
    if name == "zero":
        return ScalarFunction(name, {}, lambda u: np.zeros_like(u), lambda u: np.zeros_like(u), 0.0)
    if name == "logistic":
        def fn(u):
            return sigma * np.maximum(0.0, u * (1.0 - u))

        def deriv(u):
            return np.where((u > 0.0) & (u < 1.0), sigma * (1.0 - 2.0 * u), 0.0)

        return ScalarFunction(name, {"sigma": sigma}, fn, deriv, abs(sigma))
    raise ValueError(f"unknown g preset {name!r}")


def make_u0(name: str, **params) -> SpaceFunction:
    if name == "constant":
        c = float(params.get("c", 0.5))
        return SpaceFunction(name, {"c": c}, lambda x: np.full(x.shape[:-1], c))
    if name == "cosine":
        a = float(params.get("a", 1.0))
        k = float(params.get("k", 1.0))
        return SpaceFunction(name, {"a": a, "k": k},
                             lambda x: 0.5 * (1.0 + a * np.cos(math.pi * k * x[..., 0])))
    if name == "clipped_linear":
        c0 = float(params.get("c0", 0.0))
        c1 = float(params.get("c1", 1.0))
        return SpaceFunction(name, {"c0": c0, "c1": c1},
                             lambda x: np.clip(c0 + c1 * x[..., 0], 0.0, 1.0))
    if name == "x1":
        return SpaceFunction(name, {}, lambda x: x[..., 0].copy())
    if name == "x1_squared":
        return SpaceFunction(name, {}, lambda x: x[..., 0] ** 2)
    raise ValueError(f"unknown u0 preset {name!r}")


def make_source(name: str, **params) -> SourceFunction:
    c = float(params.get("c", 1.0))
    if name == "zero":
        return SourceFunction(name, {}, lambda t, x: np.zeros(np.broadcast_shapes(t.shape, x.shape[:-1])))
    if name == "constant":
        return SourceFunction(name, {"c": c},
                              lambda t, x: np.full(np.broadcast_shapes(t.shape, x.shape[:-1]), c))
    if name == "time":
        return SourceFunction(name, {"c": c}, lambda t, x: c * t * np.ones(x.shape[:-1]))
    if name == "x1":
        return SourceFunction(name, {"c": c}, lambda t, x: c * x[..., 0] * np.ones_like(t))
    if name == "product":
        return SourceFunction(name, {"c": c}, lambda t, x: c * t * x[..., 0])
    raise ValueError(f"unknown source preset {name!r}")


# ---------------------------------------------------------------- ModelSpec

@dataclass(frozen=True)
class ModelSpec:
    """Problem data on the box domain ``[0, extents]``.

    ``dt`` is the coupled time step ``C * epsilon**(2 + theta)``; runs may use
    a prescribed step count instead, in which case ``T / steps`` is checked.
    """

    epsilon: float
    theta: float
    coupling_constant: float
    beta: ScalarFunction
    g: ScalarFunction
    f: SourceFunction
    u0: SpaceFunction
    horizon: float
    extents: tuple[float, ...] = (1.0, 1.0)

    @property
    def lipschitz_beta(self) -> float:
        return self.beta.lipschitz

    @property
    def lipschitz_g(self) -> float:
        return self.g.lipschitz

    @property
    def dt(self) -> float:
        return self.coupling_constant * self.epsilon ** (2.0 + self.theta)

    def coupled_steps(self) -> int:
        """Smallest N with ``T / N <= C * eps**(2 + theta)``."""
        ratio = self.horizon / self.dt
        n = math.ceil(ratio - 1e-9 * ratio)
        return max(n, 1)

    def with_epsilon(self, eps: float) -> "ModelSpec":
        return replace(self, epsilon=float(eps))


def preset_stochastic(**overrides) -> ModelSpec:
    """Stochastic preset in which the growth term carries the solution into the constraint.

    ``u0 = (1 + cos(pi x1)) / 2`` touches 1 at ``x1 = 0`` and ``beta(u) = u``
    lifts the profile towards the upper obstacle within the horizon, while
    ``g(u) = max(0, u(1 - u))`` keeps the noise active wherever ``0 < u < 1``.
    With ``eps = 0.1`` and ``C = 62.5`` the coupled step count is 16.
    """
    base = dict(
        epsilon=0.1, theta=1.0, coupling_constant=62.5,
        beta=make_beta("linear", lam=1.0), g=make_g("logistic", sigma=1.0),
        f=make_source("zero"), u0=make_u0("cosine", a=1.0),
        horizon=1.0, extents=(1.0, 1.0),
    )
    base.update(overrides)
    return ModelSpec(**base)


def preset_heat(**overrides) -> ModelSpec:
    """Noise-free, source-free preset: the discrete Neumann heat equation."""
    base = dict(
        epsilon=0.1, theta=0.5, coupling_constant=1.0,
        beta=make_beta("zero"), g=make_g("zero"), f=make_source("zero"),
        u0=make_u0("cosine", a=1.0), horizon=0.1, extents=(1.0, 1.0),
    )
    base.update(overrides)
    return ModelSpec(**base)


# --------------------------------------------------------------- quadrature

def _gauss_box(mesh: Mesh, order: int):
    """Tensor Gauss-Legendre nodes ``(n_cells, q, dim)`` and weights ``(q,)``.

    Weights are normalized to sum to one so that a weighted sum is a cell
    average.  Meshes without box geometry fall back to the center value.
    """
    if mesh.resolution is None:
        return mesh.centers[:, None, :], np.ones(1)
    lo, hi = cell_boxes(mesh)
    xi, wi = np.polynomial.legendre.leggauss(order)
    xi = 0.5 * (xi + 1.0)
    wi = 0.5 * wi
    grids = np.meshgrid(*([xi] * mesh.dim), indexing="ij")
    ref = np.stack([g.ravel() for g in grids], axis=1)
    w = np.prod(np.stack(np.meshgrid(*([wi] * mesh.dim), indexing="ij")), axis=0).ravel()
    nodes = lo[:, None, :] + ref[None, :, :] * (hi - lo)[:, None, :]
    return nodes, w


def cell_average(fn, mesh: Mesh, order: int = SPACE_QUAD_ORDER) -> np.ndarray:
    nodes, w = _gauss_box(mesh, order)
    return np.asarray(fn(nodes), dtype=float) @ w


def project_initial(u0, mesh: Mesh) -> CellField:
    """Cell averages of ``u0`` by order-3 tensor Gauss quadrature."""
    return CellField(mesh, cell_average(u0, mesh))


def function_l2_sq(fn, mesh: Mesh, order: int = 10) -> float:
    """High-order quadrature of ``int |fn|^2`` over the mesh cells."""
    nodes, w = _gauss_box(mesh, order)
    vals = np.asarray(fn(nodes), dtype=float)
    return float(np.sum(mesh.volumes * ((vals * vals) @ w)))


def discretize_source(f, mesh: Mesh, n: int, dt: float) -> CellField:
    """Space-time average of ``f`` over ``(t_n, t_{n+1}) x K``."""
    if n < 0:
        raise ValueError("step index must be nonnegative")
    nodes, w = _gauss_box(mesh, SPACE_QUAD_ORDER)
    tau, wt = np.polynomial.legendre.leggauss(TIME_QUAD_ORDER)
    t0 = n * dt
    acc = np.zeros(mesh.n_cells)
    for ti, wi in zip(t0 + 0.5 * dt * (tau + 1.0), 0.5 * wt):
        acc += wi * (np.asarray(f(np.asarray(ti), nodes), dtype=float) @ w)
    return CellField(mesh, acc)


def source_norm_sq(f, mesh: Mesh, horizon: float, steps: int) -> float:
    """``||f||^2`` in ``L^2(0, T; L^2)`` by the same space-time quadrature."""
    dt = horizon / steps
    nodes, w = _gauss_box(mesh, SPACE_QUAD_ORDER)
    tau, wt = np.polynomial.legendre.leggauss(TIME_QUAD_ORDER)
    total = 0.0
    for n in range(steps):
        for ti, wi in zip(n * dt + 0.5 * dt * (tau + 1.0), 0.5 * wt):
            vals = np.asarray(f(np.asarray(ti), nodes), dtype=float)
            total += dt * wi * float(np.sum(mesh.volumes * ((vals * vals) @ w)))
    return total


# --------------------------------------------------------------- validation

@dataclass
class ValidationReport:
    passed: bool
    failures: list[str]

    def summary(self) -> str:
        return "valid" if self.passed else "invalid:\n" + "\n".join(f"  {f}" for f in self.failures)


def _sample_slopes(fn, points):
    vals = fn(points)
    return np.abs(np.diff(vals) / np.diff(points))


def validate(spec: ModelSpec, dt: float | None = None) -> ValidationReport:
    """Check the data assumptions and the step-size smallness condition."""
    fails = []
    if not 0.0 < spec.epsilon < 1.0:
        fails.append(f"epsilon = {spec.epsilon} not in (0, 1)")
    if not spec.theta > 0:
        fails.append(f"theta = {spec.theta} must be positive")
    if not spec.coupling_constant > 0:
        fails.append(f"coupling constant = {spec.coupling_constant} must be positive")
    if not spec.horizon > 0:
        fails.append(f"horizon = {spec.horizon} must be positive")

    # A1: initial datum inside [0, 1]
    axes = [np.linspace(0.0, e, 41) for e in spec.extents]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(spec.extents))
    u0 = spec.u0(pts)
    if not np.all(np.isfinite(u0)) or u0.min() < 0.0 or u0.max() > 1.0:
        fails.append(f"A1: u0 takes values in [{u0.min():.6g}, {u0.max():.6g}], outside [0, 1]")

    # A2: g Lipschitz, supported in [0, 1]
    grid = np.linspace(-3.0, 4.0, 7001)
    outside = np.concatenate([np.linspace(-3.0, -1e-9, 500), np.linspace(1.0 + 1e-9, 4.0, 500)])
    if np.any(spec.g(outside) != 0.0):
        fails.append("A2: g does not vanish outside [0, 1]")
    slope_g = _sample_slopes(spec.g, grid).max()
    if slope_g > spec.lipschitz_g * (1 + 1e-6) + 1e-12:
        fails.append(f"A2: sampled slope of g {slope_g:.6g} exceeds L_g = {spec.lipschitz_g}")

    # A3: beta Lipschitz with beta(0) = 0
    if abs(float(spec.beta(np.array(0.0)))) > 0.0:
        fails.append("A3: beta(0) != 0")
    slope_b = _sample_slopes(spec.beta, grid).max()
    if slope_b > spec.lipschitz_beta * (1 + 1e-6) + 1e-12:
        fails.append(f"A3: sampled slope of beta {slope_b:.6g} exceeds L_beta = {spec.lipschitz_beta}")

    # A4: deterministic source, finite on the space-time box
    ts = np.linspace(0.0, spec.horizon, 5)
    fv = np.stack([spec.f(np.asarray(t), pts) for t in ts])
    if not np.all(np.isfinite(fv)):
        fails.append("A4: source takes non-finite values")

    step = spec.dt if dt is None else dt
    margin = step * (2.0 * spec.lipschitz_beta + 1.0)
    if not margin <= SMALLNESS_LIMIT:
        fails.append(f"smallness: dt (2 L_beta + 1) = {margin:.6g} > {SMALLNESS_LIMIT}")
    return ValidationReport(not fails, fails)


# ----------------------------------------------------------------- schedule

class ScheduleError(ValueError):
    pass


@dataclass(frozen=True)
class Level:
    epsilon: float
    dt: float
    steps: int
    resolution: tuple[int, ...]


@dataclass(frozen=True)
class CouplingSchedule:
    levels: tuple[Level, ...]
    theta: float
    coupling_constant: float
    horizon: float

    def __len__(self):
        return len(self.levels)

    def __iter__(self):
        return iter(self.levels)

    def __getitem__(self, i):
        return self.levels[i]


def build_schedule(spec: ModelSpec, levels: int, base_resolution, base_steps: int,
                   kappa: int = 1) -> CouplingSchedule:
    """Nested levels with ``N_m = base_steps * 2**(kappa m)`` and doubling resolution.

    ``epsilon_m`` is derived from ``N_m`` so that ``dt_m = C eps_m**(2 + theta)``
    holds exactly.
    """
    if levels < 2:
        raise ScheduleError("a schedule needs at least two levels")
    if base_steps < 1 or kappa < 1:
        raise ScheduleError("base_steps and kappa must be positive")
    T, C, th = spec.horizon, spec.coupling_constant, spec.theta
    out = []
    for m in range(levels):
        n = base_steps * 2 ** (kappa * m)
        dt = T / n
        eps = (dt / C) ** (1.0 / (2.0 + th))
        if not 0.0 < eps < 1.0:
            raise ScheduleError(f"level {m}: epsilon = {eps:.6g} not in (0, 1)")
        if dt * (2.0 * spec.lipschitz_beta + 1.0) > SMALLNESS_LIMIT:
            raise ScheduleError(f"level {m}: dt (2 L_beta + 1) = "
                                f"{dt * (2 * spec.lipschitz_beta + 1):.6g} > {SMALLNESS_LIMIT}")
        res = tuple(int(r) * 2 ** m for r in base_resolution)
        out.append(Level(eps, dt, n, res))
    return CouplingSchedule(tuple(out), th, C, T)
