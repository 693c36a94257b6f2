"""Semi-implicit TPFA time stepping for the penalized stochastic Allen-Cahn problem.

Each step solves, for every cell K,

    m_K (u_K - u^n_K) / dt + sum_{L ~ K} tau_KL (u_K - u_L) + m_K psi_eps(u_K)
        = m_K g(u^n_K) dW / dt + m_K beta(u_K) + m_K f^n_K

for ``u = u^{n+1}``.  Diffusion, penalty and ``beta`` are implicit; the noise
coefficient is frozen at ``u^n``.  The nonlinear system is solved by a damped
semismooth Newton iteration with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .fields import CellField, SpaceTimeField
from .mesh import Mesh
from .model import ModelSpec, discretize_source, yosida, yosida_slope
from .noise import BrownianPath

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Base class for step failures; ``step`` holds the failing step index."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step

    def __str__(self):
        base = super().__str__()
        return base if self.step is None else f"step {self.step}: {base}"


class NonConvergence(SolverError):
    pass


class LinearSolveFailure(SolverError):
    pass


class NonFinite(SolverError):
    pass


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    newton_max_iter: int = 50
    linear_tol: float = 1e-12
    linear_max_iter: int | None = None
    damping_min: float = 2.0 ** -20

    def __post_init__(self):
        for name in ("newton_tol", "linear_tol", "damping_min"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")


@dataclass(frozen=True)
class StepReport:
    newton_iters: int
    residual: float
    linear_iters: int
    damping_events: int


@dataclass(frozen=True, eq=False)
class StiffnessOperator:
    """Symmetric TPFA operator ``(A w)_K = sum_sigma tau_sigma (w_K - w_L)``."""

    matrix: sp.csr_matrix

    def __matmul__(self, w):
        return self.matrix @ w

    @property
    def diagonal(self) -> np.ndarray:
        return self.matrix.diagonal()

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def assemble_stiffness(mesh: Mesh) -> StiffnessOperator:
    n = mesh.n_cells
    K, L = mesh.int_cells.T
    tau = mesh.transmissibility
    rows = np.concatenate([K, L, K, L])
    cols = np.concatenate([L, K, K, L])
    vals = np.concatenate([-tau, -tau, tau, tau])
    A = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    A.sum_duplicates()
    return StiffnessOperator(A)


def pcg(A, b: np.ndarray, diag: np.ndarray, tol: float, maxiter: int):
    """Jacobi-preconditioned conjugate gradients from a zero initial guess.

    Stops when ``||r|| <= tol ||b||``.  Returns ``(x, iterations)``.
    """
    x = np.zeros_like(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return x, 0
    inv = 1.0 / diag
    r = b.copy()
    z = inv * r
    p = z.copy()
    rz = r @ z
    for k in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not np.isfinite(pAp):
            raise NonFinite("non-finite value in the linear solve")
        if not pAp > 0.0:
            raise LinearSolveFailure(f"non-positive curvature p'Ap = {pAp:.3e}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        if np.linalg.norm(r) <= tol * bnorm:
            return x, k
        z = inv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise LinearSolveFailure(f"CG stagnated: |r|/|b| = {np.linalg.norm(r) / bnorm:.3e} "
                             f"after {maxiter} iterations")


class _StepProblem:
    """Scaled residual ``G(u) = F(u) / m`` of one time step and its Jacobian."""

    def __init__(self, u_n, dW, f_n, spec: ModelSpec, A: StiffnessOperator, vol, dt):
        self.u_n = u_n
        self.spec = spec
        self.A = A.matrix
        self.vol = vol
        self.dt = dt
        self.eps = spec.epsilon
        # explicit part: everything not depending on u^{n+1}
        self.rhs = u_n / dt + spec.g(u_n) * (dW / dt) + f_n

    def scaled_residual(self, u):
        return (u / self.dt + (self.A @ u) / self.vol + yosida(u, self.eps)
                - self.spec.beta(u) - self.rhs)

    def merit(self, G):
        return float(np.sqrt(np.sum(self.vol * G * G)))

    def jacobian(self, u):
        d = 1.0 / self.dt + yosida_slope(u, self.eps) - self.spec.beta.slope(u)
        if np.any(d <= 0.0):
            raise LinearSolveFailure("Jacobian lost positive definiteness: dt * L_beta >= 1")
        return self.A + sp.diags(self.vol * d), self.A.diagonal() + self.vol * d


def newton_solve(problem: _StepProblem, u0: np.ndarray, cfg: SolverConfig):
    """Damped semismooth Newton for ``G(u) = 0``; returns ``(u, StepReport)``."""
    maxlin = cfg.linear_max_iter or 10 * len(u0) + 100
    u = np.array(u0, dtype=float)
    G = problem.scaled_residual(u)
    merit = problem.merit(G)
    lin_total = damped = 0
    for it in range(cfg.newton_max_iter + 1):
        if not np.all(np.isfinite(G)):
            raise NonFinite("non-finite residual")
        res = float(np.max(np.abs(G)))
        if res <= cfg.newton_tol:
            return u, StepReport(it, res, lin_total, damped)
        if it == cfg.newton_max_iter:
            break
        J, diag = problem.jacobian(u)
        delta, nlin = pcg(J, -problem.vol * G, diag, cfg.linear_tol, maxlin)
        lin_total += nlin
        lam = 1.0
        while True:
            trial = u + lam * delta
            G_trial = problem.scaled_residual(trial)
            m_trial = problem.merit(G_trial)
            if m_trial < merit:
                break
            lam *= 0.5
            damped += 1
            if lam < cfg.damping_min:
                raise NonConvergence(f"line search hit the damping floor at residual {res:.3e}")
        u, G, merit = trial, G_trial, m_trial
    raise NonConvergence(f"no convergence in {cfg.newton_max_iter} Newton iterations "
                         f"(residual {float(np.max(np.abs(G))):.3e})")


def _step_values(u_n, dW, f_n, spec, A, mesh, cfg, dt, u_init=None):
    problem = _StepProblem(u_n, dW, f_n, spec, A, mesh.volumes, dt)
    return newton_solve(problem, u_n if u_init is None else u_init, cfg)


def step(u_n: CellField, dW: float, f_n: CellField, spec: ModelSpec, A: StiffnessOperator,
         cfg: SolverConfig, dt: float, u_init=None) -> tuple[CellField, StepReport]:
    """Advance one time step.  ``u_init`` overrides the Newton starting guess."""
    mesh = u_n.mesh
    guess = None if u_init is None else np.asarray(getattr(u_init, "values", u_init), dtype=float)
    u, report = _step_values(u_n.values, float(dW), f_n.values, spec, A, mesh, cfg, dt, guess)
    return CellField(mesh, u), report


def run_path(u0_field: CellField, path: BrownianPath, spec: ModelSpec, mesh: Mesh,
             cfg: SolverConfig | None = None, A: StiffnessOperator | None = None,
             ) -> tuple[SpaceTimeField, list[StepReport]]:
    """Run the scheme along one Brownian path, returning all frames."""
    cfg = cfg or SolverConfig()
    if abs(path.horizon - spec.horizon) > 1e-12 * spec.horizon:
        raise ValueError(f"path covers [0, {path.horizon}] but the horizon is {spec.horizon}")
    if u0_field.mesh is not mesh:
        raise ValueError("initial field lives on a different mesh")
    A = A or assemble_stiffness(mesh)
    dt = path.dt
    dW = path.increments
    zero_source = spec.f.name == "zero"
    stf = SpaceTimeField(mesh, dt)
    stf.append(u0_field)
    reports = []
    u = u0_field.values
    for n in range(path.n_steps):
        f_n = np.zeros(mesh.n_cells) if zero_source else discretize_source(spec.f, mesh, n, dt).values
        try:
            u, rep = _step_values(u, dW[n], f_n, spec, A, mesh, cfg, dt)
            stf.append(u)
        except SolverError as exc:
            exc.step = n
            raise
        except FloatingPointError as exc:
            raise NonFinite(str(exc), step=n) from exc
        reports.append(rep)
    log.debug("path %d: %d steps, %d Newton iterations", path.sample_index, path.n_steps,
              sum(r.newton_iters for r in reports))
    return stf.freeze(), reports
