"""Cell-centered fields, discrete norms, time interpolants and grid transfer."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .mesh import Mesh, parent_index


class NonFiniteError(FloatingPointError):
    """A field contains NaN or Inf."""


@dataclass(frozen=True, eq=False)
class CellField:
    """One real value per control volume of ``mesh``."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_cells,):
            raise ValueError(f"expected {self.mesh.n_cells} values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError("cell field has non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __len__(self):
        return len(self.values)

    @classmethod
    def constant(cls, mesh: Mesh, c: float) -> "CellField":
        return cls(mesh, np.full(mesh.n_cells, float(c)))


class SpaceTimeField:
    """Frames ``u^0 .. u^N`` on a uniform time grid ``t_n = n dt``.

    Frames are appended during a run; :meth:`freeze` makes the container
    read-only.  The right and left interpolants are piecewise constant on
    ``[t_n, t_{n+1})`` with values ``u^{n+1}`` and ``u^n`` respectively.
    """

    def __init__(self, mesh: Mesh, dt: float, frames=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.mesh = mesh
        self.dt = float(dt)
        self._frames: list[np.ndarray] = []
        self._array: np.ndarray | None = None
        for f in frames if frames is not None else []:
            self.append(f)

    def append(self, frame) -> None:
        if self._array is not None:
            raise RuntimeError("space-time field is frozen")
        v = frame.values if isinstance(frame, CellField) else np.asarray(frame, dtype=float)
        if v.shape != (self.mesh.n_cells,):
            raise ValueError("frame does not match the mesh")
        if not np.all(np.isfinite(v)):
            raise NonFiniteError(f"frame {len(self._frames)} has non-finite entries")
        self._frames.append(np.array(v, dtype=float))

    def freeze(self) -> "SpaceTimeField":
        if self._array is None:
            if len(self._frames) < 2:
                raise ValueError("need at least two frames (N >= 1)")
            arr = np.stack(self._frames)
            arr.setflags(write=False)
            self._array = arr
            self._frames = []
        return self

    @property
    def frames(self) -> np.ndarray:
        """Array of shape ``(N + 1, n_cells)``."""
        return self.freeze()._array

    @property
    def steps(self) -> int:
        return len(self.frames) - 1

    @property
    def horizon(self) -> float:
        return self.steps * self.dt

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def frame(self, n: int) -> CellField:
        return CellField(self.mesh, self.frames[n])

    def _interval(self, t: float) -> int:
        T = self.horizon
        if not 0.0 <= t <= T * (1 + 1e-14):
            raise ValueError(f"t = {t} outside [0, {T}]")
        return int(np.searchsorted(self.times, t, side="right")) - 1


def evaluate_right(stf: SpaceTimeField, t: float) -> CellField:
    """Right interpolant: ``u^{n+1}`` on ``[t_n, t_{n+1})`` and ``u^N`` at ``T``."""
    n = stf._interval(t)
    return stf.frame(min(n + 1, stf.steps))


def evaluate_left(stf: SpaceTimeField, t: float) -> CellField:
    """Left interpolant: ``u^n`` on ``[t_n, t_{n+1})``; at ``T`` returns ``u^{N-1}``."""
    n = stf._interval(t)
    return stf.frame(min(n, stf.steps - 1))


# ------------------------------------------------------------------- norms

def _check(field: CellField) -> np.ndarray:
    if not isinstance(field, CellField):
        raise TypeError("expected a CellField")
    return field.values


def l2_norm(field: CellField) -> float:
    w = _check(field)
    return float(np.sqrt(np.sum(field.mesh.volumes * w * w)))


def h1_seminorm(field: CellField) -> float:
    w = _check(field)
    mesh = field.mesh
    K, L = mesh.int_cells.T
    diff = w[K] - w[L]
    return float(np.sqrt(np.sum(mesh.transmissibility * diff * diff)))


def weak_gradient(field: CellField) -> np.ndarray:
    """Edgewise weak gradient vectors ``d (w_L - w_K) / d_KL * n_{K,sigma}``.

    Only interior edges are returned; the gradient is zero on the boundary.
    Without stored normals the unit vector along ``x_L - x_K`` is used.
    """
    w = _check(field)
    mesh = field.mesh
    K, L = mesh.int_cells.T
    if mesh.int_normal is not None:
        n = mesh.int_normal / np.linalg.norm(mesh.int_normal, axis=1, keepdims=True)
    else:
        seg = mesh.centers[L] - mesh.centers[K]
        n = seg / np.linalg.norm(seg, axis=1, keepdims=True)
    return (mesh.dim * (w[L] - w[K]) / mesh.int_dist)[:, None] * n


def weak_gradient_norm(field: CellField) -> float:
    """Discrete ``(L^2)^d`` norm of the weak gradient.

    Each interior edge carries the diamond volume ``d_KL m_sigma / d``.
    """
    mesh = field.mesh
    g = weak_gradient(field)
    weight = mesh.int_dist * mesh.int_measure / mesh.dim
    return float(np.sqrt(np.sum(weight * np.einsum("ij,ij->i", g, g))))


def partial_integration_sides(w: CellField, wt: CellField) -> tuple[float, float]:
    """Cellwise and edgewise forms of ``sum_K sum_sigma tau (w_K - w_L) wt_K``."""
    if w.mesh is not wt.mesh:
        raise ValueError("fields live on different meshes")
    mesh = w.mesh
    a, b = _check(w), _check(wt)
    K, L = mesh.int_cells.T
    tau = mesh.transmissibility
    flux = tau * (a[K] - a[L])
    per_cell = np.bincount(K, weights=flux, minlength=mesh.n_cells)
    per_cell -= np.bincount(L, weights=flux, minlength=mesh.n_cells)
    lhs = float(np.sum(per_cell * b))
    rhs = float(np.sum(flux * (b[K] - b[L])))
    return lhs, rhs


def partial_integration_residual(w: CellField, wt: CellField) -> float:
    lhs, rhs = partial_integration_sides(w, wt)
    return abs(lhs - rhs)


# ----------------------------------------------------------- grid transfer

def prolong(field: CellField, fine_mesh: Mesh) -> CellField:
    """Piecewise-constant injection onto a nested refinement."""
    parent = parent_index(field.mesh, fine_mesh)
    return CellField(fine_mesh, field.values[parent])


def restrict(field: CellField, coarse_mesh: Mesh) -> CellField:
    """Volume-weighted average onto a coarser nested grid."""
    fine = field.mesh
    parent = parent_index(coarse_mesh, fine)
    mass = np.bincount(parent, weights=fine.volumes * field.values, minlength=coarse_mesh.n_cells)
    vol = np.bincount(parent, weights=fine.volumes, minlength=coarse_mesh.n_cells)
    return CellField(coarse_mesh, mass / vol)


# --------------------------------------------------------------------- I/O

def write_field(field: CellField, dest) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            return write_field(field, fh)
    dest.write(f"fvfield {field.mesh.hash} {len(field)}\n")
    dest.writelines(format(float(x), ".17g") + "\n" for x in field.values)


def read_field(src, mesh: Mesh) -> CellField:
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_field(fh, mesh)
    head = src.readline().split()
    if len(head) != 3 or head[0] != "fvfield":
        raise ValueError("missing fvfield header")
    if head[1] != mesh.hash:
        raise ValueError(f"field was written for mesh {head[1]}, not {mesh.hash}")
    values = np.array([float(line) for line in src if line.strip()])
    if len(values) != int(head[2]):
        raise ValueError("value count does not match header")
    return CellField(mesh, values)


def save_space_time(stf: SpaceTimeField, directory, seed=None, sample=None) -> None:
    """Write one ``fvfield`` file per frame plus ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    names = []
    for n in range(stf.steps + 1):
        name = f"frame_{n:06d}.txt"
        write_field(stf.frame(n), d / name)
        names.append(name)
    manifest = {"steps": stf.steps, "dt": stf.dt, "seed": seed, "sample": sample,
                "mesh_hash": stf.mesh.hash, "frames": names}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def load_space_time(directory, mesh: Mesh) -> SpaceTimeField:
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    if manifest["mesh_hash"] != mesh.hash:
        raise ValueError("space-time field belongs to a different mesh")
    stf = SpaceTimeField(mesh, manifest["dt"])
    for name in manifest["frames"]:
        stf.append(read_field(d / name, mesh))
    return stf.freeze()
