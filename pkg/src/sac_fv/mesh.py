"""Admissible finite-volume meshes: construction, checking, and file I/O.

A mesh is a partition of a polygonal domain into convex control volumes with
one center point per cell.  The two-point flux across an interior face
``K|L`` is only consistent when the segment between the two centers is
orthogonal to the face, which is what :func:`check_admissibility` verifies.

Cells are stored as flat arrays.  For generated box grids the cell index is
the C-order ravel of the per-axis index, which :func:`parent_index` relies on
to map nested refinements.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

ORTHOGONALITY_TOL = 1e-10
VOLUME_TOL = 1e-12
DISTANCE_TOL = 1e-10


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mesh:
    """Geometry and combinatorics of a finite-volume mesh.

    Optional geometry (face normals and points, cell diameters, vertex
    degree) is needed by the admissibility and regularity checks but not by
    the scheme itself, so minimal ingested meshes can still be solved on.
    """

    dim: int
    centers: np.ndarray
    volumes: np.ndarray
    int_cells: np.ndarray
    int_measure: np.ndarray
    int_dist: np.ndarray
    ext_cells: np.ndarray
    ext_measure: np.ndarray
    total_volume: float
    diameters: np.ndarray | None = None
    int_normal: np.ndarray | None = None
    int_point: np.ndarray | None = None
    ext_normal: np.ndarray | None = None
    ext_point: np.ndarray | None = None
    max_vertex_degree: int | None = None
    resolution: tuple[int, ...] | None = None
    extents: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.dim}")
        set_ = lambda name, value: object.__setattr__(self, name, value)
        set_("centers", _frozen(self.centers).reshape(-1, self.dim))
        n = len(self.centers)
        set_("volumes", _frozen(self.volumes))
        set_("int_cells", _frozen(self.int_cells, np.int64).reshape(-1, 2))
        set_("int_measure", _frozen(self.int_measure))
        set_("int_dist", _frozen(self.int_dist))
        set_("ext_cells", _frozen(self.ext_cells, np.int64).reshape(-1))
        set_("ext_measure", _frozen(self.ext_measure))
        for name in ("diameters",):
            if getattr(self, name) is not None:
                set_(name, _frozen(getattr(self, name)))
        for name in ("int_normal", "int_point", "ext_normal", "ext_point"):
            if getattr(self, name) is not None:
                set_(name, _frozen(getattr(self, name)).reshape(-1, self.dim))
        if len(self.volumes) != n:
            raise ValueError("one volume per cell required")
        m, k = len(self.int_cells), len(self.ext_cells)
        if len(self.int_measure) != m or len(self.int_dist) != m:
            raise ValueError("interior edge arrays have inconsistent lengths")
        if len(self.ext_measure) != k:
            raise ValueError("exterior edge arrays have inconsistent lengths")
        if m and (self.int_cells.min() < 0 or self.int_cells.max() >= n):
            raise ValueError("interior edge references a cell out of range")
        if k and (self.ext_cells.min() < 0 or self.ext_cells.max() >= n):
            raise ValueError("exterior edge references a cell out of range")

    @property
    def n_cells(self) -> int:
        return len(self.volumes)

    @property
    def n_interior(self) -> int:
        return len(self.int_cells)

    @property
    def n_exterior(self) -> int:
        return len(self.ext_cells)

    @cached_property
    def transmissibility(self) -> np.ndarray:
        t = self.int_measure / self.int_dist
        t.setflags(write=False)
        return t

    @cached_property
    def h(self) -> float:
        """Mesh size, the largest cell diameter."""
        if self.diameters is None:
            raise ValueError("mesh carries no cell diameters")
        return float(self.diameters.max())

    @cached_property
    def regularity(self) -> float:
        return regularity(self)

    @cached_property
    def hash(self) -> str:
        buf = io.StringIO()
        write_mesh(self, buf)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()[:16]

    def with_centers(self, centers) -> "Mesh":
        """Copy of the mesh with moved cell centers and recomputed d_{K|L}."""
        centers = np.asarray(centers, dtype=float).reshape(-1, self.dim)
        K, L = self.int_cells.T
        dist = np.linalg.norm(centers[L] - centers[K], axis=1)
        return Mesh(
            dim=self.dim, centers=centers, volumes=self.volumes,
            int_cells=self.int_cells, int_measure=self.int_measure, int_dist=dist,
            ext_cells=self.ext_cells, ext_measure=self.ext_measure,
            total_volume=self.total_volume, diameters=self.diameters,
            int_normal=self.int_normal, int_point=self.int_point,
            ext_normal=self.ext_normal, ext_point=self.ext_point,
            max_vertex_degree=self.max_vertex_degree,
        )


def build_uniform_grid(dim: int, extents, resolution) -> Mesh:
    """Axis-aligned box grid on ``[0, extents[0]] x ... `` with centroid centers.

    Examples
    --------
    >>> m = build_uniform_grid(2, (1.0, 1.0), (2, 2))
    >>> m.n_cells, m.n_interior, m.n_exterior
    (4, 4, 8)
    """
    extents = tuple(float(e) for e in extents)
    resolution = tuple(int(r) for r in resolution)
    if len(extents) != dim or len(resolution) != dim:
        raise ValueError("extents and resolution need one entry per axis")
    if any(e <= 0 or not np.isfinite(e) for e in extents):
        raise ValueError(f"extents must be positive, got {extents}")
    if any(r < 1 for r in resolution):
        raise ValueError(f"resolution must be >= 1 per axis, got {resolution}")

    s = np.array(extents) / np.array(resolution)
    idx = np.indices(resolution).reshape(dim, -1).T
    centers = (idx + 0.5) * s
    n = len(centers)
    vol = float(np.prod(s))
    ids = np.arange(n).reshape(resolution)

    int_cells, int_measure, int_dist, int_normal, int_point = [], [], [], [], []
    ext_cells, ext_measure, ext_normal, ext_point = [], [], [], []
    for a in range(dim):
        face = vol / s[a]
        e = np.zeros(dim)
        e[a] = 1.0
        lo = [slice(None)] * dim
        hi = [slice(None)] * dim
        lo[a], hi[a] = slice(0, -1), slice(1, None)
        K = ids[tuple(lo)].ravel()
        L = ids[tuple(hi)].ravel()
        int_cells.append(np.stack([K, L], axis=1))
        int_measure.append(np.full(len(K), face))
        int_dist.append(np.full(len(K), s[a]))
        int_normal.append(np.tile(e, (len(K), 1)))
        int_point.append(centers[K] + 0.5 * s[a] * e)
        for side, sign in ((0, -1.0), (resolution[a] - 1, 1.0)):
            sl = [slice(None)] * dim
            sl[a] = side
            cells = ids[tuple(sl)].ravel()
            ext_cells.append(cells)
            ext_measure.append(np.full(len(cells), face))
            ext_normal.append(np.tile(sign * e, (len(cells), 1)))
            ext_point.append(centers[cells] + sign * 0.5 * s[a] * e)

    degree = sum(2 if r >= 2 else 1 for r in resolution)
    return Mesh(
        dim=dim,
        centers=centers,
        volumes=np.full(n, vol),
        int_cells=np.concatenate(int_cells).reshape(-1, 2),
        int_measure=np.concatenate(int_measure),
        int_dist=np.concatenate(int_dist),
        ext_cells=np.concatenate(ext_cells),
        ext_measure=np.concatenate(ext_measure),
        total_volume=float(np.prod(extents)),
        diameters=np.full(n, float(np.linalg.norm(s))),
        int_normal=np.concatenate(int_normal),
        int_point=np.concatenate(int_point),
        ext_normal=np.concatenate(ext_normal),
        ext_point=np.concatenate(ext_point),
        max_vertex_degree=degree,
        resolution=resolution,
        extents=extents,
    )


@dataclass(frozen=True)
class Violation:
    kind: str
    index: int
    value: float
    detail: str = ""

    def __str__(self):
        return f"{self.kind}[{self.index}] = {self.value:.6g} {self.detail}".rstrip()


@dataclass
class AdmissibilityReport:
    passed: bool
    violations: list[Violation]

    def summary(self) -> str:
        if self.passed:
            return "admissible"
        lines = [f"NOT admissible: {len(self.violations)} violation(s)"]
        lines += [f"  {v}" for v in self.violations]
        return "\n".join(lines)


def _angles(vec, normal):
    """Angle between the lines spanned by ``vec`` and ``normal`` (radians)."""
    nn = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    along = np.einsum("ij,ij->i", vec, nn)
    across = np.linalg.norm(vec - along[:, None] * nn, axis=1)
    return np.arctan2(across, np.abs(along))


def check_admissibility(mesh: Mesh) -> AdmissibilityReport:
    """Check the admissibility conditions; violations are returned, not raised."""
    out: list[Violation] = []

    def flag(kind, mask, values, detail=""):
        for i in np.flatnonzero(mask):
            out.append(Violation(kind, int(i), float(values[i]), detail))

    flag("cell_volume", ~(mesh.volumes > 0), mesh.volumes, "(m_K must be > 0)")
    flag("interior_measure", ~(mesh.int_measure > 0), mesh.int_measure)
    flag("exterior_measure", ~(mesh.ext_measure > 0), mesh.ext_measure)
    flag("center_distance", ~(mesh.int_dist > 0), mesh.int_dist, "(d_KL must be > 0)")

    K, L = mesh.int_cells.T
    seg = mesh.centers[L] - mesh.centers[K]
    seglen = np.linalg.norm(seg, axis=1)
    ok = mesh.int_dist > 0
    mismatch = np.zeros(mesh.n_interior, dtype=bool)
    mismatch[ok] = np.abs(seglen[ok] - mesh.int_dist[ok]) > DISTANCE_TOL * mesh.int_dist[ok]
    flag("distance_mismatch", mismatch, seglen, "(|x_L - x_K| differs from d_KL)")

    if mesh.int_normal is None:
        out.append(Violation("orthogonality_unverified", -1, float("nan"),
                             "(no face normals available)"))
    else:
        good = seglen > 0
        ang = np.zeros(mesh.n_interior)
        ang[good] = _angles(seg[good], mesh.int_normal[good])
        flag("orthogonality", ang > ORTHOGONALITY_TOL, ang, "rad")

    total = float(mesh.volumes.sum())
    rel = abs(total - mesh.total_volume) / abs(mesh.total_volume)
    if not rel <= VOLUME_TOL:
        out.append(Violation("volume_partition", -1, total,
                             f"(sum m_K vs |domain| = {mesh.total_volume:.17g})"))

    if mesh.ext_point is not None and mesh.ext_normal is not None:
        d_ext = np.abs(np.einsum("ij,ij->i", mesh.centers[mesh.ext_cells] - mesh.ext_point,
                                 mesh.ext_normal))
        flag("boundary_center_on_face", d_ext <= 0, d_ext, "(d(x_K, sigma) = 0)")

    if mesh.n_cells > 1:
        g = coo_matrix((np.ones(mesh.n_interior), (K, L)), shape=(mesh.n_cells,) * 2)
        ncomp, _ = connected_components(g, directed=False)
        if ncomp != 1:
            out.append(Violation("disconnected", -1, float(ncomp), "components"))

    if not out and _has_regularity_data(mesh) and mesh.n_interior:
        reg = regularity(mesh)
        ratio = mesh.h / mesh.int_dist
        flag("regularity_bound", ratio > reg * (1 + 1e-12), ratio, f"(h/d_KL > reg = {reg:.6g})")

    return AdmissibilityReport(passed=not out, violations=out)


def _has_regularity_data(mesh: Mesh) -> bool:
    return not any(x is None for x in (mesh.diameters, mesh.int_normal, mesh.int_point,
                                       mesh.ext_normal, mesh.ext_point,
                                       mesh.max_vertex_degree))


def regularity(mesh: Mesh) -> float:
    """Mesh regularity number ``max(N, max_{K, sigma} diam(K) / d(x_K, sigma))``.

    ``N`` is the maximum number of grid edges meeting at a vertex; the ratio
    runs over every face of every cell, interior and boundary.
    """
    if not _has_regularity_data(mesh):
        raise ValueError("regularity needs diameters, face geometry and vertex degree")
    K, L = mesh.int_cells.T

    def dist(cells, point, normal):
        nn = normal / np.linalg.norm(normal, axis=1, keepdims=True)
        return np.abs(np.einsum("ij,ij->i", mesh.centers[cells] - point, nn))

    cells = np.concatenate([K, L, mesh.ext_cells])
    d = np.concatenate([
        dist(K, mesh.int_point, mesh.int_normal),
        dist(L, mesh.int_point, mesh.int_normal),
        dist(mesh.ext_cells, mesh.ext_point, mesh.ext_normal),
    ])
    if np.any(d <= 0):
        raise ValueError("a cell center lies on one of its faces: d(x_K, sigma) = 0")
    return float(max(mesh.max_vertex_degree, np.max(mesh.diameters[cells] / d)))


def parent_index(coarse: Mesh, fine: Mesh) -> np.ndarray:
    """For each fine cell, the index of the coarse cell containing it.

    Both meshes must be generated box grids over the same extents with fine
    resolution an integer multiple of the coarse one along every axis.
    """
    if coarse.resolution is None or fine.resolution is None:
        raise ValueError("nesting is only defined between generated box grids")
    if coarse.dim != fine.dim or not np.allclose(coarse.extents, fine.extents, rtol=1e-14):
        raise ValueError("meshes cover different domains")
    ratio = []
    for rc, rf in zip(coarse.resolution, fine.resolution):
        if rf % rc:
            raise ValueError(f"resolution {fine.resolution} is not a refinement of {coarse.resolution}")
        ratio.append(rf // rc)
    fidx = np.indices(fine.resolution).reshape(fine.dim, -1)
    cidx = fidx // np.array(ratio)[:, None]
    return np.ravel_multi_index(tuple(cidx), coarse.resolution)


# ---------------------------------------------------------------- file format

def _fmt(x) -> str:
    return format(float(x), ".17g")


def write_mesh(mesh: Mesh, dest) -> None:
    """Write the line-oriented ``fvmesh`` text format to a path or text stream.

    Optional trailing columns carry the face geometry (unit normal followed by
    a point on the face) and cell diameters so that a round-tripped mesh can
    be re-checked.
    """
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            write_mesh(mesh, fh)
        return
    w = dest.write
    w(f"fvmesh {mesh.dim} {mesh.n_cells} {mesh.n_interior} {mesh.n_exterior}\n")
    w(f"V {_fmt(mesh.total_volume)}\n")
    if mesh.max_vertex_degree is not None:
        w(f"G {mesh.max_vertex_degree}\n")
    if mesh.resolution is not None:
        w("U " + " ".join(map(str, mesh.resolution)) + " "
          + " ".join(map(_fmt, mesh.extents)) + "\n")
    for k in range(mesh.n_cells):
        cols = [str(k), _fmt(mesh.volumes[k])] + [_fmt(x) for x in mesh.centers[k]]
        if mesh.diameters is not None:
            cols.append(_fmt(mesh.diameters[k]))
        w("C " + " ".join(cols) + "\n")
    for j, (K, L) in enumerate(mesh.int_cells):
        cols = [str(K), str(L), _fmt(mesh.int_measure[j]), _fmt(mesh.int_dist[j])]
        if mesh.int_normal is not None and mesh.int_point is not None:
            cols += [_fmt(x) for x in mesh.int_normal[j]] + [_fmt(x) for x in mesh.int_point[j]]
        w("I " + " ".join(cols) + "\n")
    for j, K in enumerate(mesh.ext_cells):
        cols = [str(K), _fmt(mesh.ext_measure[j])]
        if mesh.ext_normal is not None and mesh.ext_point is not None:
            cols += [_fmt(x) for x in mesh.ext_normal[j]] + [_fmt(x) for x in mesh.ext_point[j]]
        w("E " + " ".join(cols) + "\n")


def read_mesh(src) -> Mesh:
    """Parse the ``fvmesh`` format.  Raises ``ValueError`` on malformed input."""
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_mesh(fh)
    header = None
    cells, ints, exts = {}, [], []
    total = degree = grid = None
    for lineno, raw in enumerate(src, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "fvmesh":
                header = tuple(int(t) for t in tok[1:5])
                dim = header[0]
            elif header is None:
                raise ValueError("record before fvmesh header")
            elif tok[0] == "C":
                vals = [float(t) for t in tok[2:]]
                if len(vals) not in (1 + dim, 2 + dim):
                    raise ValueError("cell record has wrong arity")
                cells[int(tok[1])] = vals
            elif tok[0] == "I":
                vals = [float(t) for t in tok[3:]]
                if len(vals) not in (2, 2 + 2 * dim):
                    raise ValueError("interior edge record has wrong arity")
                ints.append((int(tok[1]), int(tok[2]), vals))
            elif tok[0] == "E":
                vals = [float(t) for t in tok[2:]]
                if len(vals) not in (1, 1 + 2 * dim):
                    raise ValueError("exterior edge record has wrong arity")
                exts.append((int(tok[1]), vals))
            elif tok[0] == "V":
                total = float(tok[1])
            elif tok[0] == "G":
                degree = int(tok[1])
            elif tok[0] == "U":
                grid = (tuple(int(t) for t in tok[1:1 + dim]),
                        tuple(float(t) for t in tok[1 + dim:1 + 2 * dim]))
            else:
                raise ValueError(f"unknown record type {tok[0]!r}")
        except (ValueError, IndexError) as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    if header is None:
        raise ValueError("missing fvmesh header")
    dim, nc, ni, ne = header
    if sorted(cells) != list(range(nc)) or len(ints) != ni or len(exts) != ne:
        raise ValueError("record counts do not match header")

    cvals = [cells[k] for k in range(nc)]
    volumes = np.array([v[0] for v in cvals])
    centers = np.array([v[1:1 + dim] for v in cvals])
    diam = np.array([v[1 + dim] for v in cvals]) if all(len(v) == 2 + dim for v in cvals) else None

    def geometry(rows, offset):
        if rows and all(len(v) == offset + 2 * dim for v in rows):
            arr = np.array([v[offset:] for v in rows])
            return arr[:, :dim], arr[:, dim:]
        if not rows:
            return np.zeros((0, dim)), np.zeros((0, dim))
        return None, None

    ivals = [v for _, _, v in ints]
    evals = [v for _, v in exts]
    int_normal, int_point = geometry(ivals, 2)
    ext_normal, ext_point = geometry(evals, 1)
    ext_measure = np.array([v[0] for v in evals])
    if total is None:
        if ext_point is not None and ext_normal is not None and ne:
            # divergence theorem over the planar boundary faces
            total = float(np.sum(ext_measure * np.einsum("ij,ij->i", ext_point, ext_normal)) / dim)
        else:
            total = float(volumes.sum())
    return Mesh(
        dim=dim, centers=centers, volumes=volumes,
        int_cells=np.array([(K, L) for K, L, _ in ints], dtype=np.int64).reshape(-1, 2),
        int_measure=np.array([v[0] for v in ivals]),
        int_dist=np.array([v[1] for v in ivals]),
        ext_cells=np.array([K for K, _ in exts], dtype=np.int64),
        ext_measure=ext_measure,
        total_volume=total, diameters=diam,
        int_normal=int_normal, int_point=int_point,
        ext_normal=ext_normal, ext_point=ext_point,
        max_vertex_degree=degree,
        resolution=grid[0] if grid else None,
        extents=grid[1] if grid else None,
    )


def cell_boxes(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Lower and upper corners, shape ``(n_cells, dim)``, of a generated box grid."""
    if mesh.resolution is None:
        raise ValueError("cell boxes are only known for generated box grids")
    s = np.array(mesh.extents) / np.array(mesh.resolution)
    idx = np.indices(mesh.resolution).reshape(mesh.dim, -1).T
    return idx * s, (idx + 1) * s
