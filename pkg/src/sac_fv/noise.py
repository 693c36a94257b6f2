"""Counter-based Brownian increments with exact nesting across time levels.

Increment ``k`` of sample ``s`` under master seed ``seed`` is a pure function
of ``(seed, s, k)``: a Philox-4x64 block keyed by ``(seed, s)`` supplies the
raw 64-bit word, which is mapped to ``(0, 1)`` and pushed through Wichura's
AS 241 rational approximation of the normal quantile.  Nothing depends on
generation order or on which worker produced which sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

_MASK64 = (1 << 64) - 1

# AS 241 (PPND16), Wichura 1988
_A = (3.3871328727963666080e0, 1.3314166789178437745e2, 1.9715909503065514427e3,
      1.3731693765509461125e4, 4.5921953931549871457e4, 6.7265770927008700853e4,
      3.3430575583588128105e4, 2.5090809287301226727e3)
_B = (1.0, 4.2313330701600911252e1, 6.8718700749205790830e2, 5.3941960214247511077e3,
      2.1213794301586595867e4, 3.9307895800092710610e4, 2.8729085735721942674e4,
      5.2264952788528545610e3)
_C = (1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4)
_D = (1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9)
_E = (6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7)
_F = (1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15)


def _poly(coef, x):
    acc = np.full_like(x, coef[-1])
    for c in coef[-2::-1]:
        acc = acc * x + c
    return acc


def normal_quantile(p) -> np.ndarray:
    """Standard normal quantile for ``p`` in (0, 1), AS 241 (about 1e-16 accurate)."""
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise ValueError("probabilities must lie strictly inside (0, 1)")
    q = p - 0.5
    out = np.empty_like(p)
    central = np.abs(q) <= 0.425
    if central.any():
        qc = q[central]
        r = 0.180625 - qc * qc
        out[central] = qc * _poly(_A, r) / _poly(_B, r)
    tail = ~central
    if tail.any():
        qt = q[tail]
        r = np.sqrt(-np.log(np.where(qt < 0.0, p[tail], 1.0 - p[tail])))
        near = r <= 5.0
        val = np.empty_like(r)
        rn = r[near] - 1.6
        val[near] = _poly(_C, rn) / _poly(_D, rn)
        rf = r[~near] - 5.0
        val[~near] = _poly(_E, rf) / _poly(_F, rf)
        out[tail] = np.where(qt < 0.0, -val, val)
    return out


def _raw_words(seed: int, sample: int, start: int, stop: int) -> np.ndarray:
    if not (0 <= seed <= _MASK64 and 0 <= sample <= _MASK64):
        raise ValueError("seed and sample index must be unsigned 64-bit integers")
    bg = np.random.Philox(key=seed | (sample << 64))
    block0 = start // 4
    if block0:
        bg.advance(block0)
    words = bg.random_raw(stop - 4 * block0)
    return np.asarray(words[start - 4 * block0:], dtype=np.uint64)


def standard_normals(seed: int, sample: int, start: int, stop: int) -> np.ndarray:
    """Draws ``start .. stop-1`` of the standard normal stream of one sample."""
    if not 0 <= start <= stop:
        raise ValueError("need 0 <= start <= stop")
    words = _raw_words(seed, sample, start, stop)
    u = ((words >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    return normal_quantile(u)


@dataclass(frozen=True, eq=False)
class BrownianPath:
    """Increments ``W(t_{n+1}) - W(t_n)`` of one sample at one time level.

    ``base`` holds the finest-level increments the path was sampled at;
    ``factor`` consecutive base increments are summed, left to right, into
    each increment of this level.
    """

    seed: int
    sample_index: int
    base: np.ndarray = field(repr=False)
    base_dt: float
    factor: int = 1

    def __post_init__(self):
        b = np.array(self.base, dtype=float)
        b.setflags(write=False)
        object.__setattr__(self, "base", b)
        if len(b) % self.factor:
            raise ValueError("factor must divide the number of base increments")

    @property
    def n_steps(self) -> int:
        return len(self.base) // self.factor

    @property
    def dt(self) -> float:
        return self.base_dt * self.factor

    @property
    def horizon(self) -> float:
        return self.base_dt * len(self.base)

    @property
    def increments(self) -> np.ndarray:
        cached = self.__dict__.get("_increments")
        if cached is None:
            blocks = self.base.reshape(self.n_steps, self.factor)
            acc = blocks[:, 0].copy()
            for j in range(1, self.factor):
                acc += blocks[:, j]
            acc.setflags(write=False)
            self.__dict__["_increments"] = cached = acc
        return cached


def sample_path(seed: int, sample_index: int, n_steps: int, dt: float) -> BrownianPath:
    """``n_steps`` independent ``N(0, dt)`` increments for one ensemble member."""
    if n_steps < 1:
        raise ValueError("a path needs at least one step")
    if not dt > 0:
        raise ValueError("dt must be positive")
    z = standard_normals(seed, sample_index, 0, n_steps)
    return BrownianPath(seed, sample_index, np.sqrt(dt) * z, float(dt))


def coarsen(path: BrownianPath, factor: int) -> BrownianPath:
    """Sum blocks of ``factor`` consecutive increments into a coarser path."""
    if factor < 1 or path.n_steps % factor:
        raise ValueError(f"factor {factor} does not divide {path.n_steps} steps")
    return BrownianPath(path.seed, path.sample_index, path.base, path.base_dt,
                        path.factor * factor)


def write_path(path: BrownianPath, dest) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w") as fh:
            return write_path(path, fh)
    dest.write(f"bw {path.seed} {path.sample_index} {path.n_steps} {path.dt:.17g}\n")
    dest.writelines(format(float(x), ".17g") + "\n" for x in path.increments)


def read_path(src) -> BrownianPath:
    """Read a dumped path; the result is a level-1 path holding those increments."""
    if isinstance(src, (str, Path)):
        with open(src) as fh:
            return read_path(fh)
    head = src.readline().split()
    if len(head) != 5 or head[0] != "bw":
        raise ValueError("missing bw header")
    inc = np.array([float(x) for x in src if x.strip()])
    if len(inc) != int(head[3]):
        raise ValueError("increment count does not match header")
    return BrownianPath(int(head[1]), int(head[2]), inc, float(head[4]))
