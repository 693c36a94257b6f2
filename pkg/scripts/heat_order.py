"""Observed temporal order of the noise-free scheme against the Fourier heat mode.

    python scripts/heat_order.py --res 128,2 --steps 64,128,256

With ``--joint`` the mesh resolution doubles whenever N quadruples, which
balances the O(h^2) and O(dt) error contributions.
"""

import argparse
import math

import numpy as np

from sac_fv.fields import CellField, l2_norm
from sac_fv.mesh import build_uniform_grid
from sac_fv.model import preset_heat
from sac_fv.noise import BrownianPath
from sac_fv.solver import run_path


def mode_average(mesh, t):
    s = mesh.extents[0] / mesh.resolution[0]
    lo, hi = mesh.centers[:, 0] - s / 2, mesh.centers[:, 0] + s / 2
    return 0.5 + 0.5 * math.exp(-math.pi ** 2 * t) * (
        np.sin(math.pi * hi) - np.sin(math.pi * lo)) / (math.pi * s)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--res", default="128,2")
    p.add_argument("--steps", default="64,128,256")
    p.add_argument("--horizon", type=float, default=0.1)
    p.add_argument("--joint", action="store_true")
    args = p.parse_args()
    res0 = [int(r) for r in args.res.split(",")]
    steps = [int(n) for n in args.steps.split(",")]
    spec = preset_heat(horizon=args.horizon)

    print(f"{'N':>6} {'mesh':>10} {'L2 error':>12} {'order':>7}")
    prev = None
    for n in steps:
        scale = int(round(math.sqrt(n / steps[0]))) if args.joint else 1
        mesh = build_uniform_grid(2, (1.0, 1.0), (res0[0] * scale, res0[1]))
        start = CellField(mesh, mode_average(mesh, 0.0))
        stf, _ = run_path(start, BrownianPath(0, 0, np.zeros(n), args.horizon / n), spec, mesh)
        err = l2_norm(CellField(mesh, stf.frames[-1] - mode_average(mesh, args.horizon)))
        order = "" if prev is None else f"{math.log(prev[1] / err) / math.log(n / prev[0]):.3f}"
        print(f"{n:>6} {'x'.join(map(str, mesh.resolution)):>10} {err:>12.4e} {order:>7}")
        prev = (n, err)


if __name__ == "__main__":
    main()
