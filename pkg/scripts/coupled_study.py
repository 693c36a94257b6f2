"""Coupled refinement study: Cauchy differences, penalty bounds and constraint decay.

    python scripts/coupled_study.py configs/converge.yaml --threads 4 --out out/converge
"""

import argparse
import csv
import logging
import sys
from pathlib import Path

from sac_fv import harness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--threads", type=int, default=harness.default_threads())
    p.add_argument("--out")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO)
    cfg = harness.load_config(args.config)
    out = Path(args.out or cfg["output"]["dir"])
    code = harness.run_converge(cfg, out, threads=args.threads)
    if code:
        sys.exit(code)

    with open(out / "convergence.csv") as fh:
        rows = list(csv.DictReader(fh))
    print(f"{'level':>5} {'N':>5} {'eps':>9} {'psi_sq':>10} {'lr_gap/dt':>10} "
          f"{'violation':>11} {'cauchy(m,m+1)':>14}")
    for r in rows:
        viol = float(r["neg_part_sq"]) + float(r["overshoot_sq"])
        cauchy = "" if r["cauchy_mean"] == "nan" else f"{float(r['cauchy_mean']):.5f}"
        print(f"{r['level']:>5} {r['steps']:>5} {float(r['epsilon']):>9.5f} "
              f"{float(r['psi_sq']):>10.5f} {float(r['lr_gap_over_dt']):>10.5f} "
              f"{viol:>11.4e} {cauchy:>14}")
    print((out / "decay.txt").read_text(), end="")
    print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
