"""Monte Carlo energy estimate against the Gronwall bound for an ensemble config.

    python scripts/ensemble_bound.py configs/stochastic.yaml --threads 4
"""

import argparse
import sys
from pathlib import Path

from sac_fv import harness


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("config")
    p.add_argument("--threads", type=int, default=harness.default_threads())
    p.add_argument("--out")
    args = p.parse_args()
    cfg = harness.load_config(args.config)
    out = Path(args.out or cfg["output"]["dir"])
    code = harness.run_ensemble(cfg, out, threads=args.threads)
    if (out / "gronwall.txt").exists():
        print((out / "gronwall.txt").read_text(), end="")
    print(f"artifacts in {out}")
    sys.exit(code)


if __name__ == "__main__":
    main()
