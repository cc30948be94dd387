"""Build the reference oracles used by the acceptance checks.

Run from project root:
    python scripts/build_reference_oracles.py --config my.ini --out reference/oracles.json

Computes mu_1, mu_2 and C^hom on three nested cell resolutions and extrapolates
each quantity with Richardson's rule for a second-order method. ``homlab check``
reads the same file and builds a mu-only version when it is missing.
"""
from __future__ import annotations
import os
import sys
import argparse

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.abspath(os.path.join(SCRIPT_DIR, '..'))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from config import settings  # noqa: E402
from config.run_config import parse_config  # noqa: E402
from experiments.oracles import RESOLUTIONS, build_oracles, write_oracles  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description="Richardson-extrapolated reference values for the cell problems")
    parser.add_argument("--config", default=None, help="INI run configuration (defaults if omitted)")
    parser.add_argument("--resolutions", type=int, nargs=3, default=list(RESOLUTIONS))
    parser.add_argument("--out", default=settings.ORACLE_PATH)
    args = parser.parse_args()

    config = parse_config(args.config)
    print(f"Solving cell problems at resolutions {args.resolutions}...")
    oracles = build_oracles(config, args.resolutions)
    path = write_oracles(oracles, args.out)
    print(f"mu1 = {oracles['mu1']:.8g}, mu2 = {oracles['mu2']:.8g} (observed rate {oracles['mu1_rate']:.2f})")
    print("Wrote oracles:", path)


if __name__ == "__main__":
    main()
