"""Randomized checks of the Holevo bound, super-additivity and Gaussification
invariance over several seeds.

    python3 scripts/run_verification.py --seeds 1 2 3 --nu-max 10
"""

import argparse
import json
import sys

from cvqkd.verification import (
    RandomStateSpec,
    check_gaussification_invariance,
    check_holevo_inequality,
    check_super_additivity,
)


def run(seed: int, nu_max: float, scale: float) -> list:
    n = lambda base: max(1, int(base * scale))  # noqa: E731
    two, four = RandomStateSpec(2, nu_max, seed), RandomStateSpec(4, nu_max, seed)
    return [
        check_holevo_inequality(n(500), two),
        check_super_additivity(n(200), four),
        check_super_additivity(n(50), four, product=True),
        check_gaussification_invariance(n(100), two),
    ]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[7])
    ap.add_argument("--nu-max", type=float, default=5.0)
    ap.add_argument("--scale", type=float, default=1.0, help="multiplies the default draw counts")
    args = ap.parse_args()

    failed = 0
    for seed in args.seeds:
        print(f"seed {seed}")
        for report in run(seed, args.nu_max, args.scale):
            print("  " + report.text())
            failed += not report.passed
            print("  " + json.dumps(report.summary(), sort_keys=True))
    return 3 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
