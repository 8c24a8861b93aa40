"""Finite-data parameter estimation: estimated vs. analytic key rate as the
number of rounds grows.

    python3 scripts/simulate_pipeline.py --protocol coherent-heterodyne --T 0.8 --eps 0.01 --V 10
"""

import argparse
import sys

import numpy as np

from cvqkd.keyrate import KeyRateParams, secret_key_rate
from cvqkd.protocols import ChannelParams, Direction, Protocol, channel_output_cm
from cvqkd.simulation import estimate_covariance, key_rate_from_samples, simulate_protocol


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--protocol", default="coherent-heterodyne")
    ap.add_argument("--direction", default="rr")
    ap.add_argument("--T", type=float, default=0.8)
    ap.add_argument("--eps", type=float, default=0.01)
    ap.add_argument("--V", type=float, default=10.0)
    ap.add_argument("--beta", type=float, default=0.95)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10**4, 10**5, 10**6])
    args = ap.parse_args()

    p = Protocol.from_name(args.protocol)
    d = Direction.parse(args.direction)
    ch = ChannelParams(args.T, args.eps)
    exact = secret_key_rate(KeyRateParams(p, d, args.V, ch, args.beta))
    gamma = channel_output_cm(args.V, ch)
    print(f"analytic K = {exact.K:.5f} (I_ab {exact.I_ab:.5f}, chi_E {exact.chi_E:.5f})")
    print(f"{'n':>9s} {'max |err|':>10s} {'max z':>7s} {'K_hat':>9s}")
    errors = []
    for n in args.sizes:
        batch = simulate_protocol(p, ch, args.V, n, args.seed)
        est = estimate_covariance(batch)
        err = np.abs(est.gamma - gamma)
        errors.append(err.max())
        try:
            k_hat = f"{key_rate_from_samples(batch, p, d, args.beta).K:9.5f}"
        except ValueError:
            k_hat = f"{'unphys.':>9s}"
        print(f"{n:9d} {err.max():10.5f} {np.max(err / est.stderr):7.2f} {k_hat}")
    if len(args.sizes) > 1:
        slope = np.polyfit(np.log(args.sizes), np.log(errors), 1)[0]
        print(f"log-log error slope {slope:.2f} (expect about -0.5)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
