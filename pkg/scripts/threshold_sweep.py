"""Tolerable excess noise vs. transmittance for the four protocols, DR and RR.

Writes the wide CSV produced by ``cvqkd sweep`` and prints where the DR
curves start and how the RR curves behave near T = 0.

    python3 scripts/threshold_sweep.py --output thresholds.csv
"""

import argparse
import io
import sys
import time

import numpy as np

from cvqkd.cli import main as cli_main


def summarize(text: str) -> None:
    rows = [line for line in text.splitlines() if line and not line.startswith("#")]
    header = rows[0].split(",")
    table = np.array([[float(v) for v in row.split(",")] for row in rows[1:]])
    T = table[:, 0]
    for k, name in enumerate(header[1:], start=1):
        eps = table[:, k]
        alive = T[eps > 1e-4]
        start = f"{alive.min():.2f}" if alive.size else "never"
        print(f"{name:28s} first T with eps > 1e-4: {start:>6s}   eps_max(T=0.9) = {np.interp(0.9, T, eps):.4f}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--grid", default="0.01:1.0:0.01")
    ap.add_argument("--beta", default="1")
    ap.add_argument("--jobs", default="1")
    ap.add_argument("--output", default="thresholds.csv")
    args = ap.parse_args()

    start = time.perf_counter()
    buf = io.StringIO()
    code = cli_main(["sweep", "--grid", args.grid, "--beta", args.beta, "--jobs", args.jobs], out=buf)
    if code:
        return code
    text = buf.getvalue()
    with open(args.output, "w") as fh:
        fh.write(text)
    print(f"wrote {args.output} in {time.perf_counter() - start:.1f} s")
    summarize(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
