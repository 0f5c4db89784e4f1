"""Certificate table over a grid of (n, alpha) for the general-alpha schedule.

    python3 scripts/certificate_grid.py --mu 0.25 > certificates.csv
"""

import argparse
import csv
import sys
import time

from svrgkit.certificates import CSV_HEADER, certify


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--mu", type=float, default=0.25)
    parser.add_argument("--L", type=float, default=1.0)
    parser.add_argument("--max-exp", type=int, default=6, help="largest n is 10^max_exp")
    args = parser.parse_args()

    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(CSV_HEADER + ("c0_gap",))
    t0 = time.perf_counter()
    for e in range(1, args.max_exp + 1):
        for alpha in (1 / 3, 1 / 2, 2 / 3, 1.0):
            rep = certify(10 ** e, args.L, alpha, 1, args.mu)
            out.writerow(rep.csv_row() + [repr(rep.certificate.recursion_gap)])
    print(f"# {time.perf_counter() - t0:.2f}s", file=sys.stderr)


if __name__ == "__main__":
    main()
