"""Monte Carlo check that the conversion error has zero mean over the (T, L, delta) grid."""

import argparse
from pathlib import Path

from snnforge.analysis import theorem1_grid, write_rows


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/theorem1_grid.csv")
    args = ap.parse_args()
    rows = theorem1_grid(args.n, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_rows(rows, args.out)
    for r in rows:
        print(f"T={r['T']} L={r['L']} delta={r['delta']}: mean {r['mean']:+.2e} stderr {r['stderr']:.2e} "
              f"{'ok' if r['passed'] else 'FAIL'}")
    print(f"{sum(r['passed'] for r in rows)}/{len(rows)} within 4 standard errors")


if __name__ == "__main__":
    main()
