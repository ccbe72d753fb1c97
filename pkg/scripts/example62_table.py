"""Hotelling, EL and WP values on the two-atom zero-power distributions.

    python3 scripts/example62_table.py --kmax 4
"""

from __future__ import annotations

import argparse

from _common import Timer, save

from wproj import run_example62


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--kmax", type=int, default=4)
    p.add_argument("--epsilon", type=float, default=0.01)
    p.add_argument("--grid", type=int, default=2001)
    p.add_argument("--out", default=None)
    args = p.parse_args(argv)
    with Timer() as t:
        table = run_example62(args.kmax, args.epsilon, args.grid)
    print(f"{'k':>2} {'x_k':>9} {'Hotelling':>12} {'EL':>12} {'EL closed':>12} {'WP':>9}")
    for r in table:
        print(f"{r['k']:>2} {r['x_k']:>9.4f} {r['hotelling_raw']:>12.6g} {r['el_value']:>12.6g} "
              f"{r['el_closed']:>12.6g} {r['wp_value']:>9.4f}")
    print(f"({t.elapsed:.1f}s)")
    save({"rows": table, "elapsed_s": t.elapsed}, "example62_table", args.out)


if __name__ == "__main__":
    main()
