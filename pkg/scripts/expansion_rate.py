"""Accuracy of the second- and third-order expansions of n R_n as n grows.

Fits the log-log slope of the median absolute error against n.

    python3 scripts/expansion_rate.py
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from _common import Timer, base_parser, load_config, save

from wproj import Scenario, run_expansion_study
from wproj.sim import report_as_dict


@dataclass
class ExpansionConfig:
    scenario: dict = field(default_factory=dict)


def main(argv=None):
    args = base_parser(__doc__.splitlines()[0], "expansion_quadratic.json").parse_args(argv)
    cfg = ExpansionConfig(**load_config(args.config))
    sc = dict(cfg.scenario)
    if args.quick:
        sc["replications"] = max(1, sc.get("replications", 500) // 10)
    scen = Scenario.from_dict(sc)
    with Timer() as t:
        rep = run_expansion_study(scen)
    out = report_as_dict(rep)
    ns = np.array(scen.n_list, dtype=float)
    out["slopes"] = {}
    for order in scen.orders:
        med = np.array([rep.get(n, f"order{order}", "median_error").value for n in scen.n_list])
        slope = float(np.polyfit(np.log(ns), np.log(med), 1)[0])
        out["slopes"][f"order{order}"] = slope
        print(f"order {order}: median errors {np.array2string(med, precision=3)}; log-log slope {slope:.2f}")
    out["elapsed_s"] = t.elapsed
    save(out, "expansion_rate", args.out)


if __name__ == "__main__":
    main()
