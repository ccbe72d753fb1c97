"""Predicted second-order power gaps against Monte Carlo powers over a grid of shifts.

    python3 scripts/power_comparison.py --config scripts/configs/power_exponential.json
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from _common import Timer, base_parser, load_config, save

from wproj import DecisionInput, PowerInputs, Scenario, power_gap_b, recommend_test, run_power_study
from wproj.power import first_order_power


@dataclass
class PowerConfig:
    scenario: dict = field(default_factory=dict)
    moments: dict = field(default_factory=dict)
    tau_grid: list = field(default_factory=lambda: [0.5, 1.0, 2.0])


def main(argv=None):
    args = base_parser(__doc__.splitlines()[0], "power_exponential.json").parse_args(argv)
    cfg = PowerConfig(**load_config(args.config))
    rows = []
    with Timer() as t:
        for tau0 in cfg.tau_grid:
            sc = dict(cfg.scenario, tau0=[tau0])
            if args.quick:
                sc["replications"] = max(1, sc.get("replications", 1000) // 10)
            scen = Scenario.from_dict(sc)
            inputs = PowerInputs(tau0=[tau0], alpha=scen.alpha, **cfg.moments)
            gap = power_gap_b(inputs)
            tau = float(inputs.e_dh @ inputs.tau0) / np.sqrt(inputs.alpha2)
            dec = DecisionInput.from_moments(inputs.alpha2, inputs.alpha3, inputs.alpha2_t,
                                             inputs.alpha3_t, float(inputs.e_dh @ inputs.tau0))
            rep = run_power_study(scen)
            for n in scen.n_list:
                base = first_order_power(scen.alpha, tau)
                for test, b in (("WP", gap.b_wp), ("EL", gap.b_el), ("T2", gap.b_t2)):
                    meas = rep.get(n, test, "power")
                    rows.append({"tau0": tau0, "n": n, "test": test, "predicted": base + b / np.sqrt(n),
                                 "measured": meas.value, "se": meas.se})
                for pair in ("WP-EL", "WP-T2", "EL-T2"):
                    g = rep.get(n, pair, "power_gap")
                    rows.append({"tau0": tau0, "n": n, "test": pair, "predicted": float("nan"),
                                 "measured": g.value, "se": g.se})
            print(f"tau0={tau0}: recommended {recommend_test(dec)}, I={gap.i_value:.4f}, "
                  f"B(WP)={gap.b_wp:.4f} B(EL)={gap.b_el:.4f}")
    for r in rows:
        print(f"  tau0={r['tau0']:<4} n={r['n']:<5} {r['test']:6s} predicted={r['predicted']:.4f} "
              f"measured={r['measured']:.4f} (se {r['se']:.4f})")
    save({"rows": rows, "elapsed_s": t.elapsed}, "power_comparison", args.out)


if __name__ == "__main__":
    main()
