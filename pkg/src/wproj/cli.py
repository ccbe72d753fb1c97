"""Command-line front end.

Exit codes: 0 success, 1 statistical-procedure error, 2 usage or configuration
error, 3 solver nonconvergence in ``test`` mode.
"""

from __future__ import annotations

import argparse
import importlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bartlett as bt
from .errors import (ConfigError, DataParseError, InnerNonconvergence, InvalidDimension,
                     WprojError)
from .expansion import compute_expansion_terms, expansion_approx
from .hyptest import (DecisionInput, TestOutcome, estimate_quantile, recommend_test,
                      run_el_test, run_t2_test)
from .model import CostModel, DataSet, make_linear_model, make_quadratic_norm_model, make_zero_power_model
from .power import (PowerInputs, compute_k_constants, first_order_power, plugin_power_inputs,
                    power_expansion, power_gap_b)
from .reporting import emit_report, parse_sigma, write_output
from .sim import (Scenario, generate, report_as_dict, run_coverage_study, run_example62,
                  run_expansion_study, run_power_study, substream)
from .solver import SolverOptions, compute_wp_statistic

EXIT_OK, EXIT_STAT, EXIT_USAGE, EXIT_NONCONV = 0, 1, 2, 3

log = logging.getLogger("wproj")


@dataclass
class RunConfig:
    subcommand: str
    data: Optional[str] = None
    model: str = "linear"
    c: float = 1.0
    custom: Optional[str] = None
    sigma: Optional[str] = None
    alpha: float = 0.05
    method: str = "all"
    bartlett: str = "none"
    seed: Optional[int] = None
    output: Optional[str] = None
    fmt: str = "json"
    threads: Optional[int] = None
    kmax: int = 4
    epsilon: float = 0.01
    config: Optional[str] = None
    kind: Optional[str] = None
    draws: int = 1_000_000
    order: int = 2
    simulate: bool = False
    extra: dict = field(default_factory=dict)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wproj", description="Wasserstein projection tests for moment equations")
    sub = p.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)

    def common_model(sp):
        sp.add_argument("--data", required=True, help="CSV file, one observation per row")
        sp.add_argument("--model", choices=["linear", "quadratic", "zero_power", "custom"], default="linear")
        sp.add_argument("--c", type=float, default=1.0, help="offset c of the quadratic-norm model")
        sp.add_argument("--custom", help="module:function returning a MomentModel (for --model custom)")
        sp.add_argument("--sigma", default="identity",
                        help="identity, a JSON diagonal list, a JSON matrix, or a file")

    def out(sp):
        sp.add_argument("--output", default=None, help="output path (default stdout)")
        sp.add_argument("--format", dest="fmt", choices=["json", "csv"], default="json")
        sp.add_argument("--threads", type=int, default=None, help="worker cap (overrides WPROJ_THREADS)")

    t = sub.add_parser("test", help="run the WP / EL / T2 tests on a dataset")
    common_model(t)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--method", choices=["wp", "el", "t2", "all"], default="all")
    t.add_argument("--bartlett", choices=["none", "quantile", "statistic"], default="none")
    t.add_argument("--draws", type=int, default=1_000_000, help="Monte Carlo draws for the d>1 quantile")
    t.add_argument("--seed", type=int, default=None)
    out(t)

    s = sub.add_parser("simulate", help="Monte Carlo coverage / power / expansion study")
    s.add_argument("--config", required=True, help="scenario JSON")
    s.add_argument("--kind", choices=["coverage", "power", "expansion"], default=None)
    s.add_argument("--seed", type=int, default=None)
    out(s)

    pc = sub.add_parser("power-compare", help="predicted power gaps, optionally with Monte Carlo")
    pc.add_argument("--config", required=True, help="scenario JSON with tau0 and moments or a pilot size")
    pc.add_argument("--simulate", action="store_true", help="also measure powers by Monte Carlo")
    pc.add_argument("--seed", type=int, default=None)
    out(pc)

    e = sub.add_parser("expansion-check", help="expansion tensors and approximations for a dataset")
    common_model(e)
    e.add_argument("--order", type=int, choices=[2, 3], default=2)
    out(e)

    x = sub.add_parser("example62", help="the zero-power example table")
    x.add_argument("--kmax", type=int, default=4)
    x.add_argument("--epsilon", type=float, default=0.01)
    x.add_argument("--grid", type=int, default=2001)
    out(x)
    return p


def parse_args(argv) -> RunConfig:
    ns = _build_parser().parse_args(argv)
    d = vars(ns).copy()
    cfg = RunConfig(subcommand=d.pop("subcommand"))
    for k in list(d):
        if hasattr(cfg, k) and k != "extra":
            setattr(cfg, k, d.pop(k))
    cfg.extra = d
    if cfg.data is not None and not Path(cfg.data).exists():
        raise ConfigError(f"data file {cfg.data} does not exist")
    if cfg.config is not None and not Path(cfg.config).exists():
        raise ConfigError(f"config file {cfg.config} does not exist")
    if not 0 < cfg.alpha < 1:
        raise ConfigError("--alpha must lie in (0, 1)")
    if cfg.model == "custom" and not cfg.custom:
        raise ConfigError("--model custom needs --custom module:function")
    if cfg.subcommand == "example62" and cfg.kmax < 1:
        raise ConfigError("--kmax must be >= 1")
    return cfg


def _load_model(cfg: RunConfig, m: int):
    if cfg.model == "linear":
        return make_linear_model(m)
    if cfg.model == "quadratic":
        return make_quadratic_norm_model(m, cfg.c)
    if cfg.model == "zero_power":
        if m != 1:
            raise ConfigError("the zero_power model takes scalar data")
        return make_zero_power_model(cfg.epsilon)
    mod, _, attr = cfg.custom.partition(":")
    try:
        factory = getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot load custom model {cfg.custom!r}: {exc}") from exc
    model = factory(m) if callable(factory) else factory
    if model.m != m:
        raise ConfigError(f"custom model expects m={model.m}, data has m={m}")
    return model


def _seed(cfg: RunConfig, default=None) -> int:
    if cfg.seed is not None:
        return int(cfg.seed)
    if default is not None:
        return int(default)
    return int(np.random.SeedSequence().entropy % 2 ** 63)


def _one_test(cfg, meth, data, model, cost):
    """Run one test; returns (outcome, nonconverged flag, seed used or None)."""
    seed = None
    if meth == "el":
        return run_el_test(data, model, cfg.alpha), False, None
    if meth == "t2":
        return run_t2_test(data, model, cfg.alpha), False, None
    res = compute_wp_statistic(data, model, cost)
    terms = compute_expansion_terms(data, model, cost)
    if terms.d > 1:
        seed = _seed(cfg)
        print(f"seed: {seed}", file=sys.stderr)
    q = estimate_quantile(terms, cfg.alpha, cfg.draws, seed if seed is not None else 0)
    stat, thr = res.stat, q.z_hat
    notes = {"converged": res.converged, "active_ball": res.active_ball,
             "hull_warning": res.hull_warning, "quantile_method": q.method,
             "zeta_star": res.zeta_star, "iterations": res.iterations}
    if cfg.bartlett != "none":
        if terms.d != 1:
            raise ConfigError("Bartlett corrections are available for d = 1 only")
        coeffs = bt.compute_bartlett_coeffs(bt.plugin_moments(data, model, cost, centre=True))
        notes["bartlett_c"] = list(coeffs.c)
        if cfg.bartlett == "quantile":
            corr = bt.correct_quantile(coeffs, thr, cfg.alpha, data.n)
            notes["uncorrected_threshold"] = thr
            thr = corr.value
        else:
            corr = bt.correct_statistic(coeffs, stat, terms.w_n[0, 0], terms.v_n[0, 0], data.n)
            notes["uncorrected_statistic"] = stat
            stat = corr.value
        notes["bartlett_overflow"] = corr.overflow
    return TestOutcome("WP", stat, thr, bool(stat > thr), cfg.alpha, notes), not res.converged, seed


def _cmd_test(cfg: RunConfig):
    data = DataSet.from_csv(cfg.data)
    model = _load_model(cfg, data.m)
    cost = CostModel(parse_sigma(cfg.sigma, data.m))
    methods = ["wp", "el", "t2"] if cfg.method == "all" else [cfg.method]
    outcomes = []
    code = EXIT_OK
    seed = None
    errors = {}
    for meth in methods:
        try:
            out, nonconv, seed_used = _one_test(cfg, meth, data, model, cost)
        except InnerNonconvergence as exc:
            errors[meth.upper()] = str(exc)
            code = EXIT_NONCONV
            continue
        except (ConfigError, InvalidDimension, DataParseError):
            raise
        except WprojError as exc:
            errors[meth.upper()] = str(exc)
            if code == EXIT_OK:
                code = EXIT_STAT
            continue
        outcomes.append(out)
        seed = seed if seed_used is None else seed_used
        if nonconv:
            code = EXIT_NONCONV
    report = {"n": data.n, "m": data.m, "seed": seed, "outcomes": outcomes, "errors": errors}
    if cfg.fmt == "csv":
        rows = [{"test": o.test, "statistic": o.statistic, "threshold": o.threshold,
                 "reject": o.reject, "alpha": o.alpha} for o in outcomes]
        report = {"rows": rows}
    return report, code


def _load_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc


def _scenario(cfg: RunConfig, raw: dict) -> Scenario:
    raw = dict(raw)
    raw.pop("moments", None)
    raw.pop("pilot_n", None)
    seed = _seed(cfg, raw.get("seed"))
    raw["seed"] = seed
    print(f"seed: {seed}", file=sys.stderr)
    try:
        return Scenario.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid scenario: {exc}") from exc


def _cmd_simulate(cfg: RunConfig):
    raw = _load_json(cfg.config)
    kind = cfg.kind or raw.get("kind", "coverage")
    sc = _scenario(cfg, raw)
    fn = {"coverage": run_coverage_study, "power": run_power_study,
          "expansion": run_expansion_study}.get(kind)
    if fn is None:
        raise ConfigError(f"unknown study kind {kind!r}")
    rep = fn(sc)
    return (report_as_dict(rep) if cfg.fmt == "json" else rep), EXIT_OK


def _cmd_power_compare(cfg: RunConfig):
    raw = _load_json(cfg.config)
    sc = _scenario(cfg, raw)
    tau0 = raw.get("tau0", [1.0])
    if "moments" in raw:
        mom = dict(raw["moments"])
        inputs = PowerInputs(tau0=tau0, alpha=sc.alpha, source="analytic", **mom)
    else:
        # pilot sample from the null generator (no shift)
        pilot = Scenario.from_dict({**{k: v for k, v in raw.items() if k not in ("moments", "pilot_n")},
                                    "seed": sc.seed, "tau0": None})
        X = generate(pilot, int(raw.get("pilot_n", 100_000)), substream(sc.seed, 0, 2 ** 32))
        inputs = plugin_power_inputs(DataSet(X), sc.build_model(), sc.cost(), tau0, sc.alpha)
    k = compute_k_constants(inputs)
    gap = power_gap_b(inputs)
    dec = DecisionInput.from_moments(inputs.alpha2, inputs.alpha3, inputs.alpha2_t, inputs.alpha3_t,
                                     float(inputs.e_dh @ inputs.tau0))
    rows = []
    for n in sc.n_list:
        base = first_order_power(sc.alpha, k.tau)
        for test, b in (("WP", gap.b_wp), ("EL", gap.b_el), ("T2", gap.b_t2)):
            rows.append({"n": n, "test": test, "metric": "predicted_power",
                         "value": base + b / np.sqrt(n), "se": float("nan")})
        rows.append({"n": n, "test": "WP", "metric": "wp_power_expansion",
                     "value": power_expansion(inputs, n), "se": float("nan")})
    out = {"seed": sc.seed, "moments_source": inputs.source, "tau": k.tau, "k1": k.k1, "k2": k.k2,
           "k3": k.k3, "i_value": gap.i_value, "b_wp": gap.b_wp, "b_el": gap.b_el, "b_t2": gap.b_t2,
           "s_a": dec.s_a, "s_b": dec.s_b, "recommended": recommend_test(dec), "rows": rows}
    if cfg.simulate:
        rep = run_power_study(sc)
        for r in rep.rows:
            rows.append({"n": r.n, "test": r.test, "metric": "measured_" + r.metric,
                         "value": r.value, "se": r.se})
    return out, EXIT_OK


def _cmd_expansion(cfg: RunConfig):
    data = DataSet.from_csv(cfg.data)
    model = _load_model(cfg, data.m)
    cost = CostModel(parse_sigma(cfg.sigma, data.m))
    terms = compute_expansion_terms(data, model, cost, want_l=cfg.order == 3)
    res = compute_wp_statistic(data, model, cost)
    out = {"n": data.n, "stat": res.stat, "converged": res.converged,
           "approx_order2": expansion_approx(terms, 2),
           "approx_order3": expansion_approx(terms, 3) if cfg.order == 3 else None,
           "v_n": terms.v_n, "w_n": terms.w_n, "xi_n": terms.xi_n, "k_n": terms.k_n,
           "l_n": terms.l_n}
    if cfg.fmt == "csv":
        out = {"rows": [{"quantity": k, "value": v} for k, v in out.items()
                        if isinstance(v, float)]}
    return out, EXIT_OK


def _cmd_example62(cfg: RunConfig):
    table = run_example62(cfg.kmax, cfg.epsilon, cfg.extra.get("grid", 2001))
    for r in table:
        if not r["wp_converged"]:
            log.warning("WP solver did not converge for k=%d", r["k"])
    return {"rows": table}, EXIT_OK


_COMMANDS = {"test": _cmd_test, "simulate": _cmd_simulate, "power-compare": _cmd_power_compare,
             "expansion-check": _cmd_expansion, "example62": _cmd_example62}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if cfg.threads is not None:
        os.environ["WPROJ_THREADS"] = str(max(1, cfg.threads))
    try:
        report, code = _COMMANDS[cfg.subcommand](cfg)
        write_output(emit_report(report, cfg.fmt), cfg.output)
        return code
    except (ConfigError, DataParseError, InvalidDimension) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InnerNonconvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONV if cfg.subcommand == "test" else EXIT_STAT
    except WprojError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAT


if __name__ == "__main__":
    sys.exit(main())
