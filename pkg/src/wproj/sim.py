"""Monte Carlo harness: generators, coverage / power / expansion studies, Example 6.2 table.

Every replication draws from its own Philox substream keyed by (seed, n, rep), so
results do not depend on scheduling and a fixed seed reproduces a report exactly.
"""

from __future__ import annotations

import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import bartlett as bt
from .errors import WprojError
from .expansion import compute_expansion_terms, expansion_approx
from .hyptest import (compute_el_statistic, compute_hotelling, estimate_quantile,
                      hotelling_raw)
from .model import (CostModel, DataSet, make_linear_model, make_quadratic_norm_model,
                    make_zero_power_model)
from .solver import SolverOptions, compute_wp_statistic

GENERATORS = ("gaussian", "exponential_centered", "uniform", "two_atom_example62", "mixture")
MODELS = ("linear", "quadratic", "zero_power")
CORRECTIONS = ("none", "bartlett-I", "bartlett-II")
TESTS = ("WP", "EL", "T2")


@dataclass
class Scenario:
    generator: str = "gaussian"
    model: str = "linear"
    m: int = 1
    sigma: Optional[list] = None
    n_list: Sequence[int] = (100,)
    alpha: float = 0.05
    replications: int = 1000
    seed: int = 0
    tau0: Optional[list] = None
    k: int = 1
    epsilon: float = 0.01
    mixture: Optional[list] = None  # [{"weight": w, "mean": [...], "sd": s}, ...]
    corrections: Sequence[str] = ("none",)
    # fixed (C1, C2, C3); None means plug-in coefficients per replication
    bartlett_c: Optional[Sequence[float]] = None
    tests: Sequence[str] = TESTS
    orders: Sequence[int] = (2, 3)
    quantile_draws: int = 100_000

    def __post_init__(self):
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}; choose from {GENERATORS}")
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {MODELS}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if any(int(n) < 2 for n in self.n_list):
            raise ValueError("every n must be >= 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if not 0 <= self.seed < 2 ** 64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        for c in self.corrections:
            if c not in CORRECTIONS:
                raise ValueError(f"unknown correction {c!r}")
        for t in self.tests:
            if t not in TESTS:
                raise ValueError(f"unknown test {t!r}")
        if self.generator == "mixture" and not self.mixture:
            raise ValueError("mixture generator needs a component list")
        self.n_list = tuple(int(n) for n in self.n_list)

    @classmethod
    def from_dict(cls, cfg: dict) -> "Scenario":
        known = set(cls.__dataclass_fields__)
        extra = set(cfg) - known - {"kind"}
        if extra:
            raise ValueError(f"unknown scenario keys: {sorted(extra)}")
        return cls(**{k: v for k, v in cfg.items() if k in known})

    # -- derived objects -------------------------------------------------
    def cost(self) -> CostModel:
        if self.sigma is None:
            return CostModel.identity(self.m)
        return CostModel(np.asarray(self.sigma, dtype=float))

    def second_moment(self) -> float:
        """E ||X||^2 under the null generator (used to centre the quadratic model)."""
        if self.generator == "mixture":
            tot = 0.0
            for comp in self.mixture:
                mu = np.asarray(comp["mean"], dtype=float) * np.ones(self.m)
                tot += comp["weight"] * (mu @ mu + self.m * comp["sd"] ** 2)
            return float(tot)
        return float(self.m)

    def build_model(self):
        if self.model == "linear":
            return make_linear_model(self.m)
        if self.model == "quadratic":
            return make_quadratic_norm_model(self.m, self.second_moment())
        return make_zero_power_model(self.epsilon, max(self.k, 1) + 2)

    def shift(self, n: int) -> np.ndarray:
        if self.tau0 is None:
            return np.zeros(self.m)
        return np.asarray(self.tau0, dtype=float) * np.ones(self.m) / math.sqrt(n)


@dataclass
class SimRow:
    n: int
    test: str
    metric: str
    value: float
    se: float
    replications: int
    failures: int
    mean_statistic: float = float("nan")


@dataclass
class SimReport:
    rows: list = field(default_factory=list)
    seed: Optional[int] = None
    kind: str = ""

    def get(self, n, test, metric) -> SimRow:
        for r in self.rows:
            if r.n == n and r.test == test and r.metric == metric:
                return r
        raise KeyError((n, test, metric))


def substream(seed: int, n: int, rep: int) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(n, rep))
    return np.random.Generator(np.random.Philox(ss))


def generate(sc: Scenario, n: int, rng: np.random.Generator) -> np.ndarray:
    m = sc.m
    g = sc.generator
    if g == "gaussian":
        X = rng.standard_normal((n, m))
    elif g == "exponential_centered":
        X = rng.exponential(1.0, (n, m)) - 1.0
    elif g == "uniform":
        X = rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), (n, m))
    elif g == "two_atom_example62":
        geo = make_zero_power_model(sc.epsilon, sc.k + 1).params["geometry"]
        X = np.where(rng.random((n, 1)) < 0.5, 0.0, geo.centers[sc.k])
    else:
        w = np.array([c["weight"] for c in sc.mixture], dtype=float)
        lab = rng.choice(len(w), size=n, p=w / w.sum())
        mu = np.array([np.asarray(c["mean"], dtype=float) * np.ones(m) for c in sc.mixture])
        sd = np.array([c["sd"] for c in sc.mixture], dtype=float)
        X = mu[lab] + sd[lab][:, None] * rng.standard_normal((n, m))
    return X + sc.shift(n)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("WPROJ_THREADS", "1")))
    except ValueError:
        return 1


def _map(fn, items):
    items = list(items)
    k = _workers()
    if k == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items, chunksize=max(1, len(items) // (8 * k))))


def _rate_row(n, test, metric, flags, stats_=None):
    flags = np.asarray([f for f in flags if f is not None], dtype=float)
    R = flags.size
    p = float(flags.mean()) if R else float("nan")
    se = math.sqrt(p * (1 - p) / R) if R else float("nan")
    ms = float(np.mean(stats_)) if stats_ else float("nan")
    return SimRow(n, test, metric, p, se, R, 0, ms)


# ---------------------------------------------------------------------------
# Coverage
# ---------------------------------------------------------------------------

def _quantile(sc, terms, rng):
    if terms.d == 1:
        return estimate_quantile(terms, sc.alpha).z_hat
    seed = int(rng.integers(0, 2 ** 63))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return estimate_quantile(terms, sc.alpha, sc.quantile_draws, seed).z_hat


def _coverage_rep(args):
    sc, n, rep = args
    rng = substream(sc.seed, n, rep)
    X = generate(sc, n, rng)
    model = sc.build_model()
    cost = sc.cost()
    data = DataSet(X)
    try:
        res = compute_wp_statistic(data, model, cost)
        if not res.converged:
            return None
        terms = compute_expansion_terms(data, model, cost)
        z = _quantile(sc, terms, rng)
    except WprojError:
        return None
    out = {"stat": res.stat}
    for corr in sc.corrections:
        if corr == "none":
            out[corr] = res.stat <= z
            continue
        if terms.d != 1:
            out[corr] = None
            continue
        coeffs = _coeffs(sc, data, model, cost)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if corr == "bartlett-I":
                out[corr] = res.stat <= bt.correct_quantile(coeffs, z, sc.alpha, n).value
            else:
                val = bt.correct_statistic(coeffs, res.stat, terms.w_n[0, 0], terms.v_n[0, 0], n).value
                out[corr] = val <= z
    return out


def _coeffs(sc, data, model, cost):
    if sc.bartlett_c is not None:
        c1, c2, c3 = (float(c) for c in sc.bartlett_c)
        nan = float("nan")
        return bt.BartlettCoeffs(nan, nan, nan, nan, nan, nan, nan, nan, nan, nan,
                                 nan, nan, nan, nan, c1, c2, c3)
    return bt.compute_bartlett_coeffs(bt.plugin_moments(data, model, cost, centre=True))


def run_coverage_study(sc: Scenario) -> SimReport:
    """Empirical non-rejection rate of the WP test per n and correction mode."""
    rows = []
    for n in sc.n_list:
        res = _map(_coverage_rep, [(sc, n, r) for r in range(sc.replications)])
        ok = [r for r in res if r is not None]
        fails = len(res) - len(ok)
        stat_vals = [r["stat"] for r in ok]
        for corr in sc.corrections:
            label = "WP" if corr == "none" else f"WP+{corr}"
            row = _rate_row(n, label, "coverage", [r[corr] for r in ok], stat_vals)
            row.failures = fails + sum(r[corr] is None for r in ok)
            rows.append(row)
    return SimReport(rows, sc.seed, "coverage")


# ---------------------------------------------------------------------------
# Power
# ---------------------------------------------------------------------------

def _power_rep(args):
    sc, n, rep = args
    rng = substream(sc.seed, n, rep)
    X = generate(sc, n, rng)
    model = sc.build_model()
    cost = sc.cost()
    data = DataSet(X)
    d = model.d
    chi = float(stats.chi2.ppf(1 - sc.alpha, d))
    out = {}
    for t in sc.tests:
        try:
            if t == "WP":
                res = compute_wp_statistic(data, model, cost)
                if not res.converged:
                    out[t] = None
                    continue
                z = _quantile(sc, compute_expansion_terms(data, model, cost), rng)
                out[t] = (res.stat > z, res.stat)
            elif t == "EL":
                s = 2.0 * compute_el_statistic(data, model)
                out[t] = (s > chi, s)
            else:
                s = compute_hotelling(data, model)
                out[t] = (s > chi, s)
        except WprojError:
            out[t] = None
    return out


def run_power_study(sc: Scenario) -> SimReport:
    """Rejection rates of WP, EL and T2 on common datasets, plus paired gaps."""
    rows = []
    for n in sc.n_list:
        res = _map(_power_rep, [(sc, n, r) for r in range(sc.replications)])
        for t in sc.tests:
            vals = [r[t] for r in res]
            good = [v for v in vals if v is not None]
            row = _rate_row(n, t, "power", [v[0] for v in good], [v[1] for v in good])
            row.failures = len(vals) - len(good)
            rows.append(row)
        tests = list(sc.tests)
        for i in range(len(tests)):
            for j in range(i + 1, len(tests)):
                a, b = tests[i], tests[j]
                pairs = [(r[a][0], r[b][0]) for r in res if r[a] is not None and r[b] is not None]
                diff = np.array([float(x) - float(y) for x, y in pairs])
                R = diff.size
                gap = float(diff.mean()) if R else float("nan")
                se = float(diff.std(ddof=1) / math.sqrt(R)) if R > 1 else float("nan")
                rows.append(SimRow(n, f"{a}-{b}", "power_gap", gap, se, R, len(res) - R))
    return SimReport(rows, sc.seed, "power")


# ---------------------------------------------------------------------------
# Expansion accuracy
# ---------------------------------------------------------------------------

def _expansion_rep(args):
    sc, n, rep = args
    rng = substream(sc.seed, n, rep)
    X = generate(sc, n, rng)
    model = sc.build_model()
    cost = sc.cost()
    data = DataSet(X)
    try:
        res = compute_wp_statistic(data, model, cost)
        terms = compute_expansion_terms(data, model, cost, want_l=3 in sc.orders)
    except WprojError:
        return None
    return {o: abs(res.stat - expansion_approx(terms, o)) for o in sc.orders}


def run_expansion_study(sc: Scenario) -> SimReport:
    """Median and 0.9-quantile of |n R_n - approximation| per n and order."""
    rows = []
    for n in sc.n_list:
        res = _map(_expansion_rep, [(sc, n, r) for r in range(sc.replications)])
        ok = [r for r in res if r is not None]
        for o in sc.orders:
            err = np.array([r[o] for r in ok])
            for metric, q in (("median_error", 0.5), ("q90_error", 0.9)):
                rows.append(SimRow(n, f"order{o}", metric, float(np.quantile(err, q)),
                                   float("nan"), len(ok), len(res) - len(ok)))
    return SimReport(rows, sc.seed, "expansion")


# ---------------------------------------------------------------------------
# Example 6.2
# ---------------------------------------------------------------------------

def example62_el_closed(k: int) -> float:
    return 0.5 * math.log(1 + 2.0 ** -(k + 1)) + 0.5 * math.log(1 - 1 / (2 * (2 ** k + 1)))


def run_example62(kmax: int = 4, epsilon: float = 0.01, grid: int = 2001) -> list:
    """Per k: Hotelling raw / studentised, EL and WP values on the two-atom measure."""
    if kmax < 1:
        raise ValueError("kmax must be >= 1")
    model = make_zero_power_model(epsilon, kmax + 1)
    geo = model.params["geometry"]
    cost = CostModel.identity(1)
    table = []
    for k in range(1, kmax + 1):
        data = DataSet(np.array([[0.0], [geo.centers[k]]]))
        row = {"k": k, "x_k": float(geo.centers[k]),
               "hotelling_raw": hotelling_raw(data, model),
               "hotelling_closed": 4.0 ** -(k + 1),
               "hotelling_studentized": compute_hotelling(data, model) / data.n}
        row["el_value"] = compute_el_statistic(data, model) / data.n
        row["el_closed"] = example62_el_closed(k)
        try:
            res = compute_wp_statistic(data, model, cost, SolverOptions(multistart_grid=grid))
            row["wp_value"] = res.r_value
            row["wp_converged"] = bool(res.converged)
        except WprojError as exc:
            row["wp_value"] = float("nan")
            row["wp_converged"] = False
            row["wp_error"] = str(exc)
        row["wp_lower_bound"] = 1.0
        table.append(row)
    return table


def report_as_dict(rep: SimReport) -> dict:
    return {"kind": rep.kind, "seed": rep.seed, "rows": [asdict(r) for r in rep.rows]}
