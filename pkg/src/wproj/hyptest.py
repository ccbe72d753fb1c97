"""Quantile of the limiting law and the WP / EL / Hotelling decision rules."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, stats

from .errors import ElUndefined, SingularWn
from .expansion import ExpansionTerms, compute_expansion_terms
from .model import CostModel, DataSet, MomentModel
from .solver import SolverOptions, compute_wp_statistic

DEFAULT_DRAWS = 1_000_000
_MIN_DRAWS = 10_000


@dataclass
class QuantileEstimate:
    z_hat: float
    method: str
    mc_draws: int = 0
    mc_se: Optional[float] = None


@dataclass
class TestOutcome:
    test: str
    statistic: float
    threshold: float
    reject: bool
    alpha: float
    notes: dict = field(default_factory=dict)


def _sqrtm_psd(a):
    eig, vec = np.linalg.eigh(a)
    return (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T


def estimate_quantile(terms: ExpansionTerms, alpha: float, draws: int = DEFAULT_DRAWS,
                      seed=0) -> QuantileEstimate:
    """(1 - alpha)-quantile of v^T W^{1/2} V^{-1} W^{1/2} v, v ~ N(0, I_d).

    Analytic for d = 1: (W / V) chi2_{1, 1-alpha}.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    v, w = terms.v_n, terms.w_n
    d = v.shape[0]
    if d == 1:
        if v[0, 0] <= 0 or w[0, 0] <= 0:
            raise SingularWn("V_n and W_n must be positive for the d = 1 quantile")
        return QuantileEstimate(float(w[0, 0] / v[0, 0] * stats.chi2.ppf(1 - alpha, 1)), "analytic_d1")
    if draws < _MIN_DRAWS:
        warnings.warn(f"only {draws} Monte Carlo draws for the quantile; at least {_MIN_DRAWS} advised",
                      RuntimeWarning, stacklevel=2)
    ws = _sqrtm_psd(w)
    A = ws @ linalg.solve(v, ws, assume_a="pos")
    lam = np.linalg.eigvalsh(0.5 * (A + A.T))
    rng = np.random.default_rng(seed)
    # quadratic form reduces to a weighted chi-square sum in the eigenbasis
    qf = np.zeros(draws)
    chunk = 250_000
    for s in range(0, draws, chunk):
        k = min(chunk, draws - s)
        z = rng.standard_normal((k, d))
        qf[s:s + k] = (z * z) @ lam
    z_hat = float(np.quantile(qf, 1 - alpha))
    # asymptotic se of a sample quantile via the kernel density at z_hat
    dens = stats.gaussian_kde(qf[: min(draws, 20_000)])(z_hat)[0]
    se = math.sqrt(alpha * (1 - alpha) / draws) / dens if dens > 0 else float("nan")
    return QuantileEstimate(z_hat, "monte_carlo", draws, float(se))


def run_wp_test(data: DataSet, model: MomentModel, cost: CostModel, alpha: float = 0.05,
                opts: SolverOptions = SolverOptions(), draws: int = DEFAULT_DRAWS,
                seed=0) -> TestOutcome:
    """Reject when n R_n(h) exceeds the plug-in quantile."""
    res = compute_wp_statistic(data, model, cost, opts)
    terms = compute_expansion_terms(data, model, cost)
    q = estimate_quantile(terms, alpha, draws, seed)
    notes = {"converged": res.converged, "active_ball": res.active_ball,
             "hull_warning": res.hull_warning, "quantile_method": q.method}
    return TestOutcome("WP", res.stat, q.z_hat, bool(res.stat > q.z_hat), alpha, notes)


# ---------------------------------------------------------------------------
# Empirical likelihood
# ---------------------------------------------------------------------------

def _el_lambda(hx, w, tol=1e-12, max_iter=200):
    """Solve sum_i w_i h_i / (1 + lambda^T h_i) = 0 by damped Newton on the dual."""
    n, d = hx.shape
    floor = 1.0 / n
    lam = np.zeros(d)

    def objective(l):
        t = 1.0 + hx @ l
        if np.any(t <= floor):
            return -np.inf
        return float(w @ np.log(t))

    for _ in range(max_iter):
        t = 1.0 + hx @ lam
        grad = (w / t) @ hx
        if np.linalg.norm(grad) <= tol:
            return lam, True
        Hm = np.einsum("i,ia,ib->ab", w / t ** 2, hx, hx)
        try:
            step = linalg.solve(Hm, grad, assume_a="pos")
        except (linalg.LinAlgError, ValueError):
            step = grad
        # maximise the concave dual sum w log(1 + lambda^T h)
        f0 = objective(lam)
        s = 1.0
        while s > 1e-20:
            cand = lam + s * step
            f1 = objective(cand)
            if np.isfinite(f1) and f1 >= f0 - 1e-15 * (1 + abs(f0)):
                lam = cand
                break
            s *= 0.5
        else:
            return lam, False
    t = 1.0 + hx @ lam
    return lam, bool(np.linalg.norm((w / t) @ hx) <= 1e-8)


def compute_el_statistic(data: DataSet, model: MomentModel) -> float:
    """n R^EL_n(h) = sum_i log(1 + lambda^T h(X_i)) (half of -2 log ELR)."""
    hx = model.h(data.points)
    n, d = hx.shape
    from .solver import _hull_warning

    if _hull_warning(hx, data.w):
        raise ElUndefined("0 is not interior to the convex hull of the h values")
    lam, ok = _el_lambda(hx, data.w)
    if not ok:
        raise ElUndefined("EL multiplier iteration failed to converge")
    return float(n * (data.w @ np.log1p(hx @ lam)))


def run_el_test(data: DataSet, model: MomentModel, alpha: float = 0.05) -> TestOutcome:
    """Wilks calibration: -2 log ELR = 2 n R^EL_n against chi2_{d, 1-alpha}.

    ``statistic`` and ``threshold`` are both reported on the -2 log ELR scale.
    """
    d = model.d
    thr = float(stats.chi2.ppf(1 - alpha, d))
    stat = compute_el_statistic(data, model)
    return TestOutcome("EL", 2.0 * stat, thr, bool(2.0 * stat > thr), alpha, {"n_rel": stat})


# ---------------------------------------------------------------------------
# Hotelling
# ---------------------------------------------------------------------------

def compute_hotelling(data: DataSet, model: MomentModel) -> float:
    """H_n^T W_n^{-1} H_n with the uncentred second moment W_n."""
    hx = model.h(data.points)
    w = data.w
    H = math.sqrt(data.n) * (w @ hx)
    W = np.einsum("i,ia,ib->ab", w, hx, hx)
    eig = np.linalg.eigvalsh(W)
    if eig[0] <= 1e-14 * max(eig[-1], 1e-300):
        raise SingularWn(f"W_n is singular (eigenvalues {eig})")
    return float(H @ linalg.solve(W, H, assume_a="pos"))


def hotelling_raw(data: DataSet, model: MomentModel) -> float:
    """||E h||^2 before studentisation."""
    m = data.w @ model.h(data.points)
    return float(m @ m)


def run_t2_test(data: DataSet, model: MomentModel, alpha: float = 0.05) -> TestOutcome:
    thr = float(stats.chi2.ppf(1 - alpha, model.d))
    stat = compute_hotelling(data, model)
    return TestOutcome("T2", stat, thr, bool(stat > thr), alpha)


# ---------------------------------------------------------------------------
# Decision tree
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DecisionInput:
    s_a: float
    s_b: float
    tau_h: float

    @classmethod
    def from_moments(cls, alpha2, alpha3, alpha2_t, alpha3_t, tau_h):
        """S_a = alpha3~/alpha2~^2, S_b = 2 alpha3 / (3 alpha2^2)."""
        return cls(alpha3_t / alpha2_t ** 2, 2.0 * alpha3 / (3.0 * alpha2 ** 2), tau_h)


def recommend_test(inp: DecisionInput) -> str:
    """Most powerful of WP / EL / T2 at second order; ties go to WP."""
    a, b, t = inp.s_a, inp.s_b, inp.tau_h
    if not all(math.isfinite(v) for v in (a, b, t)):
        raise ValueError("decision inputs must be finite")
    if t == 0 or (a == 0 and b == 0):
        return "any"
    if t < 0:
        a, b = -a, -b
    # with tau_h > 0 the gap of each test is proportional to its S value (T2 has 0)
    if a >= b and a >= 0:
        return "WP"
    if b >= 0:
        return "EL"
    return "T2"
