"""Bartlett-type corrections for the scalar (d = 1) WP test.

The signed-root cumulant coefficients k11, k22, k31, k42 are assembled from raw
moments of h and its Sigma-weighted derivative contractions.  They give the
n^{-1} coverage polynomial q(t) = sum_k C_k t^k, which is removed either from the
quantile (correction I) or from the statistic (correction II).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .errors import InvalidMoments
from .model import CostModel, DataSet, MomentModel

U = (1.0, 3.0, 15.0)  # 2^k Gamma(k + 1/2) / Gamma(1/2), k = 1, 2, 3


@dataclass(frozen=True)
class MomentInputs:
    """Moments of h under the null.

    ``e_h_grad2`` is E[h Dh Sigma Dh^T], ``e_h_curv`` is E[h Dh Sigma D^2h Sigma Dh^T];
    ``t_hsh`` and ``t_third`` are E[g H Sigma H g] and E[T(g, g, g)] with g = Sigma Dh^T.
    """

    alpha2: float
    alpha3: float
    alpha4: float
    alpha2_t: float
    alpha3_t: float
    e_h_grad2: float
    e_h_curv: float
    t_hsh: float = 0.0
    t_third: float = 0.0
    source: str = "analytic"

    @property
    def alpha4_t(self) -> float:
        return -self.t_hsh - self.t_third / 3.0 + 9.0 / (4.0 * self.alpha2_t) * self.alpha3_t ** 2


@dataclass(frozen=True)
class BartlettCoeffs:
    k11: float
    k22: float
    k31: float
    k42: float
    alpha2: float
    alpha3: float
    alpha4: float
    alpha2_t: float
    alpha3_t: float
    alpha4_t: float
    b0: float
    b1: float
    b2: float
    b3: float
    c1: float
    c2: float
    c3: float
    u1: float = U[0]
    u2: float = U[1]
    u3: float = U[2]

    @property
    def c(self):
        return (self.c1, self.c2, self.c3)


@dataclass(frozen=True)
class Correction:
    value: float
    factor: float
    overflow: bool = False


def plugin_moments(data: DataSet, model: MomentModel, cost: CostModel,
                   centre: bool = False) -> MomentInputs:
    """Empirical versions of every moment entering the coefficients (d = 1 only).

    With ``centre`` the moments of h are taken about its sample mean, which is what
    the null would force in the population.
    """
    if model.d != 1:
        raise InvalidMoments("Bartlett coefficients are defined for d = 1 only")
    X, w = data.points, data.w
    S = cost.sigma
    h = model.h(X)[:, 0]
    if centre:
        h = h - w @ h
    g = model.jac(X)[:, 0, :] @ S  # Sigma Dh^T as rows
    H = model.hess(X)[:, 0]
    grad2 = np.einsum("im,im->i", g, model.jac(X)[:, 0, :])
    curv = np.einsum("ip,ipq,iq->i", g, H, g)
    hsh = np.einsum("ip,ipq,qr,irs,is->i", g, H, S, H, g)
    if model.third is not None:
        T = model.third(X)[:, 0]
        third = np.einsum("ipqr,ip,iq,ir->i", T, g, g, g)
    else:
        third = np.zeros_like(h)
    return MomentInputs(alpha2=float(w @ h ** 2), alpha3=float(w @ h ** 3), alpha4=float(w @ h ** 4),
                        alpha2_t=float(w @ grad2), alpha3_t=float(w @ curv),
                        e_h_grad2=float(w @ (h * grad2)), e_h_curv=float(w @ (h * curv)),
                        t_hsh=float(w @ hsh), t_third=float(w @ third), source="plug-in")


def compute_bartlett_coeffs(mom: MomentInputs) -> BartlettCoeffs:
    a2, a3, a4 = mom.alpha2, mom.alpha3, mom.alpha4
    t2, t3 = mom.alpha2_t, mom.alpha3_t
    vals = (a2, a3, a4, t2, t3, mom.e_h_grad2, mom.e_h_curv, mom.t_hsh, mom.t_third)
    if not all(math.isfinite(v) for v in vals):
        raise InvalidMoments("moments must be finite")
    if a2 <= 0 or t2 <= 0:
        raise InvalidMoments(f"alpha2={a2} and alpha2~={t2} must be positive")
    t4 = mom.alpha4_t
    e1, e2 = mom.e_h_grad2, mom.e_h_curv
    r2 = math.sqrt(a2)

    k11 = -a3 / (2 * a2 ** 1.5) + t3 * r2 / (2 * t2 ** 2)
    k31 = -2 * a3 / a2 ** 1.5 + 3 * t3 * r2 / t2 ** 2
    k22 = (-3 * a3 * t3 / (2 * a2 * t2 ** 2) + 7 * a3 ** 2 / (4 * a2 ** 3)
           + (-6 * t3 * e1 + 3 * t4 * a2) / t2 ** 3
           + 3 * e2 / t2 ** 2 - a2 * t3 ** 2 / t2 ** 4)
    k42 = (-2 * a4 / a2 ** 2 + 12 * a3 ** 2 / a2 ** 3 - 18 * a3 * t3 / (a2 * t2 ** 2)
           + 12 * e2 / t2 ** 2 + (12 * a2 * t4 - 24 * t3 * e1) / t2 ** 3
           + 9 * a2 * t3 ** 2 / t2 ** 4)

    p = (k11 ** 2 + k22) / 2
    q = 4 * k11 * k31 + k42
    b0 = -p + q / 8 - 5 * k31 ** 2 / 24
    b1 = p - q / 4 + 5 * k31 ** 2 / 8
    b2 = q / 8 - 5 * k31 ** 2 / 8
    b3 = 5 * k31 ** 2 / 24
    B = (b0, b1, b2, b3)
    C = [-2.0 / U[k - 1] * sum(B[r] for r in range(k, 4)) for k in (1, 2, 3)]
    return BartlettCoeffs(k11, k22, k31, k42, a2, a3, a4, t2, t3, t4, b0, b1, b2, b3, *C)


def coverage_polynomial(coeffs: BartlettCoeffs, t):
    """q(t) = sum_k C_k t^k, the n^{-1} coverage term is g_1(t) q(t) / n."""
    t = np.asarray(t, dtype=float)
    return coeffs.c1 * t + coeffs.c2 * t ** 2 + coeffs.c3 * t ** 3


def correct_quantile(coeffs: BartlettCoeffs, z_hat: float, alpha: float, n: int) -> Correction:
    """(1 - C) z_hat with C = sum_k C_k chi2^{k-1} / n."""
    if n < 2:
        raise ValueError("n must be >= 2")
    chi = float(stats.chi2.ppf(1 - alpha, 1))
    C = sum(c * chi ** k for k, c in enumerate(coeffs.c)) / n
    if abs(C) >= 1:
        warnings.warn(f"quantile correction |C|={abs(C):.3g} >= 1; returning the uncorrected value",
                      RuntimeWarning, stacklevel=2)
        return Correction(z_hat, 1.0, True)
    return Correction((1 - C) * z_hat, 1 - C)


def correct_statistic(coeffs: BartlettCoeffs, stat: float, w_n: float, v_n: float, n: int) -> Correction:
    """(1 + (C1 + C2 S + C3 S^2) / n) stat with S = (V_n / W_n) stat."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if w_n <= 0 or v_n <= 0:
        raise InvalidMoments("W_n and V_n must be positive")
    S = v_n / w_n * stat
    adj = (coeffs.c1 + coeffs.c2 * S + coeffs.c3 * S ** 2) / n
    if abs(adj) >= 1:
        warnings.warn(f"statistic correction |adj|={abs(adj):.3g} >= 1; returning the uncorrected value",
                      RuntimeWarning, stacklevel=2)
        return Correction(stat, 1.0, True)
    return Correction((1 + adj) * stat, 1 + adj)


def equivalent_threshold(coeffs: BartlettCoeffs, z_hat: float, w_n: float, v_n: float, n: int) -> float:
    """Largest raw statistic accepted under correction II, for comparison with correction I."""
    def f(s):
        S = v_n / w_n * s
        return (1 + (coeffs.c1 + coeffs.c2 * S + coeffs.c3 * S ** 2) / n) * s - z_hat

    return float(optimize.brentq(f, 0.0, 4.0 * z_hat))
