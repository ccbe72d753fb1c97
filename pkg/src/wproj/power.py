"""Second-order power of the scalar WP test under n^{-1/2} location shifts."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

from .errors import InvalidMoments


@dataclass(frozen=True)
class PowerInputs:
    """Null moments for h: R^m -> R and the shift direction tau0 (alternative mean tau0 / sqrt(n)).

    ``e_dh`` is E[Dh] (m,), ``e_d2h`` is E[D^2 h] (m, m) and ``e_h_dh`` is E[h Dh] (m,).
    """

    tau0: np.ndarray
    alpha: float
    alpha2: float
    alpha3: float
    alpha2_t: float
    alpha3_t: float
    e_dh: np.ndarray
    e_d2h: np.ndarray
    e_h_dh: np.ndarray
    source: str = "analytic"

    def __post_init__(self):
        for name in ("tau0", "e_dh", "e_h_dh"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        object.__setattr__(self, "e_d2h", np.atleast_2d(np.asarray(self.e_d2h, dtype=float)))
        if self.alpha2 <= 0 or self.alpha2_t <= 0:
            raise InvalidMoments(f"alpha2={self.alpha2} and alpha2~={self.alpha2_t} must be positive")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")


@dataclass(frozen=True)
class KConstants:
    k1: float
    k2: float
    k3: float
    tau: float


@dataclass(frozen=True)
class PowerGap:
    b_wp: float
    b_el: float
    b_t2: float
    i_value: float


def compute_k_constants(p: PowerInputs) -> KConstants:
    a2, a3, t2, t3 = p.alpha2, p.alpha3, p.alpha2_t, p.alpha3_t
    r2 = math.sqrt(a2)
    shift = float(p.e_dh @ p.tau0)  # E[Dh] tau0
    tau = shift / r2
    k1 = (0.5 * float(p.tau0 @ p.e_d2h @ p.tau0) / r2
          - shift * float(p.e_h_dh @ p.tau0) / a2 ** 1.5
          - a3 / (2 * a2 ** 1.5) + t3 * r2 / (2 * t2 ** 2)
          + t3 / (2 * r2 * t2 ** 2) * shift ** 2)
    k2 = (-a3 / a2 ** 2 + 2 * t3 / t2 ** 2) * shift
    k3 = -2 * a3 / a2 ** 1.5 + 3 * t3 * r2 / t2 ** 2
    return KConstants(k1, k2, k3, tau)


def _w(alpha, tau):
    c = math.sqrt(stats.chi2.ppf(1 - alpha, 1))
    return c - tau, c + tau


def first_order_power(alpha: float, tau: float) -> float:
    """P(|v + tau|^2 > chi2_{1, 1-alpha}) for v ~ N(0, 1)."""
    w1, w2 = _w(alpha, tau)
    return float(stats.norm.sf(w1) + stats.norm.sf(w2))


def e2_term(alpha: float, k: KConstants) -> float:
    """Hermite-weighted Gaussian integral over the rejection region, in closed form."""
    w1, w2 = _w(alpha, k.tau)
    f1, f2 = stats.norm.pdf(w1), stats.norm.pdf(w2)
    return float(k.k1 * (f1 - f2) + k.k2 / 2 * (w1 * f1 + w2 * f2)
                 + k.k3 / 6 * ((w1 ** 2 - 1) * f1 - (w2 ** 2 - 1) * f2))


def power_expansion(p: PowerInputs, n: Optional[float]) -> float:
    """First-order power plus n^{-1/2} E_2; ``n=None`` gives the limit."""
    k = compute_k_constants(p)
    base = first_order_power(p.alpha, k.tau)
    if n is None or math.isinf(n):
        return base
    if n < 2:
        raise ValueError("n must be >= 2")
    return base + e2_term(p.alpha, k) / math.sqrt(n)


def i_kernel(alpha: float, tau: float, alpha2: float) -> float:
    chi = stats.chi2.ppf(1 - alpha, 1)
    w1, w2 = _w(alpha, tau)
    return float(math.sqrt(alpha2) * chi / 2 * (stats.norm.pdf(w1) - stats.norm.pdf(w2)))


def power_gap_b(p: PowerInputs) -> PowerGap:
    """n^{-1/2} power coefficients B(s) for WP, EL and T2."""
    tau = float(p.e_dh @ p.tau0) / math.sqrt(p.alpha2)
    I = i_kernel(p.alpha, tau, p.alpha2)
    return PowerGap(p.alpha3_t / p.alpha2_t ** 2 * I, 2 * p.alpha3 / (3 * p.alpha2 ** 2) * I, 0.0, I)


def plugin_power_inputs(data, model, cost, tau0, alpha: float) -> PowerInputs:
    """Null moments estimated from a pilot sample (h centred at its sample mean)."""
    if model.d != 1:
        raise InvalidMoments("the power expansion is defined for d = 1 only")
    X, w = data.points, data.w
    S = cost.sigma
    h = model.h(X)[:, 0]
    h = h - w @ h
    J = model.jac(X)[:, 0, :]
    H = model.hess(X)[:, 0]
    g = J @ S
    return PowerInputs(
        tau0=np.asarray(tau0, dtype=float) * np.ones(model.m), alpha=alpha,
        alpha2=float(w @ h ** 2), alpha3=float(w @ h ** 3),
        alpha2_t=float(w @ np.einsum("im,im->i", g, J)),
        alpha3_t=float(w @ np.einsum("ip,ipq,iq->i", g, H, g)),
        e_dh=w @ J, e_d2h=np.einsum("i,ipq->pq", w, H), e_h_dh=(w * h) @ J, source="plug-in")
