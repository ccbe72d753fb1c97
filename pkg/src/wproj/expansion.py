"""Empirical expansion tensors and polynomial approximations of n R_n(h).

With g_i = Dh(X_i) Sigma (rows are Sigma-weighted gradients):

    V   = mean  Dh Sigma Dh^T                         (d, d)
    xi  = V^{-1} H_n,  H_n = n^{-1/2} sum h(X_i)      (d,)
    K   = mean  g^b . Hess h^c . g^w                  (d, d, d)
    W   = mean  h h^T                                 (d, d)

and the fourth-order tensor L adds second/third derivative couplings.  For fixed
data these are the Taylor coefficients of n R_n(h - s) in the shift s, so

    n R_n ~ <V, xi^2> + n^{-1/2} <K, xi^3> + n^{-1} <L, xi^4>.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import MissingL, SingularVn
from .model import CostModel, DataSet, MomentModel

_COND_MAX = 1e12


@dataclass
class ExpansionTerms:
    v_n: np.ndarray
    w_n: np.ndarray
    xi_n: np.ndarray
    k_n: np.ndarray
    l_n: Optional[np.ndarray]
    n: int
    h_bar: Optional[np.ndarray] = None

    @property
    def d(self) -> int:
        return self.v_n.shape[0]


@dataclass
class GammaMoments:
    mu1: np.ndarray
    mu3: np.ndarray
    m2: np.ndarray


def _check_v(v):
    eig = np.linalg.eigvalsh(v)
    if eig[0] <= 0 or eig[-1] / eig[0] > _COND_MAX:
        raise SingularVn(f"V_n is singular or ill-conditioned (eigenvalues {eig})")
    return linalg.cho_factor(v)


def compute_expansion_terms(data: DataSet, model: MomentModel, cost: CostModel,
                            want_l: bool = False) -> ExpansionTerms:
    """Sample-average tensors V_n, W_n, xi_n, K_n and optionally L_n."""
    if want_l:
        third = model.require_third()
    X = data.points
    w = data.w
    n = data.n
    S = cost.sigma
    hx = model.h(X)
    J = model.jac(X)
    H = model.hess(X)
    g = J @ S  # (n, d, m)

    v = np.einsum("i,ibm,icm->bc", w, g, J)
    v = 0.5 * (v + v.T)
    wn = np.einsum("i,ib,ic->bc", w, hx, hx)
    h_bar = math.sqrt(n) * (w @ hx)
    fac = _check_v(v)
    xi = linalg.cho_solve(fac, h_bar)
    Hg = np.einsum("icpq,iwq->icwp", H, g)  # Hess h^c . g^w
    k = np.einsum("i,ibp,icwp->bcw", w, g, Hg)

    l_n = None
    if want_l:
        T = third(X)
        d = model.d
        SH = np.einsum("pq,icqr->icpr", S, H)  # Sigma Hess h^c
        # -mean g^{o3} H^{o1} Sigma H^{o2} g^{o4}
        t1 = -np.einsum("i,icp,iapq,ibqr,idr->abcd", w, g, H, SH, g)
        # -(1/3) mean T^{o1}_{pqr} g^{o2}_p g^{o3}_q g^{o4}_r
        t2 = -np.einsum("i,iapqr,ibp,icq,idr->abcd", w, T, g, g, g) / 3.0
        vinv = linalg.cho_solve(fac, np.eye(d))
        # K[o1,g,o2] Vinv[g,t] K[t,o3,o4]  and  K[o1,g,o2] Vinv[g,t] K[o3,t,o4]
        t3 = 1.5 * np.einsum("agb,gt,tcd->abcd", k, vinv, k)
        t4 = 0.75 * np.einsum("agb,gt,ctd->abcd", k, vinv, k)
        l_n = t1 + t2 + t3 + t4
    return ExpansionTerms(v_n=v, w_n=wn, xi_n=xi, k_n=k, l_n=l_n, n=n, h_bar=h_bar)


def expansion_approx(terms: ExpansionTerms, order: int = 2) -> float:
    """Second- or third-order polynomial approximation of n R_n(h)."""
    if order not in (2, 3):
        raise ValueError("order must be 2 or 3")
    xi = terms.xi_n
    n = terms.n
    val = xi @ terms.v_n @ xi + np.einsum("abc,a,b,c->", terms.k_n, xi, xi, xi) / math.sqrt(n)
    if order == 3:
        if terms.l_n is None:
            raise MissingL("order-3 approximation needs L_n (compute with want_l=True)")
        val += np.einsum("abcd,a,b,c,d->", terms.l_n, xi, xi, xi, xi) / n
    return float(val)


def _sym_sqrt(a, inverse=False):
    eig, vec = np.linalg.eigh(a)
    p = -0.5 if inverse else 0.5
    return (vec * eig ** p) @ vec.T


def compute_gamma_moments(terms: ExpansionTerms, model: MomentModel, cost: CostModel,
                          data: DataSet) -> GammaMoments:
    """Leading coefficients of the first and third moments of the signed root.

    Population expectations are replaced by sample averages, with h centred at
    its sample mean so that the mean-zero pieces are well defined off the null.
    """
    v = terms.v_n
    fac = _check_v(v)
    d = terms.d
    X, w = data.points, data.w
    S = cost.sigma
    hx = model.h(X)
    hc = hx - w @ hx
    J = model.jac(X)
    vi = np.einsum("ibm,mp,icp->ibc", J, S, J)  # per-sample V_i
    di = vi - v  # centred V_i

    v_isq = _sym_sqrt(v, inverse=True)
    u = hc @ v_isq  # V^{-1/2} h_i (symmetric root)
    z = linalg.cho_solve(fac, hc.T).T  # V^{-1} h_i
    C = np.einsum("i,ia,ib->ab", w, z, z)  # Cov(xi~)
    M = np.einsum("i,ia,ib->ab", w, u, u)  # Cov(Y)
    Cyx = np.einsum("i,ia,ib->ab", w, u, z)  # Cov(Y, xi~)
    a_vec = np.einsum("i,iab,ib->a", w, di, z)  # E[(V_i - V) V^{-1} h_i]
    k = terms.k_n

    kc = np.einsum("abc,ab->c", k, C)  # <K, C (x) .>
    mu1 = -0.5 * (v_isq @ a_vec) + 0.5 * (v_isq @ kc)

    kappa3 = np.einsum("i,ia,ib,ic->abc", w, u, u, u)
    ud = np.einsum("i,ij,iab->jab", w, u, di)  # E[u_j (V_i - V)_{ab}]
    # D-term pieces: E[u_j D_ab] Cov(Y_k, xi~_b) (V^{-1/2})_{al}
    dpart = np.einsum("jab,kb,al->jkl", ud, Cyx, v_isq)
    # K-term cross pieces: <K, Cov(Y_j, xi~) (x) Cov(Y_k, xi~) (x) V^{-1/2} e_l>
    kcross = np.einsum("abc,ja,kb,cl->jkl", k, Cyx, Cyx, v_isq)
    kcross = kcross + np.swapaxes(kcross, 0, 1)
    base = np.einsum("jk,l->jkl", M, mu1) - 0.5 * (dpart + np.swapaxes(dpart, 0, 1)) + 0.5 * kcross
    # each of the three factors takes the O(n^{-1/2}) correction once
    mu3 = kappa3 + 3.0 * base
    mu3 = sum(np.transpose(mu3, p) for p in itertools.permutations(range(3))) / 6.0
    m2 = v_isq @ terms.w_n @ v_isq
    return GammaMoments(mu1=mu1, mu3=mu3, m2=m2)
