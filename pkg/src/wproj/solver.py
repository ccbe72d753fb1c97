"""Empirical Wasserstein projection through its dual.

With the squared Mahalanobis cost,

    R_n(h) = sup_zeta  -sum_i w_i phi_i(zeta),
    phi_i(zeta) = sup_x { zeta^T h(x) - ||x - X_i||_Sigma^2 },

and n R_n(h) is reported as the statistic.  The outer problem is concave in
zeta; each phi_i is evaluated by a per-sample transport subproblem whose
maximiser x_i* satisfies 2 Sigma^{-1}(x_i* - X_i) = Dh(x_i*)^T zeta.

Results carry the dual variable in the rescaled convention zeta' = sqrt(n) zeta.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import linalg, optimize

from .errors import InfeasibleOracle, InnerNonconvergence, UnboundedInner
from .model import CostModel, DataSet, MomentModel

log = logging.getLogger(__name__)

_MIN_DAMPING = 2.0 ** -6
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverOptions:
    outer_tol: float = 1e-9
    outer_max_iter: int = 500
    inner_tol: float = 1e-11
    inner_max_iter: int = 200
    inner_damping: float = 1.0
    multistart_grid: int = 0
    zeta_radius_scale: float = 1.0
    # grow the dual ball when the optimiser reaches it (the ball is an asymptotic bound)
    expand_ball: bool = True

    def __post_init__(self):
        if min(self.outer_tol, self.inner_tol) <= 0:
            raise ValueError("tolerances must be positive")
        if min(self.outer_max_iter, self.inner_max_iter) < 1:
            raise ValueError("iteration caps must be >= 1")
        if not 0 < self.inner_damping <= 1:
            raise ValueError("inner_damping must lie in (0, 1]")
        if self.multistart_grid < 0 or self.zeta_radius_scale <= 0:
            raise ValueError("multistart_grid must be >= 0 and zeta_radius_scale > 0")


@dataclass
class WpResult:
    stat: float
    r_value: float
    zeta_star: np.ndarray
    transported: np.ndarray
    h_bar: np.ndarray
    iterations: int
    converged: bool
    active_ball: bool
    hull_warning: bool = False
    dual_trace: list = field(default_factory=list, repr=False)


# ---------------------------------------------------------------------------
# Inner transport subproblems
# ---------------------------------------------------------------------------

def _psi(zeta, x, X, model, cost):
    return model.h(x) @ zeta - cost.sqnorm(x - X)


def _curvature(zeta, x, model, cost):
    """A = 2 Sigma^{-1} - sum_beta zeta_beta Hess h^beta(x), shape (k, m, m)."""
    Sinv2 = 2.0 * cost.solve(np.eye(cost.m))
    return Sinv2[None] - np.einsum("b,kbij->kij", zeta, model.hess(x))


def _newton_polish(zeta, x, X, model, cost, tol, max_iter, lo=None, hi=None):
    """Safeguarded Newton ascent on psi for a batch of rows.

    Returns the iterate and a boolean convergence mask.  ``lo``/``hi`` optionally
    box each (m = 1) row.
    """
    x = x.copy()
    k, m = x.shape
    done = np.zeros(k, dtype=bool)
    S = cost.sigma
    for _ in range(max_iter):
        J = model.jac(x)
        grad = np.einsum("kbm,b->km", J, zeta) - 2.0 * cost.solve(x - X)
        scale = 1.0 + np.abs(x).max(axis=1)
        step_fp = 0.5 * grad @ S  # displacement to the fixed-point target
        done = np.linalg.norm(step_fp, axis=1) <= tol * scale
        if done.all():
            break
        A = _curvature(zeta, x, model, cost)
        step = np.empty_like(x)
        for j in np.nonzero(~done)[0]:
            try:
                c = linalg.cho_factor(A[j])
                step[j] = linalg.cho_solve(c, grad[j])
            except linalg.LinAlgError:
                step[j] = 0.5 * S @ grad[j]
        step[done] = 0.0
        base = _psi(zeta, x, X, model, cost)
        t = np.ones(k)
        accepted = done.copy()
        for _ in range(40):
            trial = x + t[:, None] * step
            if lo is not None:
                trial[:, 0] = np.clip(trial[:, 0], lo, hi)
            val = _psi(zeta, trial, X, model, cost)
            ok = (val >= base - 1e-14 * (1.0 + np.abs(base))) & ~accepted
            x[ok] = trial[ok]
            accepted |= ok
            if accepted.all():
                break
            t[~accepted] *= 0.5
        if not accepted.all():
            # no ascent available along the step: the point is stationary to rounding
            break
    J = model.jac(x)
    grad = np.einsum("kbm,b->km", J, zeta) - 2.0 * cost.solve(x - X)
    scale = 1.0 + np.abs(x).max(axis=1)
    done = np.linalg.norm(0.5 * grad @ S, axis=1) <= max(tol, 1e-9) * scale
    return x, done


def _unbounded_probe(zeta, x, X, model, cost):
    """Check rows whose stationary point is not a strict local max for unboundedness.

    Returns (unbounded mask, improved starting points).
    """
    k, m = x.shape
    A = _curvature(zeta, x, model, cost)
    eig, vec = np.linalg.eigh(A)
    flat = eig[:, 0] <= 1e-12 * (1.0 + np.abs(eig[:, -1]))
    unb = np.zeros(k, dtype=bool)
    restart = x.copy()
    base = _psi(zeta, x, X, model, cost)
    tol_eig = 1e-12 * (1.0 + np.abs(eig[:, -1]))
    if flat.any():
        J = model.jac(x)
        grad = np.einsum("kbm,b->km", J, zeta) - 2.0 * cost.solve(x - X)
    for j in np.nonzero(flat)[0]:
        v = vec[j, :, 0]
        # prefer the gradient's component inside the flat eigenspace (linear growth)
        Vf = vec[j][:, eig[j] <= tol_eig[j]]
        gp = Vf @ (Vf.T @ grad[j])
        if np.linalg.norm(gp) > 0:
            v = gp / np.linalg.norm(gp)
        best_val, best_pt = base[j], x[j]
        for sign in (1.0, -1.0):
            prev = base[j]
            growing_dir = True
            for e in range(0, 31, 2):
                pt = x[j] + sign * (2.0 ** e) * (1.0 + np.abs(x[j]).max()) * v
                val = _psi(zeta, pt[None], X[j:j + 1], model, cost)[0]
                if val > best_val:
                    best_val, best_pt = val, pt
                if not val > prev:
                    growing_dir = False
                prev = val
            if growing_dir and prev > base[j] + 1e6 * (1.0 + abs(base[j])):
                unb[j] = True
                break
        if not unb[j]:
            restart[j] = best_pt
    return unb, restart


def _multistart_1d(zeta, X, model, cost, opts):
    """Global search for m = 1 models: grid seeding then bracketed refinement."""
    n = X.shape[0]
    s2 = cost.op_norm
    bound = model.jac_bound
    if bound is None:
        bound = float(np.abs(model.jac(X)).max()) * 4.0 + 1.0
    G = s2 * float(np.linalg.norm(zeta)) * bound
    if G == 0.0:
        return X.copy(), _psi(zeta, X, X, model, cost)
    npts = max(int(opts.multistart_grid), 3)
    offs = np.linspace(-G, G, npts)
    grid = X[:, 0][:, None] + offs[None, :]
    vals = _psi(zeta, grid.reshape(-1, 1), np.repeat(X, npts, axis=0), model, cost).reshape(n, npts)
    cand_lo, cand_hi, cand_row = [], [], []
    for i in range(n):
        v = vals[i]
        interior = np.nonzero((v[1:-1] >= v[:-2]) & (v[1:-1] >= v[2:]))[0] + 1
        idx = list(interior)
        if v[0] >= v[1]:
            idx.append(0)
        if v[-1] >= v[-2]:
            idx.append(npts - 1)
        idx = sorted(idx, key=lambda j: -v[j])[:4]
        for j in idx:
            cand_lo.append(grid[i, max(j - 1, 0)])
            cand_hi.append(grid[i, min(j + 1, npts - 1)])
            cand_row.append(i)
    lo = np.array(cand_lo)
    hi = np.array(cand_hi)
    rows = np.array(cand_row)
    Xr = X[rows]
    # vectorised golden-section search on each bracket
    a, b = lo.copy(), hi.copy()
    for _ in range(90):
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        left = _psi(zeta, c[:, None], Xr, model, cost) >= _psi(zeta, d[:, None], Xr, model, cost)
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        if np.all(b - a <= 1e-15 * (1.0 + np.abs(a))):
            break
    xs = ((a + b) / 2.0)[:, None]
    xs, _ = _newton_polish(zeta, xs, Xr, model, cost, opts.inner_tol, 20, lo=lo, hi=hi)
    fv = _psi(zeta, xs, Xr, model, cost)
    x_out = X.copy()
    v_out = np.full(n, -np.inf)
    for r in range(len(rows)):
        i = rows[r]
        better = fv[r] > v_out[i] + 1e-12 * (1.0 + abs(fv[r]))
        tie = abs(fv[r] - v_out[i]) <= 1e-12 * (1.0 + abs(fv[r]))
        closer = tie and cost.sqnorm(xs[r] - X[i]) < cost.sqnorm(x_out[i] - X[i])
        if better or closer:
            x_out[i] = xs[r]
            v_out[i] = fv[r]
    # the unmoved point is always a candidate
    v0 = _psi(zeta, X, X, model, cost)
    keep = v0 >= v_out
    x_out[keep] = X[keep]
    v_out[keep] = v0[keep]
    return x_out, v_out


def _inner_batch(zeta, X, model, cost, opts, x0=None):
    """Solve every transport subproblem at ``zeta``.

    Returns (x_star, values, unbounded_mask).  Raises InnerNonconvergence with the
    first failing sample index.
    """
    zeta = np.asarray(zeta, dtype=float)
    n, m = X.shape
    if not np.any(zeta):
        return X.copy(), np.zeros(n), np.zeros(n, dtype=bool)
    if opts.multistart_grid > 0 and m == 1:
        xs, vals = _multistart_1d(zeta, X, model, cost, opts)
        return xs, vals, np.zeros(n, dtype=bool)

    S = cost.sigma
    x = X.copy() if x0 is None else x0.copy()
    theta = np.full(n, float(opts.inner_damping))
    prev = np.full(n, np.inf)
    active = np.ones(n, dtype=bool)
    for _ in range(opts.inner_max_iter):
        idx = np.nonzero(active)[0]
        xa = x[idx]
        target = X[idx] + 0.5 * np.einsum("kbm,b->km", model.jac(xa), zeta) @ S
        step = target - xa
        disp = np.linalg.norm(step, axis=1)
        conv = disp <= opts.inner_tol * (1.0 + np.abs(xa).max(axis=1))
        grew = disp > prev[idx]
        theta[idx[grew]] *= 0.5
        x[idx] = xa + theta[idx][:, None] * step
        prev[idx] = disp
        active[idx[conv]] = False
        active &= theta >= _MIN_DAMPING
        if not active.any():
            break
    # rows that stalled, diverged or exhausted damping go to Newton
    pending = np.nonzero((prev > opts.inner_tol * (1.0 + np.abs(x).max(axis=1))) | (theta < _MIN_DAMPING))[0]
    unbounded = np.zeros(n, dtype=bool)
    if pending.size:
        start = np.where(np.isfinite(x[pending]).all(axis=1)[:, None], x[pending], X[pending])
        xp, ok = _newton_polish(zeta, start, X[pending], model, cost, opts.inner_tol, 100)
        x[pending] = xp
        bad = pending[~ok]
        if bad.size:
            # a failed ascent is usually an unbounded direction; only raise otherwise
            unb_bad, _ = _unbounded_probe(zeta, x[bad], X[bad], model, cost)
            if not unb_bad.all():
                unb_bad |= _unbounded_probe(zeta, X[bad], X[bad], model, cost)[0]
            unbounded[bad[unb_bad]] = True
            bad = bad[~unb_bad]
        if bad.size:
            raise InnerNonconvergence(
                f"inner transport did not converge at sample {bad[0]}", index=int(bad[0]),
                last_iterate=x[bad[0]].copy())
    # second-order check: a non-maximising stationary point signals unboundedness
    unb, restart = _unbounded_probe(zeta, x, X, model, cost)
    unbounded |= unb
    moved = np.nonzero(~unbounded & np.any(restart != x, axis=1))[0]
    if moved.size:
        xp, ok = _newton_polish(zeta, restart[moved], X[moved], model, cost, opts.inner_tol, 100)
        better = _psi(zeta, xp, X[moved], model, cost) > _psi(zeta, x[moved], X[moved], model, cost)
        x[moved[better]] = xp[better]
    vals = _psi(zeta, x, X, model, cost)
    vals[unbounded] = np.inf
    return x, vals, unbounded


def solve_inner_transport(zeta, x_i, model: MomentModel, cost: CostModel,
                          opts: SolverOptions = SolverOptions()):
    """Maximise zeta^T h(x) - ||x - x_i||_Sigma^2 over x for one sample.

    ``zeta`` is in the unscaled convention of the stationarity condition
    2 Sigma^{-1}(x - x_i) = Dh(x)^T zeta.  Returns ``(x_star, value)``.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    if not np.all(np.isfinite(zeta)):
        raise ValueError("zeta must be finite")
    X = np.asarray(x_i, dtype=float).reshape(1, model.m)
    xs, vals, unb = _inner_batch(zeta, X, model, cost, opts)
    if unb[0]:
        raise UnboundedInner(f"inner objective is unbounded above at zeta={zeta}")
    return xs[0], float(vals[0])


# ---------------------------------------------------------------------------
# Outer dual
# ---------------------------------------------------------------------------

class _Dual:
    """Caches inner solves and exposes value / supergradient / curvature of the dual."""

    def __init__(self, data, model, cost, opts):
        self.X = data.points
        self.w = data.w
        self.model, self.cost, self.opts = model, cost, opts
        self.trace = []
        self.best = (0.0, np.zeros(model.d), data.points.copy())
        self.evals = 0

    def __call__(self, zeta):
        self.evals += 1
        xs, vals, unb = _inner_batch(zeta, self.X, self.model, self.cost, self.opts)
        if unb.any():
            self.trace.append(-np.inf)
            return -np.inf, None, None, xs
        g = -float(self.w @ vals)
        hx = self.model.h(xs)
        grad = -(self.w @ hx)
        self.trace.append(g)
        if g > self.best[0]:
            self.best = (g, np.array(zeta, dtype=float), xs)
        return g, grad, xs, xs

    def curvature(self, zeta, xs):
        """Hessian of the dual value, -sum_i w_i J A^{-1} J^T (None where A is not PD)."""
        J = self.model.jac(xs)
        A = _curvature(np.asarray(zeta, dtype=float), xs, self.model, self.cost)
        try:
            np.linalg.cholesky(A)
        except np.linalg.LinAlgError:
            return None
        sol = np.linalg.solve(A, np.swapaxes(J, 1, 2))  # A^{-1} J^T, (n, m, d)
        Hs = np.einsum("i,idm,ime->de", self.w, J, sol)
        return -Hs


def _hull_warning(hx, w):
    """True when 0 is not (numerically) interior to the convex hull of the h values."""
    n, d = hx.shape
    if d == 1:
        return not (hx.min() < 0 < hx.max())
    centred = hx - w @ hx
    if np.linalg.matrix_rank(centred, tol=1e-10 * (1 + np.abs(hx).max())) < d:
        return True
    # maximise the smallest weight subject to sum w = 1 and sum w h = 0
    c = np.zeros(n + 1)
    c[-1] = -1.0
    A_eq = np.zeros((d + 1, n + 1))
    A_eq[:d, :n] = hx.T
    A_eq[d, :n] = 1.0
    b_eq = np.zeros(d + 1)
    b_eq[d] = 1.0
    A_ub = np.hstack([-np.eye(n), np.ones((n, 1))])
    res = optimize.linprog(c, A_ub=A_ub, b_ub=np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                           bounds=[(0, None)] * n + [(None, None)], method="highs")
    return not (res.status == 0 and -res.fun > 1e-12)


def compute_wp_statistic(data: DataSet, model: MomentModel, cost: CostModel,
                         opts: SolverOptions = SolverOptions()) -> WpResult:
    """Compute n R_n(h) by maximising the concave dual."""
    if data.m != model.m or cost.m != model.m:
        raise ValueError(f"dimension mismatch: data m={data.m}, model m={model.m}, cost m={cost.m}")
    n = data.n
    sqn = math.sqrt(n)
    hx = model.h(data.points)
    h_bar = sqn * (data.w @ hx)
    radius0 = 2.0 * opts.zeta_radius_scale * math.log(max(n, 3))
    dual = _Dual(data, model, cost, opts)
    d = model.d
    tol = opts.outer_tol

    def rescaled_gnorm(grad):
        return sqn * float(np.linalg.norm(grad))

    g0, grad0, _, _ = dual(np.zeros(d))
    iterations = 0
    converged = rescaled_gnorm(grad0) <= tol
    radius = radius0 / sqn  # unscaled ball radius
    hit_boundary = False

    if not converged and d == 1:
        converged, iterations, hit_boundary = _solve_scalar(dual, grad0, radius, opts, sqn)
    elif not converged:
        converged, iterations, hit_boundary = _solve_newton(dual, grad0, radius, opts, sqn)

    g_best, zeta_best, xs_best = dual.best
    zeta_resc = sqn * zeta_best
    r_value = max(g_best, 0.0)
    active = bool(np.linalg.norm(zeta_resc) > radius0 * (1 - 1e-12)) or hit_boundary
    if not converged:
        log.warning("outer dual iteration did not converge after %d iterations", iterations)
    return WpResult(stat=n * r_value, r_value=r_value, zeta_star=zeta_resc, transported=xs_best,
                    h_bar=h_bar, iterations=iterations, converged=converged, active_ball=active,
                    hull_warning=_hull_warning(hx, data.w), dual_trace=list(dual.trace))


def _solve_scalar(dual, grad0, radius, opts, sqn):
    """Bracketing Newton/bisection on the scalar concave dual.

    Returns (converged, iterations, hit_boundary).
    """
    s = 1.0 if grad0[0] > 0 else -1.0
    tol = opts.outer_tol
    H0 = dual.curvature(np.zeros(1), dual.X.copy())
    step = abs(grad0[0] / H0[0, 0]) if H0 is not None and H0[0, 0] < -1e-14 else 1.0 / sqn
    lo, hi = 0.0, None
    last = (0.0, grad0[0], H0)
    iters = 0
    # phase 1: march along the ascent direction until the supergradient changes sign
    while iters < opts.outer_max_iter:
        iters += 1
        cand = lo + s * step
        capped = not opts.expand_ball and abs(cand) >= radius
        if capped:
            cand = s * radius
        g, grad, xs, _ = dual(np.array([cand]))
        if g != -np.inf and sqn * abs(grad[0]) <= tol:
            return True, iters, False
        if g == -np.inf or grad[0] * s < 0:
            hi = cand
            if g != -np.inf:
                last = (cand, grad[0], dual.curvature(np.array([cand]), xs))
            break
        lo = cand
        last = (cand, grad[0], dual.curvature(np.array([cand]), xs))
        if capped:
            return True, iters, True
        step *= 2.0
    if hi is None:
        return False, iters, False

    # phase 2: safeguarded Newton inside [lo, hi]; bisect when Newton leaves the
    # bracket or its step stops halving
    dx_old = abs(hi - lo)
    while iters < opts.outer_max_iter:
        iters += 1
        x0, gr, Hc = last
        left, right = min(lo, hi), max(lo, hi)
        cand = None
        if Hc is not None and Hc[0, 0] < 0:
            cand = x0 - gr / Hc[0, 0]
            if not (left < cand < right) or abs(cand - x0) > 0.5 * dx_old:
                cand = None
        if cand is None:
            cand = 0.5 * (lo + hi)
        dx_old = abs(cand - x0) if cand != 0.5 * (lo + hi) else 0.5 * (right - left)
        g, grad, xs, _ = dual(np.array([cand]))
        if g == -np.inf:
            hi = cand
            last = (cand, 0.0, None)
        else:
            if sqn * abs(grad[0]) <= tol:
                return True, iters, False
            if grad[0] * s > 0:
                lo = cand
            else:
                hi = cand
            last = (cand, grad[0], dual.curvature(np.array([cand]), xs))
        if abs(hi - lo) <= 4e-16 * (1.0 + max(abs(lo), abs(hi))):
            # the supergradient changes sign across a kink at this point
            return True, iters, False
    return False, iters, False


def _solve_newton(dual, grad0, radius, opts, sqn):
    """Newton ascent with backtracking for d > 1 (projected onto the ball when it is fixed)."""
    d = grad0.shape[0]
    zeta = np.zeros(d)
    g, grad = dual.best[0], grad0
    xs = dual.X.copy()
    hit = False

    def project(z):
        nz = np.linalg.norm(z)
        if not opts.expand_ball and nz > radius:
            return z * (radius / nz)
        return z

    for it in range(1, opts.outer_max_iter + 1):
        Hc = dual.curvature(zeta, xs)
        p = None
        if Hc is not None:
            try:
                p = np.linalg.solve(-Hc, grad)
                if p @ grad <= 0:
                    p = None
            except np.linalg.LinAlgError:
                p = None
        if p is None:
            p = grad * (1.0 / max(np.linalg.norm(grad), 1e-300)) * max(np.linalg.norm(zeta), 1.0 / sqn)
        t = 1.0
        accepted = False
        for _ in range(60):
            z_new = project(zeta + t * p)
            g_new, grad_new, xs_new, _ = dual(z_new)
            if g_new != -np.inf and g_new >= g + 1e-4 * t * min(grad @ p, grad @ (z_new - zeta) / max(t, 1e-300)) - 1e-15 * (1 + abs(g)):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            return sqn * np.linalg.norm(grad) <= max(opts.outer_tol, 1e-7), it, hit
        step_len = np.linalg.norm(z_new - zeta)
        zeta, g, grad, xs = z_new, g_new, grad_new, xs_new
        if not opts.expand_ball and np.linalg.norm(zeta) >= radius * (1 - 1e-12):
            hit = True
            # boundary optimality: supergradient points outward along zeta
            if np.linalg.norm(grad - (grad @ zeta) / (zeta @ zeta) * zeta) * sqn <= opts.outer_tol and grad @ zeta >= 0:
                return True, it, hit
        if sqn * np.linalg.norm(grad) <= opts.outer_tol:
            return True, it, hit
        if step_len <= 1e-16 * (1 + np.linalg.norm(zeta)):
            return sqn * np.linalg.norm(grad) <= max(opts.outer_tol, 1e-7), it, hit
    return False, opts.outer_max_iter, hit


# ---------------------------------------------------------------------------
# Closed-form oracles
# ---------------------------------------------------------------------------

def wp_closed_form_linear(data: DataSet, cost: CostModel) -> float:
    """n R_n for h(x) = x: ||sum_i h(X_i)/sqrt(n)||_Sigma^2."""
    H = math.sqrt(data.n) * (data.w @ data.points)
    return float(cost.sqnorm(H))


def wp_closed_form_quadratic(data: DataSet, c: float = 1.0) -> float:
    """n R_n for h(x) = ||x||^2 - c with identity cost.

    Every atom is rescaled by sqrt(c / mean ||X||^2), giving
    n (sqrt(1 + Delta_n / sqrt(n)) - 1)^2 when c = 1.
    """
    n = data.n
    m2 = float(data.w @ np.einsum("ij,ij->i", data.points, data.points))
    if c < 0:
        raise InfeasibleOracle(f"h(x) = ||x||^2 - c is positive everywhere for c={c}")
    delta = math.sqrt(n) * (m2 - c)
    ratio = 1.0 + delta / (math.sqrt(n) * c) if c > 0 else m2
    if ratio < 0:
        raise InfeasibleOracle("1 + Delta_n / sqrt(n) < 0")
    return n * (math.sqrt(m2) - math.sqrt(c)) ** 2
