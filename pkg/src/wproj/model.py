"""Moment functions, the Mahalanobis ground cost and observation sets.

All moment-model callables are batched over rows: given ``X`` of shape
``(n, m)`` they return

* ``h(X)``     -> ``(n, d)``
* ``jac(X)``   -> ``(n, d, m)``        (row ``beta`` is the gradient of h^beta)
* ``hess(X)``  -> ``(n, d, m, m)``
* ``third(X)`` -> ``(n, d, m, m, m)``
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import linalg

from .errors import DataParseError, InvalidDimension, MissingDerivatives

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class MomentModel:
    m: int
    d: int
    h: ArrayFn
    jac: ArrayFn
    hess: ArrayFn
    third: Optional[ArrayFn] = None
    lipschitz_kappa1: Optional[float] = None
    # sup over x of the spectral norm of jac(x); used to size the multistart grid
    jac_bound: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise InvalidDimension(f"dimensions must be positive, got m={self.m}, d={self.d}")

    def require_third(self):
        if self.third is None:
            raise MissingDerivatives(
                f"model {self.name!r} has no third derivatives; "
                "use with_fd_third() to synthesise them explicitly"
            )
        return self.third

    def at(self, x):
        """Evaluate ``h`` at a single point, returning a length-``d`` vector."""
        x = np.asarray(x, dtype=float).reshape(1, self.m)
        return self.h(x)[0]


def _as_rows(X, m):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(-1, m) if m > 1 else X.reshape(-1, 1)
    return X


def make_linear_model(m: int) -> MomentModel:
    """``h(x) = x`` on R^m."""
    if m <= 0:
        raise InvalidDimension(f"m must be >= 1, got {m}")
    eye = np.eye(m)

    def h(X):
        return _as_rows(X, m).copy()

    def jac(X):
        X = _as_rows(X, m)
        return np.broadcast_to(eye, (X.shape[0], m, m)).copy()

    def hess(X):
        X = _as_rows(X, m)
        return np.zeros((X.shape[0], m, m, m))

    def third(X):
        X = _as_rows(X, m)
        return np.zeros((X.shape[0], m, m, m, m))

    return MomentModel(m=m, d=m, h=h, jac=jac, hess=hess, third=third,
                       lipschitz_kappa1=0.0, jac_bound=1.0, name="linear")


def make_quadratic_norm_model(m: int, c: float = 1.0) -> MomentModel:
    """``h(x) = ||x||^2 - c`` (scalar moment)."""
    if m <= 0:
        raise InvalidDimension(f"m must be >= 1, got {m}")
    eye2 = 2.0 * np.eye(m)

    def h(X):
        X = _as_rows(X, m)
        return (np.einsum("ij,ij->i", X, X) - c)[:, None]

    def jac(X):
        X = _as_rows(X, m)
        return 2.0 * X[:, None, :]

    def hess(X):
        X = _as_rows(X, m)
        return np.broadcast_to(eye2, (X.shape[0], 1, m, m)).copy()

    def third(X):
        X = _as_rows(X, m)
        return np.zeros((X.shape[0], 1, m, m, m))

    return MomentModel(m=m, d=1, h=h, jac=jac, hess=hess, third=third,
                       lipschitz_kappa1=2.0, name="quadratic", params={"c": float(c)})


def with_fd_third(model: MomentModel, step: float = 1e-4) -> MomentModel:
    """Return a copy of ``model`` whose third derivatives are central differences of ``hess``."""
    m = model.m

    def third(X):
        X = _as_rows(X, m)
        out = np.empty((X.shape[0], model.d, m, m, m))
        for a in range(m):
            e = np.zeros(m)
            e[a] = step
            out[..., a] = (model.hess(X + e) - model.hess(X - e)) / (2 * step)
        return out

    return MomentModel(m=model.m, d=model.d, h=model.h, jac=model.jac, hess=model.hess,
                       third=third, lipschitz_kappa1=model.lipschitz_kappa1,
                       jac_bound=model.jac_bound, name=model.name + "+fd3",
                       params=dict(model.params))


# ---------------------------------------------------------------------------
# Smoothed piecewise-linear function with vanishing EL power
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = leggauss(64)
_TAIL = 2.0


def _bump(s):
    """Unnormalised bump exp(-1/(1-s^2)) on (-1, 1), in the unit variable s = t/eps."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_prime(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(-1.0 / (1.0 - si**2)) * (-2.0 * si / (1.0 - si**2) ** 2)
    return out


_BUMP_MASS = float(np.sum(_GL_WEIGHTS * _bump(_GL_NODES)))


def _kernel_primitives(u, eps):
    """Return K(u), K'(u), the kernel CDF and the smoothed-ramp correction at offsets ``u``.

    The kernel has unit mass on [-eps, eps].  The ramp correction is
    rho(u) = int (u - t)_+ K(t) dt - u_+, which vanishes for |u| >= eps.
    """
    u = np.asarray(u, dtype=float)
    s = np.clip(u / eps, -1.0, 1.0)
    K = _bump(s) / (_BUMP_MASS * eps)
    Kp = _bump_prime(s) / (_BUMP_MASS * eps**2)
    # map GL nodes from [-1, 1] onto [-1, s] in the unit variable
    half = (s + 1.0) / 2.0
    t = -1.0 + half[..., None] * (_GL_NODES + 1.0)
    wk = _GL_WEIGHTS * _bump(t) * half[..., None] / _BUMP_MASS
    cdf = wk.sum(axis=-1)
    first = (wk * t).sum(axis=-1) * eps
    ramp = u * cdf - first - np.maximum(u, 0.0)
    inside = np.abs(u) < eps
    ramp = np.where(inside, ramp, 0.0)
    cdf = np.where(u >= eps, 1.0, np.where(u <= -eps, 0.0, cdf))
    return K, Kp, cdf, ramp


@dataclass(frozen=True)
class ZeroPowerGeometry:
    epsilon: float
    kmax: int
    centers: np.ndarray      # x_0 .. x_kmax
    half_widths: np.ndarray  # d_0 .. d_kmax
    plateaus: np.ndarray     # y_0 .. y_kmax
    breaks: np.ndarray       # sorted breakpoints of the piecewise-linear f
    values: np.ndarray       # f at the breakpoints
    jumps: np.ndarray        # slope change at each breakpoint

    @property
    def support_edge(self):
        return float(self.centers[-1] + self.half_widths[-1])

    def f(self, x):
        return np.interp(x, self.breaks, self.values, left=_TAIL, right=_TAIL)

    def f_slope(self, x):
        slopes = np.diff(self.values) / np.diff(self.breaks)
        idx = np.searchsorted(self.breaks, x, side="right") - 1
        inside = (idx >= 0) & (idx < len(slopes))
        out = np.zeros_like(np.asarray(x, dtype=float))
        out[inside] = slopes[idx[inside]]
        return out


def zero_power_geometry(epsilon: float = 0.01, kmax: int = 6) -> ZeroPowerGeometry:
    if kmax < 1:
        raise InvalidDimension(f"kmax must be >= 1, got {kmax}")
    if not 0 < epsilon < 1:
        raise InvalidDimension(f"epsilon must lie in (0, 1), got {epsilon}")
    ks = np.arange(1, kmax + 1)
    dk = np.sqrt(2.0 * (2.0 ** (ks + 1) + 1.0))
    xk = 2.0 + 2.0 * np.concatenate([[0.0], np.cumsum(dk)[:-1]]) + dk
    centers = np.concatenate([[0.0], xk])
    half = np.concatenate([[2.0], dk])
    plate = np.concatenate([[-1.0], 1.0 + 2.0 ** (-ks)])

    pos_b, pos_v = [], []
    for k, (c, w, y) in enumerate(zip(centers, half, plate)):
        pts = [(c - epsilon, y), (c + epsilon, y), (c + w, _TAIL)]
        if k > 0:
            pts.insert(0, (c - w, _TAIL))
        for b, v in pts:
            if pos_b and abs(b - pos_b[-1]) < 1e-12:
                continue
            pos_b.append(b)
            pos_v.append(v)
    pos_b = np.array(pos_b)
    pos_v = np.array(pos_v)
    # mirror: breakpoints strictly negative come from the positive side
    neg_mask = pos_b > epsilon + 1e-12
    breaks = np.concatenate([-pos_b[neg_mask][::-1], pos_b])
    values = np.concatenate([pos_v[neg_mask][::-1], pos_v])
    slopes = np.concatenate([[0.0], np.diff(values) / np.diff(breaks), [0.0]])
    jumps = np.diff(slopes)
    return ZeroPowerGeometry(epsilon, kmax, centers, half, plate, breaks, values, jumps)


def make_zero_power_model(epsilon: float = 0.01, kmax: int = 6) -> MomentModel:
    """Symmetric bounded h with h(x_0) = -1 and h(x_k) = 1 + 2^-k.

    h is the piecewise-linear profile f convolved with a unit-mass bump of
    half-width ``epsilon``.  Since f'' is a sum of point masses at its
    breakpoints, the convolution and its derivatives reduce to kernel
    primitives evaluated at the offsets x - c for each breakpoint c.
    Outside the tabulated range h equals the constant tail value 2.
    """
    geo = zero_power_geometry(epsilon, kmax)
    br = geo.breaks
    jp = geo.jumps

    def _offsets(X):
        x = _as_rows(X, 1)[:, 0]
        u = x[:, None] - br[None, :]
        # only breakpoints within eps of x contribute corrections
        return x, u

    def h(X):
        x, u = _offsets(X)
        near = np.abs(u) < epsilon
        val = geo.f(x)
        if near.any():
            rows, cols = np.nonzero(near)
            _, _, _, ramp = _kernel_primitives(u[rows, cols], epsilon)
            np.add.at(val, rows, jp[cols] * ramp)
        return val[:, None]

    def jac(X):
        x, u = _offsets(X)
        near = np.abs(u) < epsilon
        val = geo.f_slope(x)
        if near.any():
            rows, cols = np.nonzero(near)
            uu = u[rows, cols]
            _, _, cdf, _ = _kernel_primitives(uu, epsilon)
            np.add.at(val, rows, jp[cols] * (cdf - (uu >= 0)))
        return val[:, None, None]

    def hess(X):
        x, u = _offsets(X)
        near = np.abs(u) < epsilon
        val = np.zeros_like(x)
        if near.any():
            rows, cols = np.nonzero(near)
            K, _, _, _ = _kernel_primitives(u[rows, cols], epsilon)
            np.add.at(val, rows, jp[cols] * K)
        return val[:, None, None, None]

    def third(X):
        x, u = _offsets(X)
        near = np.abs(u) < epsilon
        val = np.zeros_like(x)
        if near.any():
            rows, cols = np.nonzero(near)
            _, Kp, _, _ = _kernel_primitives(u[rows, cols], epsilon)
            np.add.at(val, rows, jp[cols] * Kp)
        return val[:, None, None, None, None]

    slopes = np.diff(geo.values) / np.diff(geo.breaks)
    return MomentModel(m=1, d=1, h=h, jac=jac, hess=hess, third=third,
                       jac_bound=float(np.max(np.abs(slopes))), name="zero_power",
                       params={"epsilon": float(epsilon), "kmax": int(kmax), "geometry": geo})


def zero_power_outside(model: MomentModel, X) -> np.ndarray:
    """Diagnostic flag: True where ``X`` lies beyond the tabulated range (h clamped to 2)."""
    geo = model.params["geometry"]
    x = _as_rows(X, 1)[:, 0]
    return np.abs(x) > geo.support_edge


# ---------------------------------------------------------------------------
# Cost and data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostModel:
    """Squared Mahalanobis cost (x - y)^T Sigma^{-1} (x - y)."""

    sigma: np.ndarray
    sigma_factor: tuple = field(init=False, repr=False)

    def __post_init__(self):
        S = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if S.shape[0] != S.shape[1]:
            raise InvalidDimension(f"sigma must be square, got {S.shape}")
        if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise InvalidDimension("sigma must be symmetric")
        S = (S + S.T) / 2
        eig = np.linalg.eigvalsh(S)
        if eig[0] <= 0:
            raise InvalidDimension(f"sigma is not positive definite (smallest eigenvalue {eig[0]:.6g})")
        S.setflags(write=False)
        object.__setattr__(self, "sigma", S)
        object.__setattr__(self, "sigma_factor", linalg.cho_factor(S))

    @classmethod
    def identity(cls, m: int) -> "CostModel":
        return cls(np.eye(m))

    @property
    def m(self) -> int:
        return self.sigma.shape[0]

    @property
    def op_norm(self) -> float:
        return float(np.linalg.eigvalsh(self.sigma)[-1])

    def solve(self, v):
        """Sigma^{-1} v for a vector or a stack of row vectors."""
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            return linalg.cho_solve(self.sigma_factor, v)
        return linalg.cho_solve(self.sigma_factor, v.T).T

    def sqnorm(self, v):
        v = np.asarray(v, dtype=float)
        w = self.solve(v)
        return np.sum(v * w, axis=-1)


@dataclass(frozen=True)
class DataSet:
    points: np.ndarray
    weights: Optional[np.ndarray] = None

    def __post_init__(self):
        P = np.asarray(self.points, dtype=float)
        if P.ndim == 1:
            P = P[:, None]
        if P.ndim != 2 or P.shape[0] < 1:
            raise InvalidDimension(f"points must be a non-empty (n, m) array, got shape {P.shape}")
        if not np.all(np.isfinite(P)):
            raise InvalidDimension("points contain non-finite entries")
        P = P.copy()
        P.setflags(write=False)
        object.__setattr__(self, "points", P)
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float).ravel()
            if w.shape[0] != P.shape[0] or np.any(w < 0) or not np.all(np.isfinite(w)):
                raise InvalidDimension("weights must be finite, nonnegative and one per row")
            if abs(w.sum() - 1.0) > 1e-12:
                raise InvalidDimension(f"weights must sum to 1, got {w.sum():.15g}")
            w = w.copy()
            w.setflags(write=False)
            object.__setattr__(self, "weights", w)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def m(self) -> int:
        return self.points.shape[1]

    @property
    def w(self) -> np.ndarray:
        if self.weights is None:
            return np.full(self.n, 1.0 / self.n)
        return self.weights

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Weighted average over the leading (sample) axis."""
        return np.tensordot(self.w, values, axes=(0, 0))

    @classmethod
    def from_csv(cls, source) -> "DataSet":
        """Read one observation per row; a non-numeric first row is treated as a header."""
        if isinstance(source, (str, Path)) and Path(source).exists():
            text = Path(source).read_text()
        elif hasattr(source, "read"):
            text = source.read()
        else:
            text = str(source)
        rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
        if not rows:
            raise DataParseError("no data rows found")

        def numeric(row):
            try:
                [float(c) for c in row]
                return True
            except ValueError:
                return False

        start = 0 if numeric(rows[0]) else 1
        width = len(rows[start]) if start < len(rows) else 0
        data = []
        for i, row in enumerate(rows[start:], start=start + 1):
            if len(row) != width:
                raise DataParseError(f"row {i}: expected {width} columns, got {len(row)}", row=i)
            vals = []
            for j, cell in enumerate(row, start=1):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataParseError(
                        f"row {i}, column {j}: cannot parse {cell!r} as a number", row=i, column=j
                    ) from None
            data.append(vals)
        if not data:
            raise DataParseError("no data rows found")
        return cls(np.array(data))
