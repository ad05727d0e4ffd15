"""Stationary and transient distribution of the popularity process on a log grid.

The stationary law balances the downward decay flux across every level y
against the upward jump flux from below:

    gamma * y * f(y) = int_{x<y} K(y, x) f(x) dx,
    K(y, x) = lambda(x) * P(V > y - x | x) + mu * P(W > y - x).

Working with u = ln y and g(u) = y f(y), this is a homogeneous Volterra
equation of the second kind in u, solved by one forward sweep from small to
large y.  Each node's value follows from the already known lower nodes and
a scalar monotone equation for the last cell.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize, special

from .model import (InfluencerParams, SystemParams, check_ergodicity,
                    conditional_jump_mean, posting_intensity, reference_level)

KERNEL_MODES = ("split", "combined")

_GL_T, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_T = (_GL_T + 1.0) / 2.0
_GL_W = _GL_W / 2.0
_LAG_T, _LAG_W = np.polynomial.laguerre.laggauss(8)

# Last-cell panels span jump sizes from W_FLOOR * min(cell, jump scale) up to the cell width.
_W_FLOOR = 1e-8
_PANELS_PER_DECADE = 3


class ConvergenceError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


class InstabilityError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Grid and density containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    nodes: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.nodes, dtype=float)
        if y.ndim != 1 or y.size < 64:
            raise ValueError("grid needs at least 64 nodes")
        if y[0] <= 0 or np.any(np.diff(y) <= 0):
            raise ValueError("grid nodes must be positive and strictly increasing")
        object.__setattr__(self, "nodes", y)

    @classmethod
    def log_spaced(cls, ymin: float, ymax: float, n: int = 512) -> "Grid":
        if not 0 < ymin < ymax:
            raise ValueError("need 0 < ymin < ymax")
        return cls(np.geomspace(ymin, ymax, n))

    @property
    def y_min(self) -> float:
        return float(self.nodes[0])

    @property
    def y_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def n(self) -> int:
        return self.nodes.size

    @property
    def log_step(self) -> float:
        """Spacing in ln y, or nan for a non-uniform grid."""
        d = np.diff(np.log(self.nodes))
        return float(d[0]) if np.allclose(d, d[0], rtol=1e-9) else math.nan


def default_grid(sys: SystemParams, inf: InfluencerParams, n: int = 512,
                 ymin: float | None = None, ymax: float | None = None) -> Grid:
    """Log grid from epsilon/10 to 50 times the mean-balance level."""
    if ymin is None:
        ymin = sys.epsilon / 10.0
    if ymax is None:
        level = reference_level(sys, inf)
        if not math.isfinite(level):
            raise ValueError("no finite balance level; give ymax explicitly")
        ymax = 50.0 * level
    return Grid.log_spaced(ymin, ymax, n)


@dataclass(eq=False)
class DensityOnGrid:
    """Probability density and CDF sampled at grid nodes."""

    grid: Grid
    pdf: np.ndarray
    cdf: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        y = self.grid.nodes
        self.pdf = np.asarray(self.pdf, dtype=float)
        if self.pdf.shape != y.shape:
            raise ValueError("pdf must have one value per node")
        if np.any(self.pdf < 0):
            raise ValueError("density must be nonnegative")
        if self.cdf is None:
            c = np.concatenate([[0.0], np.cumsum(0.5 * (self.pdf[1:] + self.pdf[:-1]) * np.diff(y))])
            self.cdf = c / c[-1]
        self.cdf = np.asarray(self.cdf, dtype=float)

    @classmethod
    def from_cdf(cls, grid: Grid, cdf, diagnostics=None) -> "DensityOnGrid":
        cdf = np.maximum.accumulate(np.clip(np.asarray(cdf, dtype=float), 0.0, 1.0))
        f = np.maximum(np.gradient(cdf, grid.nodes), 0.0)
        return cls(grid, normalize(grid.nodes, f), cdf, dict(diagnostics or {}))

    @property
    def y(self) -> np.ndarray:
        return self.grid.nodes

    def integral(self) -> float:
        return _trapezoid(self.pdf, self.y)

    def pdf_at(self, x):
        """Log-linear interpolation of the density; zero outside the grid."""
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            lf = np.log(self.pdf)
            out = np.exp(np.interp(np.log(np.maximum(x, 1e-300)), np.log(self.y), lf,
                                   left=-np.inf, right=-np.inf))
        return out

    def cdf_at(self, x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return np.interp(np.log(np.maximum(x, 1e-300)), np.log(self.y), self.cdf,
                             left=0.0, right=1.0)

    def mean(self) -> float:
        return distribution_moments(self)[0]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["y", "f", "F"])
            for a, b, c in zip(self.y, self.pdf, self.cdf):
                w.writerow([repr(float(a)), repr(float(b)), repr(float(c))])

    def diagnostics_json(self, path=None) -> str:
        text = json.dumps(self.diagnostics, indent=2, default=float)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def _trapezoid(f, y):
    return float(np.sum(0.5 * (f[1:] + f[:-1]) * np.diff(y)))


def normalize(y, f):
    return f / _trapezoid(f, y)


def distribution_moments(d: DensityOnGrid) -> tuple[float, float]:
    """Mean and variance by the trapezoid rule on the grid."""
    y, f = d.y, d.pdf
    mass = _trapezoid(f, y)
    m = _trapezoid(y * f, y) / mass
    v = _trapezoid((y - m) ** 2 * f, y) / mass
    return m, max(v, 0.0)


def ks_distance(a, b) -> float:
    """Sup distance between two CDFs, compared on the union of their nodes.

    Arguments are DensityOnGrid objects or (nodes, cdf) pairs; CDFs are
    interpolated linearly in ln y between nodes, 0 below and 1 above.
    """
    ya, fa = (a.y, a.cdf) if isinstance(a, DensityOnGrid) else map(np.asarray, a)
    yb, fb = (b.y, b.cdf) if isinstance(b, DensityOnGrid) else map(np.asarray, b)
    ya, yb = np.asarray(ya, float), np.asarray(yb, float)
    nodes = np.union1d(ya, yb)
    return float(np.max(np.abs(_interp_cdf(nodes, ya, fa) - _interp_cdf(nodes, yb, fb))))


def _interp_cdf(x, nodes, cdf):
    if np.all(nodes > 0):
        return np.interp(np.log(x, where=x > 0, out=np.full_like(x, -np.inf)),
                         np.log(nodes), cdf, left=0.0, right=1.0)
    return np.interp(x, nodes, cdf, left=0.0, right=1.0)


# ---------------------------------------------------------------------------
# Kernel
# ---------------------------------------------------------------------------


def kernel_ccdf(y, x, sys: SystemParams, inf: InfluencerParams, mode: str = "split"):
    """Rate of jumps from state x that carry the process above level y >= x.

    ``split`` adds the post and exogenous contributions separately;
    ``combined`` writes the same quantity as (lambda + mu) times the
    survival of the mixed jump law.  Both give identical values.
    """
    if mode not in KERNEL_MODES:
        raise ValueError(f"mode must be one of {KERNEL_MODES}")
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(y < x):
        raise ValueError("kernel needs y >= x")
    w = y - x
    lam = posting_intensity(x, inf)
    sv = inf.v_hat.sf(w / conditional_jump_mean(x, sys, inf))
    sw = sys.w_dist.sf(w) if sys.mu > 0 else 0.0
    if mode == "split":
        return lam * sv + sys.mu * sw
    total = lam + sys.mu
    with np.errstate(invalid="ignore", divide="ignore"):
        p_int = np.where(total > 0, lam / np.where(total > 0, total, 1.0), 0.0)
    return total * (p_int * sv + (1.0 - p_int) * sw)


# ---------------------------------------------------------------------------
# Stationary solver
# ---------------------------------------------------------------------------


def _jump_scale(y, sys, inf):
    m = float(conditional_jump_mean(y, sys, inf))
    if sys.mu > 0:
        m = min(m, sys.w_dist.mean())
    return m


def _sweep(y, K, gamma, scale):
    """One forward sweep; returns log g at the nodes, tail rate and node residuals."""
    u = np.log(y)
    n = y.size
    h = np.diff(u)
    lg = np.zeros(n)
    resid = np.zeros(n)
    # below y[0] the density in u is taken as g(u0) * exp(b (u - u0))
    b = K(y[0], y[0]) / gamma
    if not b > 0:
        raise ConvergenceError("jump rate vanishes at the bottom of the grid")
    tail_x = y[0] * np.exp(-_LAG_T / b)
    cell_x = np.exp(u[:-1, None] + h[:, None] * _GL_T[None, :])
    cell_w = h[:, None] * _GL_W[None, :]
    for j in range(1, n):
        yj = y[j]
        logs = [np.full(_LAG_T.size, lg[0] - lg[j - 1])]
        wts = [_LAG_W * K(yj, tail_x) / b]
        if j >= 2:
            kk = K(yj, cell_x[: j - 1])
            lc = lg[: j - 1, None] + _GL_T[None, :] * (lg[1:j] - lg[: j - 1])[:, None] - lg[j - 1]
            logs.append(lc.ravel())
            wts.append((cell_w[: j - 1] * kk).ravel())
        la = special.logsumexp(np.concatenate(logs), b=np.concatenate(wts))

        # last cell in w = yj - x, with panels refined towards w = 0
        d = yj - y[j - 1]
        w_lo = min(d, scale(yj)) * _W_FLOOR
        m = max(1, int(math.ceil(math.log10(d / w_lo) * _PANELS_PER_DECADE)))
        e = np.geomspace(w_lo, d, m + 1)
        ws = (e[:-1, None] + np.diff(e)[:, None] * _GL_T[None, :]).ravel()
        ww = (np.diff(e)[:, None] * _GL_W[None, :]).ravel()
        xs = yj - ws
        tq = (np.log(xs) - u[j - 1]) / h[j - 1]
        base = ww * K(yj, xs) / xs
        c0 = K(yj, yj) * w_lo / yj
        pos = base > 0
        lq = np.log(base[pos])
        tq = tq[pos]
        if j >= 2:
            # quadratic in ln g through nodes j-2, j-1, j
            rho = h[j - 1] / h[j - 2]
            dd = lg[j - 2] - lg[j - 1]
            sq = tq * (1.0 + rho * tq) / (1.0 + rho)
            lq = lq + dd * tq * (tq - 1.0) * rho * rho / (1.0 + rho)
        else:
            sq = tq

        # balance: gamma = c0 + exp(la - r) + sum exp(lq - r (1 - sq)), solved in log form
        if not gamma > c0:
            raise ConvergenceError(f"grid too coarse near y={yj:.4g}: refine the grid")
        target = math.log(gamma - c0)
        lterms = np.concatenate([[la], lq])
        slope = np.concatenate([[1.0], 1.0 - sq])

        def excess(r):
            return special.logsumexp(lterms - r * slope) - target

        lo = la - math.log(gamma) if math.isfinite(la) else 0.0
        step = 1.0
        while excess(lo) < 0:
            lo -= step
            step *= 2.0
            if step > 1e300:
                raise ConvergenceError(f"no balance root at y={yj:.4g}")
        hi, step = lo + 1.0, 1.0
        while excess(hi) > 0:
            hi += step
            step *= 2.0
            if step > 1e300:
                raise ConvergenceError(f"no balance root at y={yj:.4g}")
        r = optimize.brentq(excess, lo, hi, xtol=1e-14, rtol=1e-15)
        resid[j] = abs(math.expm1(excess(r))) * (gamma - c0) / gamma
        lg[j] = lg[j - 1] + r
    return lg, b, resid


def _cdf_from_log_g(y, lg, b):
    """Cell masses of g = exp(lg), exponential within each cell, plus the tail below y[0]."""
    h = np.diff(np.log(y))
    r = np.diff(lg)
    ar = np.abs(r)
    # log of h * integral_0^1 exp(lg_j + r t) dt, written so that large |r| cannot overflow
    with np.errstate(invalid="ignore", divide="ignore"):
        shape = np.where(ar > 1e-12, np.log(-np.expm1(-ar) / np.where(ar > 0, ar, 1.0)), 0.0)
    lcell = np.log(h) + np.maximum(lg[:-1], lg[1:]) + shape
    ltail = lg[0] - math.log(b)
    top = max(lcell.max(), ltail)
    cells = np.exp(lcell - top)
    tail = math.exp(ltail - top)
    c = np.concatenate([[tail], tail + np.cumsum(cells)])
    return c / c[-1]


def solve_stationary(sys: SystemParams, inf: InfluencerParams, grid: Grid | None = None,
                     tol: float = 1e-8, max_iter: int = 5, mode: str = "split") -> DensityOnGrid:
    """Stationary density of X on ``grid`` (default: :func:`default_grid`).

    Sweeps are repeated until the L1 change of the normalized density drops
    below ``tol``.  Since every node depends only on nodes below it, a
    single sweep already resolves the equation and the second confirms it.
    """
    verdict = check_ergodicity(sys, inf)
    if not verdict.ok:
        warnings.warn(f"stationarity not guaranteed: {verdict.detail}", stacklevel=2)
    grid = default_grid(sys, inf) if grid is None else grid
    y = grid.nodes

    def K(yy, xx):
        xx = np.minimum(xx, yy)
        return kernel_ccdf(yy, xx, sys, inf, mode)

    def scale(yy):
        return _jump_scale(yy, sys, inf)

    start = time.perf_counter()
    f_prev = np.zeros_like(y)
    history = []
    for it in range(1, max_iter + 1):
        lg, b, resid = _sweep(y, K, sys.gamma, scale)
        with np.errstate(under="ignore"):
            f = normalize(y, np.exp(lg - lg.max()) / y)
        change = _trapezoid(np.abs(f - f_prev), y)
        history.append(change)
        f_prev = f
        if change < tol:
            break
    else:
        raise ConvergenceError(f"no convergence in {max_iter} sweeps (L1 change {history[-1]:.3g})",
                               residual=history[-1], history=history)
    cdf = _cdf_from_log_g(y, lg, b)
    diag = {
        "iterations": it,
        "residual_history": history,
        "balance_residual": float(np.mean(resid[1:])),
        "balance_residual_max": float(np.max(resid)),
        "tail_exponent": float(b),
        "ergodicity": verdict.status.value,
        "kernel_mode": mode,
        "nodes": int(grid.n),
        "ymin": grid.y_min,
        "ymax": grid.y_max,
        "seconds": time.perf_counter() - start,
    }
    return DensityOnGrid(grid, f, cdf, diag)


# ---------------------------------------------------------------------------
# Transient evolution
# ---------------------------------------------------------------------------


def _jump_generator(y, sys, inf, mode):
    """Generator of jumps between cells [0, y0), [y0, y1), ..., [y_{n-2}, y_{n-1}].

    Mass is spread uniformly in ln x inside each cell (exponentially below
    y0), and the rate of crossing a level is the kernel averaged over the
    cell.  Jumps past the last node stay in the last cell.
    """
    n = y.size
    if inf.lambda0 + inf.lambda1 + sys.mu == 0.0:
        return np.zeros((n, n))  # no events: pure decay
    u = np.log(y)

    def K(yy, xx):
        return kernel_ccdf(yy, np.minimum(xx, yy), sys, inf, mode)

    gl_t, gl_w = np.polynomial.legendre.leggauss(8)
    gl_t, gl_w = (gl_t + 1.0) / 2.0, gl_w / 2.0
    b = K(y[0], y[0]) / sys.gamma
    a = np.zeros((n, n))
    for i in range(n):
        if i == 0:
            xs, wx = y[0] * np.exp(-_LAG_T / b), _LAG_W
        else:
            xs, wx = np.exp(u[i - 1] + (u[i] - u[i - 1]) * gl_t), gl_w
        if i + 1 < n:
            a[i, i + 1:] = K(y[i + 1:, None], xs[None, :]) @ wx
        # crossing the cell's own upper edge: resolve small jumps in w = y_i - x
        lo = 0.0 if i == 0 else y[i - 1]
        d = y[i] - lo
        w_lo = min(d, _jump_scale(y[i], sys, inf)) * _W_FLOOR
        m = max(1, int(math.ceil(math.log10(d / w_lo) * _PANELS_PER_DECADE)))
        e = np.geomspace(w_lo, d, m + 1)
        ws = (e[:-1, None] + np.diff(e)[:, None] * _GL_T[None, :]).ravel()
        ww = (np.diff(e)[:, None] * _GL_W[None, :]).ravel()
        xw = y[i] - ws
        if i == 0:
            dens = b * (xw / y[0]) ** b / xw
        else:
            dens = 1.0 / (xw * (u[i] - u[i - 1]))
        a[i, i] = float(np.dot(ww * dens, K(y[i], xw))) + float(K(y[i], y[i])) * w_lo * dens[0]
    q = np.zeros((n, n))
    q[:, 1:] = a[:, :-1] - a[:, 1:]
    q[:, -1] += a[:, -1]
    q = np.triu(q, 1)
    q[np.arange(n), np.arange(n)] = -np.diag(a)
    q[-1, -1] = 0.0
    return q


def _shift_down(p, c):
    """Upwind transport of cell masses one fraction c of a cell towards zero."""
    out = (1.0 - c) * p
    out[:-1] += c * p[1:]
    out[0] += c * p[0]
    return out


def evolve_transient(f0: DensityOnGrid, sys: SystemParams, inf: InfluencerParams,
                     t_end: float, dt: float | None = None, mode: str = "split",
                     check_tol: float = 1e-12) -> DensityOnGrid:
    """CDF at time ``t_end`` starting from the law ``f0`` at time 0.

    Probability mass lives on the cells between grid nodes.  Each step moves
    mass one fraction ``gamma*dt/h`` of a cell towards zero (upwind; exact
    when the fraction is 1) and applies the jump transitions over half steps
    on either side.  ``dt`` must satisfy gamma*dt <= h, the log step of the
    grid; the default uses the bound itself.
    """
    grid = f0.grid
    y = grid.nodes
    h = grid.log_step
    if not math.isfinite(h):
        raise ValueError("transient evolution needs a uniform log grid")
    dt_max = h / sys.gamma
    if dt is None:
        dt = dt_max
    if dt > dt_max * (1 + 1e-12):
        raise InstabilityError(f"dt={dt} exceeds the advection bound h/gamma={dt_max}")
    q = _jump_generator(y, sys, inf, mode)
    steps = int(math.floor(t_end / dt + 1e-9))
    rest = t_end - steps * dt
    p = np.diff(np.concatenate([[0.0], np.clip(f0.cdf, 0.0, 1.0)]))
    p[-1] += 1.0 - p.sum()
    half = linalg.expm(q.T * (dt / 2.0))
    for _ in range(steps):
        p = half @ p
        p = _shift_down(p, sys.gamma * dt / h)
        p = half @ p
        if p.min() < -check_tol:
            raise InstabilityError(f"negative cell mass {p.min():.3g}")
        p = np.maximum(p, 0.0)
    if rest > 1e-12:
        part = linalg.expm(q.T * (rest / 2.0))
        p = part @ _shift_down(part @ p, sys.gamma * rest / h)
        p = np.maximum(p, 0.0)
    cdf = np.cumsum(p)
    cdf /= cdf[-1]
    if np.any(np.diff(cdf) < -check_tol):
        raise InstabilityError("CDF lost monotonicity")
    return DensityOnGrid.from_cdf(grid, cdf, {"t_end": t_end, "dt": dt, "steps": steps})


def point_mass(grid: Grid, x: float) -> DensityOnGrid:
    """Law concentrated in the cell just above ``x``."""
    cdf = (grid.nodes >= x).astype(float)
    return DensityOnGrid.from_cdf(grid, cdf)
