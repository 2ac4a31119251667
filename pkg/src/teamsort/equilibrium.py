"""Closed-form continuous equilibrium for teams of ``n_w`` workers.

Percentiles ``p`` index the common type distribution through its inverse CDF
``I``.  Low skill levels ``x`` are good workers (``x`` is the probability of
failing a task); ``z`` is the project value.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .dist import TypeDistribution, check_assumptions, log_loss_L
from .errors import DomainError, SolverError, StateError

SCAN_POINTS = 512
SCAN_START = 1e-6
SCAN_TAIL_POINTS = 64
ROOT_TOL = 1e-10
NOISE_FLOOR = 1e-12
GL_ORDER = 16
TABLE_POINTS = 1024
GRADING = 10.0 ** -np.arange(3, 13)

_GL_T, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)


def cutoff_residual(dist, p, n_w=2):
    """Residual of the cutoff equation at percentile ``p``.

    ``n log I(1 - n p) + log I(p)`` minus ``(n + 1)`` times the mean of
    ``log I`` over ``[p, 1 - n p]``.
    """
    top = 1.0 / (n_w + 1)
    upper = 1.0 - n_w * p
    own, partner = dist.inv(p), dist.inv(upper)
    if own <= 0.0 or partner <= 0.0:
        return float("-inf")
    lhs = n_w * math.log(partner) + math.log(own)
    # empty middle: the mean tends to log I(top) and the residual to 0
    if top - p <= 1e-15:
        return 0.0
    return lhs - dist.integral_log_inv(p, upper) / (top - p)


def cutoff_residual_two_worker(dist, p):
    """Two-worker residual ``L(p) - (1/(1/3 - p)) * int_p^{1-2p} log I``."""
    L = log_loss_L(dist, p)
    if not np.isfinite(L):
        return L
    if 1.0 / 3.0 - p <= 1e-15:
        return 0.0
    return L - dist.integral_log_inv(p, 1.0 - 2.0 * p) / (1.0 / 3.0 - p)


def _scan_grid(n_w):
    top = 1.0 / (n_w + 1)
    grid = np.geomspace(SCAN_START, top, SCAN_POINTS + 1)[:-1]
    tail = top * (1.0 - np.geomspace(0.5, 1e-4, SCAN_TAIL_POINTS))
    return np.unique(np.concatenate((grid, tail)))


@dataclass(frozen=True)
class CutoffResult:
    """Cutoff percentiles and the mixed-set loss constant."""

    p_low: float
    p_high: float
    C: float
    degenerate: bool
    residual: float


def solve_cutoff(dist, n_w=2, two_worker_formula=False):
    """Find the lower cutoff ``p_low`` of the mixed middle.

    Scans the residual on a log-spaced grid, takes the first sign change
    from negative to positive and bisects it.  When no sign change exists
    the degenerate root ``1/(n_w + 1)`` (empty mixed set) is returned with
    ``degenerate=True``.

    Parameters
    ----------
    dist : TypeDistribution
    n_w : int
        Workers per team, at least 2.
    two_worker_formula : bool
        Use the dedicated two-worker residual (requires ``n_w == 2``).

    Returns
    -------
    CutoffResult
    """
    if n_w < 2:
        raise DomainError("team size must be at least 2")
    if two_worker_formula:
        if n_w != 2:
            raise DomainError("two-worker formula requires n_w == 2")
        resid = lambda p: cutoff_residual_two_worker(dist, p)  # noqa: E731
    else:
        resid = lambda p: cutoff_residual(dist, p, n_w)  # noqa: E731
    top = 1.0 / (n_w + 1)
    grid = _scan_grid(n_w)
    vals = np.array([resid(p) for p in grid])
    if np.any(np.isnan(vals)):
        raise SolverError("cutoff residual is NaN", {"p": grid.tolist(), "G": vals.tolist()})
    hits = np.flatnonzero((vals[:-1] < 0.0) & (vals[1:] > NOISE_FLOOR))
    if hits.size == 0:
        upper_res = resid(top)
        if not abs(upper_res) <= 1e-8:
            raise SolverError(
                "no sign change and no degenerate root",
                {"p": grid.tolist(), "G": vals.tolist()},
            )
        p_low = top
        degenerate = True
        res = upper_res
    else:
        i = int(hits[0])
        p_low = optimize.bisect(resid, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        res = resid(p_low)
        degenerate = False
        if abs(res) > ROOT_TOL:
            raise SolverError(f"bisection residual {res:.3e} above tolerance", {"p_low": p_low})
    p_high = 1.0 - n_w * p_low
    C = dist.inv(p_high) ** n_w * dist.inv(p_low)
    return CutoffResult(float(p_low), float(p_high), float(C), degenerate, float(res))


class EquilibriumSolution:
    """Solved equilibrium with wage and firm-value evaluators.

    Construct with :func:`solve_equilibrium` or :meth:`from_dict`.  The
    object is treated as immutable; :meth:`with_wage_constant` returns a copy
    with a new wage constant.
    """

    def __init__(self, dist, n_w, p_low, C, C_w=0.0, degenerate=False, residual=0.0):
        self.dist = dist
        self.n_w = int(n_w)
        self.p_low = float(p_low)
        self.p_high = 1.0 - self.n_w * self.p_low
        self.C = float(C)
        self.C_w = float(C_w)
        self.degenerate = bool(degenerate)
        self.residual = float(residual)
        self.x_low = float(dist.inv(self.p_low))
        self.x_high = float(dist.inv(self.p_high))
        self._build_tables()

    # marginal product

    def marginal_product(self, p):
        """Marginal worker product at percentile ``p``."""
        q = np.asarray(p, dtype=float)
        if np.any((q < 0) | (q > 1)):
            raise DomainError("percentile must lie in [0, 1]")
        n, I = self.n_w, self.dist.inv
        top = -I(np.clip(1.0 - n * q, 0, 1)) ** n
        with np.errstate(divide="ignore", over="ignore"):
            mid = -self.C / I(q)
        low = -I(q) ** (n - 1) * I(np.clip((1.0 - q) / n, 0, 1))
        out = np.where(q <= self.p_low, top, np.where(q >= self.p_high, low, mid))
        return float(out) if np.ndim(p) == 0 else out

    def m_level(self, x):
        """Marginal product as a function of the skill level ``x``."""
        y = np.asarray(x, dtype=float)
        n, I, F = self.n_w, self.dist.inv, self.dist.cdf
        Fx = F(y)
        top = -I(np.clip(1.0 - n * Fx, 0, 1)) ** n
        with np.errstate(divide="ignore", over="ignore"):
            mid = -self.C / y
        low = -(y ** (n - 1)) * I(np.clip((1.0 - Fx) / n, 0, 1))
        out = np.where(y <= self.x_low, top, np.where(y >= self.x_high, low, mid))
        return float(out) if np.ndim(x) == 0 else out

    # quadrature tables

    def _breaks(self):
        d, n = self.dist, self.n_w
        lo, hi = d.lo, d.hi
        pts = [np.linspace(0.0, 1.0, TABLE_POINTS + 1), [self.p_low, self.p_high], GRADING, 1.0 - GRADING]
        k = d.breakpoints
        if k.size:
            pts += [k, (1.0 - k) / n, 1.0 - n * k]
        p = np.clip(np.concatenate([np.ravel(a) for a in pts]), 0.0, 1.0)
        levels = np.concatenate((d.inv(p), lo + (hi - lo) * GRADING, hi - (hi - lo) * GRADING, [lo, hi]))
        levels = np.unique(np.clip(levels, lo, hi))
        keep = np.concatenate(([True], np.diff(levels) > 1e-15 * max(1.0, hi)))
        levels = levels[keep]
        levels[0], levels[-1] = lo, hi
        return levels

    def _panel_integral(self, a, b, func):
        half = 0.5 * (b - a)
        nodes = (a + b)[..., None] * 0.5 + half[..., None] * _GL_T
        return half * (func(nodes) @ _GL_W)

    def _build_tables(self):
        b = self._breaks()
        self._edges = b
        pieces = self._panel_integral(b[:-1], b[1:], self.m_level)
        self._cum_m = np.concatenate(([0.0], np.cumsum(pieces)))
        surv = lambda s: (1.0 - self.dist.cdf(s))  # noqa: E731
        self._int_surv_m = math.fsum(self._panel_integral(b[:-1], b[1:], lambda s: surv(s) * self.m_level(s)))
        self._int_surv = math.fsum(self._panel_integral(b[:-1], b[1:], surv))
        self.int_m_total = float(self._cum_m[-1])
        lo, hi, n = self.dist.lo, self.dist.hi, self.n_w
        # anchor: percentile triplet (1, ..., 1, 0) earns zero surplus
        self.C_v = lo * (1.0 - hi**n) - n * (self.C_w + self.int_m_total)
        self.mu_z = lo + self._int_surv

    def integral_m(self, x):
        """Integral of the marginal product from the bottom of the support to ``x``."""
        y = np.asarray(x, dtype=float)
        lo, hi = self.dist.lo, self.dist.hi
        if np.any((y < lo - 1e-14) | (y > hi + 1e-14)):
            raise DomainError(f"level must lie in [{lo}, {hi}]")
        y = np.clip(y, lo, hi)
        e = self._edges
        j = np.clip(np.searchsorted(e, y, side="right") - 1, 0, e.size - 2)
        out = self._cum_m[j] + self._panel_integral(e[j], y, self.m_level)
        return float(out) if np.ndim(x) == 0 else out

    def wage(self, x):
        """Wage ``C_w + int m`` at skill level ``x``."""
        return self.C_w + self.integral_m(x)

    def firm_value(self, z):
        """Firm value ``C_v + int (m + 1)`` at project value ``z``."""
        zz = np.asarray(z, dtype=float)
        out = self.C_v + (zz - self.dist.lo) + self.integral_m(zz)
        return float(out) if np.ndim(z) == 0 else out

    def mean_wage(self):
        return self.C_w + self._int_surv_m

    def mean_firm_value(self):
        return self.C_v + self._int_surv_m + self._int_surv

    def dual_value(self):
        """Total payments ``n E[w] + E[v]``."""
        return self.n_w * self.mean_wage() + self.mean_firm_value()

    def expected_loss(self):
        """Aggregate loss of any assignment supported on the matching set."""
        n, I = self.n_w, self.dist.inv
        if self.p_low > 0:
            f = lambda p: I(p) * I(np.clip(1.0 - n * p, 0, 1)) ** n  # noqa: E731
            edges = np.unique(np.concatenate(([0.0], self.p_low * GRADING, np.linspace(0.0, self.p_low, 257))))
            branch = math.fsum(self._panel_integral(edges[:-1], edges[1:], f))
        else:
            branch = 0.0
        return (n + 1) * branch + (self.p_high - self.p_low) * self.C

    def primal_value(self):
        """Aggregate output ``E[z] - E[loss]`` of the equilibrium assignment."""
        return self.mu_z - self.expected_loss()

    def with_wage_constant(self, C_w):
        """Copy with a different wage constant (tables are shifted, not rebuilt)."""
        other = object.__new__(EquilibriumSolution)
        other.__dict__.update(self.__dict__)
        other.C_w = float(C_w)
        other.C_v = self.C_v - self.n_w * (other.C_w - self.C_w)
        return other

    # serialization

    def to_dict(self, n_grid=101):
        p = np.linspace(0.0, 1.0, n_grid)
        x = self.dist.inv(p)
        m, w, v = self.marginal_product(p), self.wage(x), self.firm_value(x)
        return {
            "n_w": self.n_w,
            "p_low": self.p_low,
            "p_high": self.p_high,
            "C": self.C,
            "C_w": self.C_w,
            "C_v": self.C_v,
            "degenerate": self.degenerate,
            "residual": self.residual,
            "dist": self.dist.to_dict(),
            "grid": [
                {"p": float(a), "I": float(b), "m": float(c), "w": float(d), "v": float(e)}
                for a, b, c, d, e in zip(p, x, m, w, v)
            ],
        }

    @classmethod
    def from_dict(cls, d):
        """Rebuild without re-solving; stored constants are reused verbatim."""
        if "dist" not in d:
            raise StateError("equilibrium record lacks a distribution")
        return cls(
            TypeDistribution.from_dict(d["dist"]),
            d["n_w"],
            d["p_low"],
            d["C"],
            d.get("C_w", 0.0),
            d.get("degenerate", False),
            d.get("residual", 0.0),
        )

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")

    @classmethod
    def load_json(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def solve_equilibrium(dist, n_w=2, C_w=0.0, check="warn", two_worker_formula=False):
    """Solve cutoffs and build wage and firm-value schedules.

    Parameters
    ----------
    dist : TypeDistribution
    n_w : int
    C_w : float
        Wage constant (wage of the best worker, ``x = lo``).
    check : {"warn", "strict", "off"}
        How to react when the log loss is not concave.

    Returns
    -------
    EquilibriumSolution
    """
    if check != "off":
        rep = check_assumptions(dist, n_w=n_w)
        if not rep.L_concave_on_third:
            msg = f"log loss not concave (violation {rep.violations['L_concave_on_third']})"
            if check == "strict":
                raise SolverError(msg, {"assumptions": rep.violations})
            warnings.warn(msg, RuntimeWarning, stacklevel=2)
    cut = solve_cutoff(dist, n_w, two_worker_formula=two_worker_formula)
    return EquilibriumSolution(dist, n_w, cut.p_low, cut.C, C_w, cut.degenerate, cut.residual)


def marginal_product_two_worker(eq, p):
    """Two-worker marginal product written with squared partner levels."""
    q = np.asarray(p, dtype=float)
    I = eq.dist.inv
    top = -I(1.0 - 2.0 * np.minimum(q, 0.5)) ** 2
    mid = -eq.C / np.maximum(I(q), 1e-300)
    low = -I(q) * I((1.0 - q) / 2.0)
    out = np.where(q <= eq.p_low, top, np.where(q >= eq.p_high, low, mid))
    return float(out) if np.ndim(p) == 0 else out
