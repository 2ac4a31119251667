"""Recover the type distribution from an earnings-by-percentile curve.

Earnings ``e(p)`` are ranked high to low: ``p = 0`` is the top earner, who is
also the most skilled worker (lowest ``x``).  The weight

    omega(p) = (e(0) - e(p)) - 2 (e(1 - 2p) - e(1))

equals the loss ``I(p) I(1 - 2p)^2`` of a branch team, which identifies
``I`` on ``[0, p_low]`` and ``[p_high, 1]``; the middle follows from
``d log I = -de / C``.  Levels are normalized by ``I(1) = 1``.
"""

from __future__ import annotations

import csv
import json
from importlib import resources
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize
from scipy.interpolate import PchipInterpolator

from .dist import TypeDistribution
from .errors import DomainError, ShapeError, SingularWeightError, SolverError

ORIGIN_CUT = 1e-4
FINE_POINTS = 20001
CANDIDATES = 200
CANDIDATE_START = 0.005
OUTPUT_POINTS = 2001
RK4_STEPS = 8000
MIN_POINTS = 10


@dataclass
class EarningsProfile:
    """Earnings on an ascending percentile grid, descending in value."""

    p: np.ndarray
    e: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        if self.p.shape != self.e.shape or self.p.ndim != 1:
            raise ShapeError("p and e must be 1-d arrays of equal length")
        if np.any(np.diff(self.p) <= 0):
            raise ShapeError("percentiles must be strictly ascending")

    @classmethod
    def from_equilibrium(cls, eq, n_points=OUTPUT_POINTS, graded=True):
        """Earnings of the worker at each skill percentile.

        With ``graded`` the uniform grid is refined geometrically towards both
        ends, where earnings may have square-root behaviour.
        """
        p = np.linspace(0.0, 1.0, n_points)
        if graded:
            g = 10.0 ** -np.arange(4.0, 11.0, 0.25)
            p = np.unique(np.concatenate((p, g, 1.0 - g)))
        return cls(p, eq.wage(eq.dist.inv(p)))

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"p", "earnings"} <= set(reader.fieldnames):
                raise ShapeError(f"{path}: expected header 'p,earnings'")
            rows = [(float(r["p"]), float(r["earnings"])) for r in reader]
        p, e = zip(*rows)
        return cls(np.array(p), np.array(e))

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p", "earnings"])
            for a, b in zip(self.p, self.e):
                w.writerow([f"{a:.17g}", f"{b:.17g}"])


def stylized_profile():
    """Illustrative convex earnings curve shipped with the package.

    Generated from a beta(2, 1) economy whose top earner is paid 1; it is a
    sanity input for the pipeline, not observed data.
    """
    ref = resources.files("teamsort") / "data" / "stylized_earnings.csv"
    with resources.as_file(ref) as path:
        return EarningsProfile.load_csv(path)


@dataclass
class ShapeReport:
    monotone: bool
    convex: bool
    worst_rise: float
    worst_concavity: float
    location: float

    @property
    def passed(self):
        return self.monotone and self.convex


def check_earnings_shape(profile, tol=None):
    """Decrease and convexity (nondecreasing slopes) of ``e(p)``.

    Monotone means nonincreasing with ``e(1) < e(0)``, so constant profiles fail.

    Parameters
    ----------
    profile : EarningsProfile
    tol : float, optional
        Allowed drop in consecutive slopes beyond floating-point rounding;
        default ``1e-9`` times the earnings range.
    """
    p, e = profile.p, profile.e
    if p.size < MIN_POINTS:
        raise ShapeError(f"need at least {MIN_POINTS} grid points")
    rise = np.diff(e)
    slopes = rise / np.diff(p)
    span = max(float(e.max() - e.min()), 1e-300)
    if tol is None:
        tol = 1e-9 * span
    # rounding of earnings values inflates slopes on fine grids
    dp = np.diff(p)
    rounding = 8 * np.finfo(float).eps * np.max(np.abs(e)) * (1 / dp[:-1] + 1 / dp[1:])
    drop = -np.diff(slopes) - rounding
    k = int(np.argmax(drop))
    return ShapeReport(
        monotone=bool(np.all(rise <= 0) and e[-1] < e[0]),
        convex=bool(drop[k] <= tol),
        worst_rise=float(rise.max()),
        worst_concavity=float(drop[k]),
        location=float(p[k + 1]),
    )


@dataclass
class InferenceResult:
    """Recovered distribution with cutoff search diagnostics."""

    dist: TypeDistribution
    C_w: float
    p_low: float
    residual: float
    C: float
    residual_curve: tuple
    diagnostics: dict = field(default_factory=dict)

    def summary(self):
        return {
            "C_w": self.C_w,
            "p_low": self.p_low,
            "p_high": 1.0 - 2.0 * self.p_low,
            "C": self.C,
            "residual": self.residual,
            "residual_curve": {"p": list(self.residual_curve[0]), "R": list(self.residual_curve[1])},
            **self.diagnostics,
        }

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)
            fh.write("\n")


class _Curve:
    """Shape-preserving interpolant of earnings with derivative and integral."""

    def __init__(self, profile):
        rep = check_earnings_shape(profile)
        if not rep.monotone:
            raise ShapeError(f"earnings must be decreasing and nonconstant (largest step {rep.worst_rise:.3e})")
        if not rep.convex:
            raise ShapeError(f"earnings not convex near p={rep.location:.4g}")
        if profile.p[0] != 0.0 or profile.p[-1] != 1.0:
            raise ShapeError("percentile grid must span [0, 1]")
        self.e = PchipInterpolator(profile.p, profile.e)
        self.de = self.e.derivative()
        self.E = self.e.antiderivative()
        self.e0 = float(profile.e[0])
        self.e1 = float(profile.e[-1])

    def omega(self, t):
        t = np.asarray(t, dtype=float)
        return (self.e0 - self.e(t)) - 2.0 * (self.e(1.0 - 2.0 * t) - self.e1)

    def mean_log_middle(self, c, log_I_c, C):
        """Mean of ``log I`` over ``[c, 1 - 2c]`` given the middle-branch law."""
        width = 1.0 - 3.0 * c
        if width <= 1e-12:
            return log_I_c
        int_e = float(self.E(1.0 - 2.0 * c) - self.E(c))
        return log_I_c - (int_e / width - float(self.e(c))) / C


def _select_cutoff(curve, log_I_at, weight_at, n_candidates):
    """First sign change of the fixed-point residual, refined by bisection."""

    def resid(c):
        log_w = np.log(weight_at(c))
        return float(log_w - 3.0 * curve.mean_log_middle(c, log_I_at(c), weight_at(c)))

    grid = np.linspace(CANDIDATE_START, 1.0 / 3.0, n_candidates)
    vals = np.array([resid(c) for c in grid])
    finite = np.isfinite(vals)
    s = np.sign(vals)
    hits = np.flatnonzero(finite[:-1] & finite[1:] & (s[:-1] * s[1:] < 0))
    if hits.size == 0:
        raise SolverError("fixed-point residual has no sign change", {"p": grid.tolist(), "R": vals.tolist()})
    i = int(hits[0])
    c = optimize.brentq(resid, grid[i], grid[i + 1], xtol=1e-14, rtol=1e-14, maxiter=200)
    return c, resid(c), (grid.tolist(), vals.tolist())


def _piecewise_from_log(p, log_I):
    return TypeDistribution.piecewise(p, np.exp(log_I))


def _assemble(curve, c, C, log_I_low, log_I_top):
    """Join the three branches on the output grid.

    The middle interpolates ``log I`` linearly in earnings between the two
    branch anchors at ``c`` and ``1 - 2c``; with exact data this coincides
    with ``log I(c) - (e - e(c)) / C``.  Returns the grid, ``log I`` and the
    one-sided mismatch at the upper cutoff.
    """
    p = _output_grid(c)
    upper = 1.0 - 2.0 * c
    lg = np.empty_like(p)
    hi_mask = p <= c
    top_mask = p >= upper
    mid_mask = ~hi_mask & ~top_mask
    with np.errstate(divide="ignore"):
        lg[hi_mask] = np.where(p[hi_mask] > 0, log_I_low(np.maximum(p[hi_mask], 1e-300)), -np.inf)
    lg[top_mask] = log_I_top((1.0 - p[top_mask]) / 2.0)
    a, b = float(log_I_low(c)), float(log_I_top(c))
    ea, eb = float(curve.e(c)), float(curve.e(upper))
    lg[mid_mask] = a + (b - a) * (curve.e(p[mid_mask]) - ea) / (eb - ea)
    gap = a - (eb - ea) / C - b
    return p, lg, float(gap)


def _output_grid(p_low):
    p = np.linspace(0.0, 1.0, OUTPUT_POINTS)
    return np.unique(np.concatenate((p, [p_low, 1.0 - 2.0 * p_low])))


def infer_distribution(profile, n_candidates=CANDIDATES):
    """Quadrature route.

    The top branch ``log I(1 - 2q) = 2 int_0^q e'(1 - 2t) / omega(t) dt`` is
    integrated once on a fine grid; below ``t = 1e-4`` the integrand is held
    at its value there (its limit at 0 is finite).  For each candidate cutoff
    the fixed-point residual ``log omega(c) - 3 mean log I`` is evaluated
    in closed form from the middle-branch law.

    Returns
    -------
    InferenceResult
    """
    curve = _Curve(profile)
    q = np.linspace(0.0, 1.0 / 3.0, FINE_POINTS)
    om = curve.omega(q)
    active = q >= ORIGIN_CUT
    if np.any(om[active] <= 0):
        k = int(np.flatnonzero(active & (om <= 0))[0])
        raise SingularWeightError(f"weight vanishes at t={q[k]:.6g}", {"t": float(q[k])})
    g = np.empty_like(q)
    g[active] = 2.0 * curve.de(1.0 - 2.0 * q[active]) / om[active]
    g[~active] = g[active][0]
    top = integrate.cumulative_simpson(g, x=q, initial=0.0)

    top_at = lambda c: np.interp(c, q, top)  # noqa: E731
    log_I_low = lambda c: np.log(curve.omega(c)) - 2.0 * top_at(c)  # noqa: E731
    c, res, rcurve = _select_cutoff(curve, log_I_low, curve.omega, n_candidates)
    C = float(curve.omega(c))

    p, lg, gap = _assemble(curve, c, C, log_I_low, top_at)
    diag = {"continuity_at_p_high": gap, "origin_cut": ORIGIN_CUT}
    dist = _piecewise_from_log(p, lg)
    return InferenceResult(dist, curve.e0, float(c), float(res), C, rcurve, diag)


@dataclass
class OdeInferenceResult:
    dist: TypeDistribution
    p_low: float
    u0: float
    diagnostics: dict = field(default_factory=dict)


def _rk4_log_u(curve, eps, n_steps):
    """Integrate ``d log u / dp = 4 e'(1 - 2p) / (eps + omega(p))`` on ``[0, 1/3]``."""
    h = (1.0 / 3.0) / n_steps
    p = np.linspace(0.0, 1.0 / 3.0, n_steps + 1)

    def f(t):
        return 4.0 * float(curve.de(1.0 - 2.0 * t)) / (eps + float(curve.omega(t)))

    y = np.empty(n_steps + 1)
    y[0] = 0.0
    for k in range(n_steps):
        t = p[k]
        k1 = f(t)
        k2 = f(t + 0.5 * h)
        k4 = f(t + h)
        y[k + 1] = y[k] + h * (k1 + 4.0 * k2 + k4) / 6.0
    return p, y


def infer_distribution_ode(profile, eps=1e-6, n_steps=RK4_STEPS, reference=None):
    """ODE route with the origin regularized by ``I(0) = eps``.

    ``u(p) = I(1 - 2p)^2`` solves the log-linear equation by fourth-order
    Runge-Kutta with ``u(0) = 1``; then ``I(p) = (eps + omega(p)) / u(p)``
    on ``[0, p_low]`` and ``I(1 - 2p) = sqrt(u(p))``.

    Parameters
    ----------
    profile : EarningsProfile
    eps : float
        In ``(0, 1e-3]``.
    reference : InferenceResult, optional
        Quadrature-route result to compare against.
    """
    if not (0.0 < eps <= 1e-3):
        raise DomainError("eps must lie in (0, 1e-3]")
    curve = _Curve(profile)
    p_ode, log_u = _rk4_log_u(curve, eps, n_steps)
    if not np.all(np.isfinite(log_u)):
        raise SolverError("integration produced a nonpositive u")
    log_u_at = lambda c: np.interp(c, p_ode, log_u)  # noqa: E731
    weight = lambda c: eps + curve.omega(c)  # noqa: E731
    log_I_low = lambda c: np.log(weight(c)) - log_u_at(c)  # noqa: E731
    c, res, rcurve = _select_cutoff(curve, log_I_low, weight, CANDIDATES)
    C = float(weight(c))

    p, lg, gap = _assemble(curve, c, C, log_I_low, lambda t: 0.5 * log_u_at(t))
    dist = _piecewise_from_log(p, lg)
    diag = {"residual": float(res), "eps": eps, "steps": n_steps, "continuity_at_p_high": gap}
    if reference is not None:
        mask = (p >= 0.02) & (p <= 0.98)
        diag["sup_deviation"] = float(np.max(np.abs(dist.inv(p[mask]) - reference.dist.inv(p[mask]))))
    return OdeInferenceResult(dist, float(c), float(np.exp(log_u[0])), diag)
