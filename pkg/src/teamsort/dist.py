"""Type distributions on [0, 1] in percentile (inverse-CDF) form.

A distribution is described by its inverse CDF ``I`` on percentiles
``p in [0, 1]``.  Three kinds are supported: uniform on ``[a, b]``, beta
``(alpha, beta)`` and piecewise-linear inverse CDFs given by knots.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import DistributionError, DomainError

LOG_FLOOR = 1e-12
ASSUMPTION_GRID = 2000
ASSUMPTION_TOL = 1e-9
CONCAVITY_EPS = 1e-3

_DOMAIN_SLACK = 1e-14


def _scalarize(value, like):
    if np.ndim(like) == 0:
        return float(value)
    return value


@dataclass(frozen=True, eq=False)
class TypeDistribution:
    """Immutable distribution of skills or project values.

    Parameters
    ----------
    kind : {"uniform", "beta", "piecewise"}
    params : tuple of float
        ``(a, b)`` for uniform, ``(alpha, beta)`` for beta, empty for piecewise.
    knots_p, knots_I : ndarray, optional
        Percentile knots and inverse-CDF levels for the piecewise kind.
    """

    kind: str
    params: tuple = ()
    knots_p: np.ndarray | None = field(default=None, repr=False)
    knots_I: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind == "uniform":
            a, b = self.params
            if not (0.0 <= a < b <= 1.0):
                raise DistributionError(f"uniform support [{a}, {b}] not inside [0, 1]")
        elif self.kind == "beta":
            a, b = self.params
            if a <= 0 or b <= 0:
                raise DistributionError("beta parameters must be positive")
        elif self.kind == "piecewise":
            p = np.asarray(self.knots_p, dtype=float)
            v = np.asarray(self.knots_I, dtype=float)
            if p.ndim != 1 or p.shape != v.shape or p.size < 2:
                raise DistributionError("need at least two (p, I) knots of equal length")
            if p[0] != 0.0 or p[-1] != 1.0:
                raise DistributionError("percentile knots must start at 0 and end at 1")
            if np.any(np.diff(p) <= 0) or np.any(np.diff(v) <= 0):
                raise DistributionError("knots must be strictly increasing in p and I")
            if v[0] < 0.0 or v[-1] > 1.0:
                raise DistributionError("levels must lie in [0, 1]")
            p.setflags(write=False)
            v.setflags(write=False)
            object.__setattr__(self, "knots_p", p)
            object.__setattr__(self, "knots_I", v)
        else:
            raise DistributionError(f"unknown kind {self.kind!r}")

    # construction helpers

    @classmethod
    def uniform(cls, a=0.0, b=1.0):
        return cls("uniform", (float(a), float(b)))

    @classmethod
    def beta(cls, alpha, beta):
        return cls("beta", (float(alpha), float(beta)))

    @classmethod
    def piecewise(cls, p, levels):
        return cls("piecewise", (), np.array(p, dtype=float), np.array(levels, dtype=float))

    @classmethod
    def from_string(cls, text):
        """Parse ``uniform``, ``uniform:a,b``, ``beta:2,1`` or ``csv:path``."""
        name, _, rest = text.partition(":")
        name = name.strip().lower()
        if name == "uniform":
            return cls.uniform(*[float(t) for t in rest.split(",")]) if rest else cls.uniform()
        if name == "beta":
            try:
                a, b = (float(t) for t in rest.split(","))
            except ValueError:
                raise DistributionError("beta needs two parameters, e.g. beta:2,1") from None
            return cls.beta(a, b)
        if name in ("csv", "piecewise"):
            return load_csv(rest)
        raise DistributionError(f"cannot parse distribution {text!r}")

    def to_dict(self):
        if self.kind == "piecewise":
            return {"kind": "piecewise", "p": self.knots_p.tolist(), "I": self.knots_I.tolist()}
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d):
        if d["kind"] == "piecewise":
            return cls.piecewise(d["p"], d["I"])
        return cls(d["kind"], tuple(float(t) for t in d["params"]))

    # support

    @property
    def lo(self):
        if self.kind == "uniform":
            return self.params[0]
        if self.kind == "beta":
            return 0.0
        return float(self.knots_I[0])

    @property
    def hi(self):
        if self.kind == "uniform":
            return self.params[1]
        if self.kind == "beta":
            return 1.0
        return float(self.knots_I[-1])

    @property
    def breakpoints(self):
        """Interior percentiles where ``I`` is not smooth."""
        if self.kind == "piecewise":
            return self.knots_p[1:-1].copy()
        return np.empty(0)

    # evaluation

    def inv(self, p):
        """Inverse CDF ``I(p)``."""
        q = np.clip(np.asarray(p, dtype=float), 0.0, 1.0)
        if self.kind == "uniform":
            a, b = self.params
            out = a + (b - a) * q
        elif self.kind == "beta":
            a, b = self.params
            if b == 1.0:
                out = q ** (1.0 / a)
            elif a == 1.0:
                out = 1.0 - (1.0 - q) ** (1.0 / b)
            else:
                out = special.betaincinv(a, b, q)
                # betaincinv fails on subnormal input; use the leading term of F near 0
                tiny = q < 1e-300
                if np.any(tiny):
                    lead = np.exp((np.log(np.maximum(q, 5e-324)) + np.log(a) + special.betaln(a, b)) / a)
                    out = np.where(tiny, np.where(q > 0, lead, 0.0), out)
        else:
            out = np.interp(q, self.knots_p, self.knots_I)
        return _scalarize(out, p)

    def cdf(self, x):
        """Cumulative distribution ``F(x)``."""
        y = np.clip(np.asarray(x, dtype=float), self.lo, self.hi)
        if self.kind == "uniform":
            a, b = self.params
            out = (y - a) / (b - a)
        elif self.kind == "beta":
            a, b = self.params
            if b == 1.0:
                out = y**a
            elif a == 1.0:
                out = 1.0 - (1.0 - y) ** b
            else:
                out = special.betainc(a, b, y)
        else:
            out = np.interp(y, self.knots_I, self.knots_p)
        return _scalarize(out, x)

    def pdf(self, x):
        """Density ``f(x)``; right-continuous at piecewise knots."""
        y = np.asarray(x, dtype=float)
        if self.kind == "uniform":
            a, b = self.params
            out = np.where((y >= a) & (y <= b), 1.0 / (b - a), 0.0)
        elif self.kind == "beta":
            a, b = self.params
            with np.errstate(divide="ignore", invalid="ignore"):
                logf = special.xlogy(a - 1.0, y) + special.xlog1py(b - 1.0, -y) - special.betaln(a, b)
                out = np.exp(logf)
            out = np.where((y >= 0) & (y <= 1), out, 0.0)
        else:
            slopes = np.diff(self.knots_p) / np.diff(self.knots_I)
            idx = np.clip(np.searchsorted(self.knots_I, y, side="right") - 1, 0, slopes.size - 1)
            inside = (y >= self.lo) & (y <= self.hi)
            out = np.where(inside, slopes[idx], 0.0)
        return _scalarize(out, x)

    def log_inv(self, p):
        """``log I(p)`` with ``I`` floored at ``LOG_FLOOR``."""
        return np.log(np.maximum(self.inv(p), LOG_FLOOR))

    def integral_log_inv(self, a, b):
        """Exact or adaptive value of the integral of ``log I`` over ``[a, b]``."""
        if b < a:
            return -self.integral_log_inv(b, a)
        if b == a:
            return 0.0
        if self.kind == "uniform":
            lo, hi = self.params
            return _linear_log_integral(lo, hi - lo, a, b)
        if self.kind == "beta":
            al, be = self.params
            if be == 1.0:
                return (_xlogx(b) - b - _xlogx(a) + a) / al
            val, _ = integrate.quad(
                lambda t: np.log(max(self.inv(t), 1e-300)), a, b, limit=200, epsabs=1e-14, epsrel=1e-13
            )
            return val
        kp, ki = self.knots_p, self.knots_I
        total = 0.0
        cuts = np.concatenate(([a], kp[(kp > a) & (kp < b)], [b]))
        for u, v in zip(cuts[:-1], cuts[1:]):
            k = min(np.searchsorted(kp, 0.5 * (u + v), side="right") - 1, kp.size - 2)
            slope = (ki[k + 1] - ki[k]) / (kp[k + 1] - kp[k])
            total += _linear_log_integral(ki[k] - slope * kp[k], slope, u, v)
        return total

    def mean(self):
        """Mean level ``lo + int (1 - F)``."""
        if self.kind == "uniform":
            return 0.5 * sum(self.params)
        if self.kind == "beta":
            a, b = self.params
            return a / (a + b)
        kp, ki = self.knots_p, self.knots_I
        return float(np.sum(0.5 * (ki[1:] + ki[:-1]) * np.diff(kp)))


def _xlogx(t):
    return 0.0 if t <= 0 else t * np.log(t)


def _linear_log_integral(alpha, beta, a, b):
    """Integral of ``log(alpha + beta*p)`` over ``[a, b]``."""
    if beta == 0:
        return (b - a) * np.log(alpha)
    ua, ub = alpha + beta * a, alpha + beta * b
    return ((_xlogx(ub) - ub) - (_xlogx(ua) - ua)) / beta


def load_csv(path):
    """Read a piecewise distribution from a ``p,I`` CSV file."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "p" not in reader.fieldnames or "I" not in reader.fieldnames:
            raise DistributionError(f"{path}: expected header 'p,I'")
        rows = [(float(r["p"]), float(r["I"])) for r in reader]
    p, levels = zip(*rows)
    return TypeDistribution.piecewise(p, levels)


def save_csv(dist, path, n_points=1001):
    """Write a distribution as ``p,I`` knots.

    Piecewise distributions are written knot-for-knot; others are sampled on
    ``n_points`` uniform percentiles.
    """
    if dist.kind == "piecewise":
        p, levels = dist.knots_p, dist.knots_I
    else:
        p = np.linspace(0.0, 1.0, n_points)
        levels = dist.inv(p)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["p", "I"])
        for a, b in zip(p, levels):
            w.writerow([f"{a:.17g}", f"{b:.17g}"])


def eval(dist, what, t):
    """Evaluate ``F``, ``f`` or ``I`` with domain checking.

    Parameters
    ----------
    dist : TypeDistribution
    what : {"F", "f", "I"}
    t : float or array_like
        Level in the support for ``F`` and ``f``, percentile for ``I``.
    """
    arr = np.asarray(t, dtype=float)
    if what == "I":
        if np.any((arr < -_DOMAIN_SLACK) | (arr > 1 + _DOMAIN_SLACK)) or np.any(np.isnan(arr)):
            raise DomainError("percentile must lie in [0, 1]")
        return dist.inv(t)
    if what in ("F", "f"):
        if np.any((arr < dist.lo - _DOMAIN_SLACK) | (arr > dist.hi + _DOMAIN_SLACK)) or np.any(np.isnan(arr)):
            raise DomainError(f"level must lie in [{dist.lo}, {dist.hi}]")
        return dist.cdf(t) if what == "F" else dist.pdf(t)
    raise DomainError(f"unknown functional {what!r}")


def log_loss_L(dist, p, n_w=2):
    """Logarithmic loss ``n log I(1 - n p) + log I(p)``.

    Returns ``-inf`` when ``I(p) == 0`` (or the partner level vanishes).
    """
    if not (0.0 < p <= 1.0 / (n_w + 1) + _DOMAIN_SLACK):
        raise DomainError(f"p must lie in (0, 1/{n_w + 1}]")
    own = dist.inv(p)
    partner = dist.inv(1.0 - n_w * p)
    if own <= 0.0 or partner <= 0.0:
        return float("-inf")
    return n_w * float(np.log(partner)) + float(np.log(own))


@dataclass
class AssumptionReport:
    """Outcome of the regularity checks.

    ``violations`` maps each check to ``(amount, location)``; an amount
    ``<= 0`` means the check passed.  ``worst_violation`` is the maximum
    amount over the checks that were run.
    """

    xfx_monotone: bool
    xfx_monotone_on_middle: bool | None
    L_concave_on_third: bool
    worst_violation: float
    location: float
    violations: dict

    @property
    def all_pass(self):
        return self.worst_violation <= 0


def check_assumptions(dist, cutoffs=None, n_w=2, n_grid=ASSUMPTION_GRID, tol=ASSUMPTION_TOL):
    """Test monotonicity of ``x f(x)`` and concavity of the log loss.

    Parameters
    ----------
    dist : TypeDistribution
    cutoffs : tuple of float, optional
        ``(p_low, p_high)``; enables the middle-range monotonicity check.
    n_w : int
        Team size used in the log loss.

    Returns
    -------
    AssumptionReport
    """
    p = (np.arange(n_grid) + 0.5) / n_grid
    x = dist.inv(p)
    g = x * dist.pdf(x)
    drop = -np.diff(g)
    violations = {}
    k = int(np.argmax(drop))
    violations["xfx_monotone"] = (float(drop[k] - tol), float(x[k]))

    if cutoffs is not None:
        lo, hi = cutoffs
        mask = (p >= lo) & (p <= hi)
        sub = drop[mask[1:] & mask[:-1]]
        xs = x[1:][mask[1:] & mask[:-1]]
        if sub.size:
            j = int(np.argmax(sub))
            violations["xfx_monotone_on_middle"] = (float(sub[j] - tol), float(xs[j]))
        else:
            violations["xfx_monotone_on_middle"] = (-tol, float("nan"))

    top = 1.0 / (n_w + 1)
    q = np.linspace(CONCAVITY_EPS, top, n_grid)
    with np.errstate(divide="ignore"):
        L = n_w * np.log(dist.inv(1.0 - n_w * q)) + np.log(dist.inv(q))
    d2 = L[2:] - 2 * L[1:-1] + L[:-2]
    d2 = np.where(np.isfinite(d2), d2, np.inf)
    j = int(np.argmax(d2))
    violations["L_concave_on_third"] = (float(d2[j] - tol), float(q[j + 1]))

    name = max(violations, key=lambda key: violations[key][0])
    worst, loc = violations[name]
    middle = violations.get("xfx_monotone_on_middle")
    return AssumptionReport(
        xfx_monotone=violations["xfx_monotone"][0] <= 0,
        xfx_monotone_on_middle=None if middle is None else middle[0] <= 0,
        L_concave_on_third=violations["L_concave_on_third"][0] <= 0,
        worst_violation=worst,
        location=loc,
        violations=violations,
    )


# middle knot chosen so that the mean of log I over [0.1, 0.8] equals log 0.4,
# which places the cutoffs at I = 0.1 and I = 0.8 with mixed loss 0.064
_ILLUSTRATIVE_KNOTS = (
    (0.0, 0.0),
    (0.025, 0.05),
    (0.1, 0.1),
    (0.45, 0.4577894550883199),
    (0.8, 0.8),
    (0.95, 0.9),
    (1.0, 1.0),
)


def illustrative_piecewise():
    """Piecewise distribution with cutoff levels 0.1 and 0.8 for two-worker teams."""
    p, levels = zip(*_ILLUSTRATIVE_KNOTS)
    return TypeDistribution.piecewise(p, levels)
