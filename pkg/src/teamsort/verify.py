"""Dual certificates and cumulative log-loss curves."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import DomainError

TOL_GAP = 1e-3
KARAMATA_GRID = np.round(np.arange(1, 21) * 0.05, 10)


def surplus(eq, *coords, wage=None, firm_value=None):
    """Output minus payments, ``y - sum w(x_i) - v(z)``.

    ``coords`` are worker levels followed by the project level; arrays
    broadcast.  ``wage`` and ``firm_value`` override the equilibrium schedules.
    """
    w = eq.wage if wage is None else wage
    v = eq.firm_value if firm_value is None else firm_value
    *xs, z = (np.asarray(c, dtype=float) for c in coords)
    if len(xs) != eq.n_w:
        raise DomainError(f"expected {eq.n_w} worker levels")
    prod = np.ones(np.broadcast_shapes(*(x.shape for x in xs)))
    pay = 0.0
    for x in xs:
        prod = prod * x
        pay = pay + w(x)
    out = z * (1.0 - prod) - pay - v(z)
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class CertificateReport:
    """Dual feasibility, complementary slackness and duality gap."""

    max_surplus_on_grid: float
    argmax_on_grid: list
    max_abs_surplus_on_support: float
    duality_gap: float
    quadrature_gap: float
    primal_sample: float
    dual_value: float
    grid_per_axis: int
    tol_S: float
    tol_gap: float
    passed: bool

    def to_dict(self):
        d = asdict(self)
        d["pass"] = d.pop("passed")
        return d

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def _lattice_surplus(eq, axis, w_axis, v_axis):
    n = eq.n_w
    shape = [axis.size] * (n + 1)
    prod = np.ones([axis.size] * n)
    pay = np.zeros([axis.size] * n)
    for k in range(n):
        sh = [1] * n
        sh[k] = axis.size
        prod = prod * axis.reshape(sh)
        pay = pay + w_axis.reshape(sh)
    z = axis.reshape([1] * n + [axis.size])
    S = z * (1.0 - prod[..., None]) - pay[..., None] - v_axis.reshape([1] * n + [axis.size])
    k = int(np.argmax(S))
    idx = np.unravel_index(k, shape)
    return float(S.flat[k]), [float(axis[i]) for i in idx]


def verify_certificate(eq, sample, grid_per_axis=64, tol_S=None, tol_gap=TOL_GAP, wage=None, firm_value=None):
    """Check that the wage and firm-value schedules certify the sample.

    Surplus is evaluated on a ``grid_per_axis ** (n_w + 1)`` level lattice
    (must be ``<= tol_S``) and on every sample team (``|S| <= tol_S``).  The
    sampling gap compares the sample's output with ``n E[w] + E[v]``; the
    quadrature gap compares the exact equilibrium output with the same dual
    value.

    Returns
    -------
    CertificateReport
    """
    if tol_S is None:
        tol_S = 1e-6 * max(1.0, abs(eq.C_w))
    w = eq.wage if wage is None else wage
    v = eq.firm_value if firm_value is None else firm_value
    axis = np.linspace(eq.dist.lo, eq.dist.hi, grid_per_axis)
    grid_max, where = _lattice_surplus(eq, axis, np.asarray(w(axis)), np.asarray(v(axis)))

    lev = sample.levels
    S = surplus(eq, *lev.T, wage=w, firm_value=v)
    support = float(np.max(np.abs(S))) if S.size else 0.0

    wts = sample.weights / math.fsum(sample.weights)
    y = lev[:, -1] * (1.0 - np.prod(lev[:, :-1], axis=1))
    primal = math.fsum(wts * y)
    if wage is None and firm_value is None:
        dual = eq.dual_value()
    else:
        dual = _dual_by_quadrature(eq, w, v)
    gap = abs(primal - dual)
    qgap = abs(eq.primal_value() - dual)
    passed = grid_max <= tol_S and support <= tol_S and gap <= tol_gap
    return CertificateReport(
        grid_max, where, support, gap, qgap, primal, dual, grid_per_axis, tol_S, tol_gap, bool(passed)
    )


def _dual_by_quadrature(eq, w, v, n=20001):
    p = (np.arange(n) + 0.5) / n
    x = eq.dist.inv(p)
    return eq.n_w * float(np.mean(w(x))) + float(np.mean(v(x)))


def weak_duality_holds(eq, triplets, weights=None, tol=TOL_GAP):
    """Output of a feasible assignment does not exceed the dual value."""
    t = np.asarray(triplets, dtype=float)
    wts = np.full(len(t), 1.0 / len(t)) if weights is None else np.asarray(weights) / np.sum(weights)
    y = t[:, -1] * (1.0 - np.prod(t[:, :-1], axis=1))
    return math.fsum(wts * y) <= eq.dual_value() + tol


@dataclass
class KaramataCurve:
    """Cumulative integral of ascending log losses."""

    t: np.ndarray
    S: np.ndarray
    excluded_mass: float

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "S_gamma"])
            for a, b in zip(self.t, self.S):
                wr.writerow([f"{a:.12g}", f"{b:.12g}"])


def karamata_curve(triplets, weights=None, t=None):
    """``S(t) = int_0^t`` of the ascending log-loss quantile function.

    Parameters
    ----------
    triplets : array_like, shape (N, k)
        Team levels; the loss of a team is the product of its row.
    weights : array_like, optional
        Team weights (default equal weights summing to one).
    t : array_like, optional
        Evaluation points; default ``0.05, 0.10, ..., 1.0``.

    Raises
    ------
    DomainError
        If every loss is zero.
    """
    arr = np.atleast_2d(np.asarray(triplets, dtype=float))
    losses = np.prod(arr, axis=1)
    wts = np.full(losses.size, 1.0 / losses.size) if weights is None else np.asarray(weights, dtype=float)
    pos = losses > 0
    if not np.any(pos):
        raise DomainError("all losses are zero; curve is degenerate")
    excluded = float(np.sum(wts[~pos]))
    lg = np.log(losses[pos])
    wp = wts[pos]
    order = np.argsort(lg, kind="stable")
    c = np.concatenate(([0.0], np.cumsum(wp[order])))
    s = np.concatenate(([0.0], np.cumsum(wp[order] * lg[order])))
    tt = KARAMATA_GRID if t is None else np.asarray(t, dtype=float)
    return KaramataCurve(tt, np.interp(tt, c, s), excluded)
