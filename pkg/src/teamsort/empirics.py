"""Matched worker-firm panels, variance decomposition and counterfactuals.

Every sampled team is one firm record.  Log-earnings variance splits into a
between-firm part (variance of firm means) and a within-firm part (weighted
mean of within-firm variances), with firm weights ``theta_j`` and equal
weight ``theta_j / n_w`` on each worker.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .discrete import DiscreteProblem, check_stability, rearrangement_heuristic
from .errors import ConfigurationError, DomainError

BAND = 0.5


@dataclass
class MatchedPanel:
    """Firm records with the earnings of each team member.

    Attributes
    ----------
    firm_id : ndarray of int
    z : ndarray
    earnings : ndarray, shape (N, n_w)
    weight : ndarray
        Normalized to sum to one.
    """

    firm_id: np.ndarray
    z: np.ndarray
    earnings: np.ndarray
    weight: np.ndarray
    log_earnings: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.firm_id = np.asarray(self.firm_id, dtype=int)
        self.z = np.asarray(self.z, dtype=float)
        self.earnings = np.atleast_2d(np.asarray(self.earnings, dtype=float))
        w = np.asarray(self.weight, dtype=float)
        total = math.fsum(w)
        if not total > 0:
            raise DomainError("total weight must be positive")
        self.weight = w / total
        if np.any(self.earnings <= 0):
            raise ConfigurationError("earnings must be positive to take logs")
        self.log_earnings = np.log(self.earnings)

    @classmethod
    def from_log_earnings(cls, logs, weight=None, z=None):
        logs = np.atleast_2d(np.asarray(logs, dtype=float))
        n = logs.shape[0]
        weight = np.ones(n) if weight is None else weight
        z = np.zeros(n) if z is None else z
        return cls(np.arange(n), z, np.exp(logs), weight)

    @property
    def n_w(self):
        return self.earnings.shape[1]

    def __len__(self):
        return self.weight.size

    def split_firm(self, j):
        """Copy with record ``j`` replaced by two half-weight replicas."""
        idx = np.concatenate((np.arange(len(self)), [j]))
        w = self.weight[idx].copy()
        w[j] *= 0.5
        w[-1] *= 0.5
        return MatchedPanel(self.firm_id[idx], self.z[idx], self.earnings[idx], w)

    def save_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["firm_id", "z"] + [f"earn_{i + 1}" for i in range(self.n_w)] + ["weight"])
            for f, z, e, w in zip(self.firm_id, self.z, self.earnings, self.weight):
                wr.writerow([int(f), f"{z:.17g}"] + [f"{v:.17g}" for v in e] + [f"{w:.17g}"])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        n = len(header) - 3
        data = np.array([[float(v) for v in r] for r in rows]).reshape(-1, n + 3)
        return cls(data[:, 0].astype(int), data[:, 1], data[:, 2 : 2 + n], data[:, -1])


@dataclass
class DecompositionResult:
    """Log-earnings variance and its between/within split."""

    total: float
    between: float
    within: float

    @property
    def within_share(self):
        return self.within / self.total if self.total > 0 else float("nan")

    def to_dict(self):
        return asdict(self)

    def save_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def simulate_panel(eq, sample):
    """Price each sampled team at equilibrium wages.

    Raises
    ------
    ConfigurationError
        If some wage is nonpositive; the message names the smallest wage
        constant that makes all sampled wages positive.
    """
    n = eq.n_w
    skills = sample.levels[:, :n]
    earn = np.asarray(eq.wage(skills))
    if np.any(earn <= 0):
        need = eq.C_w - float(earn.min())
        raise ConfigurationError(
            f"nonpositive earnings {earn.min():.6g}; wage constant must exceed {need:.12g}"
        )
    return MatchedPanel(np.arange(len(sample)), sample.levels[:, -1], earn, sample.weights)


def variance_decomposition(panel):
    """Between- and within-firm variance of log earnings.

    Returns
    -------
    DecompositionResult
        ``total`` is computed directly around the grand mean, so the identity
        ``total = between + within`` is a genuine check.
    """
    if len(panel) < 1:
        raise DomainError("panel is empty")
    L = panel.log_earnings
    th = panel.weight
    n = L.shape[1]
    firm_mean = L.mean(axis=1)
    grand = math.fsum(th * firm_mean)
    between = math.fsum(th * (firm_mean - grand) ** 2)
    within = math.fsum(np.ravel(th[:, None] * (L - firm_mean[:, None]) ** 2 / n))
    total = math.fsum(np.ravel(th[:, None] * (L - grand) ** 2 / n))
    return DecompositionResult(total, between, within)


@dataclass
class CoworkerRow:
    percentile: float
    own_mean_log: float
    coworker_mean_log: float
    band: float
    widened: bool


def coworker_table(panel, percentiles, band=BAND):
    """Mean log coworker earnings around given own-earnings percentiles.

    Workers are ranked by own earnings (ascending, weighted midpoint ranks
    on a 0-100 scale).  For each requested percentile, coworker log earnings
    are averaged over workers within ``+-band`` percentile points; an empty
    band is doubled until it catches someone.
    """
    if len(panel) == 0:
        raise DomainError("panel is empty")
    L = panel.log_earnings
    n = L.shape[1]
    if n < 2:
        raise DomainError("coworkers need teams of at least two")
    own = L.ravel()
    cow = ((L.sum(axis=1, keepdims=True) - L) / (n - 1)).ravel()
    wts = np.repeat(panel.weight / n, n)
    order = np.argsort(own, kind="stable")
    rank = np.empty_like(own)
    cw = np.cumsum(wts[order])
    rank[order] = 100.0 * (cw - 0.5 * wts[order])
    rows = []
    for pc in percentiles:
        half = band
        while True:
            sel = np.abs(rank - pc) <= half
            if np.any(sel) or half > 100:
                break
            half *= 2
        ws = wts[sel]
        rows.append(
            CoworkerRow(
                float(pc),
                float(np.sum(ws * own[sel]) / ws.sum()),
                float(np.sum(ws * cow[sel]) / ws.sum()),
                float(half),
                half > band,
            )
        )
    return rows


@dataclass
class CounterfactualResult:
    """Decomposition under a heuristic assignment of mismatched marginals."""

    decomposition: DecompositionResult
    stable: bool
    converged: bool
    panel: MatchedPanel
    certification: str = "heuristic"

    def to_dict(self):
        return dict(
            self.decomposition.to_dict(),
            stable=self.stable,
            converged=self.converged,
            certification=self.certification,
        )


def empirical_wages(triplets, C_w, lo=0.0):
    """Wages from integrating the realized marginal product over pooled skills.

    A worker's marginal product is minus the product of the other team
    members' levels (including the project).  Wages start at ``C_w`` at the
    bottom of the support ``lo`` and integrate by the trapezoid rule.
    """
    t = np.asarray(triplets, dtype=float)
    n = t.shape[1] - 1
    skills = t[:, :n].ravel()
    mp = np.concatenate([-np.prod(np.delete(t, i, axis=1), axis=1)[:, None] for i in range(n)], axis=1).ravel()
    order = np.argsort(skills, kind="stable")
    xs, ms = skills[order], mp[order]
    head = (xs[0] - lo) * ms[0]
    cum = np.concatenate(([0.0], np.cumsum(0.5 * (ms[1:] + ms[:-1]) * np.diff(xs))))
    w_sorted = C_w + head + cum
    wages = np.empty_like(w_sorted)
    wages[order] = w_sorted
    return wages.reshape(-1, n)


def counterfactual(dist_workers, dist_firms, C_w, n_w=2, n_teams=600, seed=0, max_sweeps=500):
    """Decomposition when workers and firms follow different distributions.

    Stratified samples of ``n_teams`` quantiles are assigned with the
    seeded rearrangement heuristic; optimality is certified only by the
    pairwise stability check.

    Returns
    -------
    CounterfactualResult
    """
    u = (np.arange(n_teams) + 0.5) / n_teams
    xs = dist_workers.inv(u)
    zs = dist_firms.inv(u)
    prob = DiscreteProblem(tuple(xs for _ in range(n_w)), zs)
    asg = rearrangement_heuristic(prob, max_sweeps=max_sweeps, seed=seed)
    t = asg.triplets(prob)
    stable = not check_stability(t, tol=1e-12, max_report=1)
    earn = empirical_wages(t, C_w, dist_workers.lo)
    if np.any(earn <= 0):
        raise ConfigurationError(
            f"nonpositive earnings {earn.min():.6g}; wage constant must exceed {C_w - earn.min():.12g}"
        )
    panel = MatchedPanel(np.arange(n_teams), t[:, -1], earn, np.full(n_teams, 1.0 / n_teams))
    return CounterfactualResult(variance_decomposition(panel), stable, asg.converged, panel)
