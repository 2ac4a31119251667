"""The set of potential matches, existence check and a sampled optimal assignment.

For teams of ``n_w`` workers the matching set consists of ``n_w + 1``
countermonotonic branches, where one coordinate sits at percentile ``p`` and
all others at ``1 - n_w p`` for ``p < p_low``, plus a completely mixed middle
on which every team has loss ``C``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .discrete import rearrangement_heuristic
from .errors import DomainError

MIXED = "Mixed"
TOL_MIX = 1e-3
MAX_SWEEPS = 200
EXISTENCE_TOL = 1e-9


def branch_names(n_w):
    """``["Mx1", ..., "Mxn", "Mz"]``."""
    return [f"Mx{i + 1}" for i in range(n_w)] + ["Mz"]


def _branch_index(branch, n_w):
    names = branch_names(n_w)
    if branch == MIXED:
        raise DomainError("mixed points are not a one-parameter family")
    if branch not in names:
        raise DomainError(f"unknown branch {branch!r}; expected one of {names}")
    return names.index(branch)


@dataclass(frozen=True)
class MatchTriplet:
    """One team: percentiles, levels, branch tag and weight."""

    percentiles: tuple
    levels: tuple
    branch: str
    weight: float = 0.0

    @property
    def loss(self):
        return float(np.prod(self.levels))


def matching_set_point(eq, branch, p):
    """Point of a countermonotonic branch at percentile ``p``.

    Parameters
    ----------
    eq : EquilibriumSolution
    branch : str
        ``"Mx1"``, ..., ``"Mxn"`` or ``"Mz"``; ``"Mx1"`` puts worker 1 at ``p``.
    p : float
        In ``[0, p_low]``; the closure point ``p_low`` is admitted.
    """
    k = _branch_index(branch, eq.n_w)
    if not (0.0 <= p <= eq.p_low):
        raise DomainError(f"p must lie in [0, p_low={eq.p_low}] on a countermonotonic branch")
    other = 1.0 - eq.n_w * p
    pct = [other] * (eq.n_w + 1)
    pct[k] = p
    levels = tuple(float(v) for v in eq.dist.inv(np.array(pct)))
    return MatchTriplet(tuple(pct), levels, branch)


def employable_bounds(eq, z):
    """Skill interval ``[I(p_low) I(p_high) / z, I(p_high)]`` hired by firm ``z``."""
    if eq.n_w != 2:
        raise DomainError("employable bounds are defined for two-worker teams")
    lo, hi = eq.x_low, eq.x_high
    slack = 1e-12
    if not (lo - slack <= z <= hi + slack):
        raise DomainError(f"z={z} outside the mixed range [{lo}, {hi}]")
    return (lo * hi / z, hi)


@dataclass
class ExistenceReport:
    """Mean-versus-range inequalities for the mixed middle in log coordinates."""

    status: str
    a: float = float("nan")
    b: float = float("nan")
    mu: float = float("nan")
    length: float = float("nan")
    slack1: float = float("nan")
    slack2: float = float("nan")

    @property
    def passed(self):
        return self.status in ("ok", "vacuous")


def check_existence(eq, tol=EXISTENCE_TOL):
    """Check that the mixed middle admits a constant-loss coupling.

    Each of the ``n_w + 1`` marginals is mapped to ``-log x`` on
    ``[I(p_low), I(p_high)]``, with range ``[a, b]``, length ``l`` and mean
    ``mu``.  Requires ``sum a + l <= sum mu <= sum b - l``.
    """
    if eq.degenerate or eq.p_high <= eq.p_low:
        return ExistenceReport("vacuous")
    k = eq.n_w + 1
    a = -np.log(eq.x_high)
    b = -np.log(eq.x_low)
    mu = -eq.dist.integral_log_inv(eq.p_low, eq.p_high) / (eq.p_high - eq.p_low)
    length = b - a
    slack1 = k * mu - k * a - length
    slack2 = k * b - length - k * mu
    status = "ok" if min(slack1, slack2) >= -tol else "fail"
    return ExistenceReport(status, a, b, mu, length, slack1, slack2)


@dataclass
class AssignmentSample:
    """Equal-weight teams approximating an assignment supported on the matching set.

    Attributes
    ----------
    percentiles, levels : ndarray, shape (N, n_w + 1)
        Columns are workers ``1..n_w`` then the firm.
    weights : ndarray, shape (N,)
    branch : ndarray of str, shape (N,)
    diagnostics : dict
        ``ra_spread`` (log-loss spread after rearrangement), ``spread``
        (relative loss spread of the returned mixed teams), ``max_shift``
        (largest log-level adjustment), ``mixed`` flag, sweeps.
    """

    percentiles: np.ndarray
    levels: np.ndarray
    weights: np.ndarray
    branch: np.ndarray
    seed: int | None = None
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.weights.size

    @property
    def n_w(self):
        return self.levels.shape[1] - 1

    @property
    def losses(self):
        return np.prod(self.levels, axis=1)

    def triplet(self, i):
        return MatchTriplet(
            tuple(self.percentiles[i]), tuple(self.levels[i]), str(self.branch[i]), float(self.weights[i])
        )

    def mask(self, branch):
        return self.branch == branch

    def header(self):
        n = self.n_w
        return (
            [f"p_x{i + 1}" for i in range(n)] + ["p_z"] + [f"x{i + 1}" for i in range(n)] + ["z", "weight", "branch"]
        )

    def save_csv(self, path, diagnostics_path=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            for p, x, wt, b in zip(self.percentiles, self.levels, self.weights, self.branch):
                w.writerow([f"{v:.17g}" for v in p] + [f"{v:.17g}" for v in x] + [f"{wt:.17g}", b])
        if diagnostics_path is not None:
            with open(diagnostics_path, "w") as fh:
                json.dump(dict(self.diagnostics, seed=self.seed), fh, indent=1, sort_keys=True)
                fh.write("\n")

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [r for r in reader if r]
        k = (len(header) - 2) // 2
        num = np.array([[float(v) for v in r[:-1]] for r in rows]).reshape(-1, 2 * k + 1)
        return cls(num[:, :k], num[:, k : 2 * k], num[:, 2 * k], np.array([r[-1] for r in rows]))


def _mix_columns(atoms, n_cols, rng, target, tol, max_sweeps):
    """Rearrange copies of ``atoms`` so row sums are as equal as possible."""
    cols = np.array([rng.permutation(atoms) for _ in range(n_cols)])
    best = cols.copy()
    best_spread = np.inf
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        for j in range(n_cols):
            partner = cols.sum(axis=0) - cols[j]
            order = np.argsort(partner, kind="stable")
            new = np.empty_like(cols[j])
            new[order] = np.sort(cols[j])[::-1]
            cols[j] = new
        sums = cols.sum(axis=0)
        spread = float(sums.max() - sums.min())
        if spread < best_spread:
            best, best_spread = cols.copy(), spread
        if spread <= tol:
            break
    return best, best_spread, sweeps


def _project_rows(cols, target, lo, hi, iters=200):
    """Shift each column of ``cols`` by a common amount, clipped to ``[lo, hi]``.

    Every team (column) gets the shift ``t`` that makes its clipped
    coordinates sum to ``target``; ``t`` is found by bisection since the sum
    is nondecreasing in ``t``.
    """
    a = np.asarray(cols, dtype=float)
    t_lo = lo - a.max(axis=0)
    t_hi = hi - a.min(axis=0)
    for _ in range(iters):
        mid = 0.5 * (t_lo + t_hi)
        too_low = np.clip(a + mid, lo, hi).sum(axis=0) < target
        t_lo = np.where(too_low, mid, t_lo)
        t_hi = np.where(too_low, t_hi, mid)
        if np.all(t_hi - t_lo <= 4 * np.finfo(float).eps * np.maximum(1.0, np.abs(t_hi))):
            break
    return np.clip(a + 0.5 * (t_lo + t_hi), lo, hi)


def sample_assignment(eq, m_points=3000, seed=0, tol_mix=TOL_MIX, max_sweeps=MAX_SWEEPS):
    """Sample an assignment supported on the matching set.

    Branch teams use stratified percentiles ``(k + 0.5) / m_points`` below
    the cutoff.  The middle is discretized into equal-mass atoms of
    ``log I`` that are rearranged towards equal row sums; the residual of
    each row is then split evenly over its coordinates, without leaving the
    middle level range, so that every mixed team has loss ``C``.

    Parameters
    ----------
    eq : EquilibriumSolution
    m_points : int
        Number of teams; all carry weight ``1 / m_points``.
    seed : int
    tol_mix : float
        Relative tolerance on the per-coordinate adjustment.
    max_sweeps : int

    Returns
    -------
    AssignmentSample
    """
    n = eq.n_w
    M = int(m_points)
    if M < n + 1:
        raise DomainError(f"m_points must be at least {n + 1}")
    I, F = eq.dist.inv, eq.dist.cdf
    if eq.degenerate:
        K_b = M // (n + 1)
        M = K_b * (n + 1)
    else:
        K_b = min(int(round(M * eq.p_low)), M // (n + 1))
    K_mid = M - (n + 1) * K_b

    names = branch_names(n)
    pct_rows, tags = [], []
    p_branch = (np.arange(K_b) + 0.5) / M
    for k in range(n + 1):
        rows = np.tile((1.0 - n * p_branch)[:, None], (1, n + 1))
        rows[:, k] = p_branch
        pct_rows.append(rows)
        tags += [names[k]] * K_b
    pct = np.vstack(pct_rows) if K_b else np.empty((0, n + 1))
    lev = I(pct)

    diag = {"K_branch": K_b, "K_mixed": K_mid, "ra_spread": 0.0, "spread": 0.0, "max_shift": 0.0, "sweeps": 0}
    if K_mid > 0:
        rng = np.random.default_rng(seed)
        p_eff = K_b / M
        p_atoms = p_eff + (np.arange(K_mid) + 0.5) / M
        atoms = np.log(I(p_atoms))
        log_c = np.log(eq.C)
        cols, ra_spread, sweeps = _mix_columns(atoms, n + 1, rng, log_c, tol_mix, max_sweeps)
        projected = _project_rows(cols, log_c, np.log(eq.x_low), np.log(eq.x_high))
        shift = projected - cols
        mix_lev = np.exp(projected.T)
        losses = np.prod(mix_lev, axis=1)
        diag.update(
            ra_spread=ra_spread,
            sweeps=sweeps,
            max_shift=float(np.max(np.abs(shift))),
            spread=float((losses.max() - losses.min()) / eq.C),
        )
        lev = np.vstack((lev, mix_lev))
        pct = np.vstack((pct, F(mix_lev)))
        tags += [MIXED] * K_mid
    diag["mixed"] = bool(diag["max_shift"] <= tol_mix)
    weights = np.full(M, 1.0 / M)
    sample = AssignmentSample(pct, lev, weights, np.array(tags), seed, diag)
    diag["ks"] = ks_distances(sample, eq.dist).tolist()
    return sample


def ks_distances(sample, dist):
    """Weighted Kolmogorov-Smirnov distance of each marginal to ``F``."""
    out = []
    w = sample.weights / sample.weights.sum()
    for col in sample.levels.T:
        order = np.argsort(col, kind="stable")
        x = col[order]
        cw = np.cumsum(w[order])
        Fx = dist.cdf(x)
        out.append(max(np.max(np.abs(cw - Fx)), np.max(np.abs(cw - w[order] - Fx))))
    return np.array(out)


def guided_permutations(prob, eq):
    """Initial worker permutations for a finite problem read off the matching set.

    Sample values are ranked within their column.  The best ``K_b`` ranks of
    each column form countermonotonic branch teams with the worst ranks of
    the other columns; remaining middle ranks are paired in opposite order.
    """
    n, s = prob.n_w, prob.n_s
    K_b = min(int(round(s * eq.p_low)), s // (n + 1))
    cols = prob.columns()
    order = np.argsort(cols, axis=1, kind="stable")
    teams = []
    for k in range(K_b):
        for b in range(n + 1):
            ranks = []
            for c in range(n + 1):
                if c == b:
                    ranks.append(k)
                else:
                    # column c gives each of the other n branches its own top slot
                    slot = b if b < c else b - 1
                    ranks.append(s - 1 - n * k - slot)
            teams.append(ranks)
    mid = np.arange(K_b, s - n * K_b)
    for t, r in enumerate(mid):
        ranks = [int(r)] + [int(mid[-1 - t])] * n
        teams.append(ranks)
    teams = np.array(teams, dtype=int)
    # index of original entries; team order follows the firm column
    by_firm = np.empty(s, dtype=int)
    firm_idx = order[-1][teams[:, -1]]
    by_firm[firm_idx] = np.arange(s)
    return [order[i][teams[by_firm, i]] for i in range(n)]


def guided_heuristic(prob, eq, max_sweeps=100):
    """Rearrangement heuristic started from :func:`guided_permutations`."""
    return rearrangement_heuristic(prob, max_sweeps=max_sweeps, init=guided_permutations(prob, eq))
