"""Finite sample problems: exhaustive oracle, rearrangement heuristic and checkers.

A problem holds ``n_w`` worker columns and one firm column of length ``n_s``.
An assignment keeps firms in their given order and permutes each worker
column; team ``s`` is ``(x_1[sigma_1(s)], ..., x_n[sigma_n(s)], z[s])``.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DomainError, InvalidTechnologyError

ENUMERATION_LIMIT = 5040**2
STABLE_LIST_LIMIT = 10**5
DEFAULT_TOL = 1e-12


def output(*coords):
    """Team output ``z (1 - prod x_i)``; the last argument is ``z``."""
    *xs, z = (np.asarray(c, dtype=float) for c in coords)
    out = z * (1.0 - np.prod(np.stack(xs), axis=0))
    return float(out) if out.ndim == 0 else out


def loss(*coords):
    """Team loss ``prod x_i * z``; the last argument is ``z``."""
    out = np.prod(np.stack([np.asarray(c, dtype=float) for c in coords]), axis=0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    """Sampled worker columns and firm column.

    Parameters
    ----------
    workers : sequence of array_like
        One column per worker slot, ``n_w >= 2`` columns.
    z : array_like
        Project values.
    """

    workers: tuple
    z: np.ndarray

    def __post_init__(self):
        cols = tuple(np.array(c, dtype=float) for c in self.workers)
        z = np.array(self.z, dtype=float)
        if len(cols) < 2:
            raise DomainError("need at least two worker columns")
        for c in cols + (z,):
            if c.ndim != 1 or c.shape != z.shape:
                raise DomainError("all columns must be 1-d with equal length")
            if np.any((c < 0) | (c > 1)) or np.any(np.isnan(c)):
                raise DomainError("entries must lie in [0, 1]")
            c.setflags(write=False)
        object.__setattr__(self, "workers", cols)
        object.__setattr__(self, "z", z)

    @classmethod
    def from_columns(cls, *columns):
        """Build from ``x1, x2, ..., z``."""
        return cls(tuple(columns[:-1]), columns[-1])

    @property
    def n_w(self):
        return len(self.workers)

    @property
    def n_s(self):
        return self.z.size

    @property
    def x1(self):
        return self.workers[0]

    @property
    def x2(self):
        return self.workers[1]

    def columns(self):
        return np.vstack(self.workers + (self.z,))

    def save_csv(self, path):
        header = [f"x{i + 1}" for i in range(self.n_w)] + ["z"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in self.columns().T:
                w.writerow([f"{v:.17g}" for v in row])

    @classmethod
    def load_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = [h.strip() for h in next(reader)]
            rows = [[float(v) for v in r] for r in reader if r]
        if header[-1] != "z" or any(h != f"x{i + 1}" for i, h in enumerate(header[:-1])):
            raise DomainError(f"{path}: expected header x1,x2[,...],z")
        data = np.array(rows, dtype=float).reshape(-1, len(header))
        return cls.from_columns(*data.T)


@dataclass
class DiscreteAssignment:
    """Permutations of worker columns against the firm order.

    ``aggregate_output == sum(z) - aggregate_loss`` by construction.
    """

    perms: tuple
    aggregate_output: float
    aggregate_loss: float
    converged: bool = True
    sweeps: int = 0
    method: str = "oracle"
    extra: dict = field(default_factory=dict)

    def triplets(self, prob):
        """Matched teams as an ``(n_s, n_w + 1)`` array."""
        cols = [w[np.asarray(s)] for w, s in zip(prob.workers, self.perms)]
        return np.column_stack(cols + [prob.z])

    def summary(self, prob, tol=DEFAULT_TOL):
        return {
            "output": self.aggregate_output,
            "loss": self.aggregate_loss,
            "stable": not check_stability(self.triplets(prob), tol=tol, max_report=1),
            "converged": self.converged,
            "method": self.method,
        }

    def save(self, prob, csv_path, json_path=None):
        t = self.triplets(prob)
        header = [f"x{i + 1}" for i in range(prob.n_w)] + ["z"]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in t:
                w.writerow([f"{v:.12g}" for v in row])
        if json_path is not None:
            with open(json_path, "w") as fh:
                json.dump(self.summary(prob), fh, indent=1)
                fh.write("\n")


def _make_assignment(prob, perms, method, **kw):
    perms = tuple(np.asarray(p, dtype=int) for p in perms)
    cols = [w[p] for w, p in zip(prob.workers, perms)]
    total_loss = math.fsum(loss(*cols, prob.z)) if prob.n_s else 0.0
    total_out = math.fsum(prob.z) - total_loss
    return DiscreteAssignment(perms, total_out, total_loss, method=method, **kw)


# technology


@dataclass(frozen=True)
class TechnologySpec:
    """Coefficients of the general submodular technology.

    ``y = z(1 - x1 x2) - phi1 x2 z - phi2 x1 z - phi3 x1 x2
    - phi4 x1 - phi5 x2 - phi6 z - phi7``.
    """

    phi1: float = 0.0
    phi2: float = 0.0
    phi3: float = 0.0
    phi4: float = 0.0
    phi5: float = 0.0
    phi6: float = 0.0
    phi7: float = 0.0

    def output(self, x1, x2, z):
        return (
            z * (1 - x1 * x2)
            - self.phi1 * x2 * z
            - self.phi2 * x1 * z
            - self.phi3 * x1 * x2
            - self.phi4 * x1
            - self.phi5 * x2
            - self.phi6 * z
            - self.phi7
        )


@dataclass(frozen=True)
class CanonicalTechnology:
    """Shifted variables and linear terms equivalent to a :class:`TechnologySpec`."""

    shifts: tuple
    phi_x1: float
    phi_x2: float
    phi_z: float
    phi_y: float

    def transform(self, x1, x2, z):
        s1, s2, s3 = self.shifts
        return x1 + s1, x2 + s2, z + s3

    def output(self, xt1, xt2, zt):
        """Canonical output in shifted variables."""
        return zt * (1 - xt1 * xt2) + self.phi_x1 * xt1 + self.phi_x2 * xt2 + self.phi_z * zt + self.phi_y


def normalize_technology(spec):
    """Rewrite a general technology as a shifted canonical one.

    Raises
    ------
    InvalidTechnologyError
        If any of the three shift coefficients is negative.
    """
    p1, p2, p3 = spec.phi1, spec.phi2, spec.phi3
    if min(p1, p2, p3) < 0:
        raise InvalidTechnologyError("phi1, phi2, phi3 must be nonnegative")
    fx1 = p2 * p3 - spec.phi4
    fx2 = p1 * p3 - spec.phi5
    fz = p1 * p2 - spec.phi6
    fy = p1 * p2 * p3 - p1 * fx1 - p2 * fx2 - p3 * fz - p3 - spec.phi7
    return CanonicalTechnology((p1, p2, p3), fx1, fx2, fz, fy)


# oracle


def _check_capacity(n_s, n_w, limit=ENUMERATION_LIMIT):
    size = math.factorial(n_s) ** n_w
    if size > limit:
        raise CapacityError(
            f"{n_s}!^{n_w} = {size} assignments exceeds the enumeration limit {limit} "
            f"(n_s <= 7 for two workers, n_s <= 5 for three)"
        )


def _team_totals(prob, perm_table, outer, objective):
    """Objective for every inner permutation of the last worker slot."""
    partial = np.tile(prob.z, (len(outer), 1))
    for slot, block in enumerate(zip(*outer)):
        partial *= prob.workers[slot][perm_table[list(block)]]
    last = prob.workers[-1][perm_table]
    totals = partial @ last.T
    return totals if objective == "submodular" else -totals


def _outer_blocks(n_perm, n_outer_slots, block=512):
    it = itertools.product(range(n_perm), repeat=n_outer_slots)
    while True:
        chunk = list(itertools.islice(it, block))
        if not chunk:
            return
        yield chunk


def brute_force_oracle(prob, objective="submodular"):
    """Exhaustive optimum over all worker permutations.

    Parameters
    ----------
    prob : DiscreteProblem
    objective : {"submodular", "supermodular"}
        ``submodular`` maximizes output (minimizes loss); ``supermodular``
        maximizes ``sum prod x_i z``, the comonotone control.

    Returns
    -------
    DiscreteAssignment
        Ties within ``1e-12 * max(1, sum z)`` resolve to the lexicographically
        smallest ``(sigma_1, ..., sigma_n)``.
    """
    if objective not in ("submodular", "supermodular"):
        raise DomainError(f"unknown objective {objective!r}")
    n_s, n_w = prob.n_s, prob.n_w
    _check_capacity(n_s, n_w)
    perm_table = np.array(list(itertools.permutations(range(n_s))), dtype=int).reshape(-1, n_s)
    n_perm = len(perm_table)
    tol = 1e-12 * max(1.0, float(np.sum(prob.z)))

    best = np.inf
    for outer in _outer_blocks(n_perm, n_w - 1):
        best = min(best, float(_team_totals(prob, perm_table, outer, objective).min()))
    chosen = None
    for outer in _outer_blocks(n_perm, n_w - 1):
        totals = _team_totals(prob, perm_table, outer, objective)
        hit = np.flatnonzero(totals.ravel() <= best + tol)
        if hit.size:
            r, c = divmod(int(hit[0]), n_perm)
            chosen = [perm_table[i] for i in outer[r]] + [perm_table[c]]
            break
    return _make_assignment(prob, chosen, f"oracle-{objective}")


@dataclass
class StableAssignment:
    triplets: np.ndarray
    output: float
    optimal: bool


def stable_assignments(prob, tol=DEFAULT_TOL):
    """All distinct stable team configurations of a small problem.

    Configurations are compared as multisets of teams.  Each is tagged with
    whether it attains the oracle optimum.
    """
    n_s, n_w = prob.n_s, prob.n_w
    _check_capacity(n_s, n_w, STABLE_LIST_LIMIT)
    perms = list(itertools.permutations(range(n_s)))
    seen = {}
    for combo in itertools.product(perms, repeat=n_w):
        cols = [w[list(p)] for w, p in zip(prob.workers, combo)]
        t = np.column_stack(cols + [prob.z])
        key = tuple(sorted(map(tuple, t.tolist())))
        if key in seen:
            continue
        if check_stability(t, tol=tol, max_report=1):
            seen[key] = None
            continue
        seen[key] = math.fsum(prob.z) - math.fsum(loss(*t.T))
    best = brute_force_oracle(prob).aggregate_output
    scale = 1e-12 * max(1.0, float(np.sum(prob.z)))
    out = [
        StableAssignment(np.array(k), v, v >= best - scale)
        for k, v in seen.items()
        if v is not None
    ]
    out.sort(key=lambda s: (-s.output, s.triplets.tolist()))
    return out


# heuristic


def rearrangement_heuristic(prob, max_sweeps=100, seed=None, init=None):
    """Cyclic countermonotone re-sorting of each column.

    Each step sorts one column (worker slots in order, then firms) against
    the product of the other columns so that large values meet small
    partner products.  Aggregate loss never increases.

    Parameters
    ----------
    prob : DiscreteProblem
    max_sweeps : int
    seed : int, optional
        If given, every column is shuffled before the first sweep.
    init : sequence of array_like, optional
        Starting permutations (one per worker slot) against the firm order.

    Returns
    -------
    DiscreteAssignment
        ``converged`` is False when ``max_sweeps`` passed without a fixed point.
    """
    n_w, n_s = prob.n_w, prob.n_s
    cols = prob.columns()
    idx = np.tile(np.arange(n_s), (n_w + 1, 1))
    if init is not None:
        for j, p in enumerate(init):
            idx[j] = np.asarray(p, dtype=int)
    if seed is not None:
        rng = np.random.default_rng(seed)
        for j in range(n_w + 1):
            idx[j] = idx[j][rng.permutation(n_s)]
    vals = np.take_along_axis(cols, idx, axis=1)

    converged = False
    sweeps = 0
    while sweeps < max_sweeps:
        sweeps += 1
        changed = False
        for j in range(n_w + 1):
            partner = np.prod(np.delete(vals, j, axis=0), axis=0)
            order = np.lexsort((-vals[j], partner))
            desc = np.argsort(-vals[j], kind="stable")
            new_vals = np.empty(n_s)
            new_idx = np.empty(n_s, dtype=int)
            new_vals[order] = vals[j][desc]
            new_idx[order] = idx[j][desc]
            if not np.array_equal(new_vals, vals[j]):
                changed = True
            vals[j], idx[j] = new_vals, new_idx
        if not changed:
            converged = True
            break
    # re-express against the identity firm order
    firm_team = np.empty(n_s, dtype=int)
    firm_team[idx[-1]] = np.arange(n_s)
    perms = [idx[j][firm_team] for j in range(n_w)]
    return _make_assignment(prob, perms, "rearrangement", converged=converged, sweeps=sweeps)


# checkers


@dataclass(frozen=True)
class StabilityViolation:
    """Pair of teams that gain by exchanging one coordinate."""

    i: int
    j: int
    coordinate: int
    slack: float


def _pairwise_excess(a, b, tol, chunk=1024):
    n = a.size
    for start in range(0, n, chunk):
        stop = min(n, start + chunk)
        v = (a[start:stop, None] - a[None, :]) * (b[start:stop, None] - b[None, :])
        rows, cols = np.nonzero(v > tol)
        keep = cols > rows + start
        for r, c in zip(rows[keep], cols[keep]):
            yield start + int(r), int(c), float(v[r, c])


def check_stability(triplets, tol=DEFAULT_TOL, max_report=None):
    """Pairwise exchange test.

    Exchanging coordinate ``k`` between teams ``i`` and ``j`` lowers total
    loss by ``(a_i - a_j)(b_i - b_j)``, where ``a`` is coordinate ``k`` and
    ``b`` the product of the others.  A violation is any exchange with
    ``slack > tol``.

    Returns
    -------
    list of StabilityViolation
    """
    t = np.atleast_2d(np.asarray(triplets, dtype=float))
    out = []
    if t.shape[0] < 2:
        return out
    for k in range(t.shape[1]):
        a = t[:, k]
        b = np.prod(np.delete(t, k, axis=1), axis=1)
        for i, j, s in _pairwise_excess(a, b, tol):
            out.append(StabilityViolation(i, j, k, s))
            if max_report is not None and len(out) >= max_report:
                return out
    return out


def _splits(n_cols):
    cols = range(n_cols)
    seen = set()
    for r in range(1, n_cols):
        for d in itertools.combinations(cols, r):
            comp = tuple(c for c in cols if c not in d)
            key = min(d, comp)
            if key not in seen:
                seen.add(key)
                yield d, comp


def check_product_countermonotonic(triplets, tol=DEFAULT_TOL):
    """Test that each split's product is oppositely sorted to its complement.

    Returns
    -------
    ok : bool
    witness : tuple or None
        ``(i, j, split)`` for the first failing adjacent pair.
    """
    t = np.atleast_2d(np.asarray(triplets, dtype=float))
    if t.shape[0] < 2:
        return True, None
    for d, comp in _splits(t.shape[1]):
        a = np.prod(t[:, list(d)], axis=1)
        b = np.prod(t[:, list(comp)], axis=1)
        order = np.lexsort((-b, a))
        rise = np.diff(b[order])
        da = np.diff(a[order])
        bad = np.flatnonzero((rise > tol) & (da > 0))
        if bad.size:
            k = int(bad[0])
            return False, (int(order[k]), int(order[k + 1]), d)
    return True, None


@dataclass(frozen=True)
class MixingResult:
    mixed: bool
    spread: float
    mean_loss: float


def check_complete_mixing(triplets, tol=DEFAULT_TOL):
    """All team losses equal to within ``tol`` (absolute spread)."""
    t = np.asarray(triplets, dtype=float)
    if t.size == 0:
        return MixingResult(True, 0.0, float("nan"))
    losses = np.prod(np.atleast_2d(t), axis=1)
    spread = float(losses.max() - losses.min())
    return MixingResult(spread <= tol, spread, float(np.mean(losses)))


def amgm_bound(prob):
    """Geometric mean of team losses, identical for every assignment.

    Mean team loss of any assignment is at least this value, with equality
    exactly when all losses coincide.
    """
    allv = prob.columns()
    if np.any(allv == 0):
        return 0.0
    return float(np.exp(np.sum(np.log(allv)) / prob.n_s))
