"""Command-line front end.

Every subcommand writes a machine-readable summary JSON (default
``<out>.summary.json``) even when it fails.  Exit codes: 0 success, 2 invalid
input or configuration, 3 solver or certificate failure.  Summary numbers
carry 12 significant digits; data artifacts keep full precision so later
stages can consume them losslessly.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .discrete import DiscreteProblem, brute_force_oracle, stable_assignments
from .dist import TypeDistribution, check_assumptions, save_csv
from .empirics import (
    MatchedPanel,
    counterfactual,
    coworker_table,
    simulate_panel,
    variance_decomposition,
)
from .equilibrium import EquilibriumSolution, solve_equilibrium
from .errors import SolverError, TeamsortError
from .inference import EarningsProfile, infer_distribution, infer_distribution_ode
from .matchset import (
    AssignmentSample,
    branch_names,
    check_existence,
    employable_bounds,
    matching_set_point,
    sample_assignment,
)
from .verify import verify_certificate

EXIT_OK, EXIT_INVALID, EXIT_FAILED = 0, 2, 3
DIGITS = 12
SMALL_EXAMPLE_VALUES = "0.1,0.2,0.4"


class InvalidInput(Exception):
    """Raised for bad paths or option values; maps to exit code 2."""


def fmt(x):
    """Round floats (recursively) to 12 significant digits."""
    if isinstance(x, dict):
        return {k: fmt(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [fmt(v) for v in x]
    if isinstance(x, np.ndarray):
        return fmt(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if not math.isfinite(x) else float(f"{x:.{DIGITS}g}")
    return x


def num(x):
    """12-significant-digit text, trailing zeros kept."""
    return f"{x:#.{DIGITS}g}"


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(fmt(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([num(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _input(path):
    p = Path(path)
    if not p.is_file():
        raise InvalidInput(f"input file not found: {path}")
    return p


def _output(path):
    p = Path(path)
    if not p.parent.is_dir():
        raise InvalidInput(f"output directory does not exist: {p.parent}")
    return p


def _positive(name, value):
    if value is not None and not value > 0:
        raise InvalidInput(f"{name} must be positive, got {value}")


def _dist(text):
    kind, _, rest = text.partition(":")
    if kind.strip().lower() in ("csv", "piecewise"):
        _input(rest)
    return TypeDistribution.from_string(text)


def _wage_constant(args):
    """Explicit number, or ``top-earnings`` read from ``--earnings``."""
    if str(args.cw).strip().lower() == "top-earnings":
        if not args.earnings:
            raise InvalidInput("--cw top-earnings needs --earnings")
        prof = EarningsProfile.load_csv(_input(args.earnings))
        return float(prof.e[np.argmin(prof.p)])
    try:
        return float(args.cw)
    except ValueError:
        raise InvalidInput(f"--cw must be a number or 'top-earnings', got {args.cw!r}") from None


def _load_eq(path):
    return EquilibriumSolution.load_json(_input(path))


def _sample_for(args, eq):
    if getattr(args, "sample", None):
        return AssignmentSample.load_csv(_input(args.sample))
    return sample_assignment(eq, m_points=args.m, seed=args.seed, tol_mix=args.tol_mix)


def _eq_summary(eq):
    return {
        "n_w": eq.n_w,
        "p_low": eq.p_low,
        "p_high": eq.p_high,
        "C": eq.C,
        "C_w": eq.C_w,
        "C_v": eq.C_v,
        "degenerate": eq.degenerate,
        "residual": eq.residual,
        "mean_wage": eq.mean_wage(),
        "mean_firm_value": eq.mean_firm_value(),
        "dual_value": eq.dual_value(),
        "primal_value": eq.primal_value(),
    }


# subcommands


def cmd_solve(args):
    dist = _dist(args.dist)
    out = _output(args.out)
    eq = solve_equilibrium(dist, n_w=args.nw, C_w=_wage_constant(args), check=args.check)
    eq.save_json(out)
    rep = check_assumptions(dist, cutoffs=(eq.p_low, eq.p_high), n_w=eq.n_w)
    ex = check_existence(eq)
    return EXIT_OK, dict(
        _eq_summary(eq),
        assumptions_hold=rep.xfx_monotone and rep.L_concave_on_third,
        existence=ex.status,
    )


def cmd_sample(args):
    _positive("tol_mix", args.tol_mix)
    eq = _load_eq(args.eq)
    out = _output(args.out)
    s = sample_assignment(eq, m_points=args.m, seed=args.seed, tol_mix=args.tol_mix)
    s.save_csv(out)
    return EXIT_OK, dict(n=len(s), seed=args.seed, **s.diagnostics)


def cmd_verify(args):
    _positive("tol_S", args.tol_s)
    _positive("tol_gap", args.tol_gap)
    _positive("tol_mix", args.tol_mix)
    eq = _load_eq(args.eq)
    out = _output(args.out)
    grid = args.grid or (64 if eq.n_w == 2 else 32)
    rep = verify_certificate(eq, _sample_for(args, eq), grid_per_axis=grid, tol_S=args.tol_s, tol_gap=args.tol_gap)
    write_json(out, rep.to_dict())
    return (EXIT_OK if rep.passed else EXIT_FAILED), rep.to_dict()


def cmd_infer(args):
    prof = EarningsProfile.load_csv(_input(args.earnings))
    out = _output(args.out)
    if args.method == "ode":
        res = infer_distribution_ode(prof, eps=args.eps)
        info = {"method": "ode", "p_low": res.p_low, "u0": res.u0, "C_w": float(prof.e[np.argmin(prof.p)])}
        info.update(res.diagnostics)
    else:
        res = infer_distribution(prof)
        info = dict(res.summary(), method="quadrature")
        info.pop("residual_curve", None)
    save_csv(res.dist, out)
    return EXIT_OK, info


def cmd_simulate(args):
    eq = _load_eq(args.eq)
    out = _output(args.out)
    panel = simulate_panel(eq, _sample_for(args, eq))
    panel.save_csv(out)
    return EXIT_OK, {"records": len(panel), "n_w": panel.n_w, "min_earnings": float(panel.earnings.min())}


def _percentiles(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise InvalidInput(f"bad percentile list {text!r}") from None


def cmd_decompose(args):
    panel = MatchedPanel.load_csv(_input(args.panel))
    out = _output(args.out)
    dec = variance_decomposition(panel)
    dec.save_json(out)
    rows = coworker_table(panel, _percentiles(args.percentiles)) if panel.n_w > 1 else []
    return EXIT_OK, dict(
        dec.to_dict(),
        within_share=dec.within_share,
        coworker=[vars(r) for r in rows],
    )


def cmd_counterfactual(args):
    dw, df = _dist(args.workers), _dist(args.firms)
    out = _output(args.out)
    res = counterfactual(dw, df, _wage_constant(args), n_w=args.nw, n_teams=args.teams, seed=args.seed)
    res.decomposition.save_json(out)
    return (EXIT_OK if res.stable else EXIT_FAILED), dict(res.to_dict(), within_share=res.decomposition.within_share)


def figure1_rows(eq, n_z=101):
    """Employable worker band for firms on a grid of percentiles."""
    n, d = eq.n_w, eq.dist
    rows = []
    for q in np.linspace(0.0, 1.0, n_z):
        z = float(d.inv(q))
        if q < eq.p_low:
            pl = ph = 1.0 - n * q
            region = "Mz"
        elif q <= eq.p_high:
            if n == 2:
                lo, hi = employable_bounds(eq, min(max(z, eq.x_low), eq.x_high))
            else:
                lo, hi = eq.C / (z * eq.x_high ** (n - 1)), eq.x_high
            pl, ph = float(d.cdf(lo)), float(d.cdf(hi))
            region = "Mixed"
        else:
            pl, ph = (1.0 - q) / n, q
            region = "Mx"
        rows.append([float(q), z, pl, ph, float(d.inv(pl)), float(d.inv(ph)), region])
    return rows


def figure2_rows(eq, sample, n_branch=51):
    rows = []
    for b in branch_names(eq.n_w):
        for p in np.linspace(0.0, eq.p_low, n_branch):
            t = matching_set_point(eq, b, float(p))
            rows.append(list(t.percentiles) + list(t.levels) + [t.loss, b])
    mix = sample.mask("Mixed")
    for pc, lv in zip(sample.percentiles[mix], sample.levels[mix]):
        rows.append(list(pc) + list(lv) + [float(np.prod(lv)), "Mixed"])
    return rows


def cmd_figures(args):
    eq = _load_eq(args.eq)
    out = Path(args.out)
    if not out.is_dir():
        if not out.parent.is_dir():
            raise InvalidInput(f"cannot create output directory {out}")
        out.mkdir()
    n = eq.n_w
    write_rows(
        out / "figure1.csv",
        ["p_z", "z", "p_x_low", "p_x_high", "x_low", "x_high", "region"],
        figure1_rows(eq, args.nz),
    )
    sample = _sample_for(args, eq)
    names = [f"x{i + 1}" for i in range(n)] + ["z"]
    rows2 = figure2_rows(eq, sample)
    write_rows(out / "figure2.csv", [f"p_{c}" for c in names] + names + ["loss", "branch"], rows2)
    mixed = [r[-2] for r in rows2 if r[-1] == "Mixed"]
    dev = max((abs(v - eq.C) for v in mixed), default=0.0)
    return EXIT_OK, {"figure1_rows": args.nz, "figure2_rows": len(rows2), "max_mixed_loss_deviation": dev}


def cmd_oracle(args):
    if args.problem:
        prob = DiscreteProblem.load_csv(_input(args.problem))
    else:
        vals = [float(t) for t in args.values.split(",")]
        prob = DiscreteProblem(tuple(np.array(vals) for _ in range(args.nw)), np.array(vals))
    best = brute_force_oracle(prob, objective=args.objective)
    stables = stable_assignments(prob) if args.objective == "submodular" else []
    if args.out:
        best.save(prob, _output(args.out))
    print(f"aggregate output {num(best.aggregate_output)}")
    for s in stables:
        if not s.optimal:
            teams = " ".join("(" + ",".join(f"{v:g}" for v in t) + ")" for t in s.triplets)
            print(f"stable but suboptimal: {teams} output {num(s.output)}")
    return EXIT_OK, {
        "aggregate_output": best.aggregate_output,
        "aggregate_loss": best.aggregate_loss,
        "triplets": best.triplets(prob).tolist(),
        "stable_assignments": [
            {"triplets": np.asarray(s.triplets).tolist(), "output": s.output, "optimal": s.optimal} for s in stables
        ],
    }


# parser


def _common(p, out_default):
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", default=out_default, help="primary output path")
    p.add_argument("--config", help="INI file; its values are defaults that flags override")
    p.add_argument("--summary", help="summary JSON path (default <out>.summary.json)")


def _sampling(p):
    p.add_argument("--sample", help="sample CSV; generated from the equilibrium when omitted")
    p.add_argument("--m", type=int, default=3000, help="sample size when generating")
    p.add_argument("--tol-mix", dest="tol_mix", type=float, default=1e-3)


def build_parser():
    ap = argparse.ArgumentParser(prog="teamsort", description="Team sorting with substitutable workers.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve cutoffs, wages and firm values")
    _common(p, "eq.json")
    p.add_argument("--dist", default="uniform", help="uniform[:a,b] | beta:a,b | csv:path")
    p.add_argument("--nw", type=int, default=2, help="workers per team")
    p.add_argument("--cw", default="0", help="wage constant, or 'top-earnings' with --earnings")
    p.add_argument("--earnings", help="earnings CSV for --cw top-earnings")
    p.add_argument("--check", choices=("warn", "strict", "off"), default="warn")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sample", help="sample an assignment on the matching set")
    _common(p, "sample.csv")
    p.add_argument("--eq", required=True)
    p.add_argument("--m", type=int, default=3000)
    p.add_argument("--tol-mix", dest="tol_mix", type=float, default=1e-3)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("verify", help="check the dual certificate")
    _common(p, "report.json")
    p.add_argument("--eq", required=True)
    _sampling(p)
    p.add_argument("--grid", type=int, default=None, help="lattice points per axis (64 for two workers, else 32)")
    p.add_argument("--tol-s", dest="tol_s", type=float, default=None)
    p.add_argument("--tol-gap", dest="tol_gap", type=float, default=1e-3)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("infer", help="recover the type distribution from earnings")
    _common(p, "dist.csv")
    p.add_argument("--earnings", required=True, help="CSV with columns p,earnings")
    p.add_argument("--method", choices=("quadrature", "ode"), default="quadrature")
    p.add_argument("--eps", type=float, default=1e-6, help="regularization of the ODE route")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("simulate", help="price a sample into a matched panel")
    _common(p, "panel.csv")
    p.add_argument("--eq", required=True)
    _sampling(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("decompose", help="between/within variance of log earnings")
    _common(p, "decomposition.json")
    p.add_argument("--panel", required=True)
    p.add_argument("--percentiles", default="10,25,50,75,90,99")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("counterfactual", help="decomposition with separate worker and firm distributions")
    _common(p, "counterfactual.json")
    p.add_argument("--workers", required=True, help="worker distribution spec")
    p.add_argument("--firms", required=True, help="firm distribution spec")
    p.add_argument("--cw", default="1", help="wage constant, or 'top-earnings' with --earnings")
    p.add_argument("--earnings", help="earnings CSV for --cw top-earnings")
    p.add_argument("--nw", type=int, default=2)
    p.add_argument("--teams", type=int, default=600)
    p.set_defaults(func=cmd_counterfactual)

    p = sub.add_parser("figures", help="CSV data for the employable band and the matching set")
    _common(p, "figures")
    p.add_argument("--eq", required=True)
    _sampling(p)
    p.add_argument("--nz", type=int, default=101, help="firm percentiles in figure1.csv")
    p.set_defaults(func=cmd_figures)

    p = sub.add_parser("oracle", help="exhaustive optimum of a small discrete problem")
    _common(p, None)
    p.add_argument("--problem", help="CSV with columns x1,x2[,...],z")
    p.add_argument("--values", default=SMALL_EXAMPLE_VALUES, help="common sample for every column")
    p.add_argument("--nw", type=int, default=2)
    p.add_argument("--objective", choices=("submodular", "supermodular"), default="submodular")
    p.set_defaults(func=cmd_oracle)
    return ap


def _apply_config(parser, argv):
    """Use ``[common]`` and ``[<command>]`` INI sections as parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    cfg = configparser.ConfigParser()
    if not cfg.read(_input(known.config)):
        raise InvalidInput(f"cannot read config {known.config}")
    cmd = next((a for a in argv if not a.startswith("-")), None)
    sub = parser._subparsers._group_actions[0].choices.get(cmd)
    if sub is None:
        return
    values = {}
    for section in ("common", cmd):
        if cfg.has_section(section):
            values.update({k.replace("-", "_"): v for k, v in cfg.items(section)})
    dests = {a.dest for a in sub._actions}
    unknown = set(values) - dests
    if unknown:
        raise InvalidInput(f"unknown config keys for {cmd}: {sorted(unknown)}")
    sub.set_defaults(**values)
    # config satisfies required options
    for a in sub._actions:
        if a.dest in values:
            a.required = False


def _summary_path(args):
    if getattr(args, "summary", None):
        return Path(args.summary)
    if not getattr(args, "out", None):
        return Path("summary.json")
    out = Path(args.out)
    if args.command == "figures":
        return out / "summary.json"
    return out.with_name(out.name + ".summary.json")


def _early_failure(argv, message):
    """Summary for failures before the arguments are fully parsed."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--out")
    pre.add_argument("--summary")
    known, rest = pre.parse_known_args(argv)
    known.command = next((a for a in rest if not a.startswith("-")), None)
    summary = {"command": known.command, "error": message, "exit_code": EXIT_INVALID, "status": "failed"}
    try:
        path = _summary_path(known)
        if path.parent.is_dir():
            write_json(path, summary)
    except OSError:
        pass
    return EXIT_INVALID


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except (InvalidInput, configparser.Error) as e:
        print(f"teamsort: {e}", file=sys.stderr)
        return _early_failure(argv, str(e))
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        if not e.code:
            return EXIT_OK
        return _early_failure(argv, "invalid command line")

    summary = {"command": args.command, "seed": getattr(args, "seed", None)}
    try:
        code, info = args.func(args)
        summary.update(info)
    except InvalidInput as e:
        code, summary["error"] = EXIT_INVALID, str(e)
    except SolverError as e:
        code, summary["error"] = EXIT_FAILED, str(e)
        summary["diagnostics"] = {k: v for k, v in e.diagnostics.items() if np.ndim(v) == 0}
    except (TeamsortError, ValueError, OSError) as e:
        code, summary["error"] = EXIT_INVALID, str(e)
    summary["exit_code"] = code
    summary["status"] = "ok" if code == EXIT_OK else "failed"
    if "error" in summary:
        print(f"teamsort {args.command}: {summary['error']}", file=sys.stderr)
    try:
        path = _summary_path(args)
        if path.parent.is_dir():
            write_json(path, summary)
    except OSError as e:
        print(f"teamsort: cannot write summary: {e}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
