"""Command-line front end: ``intrahost analyze|simulate|verify|sweep SCENARIO``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import replace

import numpy as np

from . import __version__
from .equilibria import endemic_equilibrium
from .errors import IntrahostError, NonFiniteState, StepSizeUnderflow
from .outcome import (OutcomeKind, check_scstab, predict, run_experiment, sweep)
from .scenario import Scenario, ScenarioParseError, load_scenario
from .simulate import integrate

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_INTEGRATOR = 4
EXIT_MISMATCH = 5


def _short(v: float) -> str:
    return repr(float(round(v, 4)))


def _csv_writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _dump(text: str, path: str | None) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# -- analyze -----------------------------------------------------------------


def analysis(sc: Scenario) -> dict:
    spec = sc.spec
    pred = predict(spec)
    strains = []
    for i in range(spec.n):
        ee = endemic_equilibrium(spec, i)
        strains.append({
            "strain": i + 1,
            "R0": float(pred.r0s[i]),
            "T0": float(pred.t0s[i]),
            "xbar": None if ee is None else ee.xbar,
            "ybar": None if ee is None else ee.ybar.tolist(),
            "gbar": None if ee is None else ee.gbar,
            "mbar": None if ee is None else ee.mbar,
            "scstab": None if ee is None else check_scstab(spec, i, pred.report),
        })
    return {
        "xstar": spec.xstar,
        "R0": pred.r0,
        "alpha_star": pred.report.alpha_star,
        "strains": strains,
        "amg_condition": pred.amg_condition_holds,
        "prediction": pred.kind.value,
        "winner": None if pred.winner is None else pred.winner + 1,
        "summary": pred.describe(),
    }


def format_analysis(info: dict) -> str:
    out = [f"x* = {_short(info['xstar'])}", f"R0 = {_short(info['R0'])}"]
    for s in info["strains"]:
        head = f"strain {s['strain']}: R0 = {_short(s['R0'])}, T0 = {_short(s['T0'])}"
        if s["xbar"] is None:
            out.append(head + ", EE none")
            continue
        ybar = ", ".join(_short(v) for v in s["ybar"])
        out.append(f"{head}, EE x̄ = {_short(s['xbar'])}, ȳ = ({ybar}), "
                   f"ḡ = {_short(s['gbar'])}, m̄ = {_short(s['mbar'])}, "
                   f"SCstab {'holds' if s['scstab'] else 'fails'}")
    if info["amg_condition"] is not None:
        out.append(f"AMG condition {'holds' if info['amg_condition'] else 'fails'}")
    out.append(f"prediction: {info['summary']}")
    return "\n".join(out) + "\n"


def cmd_analyze(args) -> int:
    sc = load_scenario(args.scenario)
    info = analysis(sc)
    sys.stdout.write(format_analysis(info))
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump(info, fh, indent=2, ensure_ascii=False)
            fh.write("\n")
    return EXIT_OK


# -- simulate ----------------------------------------------------------------


def trajectory_header(spec) -> list[str]:
    cols = ["t", "x"]
    for i in range(spec.n):
        cols += [f"y_{j + 1}_s{i + 1}" for j in range(spec.k)] + [f"g_s{i + 1}", f"m_s{i + 1}"]
    return cols


def trajectory_csv(sc: Scenario, traj) -> str:
    buf = io.StringIO()
    buf.write(f"# scenario={sc.echo()}\n")
    w = _csv_writer(buf)
    w.writerow(trajectory_header(sc.spec))
    for t, row in zip(traj.times, traj.states):
        w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
    buf.write(f"# event={traj.event.describe()}\n")
    return buf.getvalue()


def cmd_simulate(args) -> int:
    sc = load_scenario(args.scenario)
    traj = integrate(sc.spec, sc.initial, sc.options)
    _dump(trajectory_csv(sc, traj), args.out)
    return EXIT_OK


# -- verify ------------------------------------------------------------------


def _v_dump(decrease, limit: int = 10) -> str:
    vals, times = decrease.values, decrease.times
    idx = np.unique(np.r_[np.arange(min(limit, vals.size)),
                          np.argmax(np.nan_to_num(np.diff(vals), nan=-np.inf)) + np.arange(2),
                          np.arange(max(0, vals.size - limit), vals.size)])
    idx = idx[idx < vals.size]
    lines = [f"  t={float(times[i])!r} V="
             + (repr(float(vals[i])) if np.isfinite(vals[i]) else "undefined (boundary)")
             for i in idx]
    return "\n".join(lines)


def cmd_verify(args) -> int:
    sc = load_scenario(args.scenario)
    opts = sc.options
    if args.t_end is not None:
        opts = replace(opts, t_end=args.t_end)
    rep = run_experiment(sc.spec, sc.initial, opts)
    pred = rep.prediction
    print(f"prediction: {pred.describe()}")
    if rep.invariant_face is not None and rep.matched is None:
        print(f"skipped: initial state lies on the invariant face ({rep.invariant_face}); "
              "it is excluded from the basin of the predicted equilibrium")
        return EXIT_OK
    if pred.kind is OutcomeKind.NON_GENERIC:
        print("FAIL: no unique winner is predicted (tied T0), nothing to verify")
        return EXIT_MISMATCH
    extinct = ", ".join(f"s{i + 1}={'extinct' if e else 'present'}"
                        for i, e in enumerate(rep.extinct))
    print(f"horizon: t = {float(rep.horizon)!r} (reruns {rep.reruns})")
    print(f"extinction: {extinct}")
    print(f"terminal relative error: {float(rep.terminal_rel_error)!r}")
    dec = rep.decrease
    print(f"{dec.function}: max increase {float(dec.max_increase)!r} (tolerance {float(dec.tolerance)!r}) "
          f"{'ok' if dec.passed else 'VIOLATED'}")
    if rep.matched and dec.passed:
        print("PASS")
        return EXIT_OK
    print("FAIL: " + ("simulation does not match the prediction" if not rep.matched
                      else "Lyapunov function increased along the trajectory"))
    print(f"{dec.function} samples:\n{_v_dump(dec)}")
    return EXIT_MISMATCH


# -- sweep -------------------------------------------------------------------


def sweep_csv(sc: Scenario, report, simulate: bool) -> str:
    n = sc.spec.n
    buf = io.StringIO()
    w = _csv_writer(buf)
    header = list(report.params) + ["R0"] + [f"R0_s{i + 1}" for i in range(n)]
    header += [f"T0_s{i + 1}" for i in range(n)] + ["prediction", "winner", "near_tie"]
    if simulate:
        header.append("match")
    w.writerow(header)
    for cell in report.cells:
        row = [repr(v) for v in cell.values]
        p = cell.prediction
        if p is None:
            row += [""] * (1 + 2 * n) + ["Invalid", "", ""]
        else:
            row += [repr(float(p.r0))] + [repr(float(v)) for v in p.r0s]
            row += [repr(float(v)) for v in p.t0s]
            row += [p.kind.value, "" if p.winner is None else str(p.winner + 1),
                    str(cell.near_tie).lower()]
        if simulate:
            row.append("" if cell.matched is None else str(cell.matched).lower())
        w.writerow(row)
    return buf.getvalue()


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario)
    lens = {len(args.param), len(args.start), len(args.stop), len(args.steps)}
    if len(lens) != 1:
        raise _Usage("--param, --from, --to and --steps must be given the same number of times")
    grid = {}
    for path, a, b, n in zip(args.param, args.start, args.stop, args.steps):
        if n < 1:
            raise _Usage(f"--steps must be >= 1, got {n}")
        grid[path] = [a] if n == 1 else np.linspace(a, b, n).tolist()
    report = sweep(sc.spec, grid, sc.options, simulate=args.simulate,
                   initial=sc.initial if sc.initial_given else None)
    _dump(sweep_csv(sc, report, args.simulate), args.out)
    if args.simulate and report.match_rate is not None:
        print(f"match rate {report.match_rate!r} over "
              f"{sum(c.matched is not None and not c.near_tie for c in report.cells)} cells; "
              f"{len(report.near_tie_cells)} near-tie cell(s) reported separately",
              file=sys.stderr)
    return EXIT_OK


class _Usage(IntrahostError, ValueError):
    pass


# -- entry point -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intrahost",
                                     description="Within-host multistrain malaria model toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="thresholds, equilibria and predicted outcome")
    p.add_argument("scenario")
    p.add_argument("--json", metavar="PATH", help="also write the report as JSON")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="integrate and write the trajectory as CSV")
    p.add_argument("scenario")
    p.add_argument("--out", metavar="PATH", help="CSV path (default: standard output)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="check the prediction against a simulation")
    p.add_argument("scenario")
    p.add_argument("--t-end", type=float, default=None, help="override the horizon")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("sweep", help="predict outcomes over a parameter grid")
    p.add_argument("scenario")
    p.add_argument("--param", action="append", required=True,
                   help="parameter path, e.g. strain1.beta or strain2.gammas.1 (repeatable)")
    p.add_argument("--from", dest="start", type=float, action="append", required=True)
    p.add_argument("--to", dest="stop", type=float, action="append", required=True)
    p.add_argument("--steps", type=int, action="append", required=True)
    p.add_argument("--out", metavar="PATH", help="CSV path (default: standard output)")
    p.add_argument("--simulate", action="store_true", help="also run each cell and report matches")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioParseError as exc:
        print(f"error: {args.scenario}: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (StepSizeUnderflow, NonFiniteState) as exc:
        print(f"integrator failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATOR
    except IntrahostError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
