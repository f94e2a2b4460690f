"""Command-line entry point: validate, solve, compare, hull-check, gen-instance."""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

from . import conic, hull, report
from .distflow import SweepError, is_exact, me_branch, me_des
from .feeder import FeederError, InstanceSpec, dumps_feeder, gen_instance, load_feeder, validate_radial
from .problem import ObjectiveKind, ProblemError, RelaxKind, solve_desos

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_SOLVER = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage, which here means solver failure
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _relax_list(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("empty relaxation list")
    for s in items:
        if s not in ("socp", "ch"):
            raise argparse.ArgumentTypeError(f"unknown relaxation {s!r}")
    return items


def _positive_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not x > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return x


def _count(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if n < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="chrelax", description="Convex-hull vs cone relaxations for storage scheduling on radial feeders.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, relax_multi=False):
        sp.add_argument("feeder", help="feeder JSON file")
        sp.add_argument("--objective", choices=[o.value for o in ObjectiveKind], default="f2")
        if relax_multi:
            sp.add_argument("--relax", type=_relax_list, default=["socp", "ch"])
        else:
            sp.add_argument("--relax", choices=[r.value for r in RelaxKind], default="ch")
        sp.add_argument("--snapshot", action="store_true", help="single period, no storage energy window")
        sp.add_argument("--period", type=int, default=0, help="period used by --snapshot")
        sp.add_argument("--format", choices=["csv", "json"], default="csv")
        sp.add_argument("--out", type=Path)
        sp.add_argument("--tol", type=_positive_float, default=1e-8)

    sp = sub.add_parser("validate", help="check topology and limits")
    sp.add_argument("feeder")
    sp.add_argument("--out", type=Path)

    sp = sub.add_parser("solve", help="solve one relaxation")
    common(sp)
    sp.add_argument("--plot-data", type=Path, help="write per-period voltage/storage/price CSV here")

    common(sub.add_parser("compare", help="compare relaxations on one feeder"), relax_multi=True)

    sp = sub.add_parser("hull-check", help="support-function check of the branch hull")
    sp.add_argument("--v-min", type=_positive_float, default=0.81)
    sp.add_argument("--v-max", type=_positive_float, default=1.21)
    sp.add_argument("--v-nom", type=_positive_float, default=1.0)
    sp.add_argument("--s-max", type=_positive_float, default=1.0)
    sp.add_argument("--directions", type=_count, default=200)
    sp.add_argument("--samples", type=_count, default=100000)
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", type=Path)

    sp = sub.add_parser("gen-instance", help="write a seeded synthetic feeder")
    sp.add_argument("--buses", type=int, required=True)
    sp.add_argument("--penetration", type=float, default=0.3)
    sp.add_argument("--horizon", type=_count, default=24)
    sp.add_argument("--n-pv", type=int)
    sp.add_argument("--n-des", type=int)
    sp.add_argument("--price", type=float, help="flat price instead of the daily curve")
    sp.add_argument("--seed", type=int, required=True)
    sp.add_argument("--out", type=Path)
    return p


def _write(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _settings(args) -> conic.SolverSettings:
    return conic.SolverSettings(tol=args.tol)


def cmd_validate(args) -> int:
    f = load_feeder(args.feeder)
    problems = validate_radial(f)
    if problems:
        for msg in problems:
            print(msg, file=sys.stderr)
        return EXIT_DOMAIN
    _write("radial: OK\n", args.out)
    return EXIT_OK


def cmd_solve(args) -> int:
    f = load_feeder(args.feeder)
    res = solve_desos(f, args.objective, args.relax, args.snapshot, args.period, _settings(args))
    if res.state is None:
        print(f"solver failure: {res.solution.status}", file=sys.stderr)
        return EXIT_SOLVER
    m1, m2 = me_branch(res.feeder, res.state), me_des(res.feeder, res.state)
    row = report.ExactnessReport(
        instance=f.name, objective=args.objective, relax=args.relax, status=res.solution.status,
        oov=res.solution.objective, me1=m1, me2=m2, exact=is_exact(m1, m2),
        solve_time=round(res.solution.solve_time, 2), seed=f.meta.get("seed"),
        default_bounds=bool(f.meta.get("default_bounds", False)))
    _write(report.emit([row], args.format), args.out)
    if args.plot_data is not None:
        args.plot_data.write_text(report.plot_data(res.feeder, res.state))
    return EXIT_OK


def cmd_compare(args) -> int:
    f = load_feeder(args.feeder)
    table = report.compare(f, args.objective, args.relax, snapshot=args.snapshot,
                           period=args.period, settings=_settings(args))
    _write(report.emit(table, args.format), args.out)
    if table.ordering_ok is False:
        print("warning: CH objective below SOCP objective", file=sys.stderr)
    if any(r.oov is None for r in table.rows):
        return EXIT_SOLVER
    return EXIT_OK


def cmd_hull_check(args) -> int:
    s_max = args.s_max
    h = hull.BranchHull.from_bounds(args.v_min, args.v_max, args.v_nom, s_max)
    samples = hull.sample_omega0(h, args.samples, args.seed)
    dirs = hull.random_directions(args.directions, args.seed)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("d1", "d2", "d3", "d4", "hull_support", "sample_support", "gap"))
    for d in dirs:
        hs = hull.support_value(h, d)
        ss = float((samples @ d).min())
        w.writerow([report._fmt(float(x)) for x in (*d, hs, ss, hs - ss)])
    _write(buf.getvalue(), args.out)
    return EXIT_OK


def cmd_gen_instance(args) -> int:
    spec = InstanceSpec(n_buses=args.buses, penetration=args.penetration, horizon=args.horizon,
                        n_pv=args.n_pv, n_des=args.n_des, price=args.price)
    _write(dumps_feeder(gen_instance(spec, args.seed)), args.out)
    return EXIT_OK


COMMANDS = {"validate": cmd_validate, "solve": cmd_solve, "compare": cmd_compare,
            "hull-check": cmd_hull_check, "gen-instance": cmd_gen_instance}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_DOMAIN
    try:
        return COMMANDS[args.command](args)
    except (FeederError, ProblemError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (SweepError, RuntimeError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
