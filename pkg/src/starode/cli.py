"""Command-line front end: ``starode {solve,convergence,kernel,verify}``.

Exit codes: 0 success, 1 verification failure, 2 input/usage error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import re
import sys
import time
from pathlib import Path

import numpy as np

from .dsl import ExprEvalError, ProblemError, load_document, parse_expr
from .kernels import KernelMatrix, estimate_decay, from_univariate, pk_theta_matrix, theta_matrix
from .legendre import EvaluationError, project_univariate
from .oracle import IntegratorConfig, NonConvergenceError, integrate
from .solver import SingularSystemError, solve_ode

log = logging.getLogger("starode")

EXIT_OK, EXIT_VERIFY, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _floats(text: str, name: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated numbers, got {text!r}") from None


def _ints(text: str, name: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"{name}: expected comma-separated integers, got {text!r}") from None


def _read_input(path: str | None) -> str:
    if path is None:
        raise UsageError("--input is required")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"input file not found: {path}")
    return p.read_text(encoding="utf-8")


def _open_output(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    p = Path(path)
    if not p.parent.exists():
        raise UsageError(f"output directory does not exist: {p.parent}")
    return p.open("w", encoding="utf-8", newline=""), True


def _document(args):
    doc = load_document(_read_input(args.input))
    if args.grid is not None:
        grid = _floats(args.grid, "--grid")
        if not grid or any(not 0.0 <= g <= 1.0 for g in grid) or grid != sorted(grid):
            raise UsageError("--grid must be sorted values in [0, 1]")
        doc.t_grid = grid
    if getattr(args, "m", None) is not None:
        if args.m < 2:
            raise UsageError("--m must be >= 2")
        doc.M = args.m
    return doc


def _labels(prefix: str, N: int) -> list[str]:
    return [f"{prefix}_{i}_{j}" for i in range(N) for j in range(N)]


def cmd_solve(args, out) -> int:
    doc = _document(args)
    problem = doc.to_problem()
    report = solve_ode(problem, doc.t_grid, neumann=args.neumann or doc.neumann)
    header = ["t"] + _labels("U", doc.N)
    ref = None
    if not args.no_oracle:
        ref = integrate(problem, doc.t_grid, IntegratorConfig(rel_tol=doc.rel_tol))
        header += _labels("oracle", doc.N) + ["abs_err"]
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for t in report.t_grid:
        U = report.U_eval[t]
        row = [_fmt(t)] + [_fmt(v) for v in U.ravel()]
        if ref is not None:
            R = ref[t]
            row += [_fmt(v) for v in R.ravel()] + [_fmt(float(np.abs(U - R).max()))]
        w.writerow(row)
    log.info("M=%d residual=%.3e cond=%.3e", report.M, report.residual_norm, report.condition_estimate)
    if report.neumann_gap is not None:
        log.info("neumann gap=%.3e after %d terms", report.neumann_gap, report.neumann_terms)
    return EXIT_OK


def cmd_convergence(args, out) -> int:
    doc = _document(args)
    if args.m_list is None:
        raise UsageError("--m-list is required")
    Ms = _ints(args.m_list, "--m-list")
    if not Ms or any(m < 2 for m in Ms) or any(b <= a for a, b in zip(Ms, Ms[1:])):
        raise UsageError("--m-list must be strictly ascending integers >= 2")
    base = doc.to_problem()
    ref = integrate(base, doc.t_grid, IntegratorConfig(rel_tol=doc.rel_tol))
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["M", "max_error", "solve_seconds"])
    for M in Ms:
        t0 = time.perf_counter()
        report = solve_ode(base.with_M(M), doc.t_grid)
        elapsed = time.perf_counter() - t0
        err = max(float(np.abs(report.U_eval[t] - ref[t]).max()) for t in report.t_grid)
        w.writerow([str(M), _fmt(err), f"{elapsed:.6f}"])
    return EXIT_OK


_KIND = re.compile(r"^\s*(theta|pk\s*\(\s*(\d+)\s*\)|from-expr\s*\((.*)\))\s*$", re.S)


def _kernel(kind: str, M: int) -> KernelMatrix:
    m = _KIND.match(kind)
    if m is None:
        raise UsageError(f"unknown kernel kind {kind!r}; use theta, pk(K) or from-expr(EXPR)")
    if m.group(1) == "theta":
        return theta_matrix(M)
    if m.group(2) is not None:
        return pk_theta_matrix(int(m.group(2)), M)
    expr = parse_expr(m.group(3))
    return from_univariate(project_univariate(expr, M), M)


def cmd_kernel(args, out) -> int:
    M = 40 if args.m is None else args.m
    if M < 1:
        raise UsageError("--m must be >= 1")
    F = _kernel(args.kind, M)
    out.write(F.to_csv())
    if M >= 8:
        K, rho = estimate_decay(F)
        out.write(f"# decay K={_fmt(K)} rho={_fmt(rho)}\n")
    else:
        out.write("# decay unavailable for M < 8\n")
    return EXIT_OK


def cmd_verify(args, out) -> int:
    from .verify import run_checks

    checks = run_checks(args.level)
    for c in checks:
        out.write(c.line() + "\n")
    failed = [c for c in checks if not c.passed]
    out.write(f"{len(checks) - len(failed)}/{len(checks)} checks passed\n")
    return EXIT_VERIFY if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="starode", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def io(p, needs_input=True):
        if needs_input:
            p.add_argument("--input", metavar="PATH", help="JSON problem file")
        p.add_argument("--output", metavar="PATH", help="output CSV (default: stdout)")

    p = sub.add_parser("solve", help="solve a problem file and compare with the Runge-Kutta oracle")
    io(p)
    p.add_argument("--m", type=int, help="truncation order M")
    p.add_argument("--grid", help="evaluation points a,b,c in [0, 1]")
    p.add_argument("--no-oracle", action="store_true", help="skip the reference integrator")
    p.add_argument("--neumann", action="store_true", help="also report the Neumann-series gap")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="max error against the oracle for several M")
    io(p)
    p.add_argument("--m-list", help="ascending truncation orders a,b,c")
    p.add_argument("--grid", help="evaluation points a,b,c in [0, 1]")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("kernel", help="dump a coefficient matrix as CSV")
    io(p, needs_input=False)
    p.add_argument("--kind", required=True, help="theta | pk(K) | from-expr(EXPR)")
    p.add_argument("--m", type=int, help="matrix size M (default 40)")
    p.set_defaults(func=cmd_kernel)

    p = sub.add_parser("verify", help="run the built-in consistency checks")
    io(p, needs_input=False)
    p.add_argument("--level", choices=("quick", "full"), default="quick")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        out, close = _open_output(args.output)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args, out)
    except (ExprEvalError, EvaluationError, SingularSystemError, NonConvergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ProblemError, UsageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        if close:
            out.close()


if __name__ == "__main__":
    sys.exit(main())
