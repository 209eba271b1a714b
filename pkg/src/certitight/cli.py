"""Command line interface: ``certitight <command> [flags]``.

Commands
--------
generate   write a synthetic problem setup as JSON
formulate  learn constraints (autotight) or templates (autotemplate) on an example
apply      apply a template library to new setups and test tightness
certify    check a candidate solution with a dual certificate
spectrum   eigenvalues of the SDP solution for growing constraint prefixes

Exit codes: 0 success (tight / certified), 2 negative outcome (not tight /
not certified), 1 error. Files are machine readable; stdout is a summary.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from .autotemplate import (
    AutoTemplateOptions,
    ReductionError,
    TemplateLibrary,
    apply_templates,
    autotemplate,
    importance_order,
    reduce_constraints,
)
from .autotight import (
    AutoTightOptions,
    assemble_constraints,
    autotight,
    compute_er,
    local_candidate,
    tightness_report,
)
from .conic import EPS_MAX, certify, eig_sym, solve_primal
from .liftprob import LiftedProblem, ProblemSetup
from .polymat import PolyMatrix, VarLayout
from .problems import FAMILIES, generate_setup, make_problem

RUN_REPORT_FIELDS = [
    "family",
    "seed",
    "n",
    "n_vars",
    "n_constraints_known",
    "n_constraints_applied",
    "rdg",
    "er",
    "p_star",
    "d_star",
    "q_hat",
    "cost_tight",
    "rank_tight",
    "t_learn_s",
    "t_apply_s",
    "t_solve_s",
    "status",
]
TIMING_FIELDS = ("t_learn_s", "t_apply_s", "t_solve_s")
#: largest violation of a primary constraint accepted for a candidate
FEASIBILITY_TOL = 1e-6


class CliError(Exception):
    """User-facing error, reported with exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would exit with 2, which means "not tight" here
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------------------
# argument handling


def _problem_flags(p: argparse.ArgumentParser, required: bool = True) -> None:
    g = p.add_argument_group("problem")
    g.add_argument("--problem", choices=sorted(FAMILIES) + ["roloc"], required=required, help="problem family id")
    g.add_argument("--setup", type=Path, help="load the setup from a JSON file instead of generating it")
    g.add_argument("--lifting", choices=["u", "z", "y"], help="substitution variant (stereo2d: u|z, roloc: z|y)")
    g.add_argument("--d", type=int, help="ambient dimension")
    g.add_argument("--n", type=int, help="problem size (positions, landmarks or points)")
    g.add_argument("--n-anchors", type=int, help="number of anchors (range-only)")
    g.add_argument("--noise", type=float, help="measurement noise standard deviation")
    g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")


def _learning_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("learning")
    g.add_argument("--rank-tol", type=float, help="fixed relative rank threshold instead of gap detection")
    g.add_argument("--oversample", type=float, default=0.2, help="sample oversampling ratio (default 0.2)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="certitight", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", help="write a synthetic setup")
    _problem_flags(gen)
    gen.add_argument("--out", type=Path, required=True)

    form = sub.add_parser("formulate", help="learn constraints or templates on an example setup")
    _problem_flags(form, required=False)
    _learning_flags(form)
    form.add_argument("--mode", choices=["autotight", "autotemplate"], default="autotemplate")
    form.add_argument("--reduce", action="store_true", help="compute the reduced constraint ordering")
    form.add_argument("--reduce-target", choices=["cost", "rank"], default="cost")
    form.add_argument("--max-set-size", type=int, default=4, help="largest variable set, counting h")
    form.add_argument("--out", type=Path, help="output JSON (templates or learned constraints)")
    form.add_argument("--report", type=Path, help="append a run-report row to this CSV")
    form.add_argument("--no-timing", action="store_true", help="leave timing columns empty")

    app = sub.add_parser("apply", help="apply templates to new setups")
    _problem_flags(app, required=False)
    app.add_argument("--templates", type=Path, required=True)
    app.add_argument("--reduced", action="store_true", help="use only the stored reduced templates")
    app.add_argument("--reduce-target", choices=["cost", "rank"], default="cost")
    app.add_argument("--sweep", help="sizes as A..B or A..B:STEP; one row per size")
    app.add_argument("--report", type=Path, help="append run-report rows to this CSV")
    app.add_argument("--no-timing", action="store_true", help="leave timing columns empty")

    cert = sub.add_parser("certify", help="certify a candidate solution")
    _problem_flags(cert, required=False)
    _learning_flags(cert)
    cert.add_argument("--candidate", type=Path, help='JSON with "theta" or lifted "x"; default: local solve')
    cert.add_argument("--templates", type=Path, help="template library providing redundant constraints")
    cert.add_argument("--certify-relaxation", choices=["hx", "h"], default="hx")
    cert.add_argument("--eps-max", type=float, default=EPS_MAX)
    cert.add_argument("--out", type=Path, help="certificate JSON")

    spec = sub.add_parser("spectrum", help="SDP eigenvalues per constraint prefix")
    _problem_flags(spec, required=False)
    _learning_flags(spec)
    spec.add_argument("--templates", type=Path, help="template library (default: learn on the setup)")
    spec.add_argument("--prefixes", help="comma separated redundant-constraint counts")
    spec.add_argument("--out", type=Path, help="CSV with one column per prefix")
    return parser


def _family(args) -> str:
    fam = args.problem
    if fam is None:
        raise CliError("either --problem or --setup is required")
    lifting = args.lifting
    if fam.startswith("roloc"):
        if lifting is not None:
            if lifting not in ("z", "y"):
                raise CliError("range-only lifting must be z or y")
            return f"roloc-{lifting}"
        return "roloc-z" if fam == "roloc" else fam
    if fam.startswith("stereo2d") and lifting is not None:
        if lifting not in ("u", "z"):
            raise CliError("stereo2d lifting must be u or z")
        return "stereo2d" if lifting == "z" else "stereo2d-u"
    if lifting is not None:
        raise CliError(f"--lifting does not apply to {fam}")
    return fam


def _setup(args, n: int | None = None) -> ProblemSetup:
    if getattr(args, "setup", None):
        try:
            return ProblemSetup.from_json(Path(args.setup).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read setup {args.setup}: {exc}") from exc
    try:
        return generate_setup(
            _family(args), n=n if n is not None else args.n, noise=args.noise, seed=args.seed, d=args.d,
            n_anchors=args.n_anchors,
        )
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _problem(args, n: int | None = None) -> LiftedProblem:
    try:
        return make_problem(_setup(args, n))
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_library(path: Path) -> TemplateLibrary:
    try:
        obj = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read template library {path}: {exc}") from exc
    if obj.get("mode") == "autotight":
        raise CliError(f"{path} holds constraints learned for one setup, not templates")
    try:
        return TemplateLibrary.from_dict(obj)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _sweep(text: str) -> list[int]:
    try:
        rng, _, step = text.partition(":")
        a, b = (int(v) for v in rng.split(".."))
        s = int(step) if step else 1
    except ValueError as exc:
        raise CliError(f"--sweep expects A..B or A..B:STEP, got {text!r}") from exc
    if a < 1 or b < a or s < 1:
        raise CliError(f"invalid sweep range {text!r}")
    return list(range(a, b + 1, s))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("CERTITIGHT_THREADS", "1")))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# output helpers


def _write_json(path: Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=1) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_rows(path: Path, rows: Sequence[dict]) -> None:
    """Append rows to a run-report CSV, writing the header for a new file."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(RUN_REPORT_FIELDS)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in RUN_REPORT_FIELDS])


def _row(problem, report, n_known, n_applied, times, status, timing=True) -> dict:
    row = {
        "family": problem.family,
        "seed": problem.setup.seed,
        "n": problem.setup.n,
        "n_vars": problem.layout.size,
        "n_constraints_known": n_known,
        "n_constraints_applied": n_applied,
        "rdg": report.rdg,
        "er": report.er,
        "p_star": report.p_star,
        "d_star": report.d_star,
        "q_hat": report.q_hat,
        "cost_tight": report.cost_tight,
        "rank_tight": report.rank_tight,
        "status": status,
    }
    for k in TIMING_FIELDS:
        row[k] = times.get(k) if timing else None
    return row


def _summary(report) -> str:
    return (
        f"{report.outcome}: RDG={report.rdg:.3e} ER={report.er:.3e} "
        f"q_hat={report.q_hat:.6g} d*={report.d_star:.6g} constraints={report.n_constraints}"
    )


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    setup = _setup(args)
    _write_json(args.out, setup.to_dict())
    print(f"wrote {setup.family} setup (n={setup.n}) to {args.out}")
    return 0


def cmd_formulate(args) -> int:
    problem = _problem(args)
    t0 = time.perf_counter()
    if args.mode == "autotemplate":
        opts = AutoTemplateOptions(
            oversample=args.oversample,
            rank_tol=args.rank_tol,
            seed=args.seed,
            max_set_size=args.max_set_size,
            reduce=args.reduce,
            reduce_targets=(args.reduce_target,),
        )
        res = autotemplate(problem, opts)
        report, lib = res.report, res.library
        lib.provenance["example_report"] = report.to_dict()
        lib.provenance["setup"] = problem.setup.to_dict()
        out = lib.to_dict()
        n_known, n_applied = res.n_known, len(res.constraints) - res.n_known
        print(f"learned {len(lib)} templates on {res.sets_used} variable sets")
        for vs, ts in lib.sets:
            print(f"  {vs.label()}: {len(ts)}")
        if lib.reduction:
            print(f"reduced: {lib.reduction.get(f'prefix_{args.reduce_target}')} templates suffice")
    else:
        opts = AutoTightOptions(oversample=args.oversample, rank_tol=args.rank_tol, seed=args.seed)
        basis, report = autotight(problem, opts)
        known = problem.known_constraints()
        constraints = assemble_constraints(known, basis.matrices())
        n_known, n_applied = len(known), len(constraints) - len(known)
        reduction = None
        if args.reduce and report.cost_tight:
            local = local_candidate(problem, np.random.default_rng(args.seed + 1))
            try:
                r = reduce_constraints(problem, constraints, problem.lift(local.theta), local.cost, n_known,
                                       args.reduce_target)
                reduction = {"order": r.order, f"prefix_{args.reduce_target}": r.prefix}
                print(f"reduced: {r.prefix} of {n_applied} learned constraints suffice")
            except ReductionError as exc:
                print(f"reduction skipped: {exc}")
        out = {
            "family": problem.family,
            "mode": "autotight",
            "seed": args.seed,
            "layout": problem.layout.to_list(),
            "n_learned": len(basis),
            "n_known": n_known,
            "constraints": [[list(t) for t in A.to_triplets()] for A in constraints[n_known:]],
            "reduction": reduction,
            "report": report.to_dict(),
            "setup": problem.setup.to_dict(),
        }
        print(f"learned {len(basis)} constraints ({n_applied} independent of the known ones)")
    t_learn = time.perf_counter() - t0
    print(_summary(report))
    if args.out:
        _write_json(args.out, out)
    if args.report:
        status = report.outcome
        write_rows(args.report, [_row(problem, report, n_known, n_applied, {"t_learn_s": t_learn}, status,
                                      not args.no_timing)])
    return 0 if report.cost_tight else 2


def _apply_one(lib: TemplateLibrary, args, n: int | None) -> dict:
    problem = _problem(args, n)
    if problem.family != lib.family:
        raise CliError(f"library is for {lib.family!r} but the problem is {problem.family!r}")
    t0 = time.perf_counter()
    constraints = apply_templates(lib, problem)
    t_apply = time.perf_counter() - t0
    n_known = len(problem.known_constraints())
    local = local_candidate(problem, np.random.default_rng(args.seed + 1))
    t1 = time.perf_counter()
    report, sol = tightness_report(problem, constraints, local.cost, n_known=n_known)
    t_solve = time.perf_counter() - t1
    times = {"t_learn_s": 0.0, "t_apply_s": t_apply, "t_solve_s": t_solve}
    return _row(problem, report, n_known, len(constraints) - n_known, times, report.outcome, not args.no_timing)


def cmd_apply(args) -> int:
    lib = _load_library(args.templates)
    if args.reduced:
        try:
            lib = lib.reduced(args.reduce_target)
        except ValueError as exc:
            raise CliError(str(exc)) from exc
    sizes = _sweep(args.sweep) if args.sweep else [None]
    with ThreadPoolExecutor(max_workers=_workers()) as pool:
        rows = list(pool.map(lambda n: _apply_one(lib, args, n), sizes))
    for r in rows:
        print(
            f"n={r['n']}: {r['status']} RDG={r['rdg']:.3e} ER={r['er']:.3e} "
            f"constraints={r['n_constraints_known']}+{r['n_constraints_applied']}"
        )
    if args.report:
        write_rows(args.report, rows)
    return 0 if all(r["cost_tight"] for r in rows) else 2


def _redundant_constraints(args, problem: LiftedProblem) -> list[PolyMatrix]:
    """Known constraints plus templates (if given) or constraints learned on the setup."""
    if getattr(args, "templates", None):
        lib = _load_library(args.templates)
        if lib.family != problem.family:
            raise CliError(f"library is for {lib.family!r} but the problem is {problem.family!r}")
        return apply_templates(lib, problem)
    basis, _ = autotight(problem, AutoTightOptions(oversample=args.oversample, rank_tol=args.rank_tol, seed=args.seed))
    return assemble_constraints(problem.known_constraints(), basis.matrices())


def _candidate(args, problem: LiftedProblem) -> np.ndarray:
    if args.candidate is None:
        local = local_candidate(problem, np.random.default_rng(args.seed + 1))
        return problem.lift(local.theta)
    try:
        obj = json.loads(Path(args.candidate).read_text())
        if "x" in obj:
            x = np.asarray(obj["x"], dtype=float)
        else:
            x = problem.lift(np.asarray(obj["theta"], dtype=float))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CliError(f"cannot read candidate {args.candidate}: {exc}") from exc
    if x.shape != (problem.layout.size,):
        raise CliError(f"candidate has length {x.size}, expected {problem.layout.size}")
    return x


def check_feasible(problem: LiftedProblem, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> float:
    """Largest violation of ``h = 1`` and the primary constraints at ``x``."""
    viol = abs(x[0] - 1.0)
    for A in problem.known_constraints()[1:]:
        viol = max(viol, abs(A.quad(x)))
    if viol > tol:
        raise CliError(f"candidate violates the primary constraints by {viol:.2e} (> {tol:.0e})")
    return viol


def cmd_certify(args) -> int:
    problem = _problem(args)
    x = _candidate(args, problem)
    check_feasible(problem, x)
    constraints = _redundant_constraints(args, problem)
    cert = certify(problem.cost_matrix(), constraints, x, eps_max=args.eps_max, relaxation=args.certify_relaxation)
    out = cert.to_dict()
    out.update({"family": problem.family, "cost": float(problem.cost_matrix().quad(x)), "n_constraints": len(constraints)})
    print(
        f"{'certified' if cert.certified else 'not certified'}: eps={cert.eps:.3e} "
        f"min eig(H)={cert.min_eig_H:.3e} cost={out['cost']:.6g}"
    )
    if args.out:
        _write_json(args.out, out)
    return 0 if cert.certified else 2


def cmd_spectrum(args) -> int:
    problem = _problem(args)
    constraints = _redundant_constraints(args, problem)
    n_known = len(problem.known_constraints())
    M = len(constraints) - n_known
    local = local_candidate(problem, np.random.default_rng(args.seed + 1))
    x_hat = problem.lift(local.theta)
    Q = problem.cost_matrix()
    order, _ = importance_order(problem, constraints, x_hat, n_known, Q)
    if args.prefixes:
        try:
            prefixes = [min(int(v), M) for v in args.prefixes.split(",")]
        except ValueError as exc:
            raise CliError(f"--prefixes expects integers, got {args.prefixes!r}") from exc
    else:
        prefixes = {0, M}
        for target in ("cost", "rank"):
            try:
                prefixes.add(reduce_constraints(problem, constraints, x_hat, local.cost, n_known, target).prefix)
            except ReductionError:
                pass
        prefixes = sorted(prefixes)
    known, redundant = constraints[:n_known], constraints[n_known:]
    columns = []
    for k in prefixes:
        sol = solve_primal(Q, known + [redundant[i] for i in order[:k]])
        eigs = eig_sym(sol.X)[0]
        columns.append(eigs)
        er = compute_er(sol.X) if np.all(np.isfinite(eigs)) and eigs[0] > 0 else float("nan")
        print(f"prefix {k}: d*={sol.d_star:.6g} ER={er:.3e} top eigenvalues {np.array2string(eigs[:3], precision=3)}")
    if args.out:
        with Path(args.out).open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index"] + [f"prefix_{k}" for k in prefixes])
            for i in range(problem.layout.size):
                w.writerow([i] + [repr(float(c[i])) for c in columns])
    return 0


COMMANDS = {
    "generate": cmd_generate,
    "formulate": cmd_formulate,
    "apply": cmd_apply,
    "certify": cmd_certify,
    "spectrum": cmd_spectrum,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except CliError as exc:
        print(f"certitight: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit code 1
        print(f"certitight: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
