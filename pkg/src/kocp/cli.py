"""Command-line front end.

Every subcommand builds a report dictionary with a ``verdict`` field; the
exit status is derived from the verdict alone (0 success, 1 infeasible or
non-member, 2 numerical failure, 3 bad input).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .cones import (
    dual_membership,
    factor_width2_decompose,
    is_sdd,
    primal_margin,
    verify_decomposition,
    verify_embedding,
)
from .errors import InputError, KocpError, NumericalError
from .matrix import TOL_PSD, sym_from_json
from .polynomial import GramCertificate, Polynomial, certify_kddsos, verify_certificate
from .solver import (
    SolverOptions,
    hierarchy_scan,
    problem_from_json,
    problem_to_json,
    socp_to_sdd,
    solve,
)
from .special import NormConePoint, cp_membership, cpp_membership, normcone_k_membership
from .structures import make_cone

EXIT_CODES = {
    "member": 0, "optimal": 0, "feasible": 0, "valid": 0, "ok": 0,
    "non-member": 1, "infeasible": 1, "unbounded": 1, "invalid": 1, "violations": 1,
    "numerical-failure": 2, "max-iter": 2,
    "input-error": 3,
}


class _Parser(argparse.ArgumentParser):
    """Argument errors exit with the input-error status instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CODES["input-error"])


def load_json(path) -> object:
    """Read a JSON file; syntax errors are reported with line and column."""
    text = Path(path).read_text()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None


def _cone_kwargs(args) -> dict:
    return {"force": args.force_size}


def _solver_options(args) -> SolverOptions:
    return SolverOptions(tol=args.tol) if args.tol is not None else SolverOptions()


def _load_point(path):
    """A symmetric matrix, a plain vector, ``{"vector": [...]}`` or a norm-cone point."""
    obj = load_json(path)
    if isinstance(obj, list):
        return np.asarray(obj, dtype=float)
    if isinstance(obj, dict) and "t" in obj:
        return NormConePoint.from_json(obj)
    if isinstance(obj, dict) and "vector" in obj:
        return np.asarray(obj["vector"], dtype=float)
    return sym_from_json(obj)


def cmd_check(args) -> dict:
    point = _load_point(args.matrix)
    family = args.cone
    side = "dual" if args.dual else "primal"
    report = {"family": family, "k": args.k, "side": side}
    if family.startswith("norm:"):
        if not isinstance(point, NormConePoint):
            raise InputError("norm-cone checks need a point {'t': ..., 'x': [...]} or {'t': ..., 'X': {...}}")
        member, margin = normcone_k_membership(point, family[5:], point.ambient, args.k, side,
                                               tol=args.tol, force=args.force_size)
        report.update(d=point.ambient, margin=margin)
    elif family in ("cp", "cpp"):
        if args.dual:
            raise InputError("dual-side checks are not available for cp/cpp")
        A = np.asarray(point, dtype=float)
        if A.ndim != 2 or args.k != A.shape[0]:
            raise InputError("cp/cpp checks test the base cone: pass a matrix and --k equal to its size")
        if family == "cp":
            res = cp_membership(A, seed=args.seed)
            member, margin = res.member, res.margin
            if res.split is not None:
                report["split"] = {"S": _matrix(res.split[0]), "N": _matrix(res.split[1])}
        else:
            member, margin = cpp_membership(A, args.tol), None
        report.update(d=A.shape[0], margin=margin)
    else:
        if isinstance(point, NormConePoint):
            raise InputError(f"{family} checks need a matrix or a vector, not a norm-cone point")
        d = point.shape[0]
        spec = make_cone(family, d, args.k, args.J, **_cone_kwargs(args))
        report["d"] = d
        if args.dual:
            member, margin = dual_membership(point, spec)
            if args.tol is not None:
                member = margin >= -args.tol
        else:
            member, margin, decomposition = primal_margin(point, spec, tol=args.tol or 1e-9)
            if decomposition is not None and member:
                report["decomposition"] = decomposition.to_json()
        report["margin"] = margin
    report["verdict"] = "member" if member else "non-member"
    return report


def _matrix(a):
    return [[float(v) for v in row] for row in np.asarray(a)]


def cmd_decompose(args) -> dict:
    point = _load_point(args.matrix)
    if isinstance(point, NormConePoint):
        raise InputError("decompose needs a matrix or a vector")
    d = point.shape[0]
    spec = make_cone(args.cone, d, args.k, args.J, **_cone_kwargs(args))
    report = {"family": args.cone, "d": d, "k": args.k}
    decomposition = None
    if args.cone == "psd" and args.k == 2 and args.J in ("default", "full"):
        sdd, _ = is_sdd(point)
        if sdd:
            decomposition = factor_width2_decompose(point)
            report["method"] = "scaled-diagonal-dominance"
    if decomposition is None:
        member, margin, decomposition = primal_margin(point, spec, tol=args.tol or 1e-9)
        report.update(method="barrier", margin=margin)
        if not member:
            decomposition = None
    if decomposition is None:
        report["verdict"] = "non-member"
        return report
    valid, recon, block_margin = verify_decomposition(point, decomposition, spec)
    report.update(decomposition=decomposition.to_json(), reconstruction_error=recon, min_block_margin=block_margin)
    report["verdict"] = "member" if valid else "non-member"
    return report


def _solution_verdict(status: str) -> str:
    return status if status in EXIT_CODES else "numerical-failure"


def cmd_solve(args) -> dict:
    prob = problem_from_json(load_json(args.problem), **_cone_kwargs(args))
    sol = solve(prob, _solver_options(args))
    return {"problem": str(args.problem), "solution": sol.to_json(), "verdict": _solution_verdict(sol.status)}


def cmd_scan(args) -> dict:
    prob = problem_from_json(load_json(args.problem), **_cone_kwargs(args))
    kmax = args.kmax or prob.cone.d
    if not 1 <= args.kmin <= kmax <= prob.cone.d:
        raise InputError(f"need 1 <= kmin <= kmax <= d = {prob.cone.d}")
    scan = hierarchy_scan(prob, range(args.kmin, kmax + 1), _solver_options(args))
    statuses = [st for _, _, st in scan.entries]
    verdict = "ok"
    if any(EXIT_CODES.get(st, 2) == 2 for st in statuses):
        verdict = "numerical-failure"
    elif scan.violations:
        verdict = "violations"
    out = scan.to_json()
    out["objectives"] = [e["objective"] for e in out["entries"]]
    out["verdict"] = verdict
    return out


def cmd_certify_poly(args) -> dict:
    p = Polynomial.from_json(load_json(args.polynomial))
    feasible, cert = certify_kddsos(p, args.k, opts=_solver_options(args), prune=not args.no_prune,
                                    force=args.force_size)
    report = {"polynomial": str(args.polynomial), "k": args.k}
    if not feasible:
        report["verdict"] = "infeasible"
        return report
    ok, err = verify_certificate(p, cert)
    report.update(basis_size=len(cert.basis), coefficient_error=err, verified=ok, certificate=cert.to_json())
    if args.out:
        Path(args.out).write_text(json.dumps(cert.to_json(), indent=2, sort_keys=True) + "\n")
    report["verdict"] = "feasible" if ok else "numerical-failure"
    return report


def cmd_verify_cert(args) -> dict:
    p = Polynomial.from_json(load_json(args.polynomial))
    cert = GramCertificate.from_json(load_json(args.certificate))
    ok, err = verify_certificate(p, cert)
    return {"coefficient_error": err, "verdict": "valid" if ok else "invalid"}


def cmd_verify_embedding(args) -> dict:
    report = verify_embedding(args.family, args.d, args.k, samples=args.samples, seed=args.seed,
                              tol=args.tol if args.tol is not None else TOL_PSD)
    out = report.to_json()
    out["failures"] = report.failures
    out["verdict"] = "ok" if report.violations == 0 else "violations"
    return out


def _socp_from_json(obj):
    def arr(v, name):
        try:
            return np.asarray(v, dtype=float)
        except (TypeError, ValueError):
            raise InputError(f"{name} must be numeric") from None

    try:
        objective = arr(obj["objective"], "objective")
        cones = []
        for i, c in enumerate(obj["cones"]):
            where = f"cones[{i}]"
            A = np.atleast_2d(arr(c["A"], f"{where}.A"))
            cones.append((A, arr(c["b"], f"{where}.b"), arr(c["c"], f"{where}.c"), float(c["d"])))
        equalities = None
        if obj.get("equalities"):
            eq = obj["equalities"]
            equalities = (np.atleast_2d(arr(eq["B"], "equalities.B")), arr(eq["e"], "equalities.e"))
    except KeyError as exc:
        raise InputError(f"SOCP JSON: missing field {exc}") from None
    except TypeError as exc:
        raise InputError(f"SOCP JSON: {exc}") from None
    return cones, objective, equalities


def cmd_cast_socp(args) -> dict:
    cones, objective, equalities = _socp_from_json(load_json(args.socp))
    prob = socp_to_sdd(cones, objective, equalities)
    report = {"problem": problem_to_json(prob)}
    if not args.solve:
        report["verdict"] = "ok"
        return report
    sol = solve(prob, _solver_options(args))
    report["solution"] = sol.to_json()
    report["verdict"] = _solution_verdict(sol.status)
    return report


COMMANDS = {
    "check": cmd_check,
    "decompose": cmd_decompose,
    "solve": cmd_solve,
    "scan": cmd_scan,
    "certify-poly": cmd_certify_poly,
    "verify-cert": cmd_verify_cert,
    "verify-embedding": cmd_verify_embedding,
    "cast-socp": cmd_cast_socp,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="emit the report as JSON")
    common.add_argument("--seed", type=int, default=0, help="seed for every randomized check")
    common.add_argument("--tol", type=float, default=None, help="override the default tolerance")
    common.add_argument("--force-size", action="store_true", help="allow index families above the size cap")
    common.add_argument("--timing", action="store_true", help="include wall time in the report")

    parser = _Parser(prog="kocp", description="k-th order cone membership, programs and certificates")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("check", parents=[common], help="cone or dual-cone membership of a matrix/vector")
    p.add_argument("--cone", default="psd", help="psd, soc, cp, cpp or norm:<name>")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--J", default="default", help="index map: default, full or soc")
    p.add_argument("--dual", action="store_true", help="test the dual cone")
    p.add_argument("--matrix", required=True, help="JSON file with the point")

    p = sub.add_parser("decompose", parents=[common], help="block decomposition of a cone member")
    p.add_argument("--cone", default="psd", choices=["psd", "soc"])
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--J", default="default")
    p.add_argument("--matrix", required=True)

    p = sub.add_parser("solve", parents=[common], help="solve a problem file")
    p.add_argument("problem")

    p = sub.add_parser("scan", parents=[common], help="solve a problem over orders kmin..kmax")
    p.add_argument("problem")
    p.add_argument("--kmin", type=int, default=1)
    p.add_argument("--kmax", type=int, default=None)

    p = sub.add_parser("certify-poly", parents=[common], help="search for a kDDSOS certificate")
    p.add_argument("polynomial")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--out", help="write the certificate JSON here")
    p.add_argument("--no-prune", action="store_true", help="keep the full basis for homogeneous inputs")

    p = sub.add_parser("verify-cert", parents=[common], help="check a certificate by expansion")
    p.add_argument("polynomial")
    p.add_argument("certificate")

    p = sub.add_parser("verify-embedding", parents=[common], help="audit the embedding property")
    p.add_argument("--family", required=True, help="psd, dd, sdd, soc or factor-width:<l>")
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--samples", type=int, default=100)

    p = sub.add_parser("cast-socp", parents=[common], help="cast an SOCP to a factor-width-2 program")
    p.add_argument("socp")
    p.add_argument("--solve", action="store_true", help="also solve the cast program")
    return parser


def _clean(obj):
    """Make numpy scalars and non-finite floats JSON friendly."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else None
    return obj


def _render(report: dict, as_json: bool) -> str:
    if as_json:
        return json.dumps(report, indent=2, sort_keys=True)
    lines = []
    for key, value in report.items():
        if isinstance(value, (dict, list)):
            value = json.dumps(value, sort_keys=True)
        lines.append(f"{key}: {value}")
    return "\n".join(lines)


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    start = time.perf_counter()
    report = {"command": args.command, "seed": args.seed}
    try:
        report.update(COMMANDS[args.command](args))
    except (KocpError, OSError) as exc:
        numerical = isinstance(exc, NumericalError)
        report["verdict"] = "numerical-failure" if numerical else "input-error"
        report["error"] = str(exc)
        print(f"kocp {args.command}: {exc}", file=sys.stderr)
    if args.timing:
        report["wall_time"] = time.perf_counter() - start
    report = _clean(report)
    print(_render(report, args.json))
    return EXIT_CODES[report["verdict"]]


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()
