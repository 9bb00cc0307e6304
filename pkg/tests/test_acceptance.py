"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The lines are also collected and replayed in the terminal summary.
"""

from contextlib import contextmanager
from functools import lru_cache

import numpy as np
import pytest

from kocp.barrier import barrier_grad, barrier_hess_quadform, barrier_value, legendre_invert
from kocp.cones import dual_membership, is_sdd, nesting_certificate, primal_margin, verify_embedding
from kocp.matrix import comparison_matrix, psd_margin, scale_of
from kocp.polynomial import Polynomial, basis_for, certify_kddsos, motzkin, verify_certificate
from kocp.solver import (
    InequalityProblem,
    StandardProblem,
    convert_inequality_to_standard,
    convert_standard_to_inequality,
    hierarchy_scan,
    socp_to_sdd,
    solve,
)
from kocp.special import (
    NormConePoint,
    check_norm_axioms,
    norm_nesting_certificate,
    normcone_k_membership,
)
from kocp.structures import make_cone

from conftest import ACCEPTANCE_LINES, random_pd, random_standard, random_sym, sample_nonnegative, square_sum
from oracles import (
    block_cone_value,
    completely_positive_2x2_value,
    copositive_2x2_value,
    is_sos,
    sdp_value,
)

pytestmark = pytest.mark.acceptance

SOLVED = []


@contextmanager
def criterion(number, title):
    try:
        yield
    except AssertionError as exc:
        detail = str(exc).strip().splitlines()[0] if str(exc).strip() else "assertion failed"
        line = f"[{number:2d}] FAIL  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        raise
    line = f"[{number:2d}] PASS  {title}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def tracked_solve(prob):
    sol = solve(prob)
    SOLVED.append((prob, sol))
    return sol


def symmetric_corpus(d, count=200):
    rng = np.random.default_rng(1000 + d)
    for _ in range(count):
        yield random_sym(rng, d) + np.diag(rng.uniform(0, 2 * d, size=d))


@lru_cache(maxsize=None)
def order_two_corpus(d):
    """The corpus for one size with its order-2 membership verdicts over the full index map."""
    spec = make_cone("psd", d, 2, "full")
    return [(A, primal_margin(A, spec, tol=1e-8)[0]) for A in symmetric_corpus(d)]


def trace_problem(C, k):
    d = C.shape[0]
    return StandardProblem(make_cone("psd", d, k), C, [np.eye(d)], [1.0])


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(b))


def test_01_sdd_matches_order_two_membership():
    with criterion(1, "SDD test agrees with order-2 membership over the full index map"):
        disagreements = []
        for d in range(2, 7):
            for n, (A, member) in enumerate(order_two_corpus(d)):
                if is_sdd(A)[0] != member:
                    disagreements.append((d, n))
        assert not disagreements, f"{len(disagreements)} disagreements, first {disagreements[:3]}"


def test_02_sdd_characterizations_cross_validate():
    with criterion(2, "SDD characterizations agree and witnesses scale to diagonal dominance"):
        bad = []
        for d in range(2, 7):
            for n, (A, member) in enumerate(order_two_corpus(d)):
                scale = scale_of(A)
                ok, w = is_sdd(A)
                comparison_psd = psd_margin(comparison_matrix(A)) >= -1e-9 * scale
                if not member == ok == comparison_psd:
                    bad.append((d, n, "verdict"))
                    continue
                if ok:
                    diag = np.diag(A)
                    off = np.abs(A - np.diag(diag)) @ w
                    if np.any(w <= 0) or np.any(w * diag < off - 1e-9 * scale):
                        bad.append((d, n, "witness"))
        assert not bad, f"{len(bad)} failures, first {bad[:3]}"


def test_03_psd_strict_nesting():
    with criterion(3, "PSD nesting certificates separate consecutive orders for d <= 8"):
        bad = []
        for d in range(2, 9):
            for k in range(1, d):
                C = nesting_certificate("psd", d, k)
                inside = dual_membership(C, make_cone("psd", d, k))[1]
                outside = dual_membership(C, make_cone("psd", d, k + 1))[1]
                if inside < -1e-9 or outside > -1e-3:
                    bad.append((d, k, inside, outside))
        assert not bad, f"bad certificates {bad[:3]}"


def test_04_soc_and_nuclear_strict_nesting():
    with criterion(4, "SOC and nuclear-norm nesting certificates separate consecutive orders"):
        bad = []
        for d in range(3, 9):
            for k in range(2, d):
                cert = NormConePoint(np.sqrt(k - 1), np.ones(d - 1))
                assert np.allclose(norm_nesting_certificate("l2", d, k).X, cert.X)
                inside = normcone_k_membership(cert, "l2", d, k)[1]
                outside = normcone_k_membership(cert, "l2", d, k + 1)[1]
                if inside < -1e-9 or outside > -1e-3:
                    bad.append(("soc", d, k))
        for size in range(2, 6):
            for k in range(1, size):
                cert = NormConePoint(float(k), np.eye(size) + np.ones((size, size)))
                inside = normcone_k_membership(cert, "nuclear", size + 1, k)[1]
                outside = normcone_k_membership(cert, "nuclear", size + 1, k + 1)[1]
                if inside < -1e-9 or outside > -1e-3:
                    bad.append(("nuclear", size, k))
        assert not bad, f"bad certificates {bad[:3]}"


def test_05_barrier_calculus():
    with criterion(5, "barrier derivatives, homogeneity, Euler identity and conjugate roundtrip"):
        rng = np.random.default_rng(5)
        worst = {"grad": 0.0, "hess": 0.0, "homog": 0.0, "euler": 0.0, "legendre": 0.0}
        for _ in range(100):
            d = int(rng.integers(2, 7))
            spec = make_cone("psd", d, int(rng.integers(1, min(3, d) + 1)))
            Y = random_pd(rng, d, floor=0.3)
            theta = spec.k * len(spec.J.tuples)
            H = random_sym(rng, d)
            H /= np.linalg.norm(H)
            h = 1e-6 * (1 + np.linalg.norm(Y))
            fd = (barrier_value(Y + h * H, spec) - barrier_value(Y - h * H, spec)) / (2 * h)
            exact = float(np.sum(barrier_grad(Y, spec) * H))
            worst["grad"] = max(worst["grad"], abs(fd - exact) / max(1.0, abs(exact)))
            q_fd = float(np.sum((barrier_grad(Y + h * H, spec) - barrier_grad(Y - h * H, spec)) * H)) / (2 * h)
            q = barrier_hess_quadform(Y, H, spec)
            worst["hess"] = max(worst["hess"], abs(q_fd - q) / max(1.0, abs(q)))
            f = barrier_value(Y, spec)
            for t in (0.5, 2.0, 10.0):
                expected = f - theta * np.log(t)
                worst["homog"] = max(worst["homog"], rel_err(barrier_value(t * Y, spec), expected))
            euler = float(np.sum(barrier_grad(Y, spec) * Y))
            worst["euler"] = max(worst["euler"], abs(euler + theta) / theta)
            X = -barrier_grad(Y, spec)
            back = legendre_invert(X, spec)
            resid = np.linalg.norm(barrier_grad(back, spec) + X) / max(1.0, np.linalg.norm(X))
            worst["legendre"] = max(worst["legendre"], resid)
        limits = {"grad": 1e-5, "hess": 1e-5, "homog": 1e-9, "euler": 1e-8, "legendre": 1e-7}
        over = {key: worst[key] for key in limits if worst[key] > limits[key]}
        assert not over, f"worst errors above limits: {over}"


def test_06_solver_anchors():
    with criterion(6, "solver anchors and full-order agreement with a plain SDP solve"):
        assert tracked_solve(trace_problem(np.diag([1.0, 2.0]), 2)).objective == pytest.approx(1.0, abs=1e-6)
        flip = np.array([[0.0, 1.0], [1.0, 0.0]])
        assert tracked_solve(trace_problem(flip, 1)).objective == pytest.approx(0.0, abs=1e-6)
        assert tracked_solve(trace_problem(flip, 2)).objective == pytest.approx(-1.0, abs=1e-6)
        socp = socp_to_sdd([(np.zeros((2, 1)), [1.0, 1.0], [1.0], 0.0)], [1.0])
        assert tracked_solve(socp).objective == pytest.approx(np.sqrt(2), abs=1e-6)
        rng = np.random.default_rng(6)
        errors = []
        for _ in range(20):
            d = int(rng.integers(2, 5))
            C, A, b = random_standard(rng, d, extra=int(rng.integers(0, 3)))
            ours = tracked_solve(StandardProblem(make_cone("psd", d, d), C, A, b)).objective
            ref, status = sdp_value(C, A, b)
            assert status == "optimal"
            errors.append(rel_err(ours, ref))
        assert max(errors) <= 1e-6, f"worst relative error {max(errors):.2e}"


def test_07_hierarchy_monotone():
    with criterion(7, "hierarchy scans are nonincreasing in the order"):
        rng = np.random.default_rng(7)
        bad = []
        for n in range(20):
            d = int(rng.integers(2, 6))
            C, A, b = random_standard(rng, d, extra=1)
            scan = hierarchy_scan(StandardProblem(make_cone("psd", d, 1), C, A, b), range(1, d + 1))
            objectives = scan.objectives
            statuses = {st for _, _, st in scan.entries}
            if statuses != {"optimal"} or any(hi > lo + 1e-6 for lo, hi in zip(objectives, objectives[1:])):
                bad.append((n, d, objectives, statuses))
        assert not bad, f"{len(bad)} bad scans, first {bad[:1]}"


def test_08_kkt_residuals():
    with criterion(8, "every optimal solve has KKT residuals within tolerance"):
        rng = np.random.default_rng(8)
        for _ in range(10):
            d = int(rng.integers(2, 6))
            k = int(rng.integers(1, d + 1))
            C, A, b = random_standard(rng, d, extra=int(rng.integers(0, 3)))
            tracked_solve(StandardProblem(make_cone("psd", d, k), C, A, b))
            tracked_solve(StandardProblem(make_cone("psd", d, k), C, A, b, side="dual"))
            q = rng.standard_normal(2)
            P = [random_sym(rng, d), random_sym(rng, d)]
            tracked_solve(InequalityProblem(make_cone("psd", d, k), q, np.eye(d), [np.eye(d) * 0.1 + P[0], P[1]]))
        optimal = [(p, s) for p, s in SOLVED if s.status == "optimal"]
        assert len(optimal) >= 20
        worst = max(s.kkt.max_residual() / p.scale for p, s in optimal)
        assert worst <= 1e-6, f"worst scaled KKT residual {worst:.2e}"


def test_09_polynomial_certificates():
    with criterion(9, "polynomial certificates and agreement with a plain SOS test"):
        square = Polynomial(2, {(2, 0): 1.0, (1, 1): 2.0, (0, 2): 1.0})
        assert not certify_kddsos(square, 1)[0]
        ok, cert = certify_kddsos(square, 2)
        assert ok
        mz = motzkin()
        assert not certify_kddsos(mz, len(basis_for(mz)))[0]
        rng = np.random.default_rng(9)
        checked = [(square, cert)]
        for _ in range(20):
            nvars, half = int(rng.integers(1, 4)), int(rng.integers(1, 3))
            p = square_sum(rng, nvars, half, count=2)
            ok, cert = certify_kddsos(p, len(basis_for(p)))
            assert ok and is_sos(p.terms, nvars, half), "full-order certificate disagrees with SOS test"
            checked.append((p, cert))
        for p, cert in checked:
            valid, err = verify_certificate(p, cert)
            assert valid and err <= 1e-7 * max(1.0, p.max_abs_coef()), f"coefficient error {err:.2e}"
            assert sample_nonnegative(p, rng), "negative sample value"


def test_10_embedding_and_norm_audits():
    with criterion(10, "embedding audits, l1 collapse and norm axioms"):
        for family in ("psd", "sdd", "dd", "soc"):
            report = verify_embedding(family, 5, 3, 100, 10)
            assert report.violations == 0, f"{family}: {report.violations} violations"
        for l in range(2, 7):
            for k in range(1, l + 1):
                report = verify_embedding("factor-width:2", l, k, 100, 10 * l + k)
                assert report.violations == 0, f"factor-width:2 d={l} k={k}: {report.violations} violations"
        rng = np.random.default_rng(10)
        for _ in range(200):
            m = int(rng.integers(2, 6))
            x = rng.standard_normal(m)
            t = float(np.abs(x).sum() + rng.uniform(-1, 1))
            expected = np.abs(x).sum() <= t
            point = NormConePoint(t, x)
            for k in range(2, m + 2):
                assert normcone_k_membership(point, "l1", m + 1, k, side="primal")[0] == expected
        for name in ("l1", "l2", "linf", "spectral", "nuclear"):
            report = check_norm_axioms(name, samples=500, seed=10)
            assert report.violations == 0, f"{name}: {report.violations} violations"


def test_11_form_conversions_and_cp_reductions():
    with criterion(11, "form conversions keep the value; CP/CPP reductions match small oracles"):
        rng = np.random.default_rng(11)
        worst = 0.0
        for _ in range(10):
            d = int(rng.integers(2, 4))
            k = int(rng.integers(1, d + 1))
            C, A, b = random_standard(rng, d, extra=1)
            prob = StandardProblem(make_cone("psd", d, k), C, A, b)
            ref = tracked_solve(prob).objective
            ineq = convert_standard_to_inequality(prob)
            worst = max(worst, rel_err(tracked_solve(ineq).objective, ref))
            back = convert_inequality_to_standard(ineq)
            worst = max(worst, rel_err(tracked_solve(back).objective, ref))
        assert worst <= 1e-6, f"worst roundtrip relative error {worst:.2e}"
        for _ in range(5):
            A0 = random_sym(rng, 2)
            cpp = tracked_solve(StandardProblem(make_cone("cpp", 2, 2), A0, [np.eye(2)], [1.0])).objective
            assert cpp == pytest.approx(completely_positive_2x2_value(A0), abs=1e-6)
            A0[0, 1] = A0[1, 0] = abs(A0[0, 1])
            cop = tracked_solve(StandardProblem(make_cone("cp", 2, 2), A0, [np.eye(2)], [1.0])).objective
            assert cop == pytest.approx(copositive_2x2_value(A0), abs=1e-6)
        for kind in ("cp", "cpp"):
            A0 = random_sym(rng, 3)
            if kind == "cp":
                A0 = np.abs(A0)
            ref, _ = block_cone_value(A0, [np.eye(3)], [1.0], 2, kind)
            ours = tracked_solve(StandardProblem(make_cone(kind, 3, 2), A0, [np.eye(3)], [1.0])).objective
            assert ours == pytest.approx(ref, abs=1e-6)
