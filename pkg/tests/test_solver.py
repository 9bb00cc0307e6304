import numpy as np
import pytest

from kocp.cones import dual_membership, is_sdd, nesting_certificate, primal_margin
from kocp.errors import DimensionMismatchError, InputError, RedundantConstraintsError, UnsupportedFamilyError
from kocp.solver import (
    InequalityProblem,
    Solution,
    SolverOptions,
    StandardProblem,
    convert_inequality_to_standard,
    convert_standard_to_inequality,
    hierarchy_scan,
    kkt_residuals,
    problem_from_json,
    problem_to_json,
    socp_to_sdd,
    solve,
)
from kocp.structures import make_cone

from conftest import random_standard, random_sym
from oracles import factor_width_value, inequality_value, sdp_value

FLIP = np.array([[0.0, 1], [1, 0]])


def trace_problem(C, k, side="primal"):
    d = C.shape[0]
    return StandardProblem(make_cone("psd", d, k), C, [np.eye(d)], [1.0], side)


def assert_kkt(prob, sol, factor=1e-6):
    assert sol.kkt is not None
    assert sol.kkt.max_residual() <= factor * prob.scale, sol.kkt


def test_diagonal_objective():
    prob = trace_problem(np.diag([1.0, 2.0]), 2)
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(sol.X, np.diag([1.0, 0.0]), atol=1e-5)
    assert_kkt(prob, sol)


def test_off_diagonal_objective_by_order():
    sol1 = solve(trace_problem(FLIP, 1))
    assert sol1.objective == pytest.approx(0.0, abs=1e-6)
    prob = trace_problem(FLIP, 2)
    sol2 = solve(prob)
    assert sol2.objective == pytest.approx(-1.0, abs=1e-6)
    assert np.allclose(sol2.X, 0.5 * np.array([[1, -1], [-1, 1]]), atol=1e-5)
    assert_kkt(prob, sol2)


def test_decomposition_reconstructs_primal():
    prob = trace_problem(np.ones((3, 3)) - np.eye(3), 2)
    sol = solve(prob)
    assert np.allclose(sol.decomposition.reconstruct(), sol.X, atol=1e-9)


def test_dual_side_pinned_to_certificate():
    cert = nesting_certificate("psd", 3, 2)
    A, b = [], []
    for i in range(3):
        for j in range(i, 3):
            m = np.zeros((3, 3))
            m[i, j] = m[j, i] = 1.0
            A.append(m)
            b.append(float(np.sum(m * cert)))
    prob = StandardProblem(make_cone("psd", 3, 2), np.eye(3), A, b, side="dual")
    sol = solve(prob)
    assert sol.status == "optimal"
    assert np.allclose(sol.X, cert, atol=1e-7)
    _, margin = dual_membership(sol.X, prob.cone)
    assert abs(margin) <= 1e-6
    assert_kkt(prob, sol)


def test_dual_side_matches_oracle(rng):
    # the dual of factor-width-2 admits X with PD 2x2 truncations only
    for _ in range(3):
        C, A, b = random_standard(rng, 3, extra=1)
        prob = StandardProblem(make_cone("psd", 3, 2), C, A, b, side="dual")
        sol = solve(prob)
        assert sol.status == "optimal"
        assert_kkt(prob, sol)
        assert dual_membership(sol.X, prob.cone)[1] >= -1e-7
        # the dual cone contains PSD, so the value cannot exceed the SDP one
        sdp, _ = sdp_value(C, A, b)
        assert sol.objective <= sdp + 1e-6


@pytest.mark.parametrize("d", [2, 3, 4])
def test_full_order_matches_sdp_oracle(d):
    rng = np.random.default_rng(40 + d)
    for _ in range(3):
        C, A, b = random_standard(rng, d, extra=2)
        prob = StandardProblem(make_cone("psd", d, d), C, A, b)
        sol = solve(prob)
        ref, status = sdp_value(C, A, b)
        assert status == "optimal"
        assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
        assert_kkt(prob, sol)


@pytest.mark.parametrize("d,k", [(3, 1), (3, 2), (4, 2), (4, 3), (5, 2)])
def test_intermediate_orders_match_block_oracle(d, k):
    rng = np.random.default_rng(10 * d + k)
    C, A, b = random_standard(rng, d, extra=1)
    prob = StandardProblem(make_cone("psd", d, k), C, A, b)
    sol = solve(prob)
    ref, _ = factor_width_value(C, A, b, k)
    assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
    assert_kkt(prob, sol)


def test_soc_family_solve():
    # x = (a, u) + (b, 0, v) with |u| <= a, |v| <= b and a + b = 1, so min u + v = -1
    cone = make_cone("soc", 3, 2)
    prob = StandardProblem(cone, np.array([0.0, 1.0, 1.0]), [np.array([1.0, 0, 0])], [1.0])
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(-1.0, abs=1e-6)
    assert_kkt(prob, sol)


def test_infeasible_reported():
    # X in the cone has nonnegative diagonal, so tr X = -1 is impossible
    sol = solve(StandardProblem(make_cone("psd", 2, 2), np.eye(2), [np.eye(2)], [-1.0]))
    assert sol.status == "infeasible"
    assert not sol.optimal


def test_redundant_constraints_rejected():
    with pytest.raises(RedundantConstraintsError):
        solve(StandardProblem(make_cone("psd", 2, 2), np.eye(2), [np.eye(2), 2 * np.eye(2)], [1.0, 2.0]))
    with pytest.raises(RedundantConstraintsError):
        solve(StandardProblem(make_cone("psd", 2, 2), np.eye(2), [np.zeros((2, 2))], [0.0]))


def test_problem_validation():
    with pytest.raises(DimensionMismatchError):
        StandardProblem(make_cone("psd", 2, 2), np.eye(3))
    with pytest.raises(DimensionMismatchError):
        StandardProblem(make_cone("psd", 2, 2), np.eye(2), [np.eye(2)], [1.0, 2.0])
    with pytest.raises(InputError):
        StandardProblem(make_cone("psd", 2, 2), np.eye(2), side="sideways")
    with pytest.raises(UnsupportedFamilyError):
        solve(StandardProblem(make_cone("soc", 3, 2), np.ones(3), side="dual"))


def test_asymmetric_data_is_symmetrized():
    prob = StandardProblem(make_cone("psd", 2, 2), np.array([[0.0, 2], [0, 0]]), [np.eye(2)], [1.0])
    assert np.array_equal(prob.A0, FLIP)
    assert solve(prob).objective == pytest.approx(-1.0, abs=1e-6)


def test_inequality_form(rng):
    prob = InequalityProblem(make_cone("psd", 2, 2), [1.0], -np.eye(2), [np.eye(2)])
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.x[0] == pytest.approx(1.0, abs=1e-6)
    assert_kkt(prob, sol)
    dual = InequalityProblem(make_cone("psd", 2, 2), [1.0], -np.eye(2), [np.eye(2)], side="dual")
    assert solve(dual).x[0] == pytest.approx(1.0, abs=1e-6)


def random_inequality(rng, d, n, k):
    P = [random_sym(rng, d) for _ in range(n)]
    q = np.array([-np.trace(p) for p in P])
    return InequalityProblem(make_cone("psd", d, k), q, np.eye(d), P)


@pytest.mark.parametrize("d,k", [(3, 3), (3, 2), (4, 2)])
def test_inequality_matches_oracle(d, k):
    rng = np.random.default_rng(d + 7 * k)
    prob = random_inequality(rng, d, 2, k)
    sol = solve(prob)
    ref, _ = inequality_value(prob.q, prob.P0, prob.P, k)
    assert sol.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
    assert_kkt(prob, sol)


def test_conversions_preserve_value():
    prob = trace_problem(np.diag([1.0, 2.0]), 2)
    ineq = convert_standard_to_inequality(prob)
    assert solve(ineq).objective == pytest.approx(1.0, abs=1e-6)
    back = convert_inequality_to_standard(ineq)
    assert solve(back).objective == pytest.approx(1.0, abs=1e-6)
    one = convert_inequality_to_standard(InequalityProblem(make_cone("psd", 2, 2), [1.0], -np.eye(2), [np.eye(2)]))
    assert solve(one).objective == pytest.approx(1.0, abs=1e-6)


def test_conversion_without_constraints():
    prob = StandardProblem(make_cone("psd", 2, 2), np.eye(2))
    ineq = convert_standard_to_inequality(prob)
    assert ineq.q.size == len(ineq.P)
    assert solve(prob).objective == pytest.approx(0.0, abs=1e-6)
    assert solve(ineq).objective == pytest.approx(0.0, abs=1e-6)


def test_conversions_random_roundtrip(rng):
    for _ in range(3):
        d = int(rng.integers(2, 4))
        C, A, b = random_standard(rng, d, extra=1)
        prob = StandardProblem(make_cone("psd", d, 2), C, A, b)
        ref = solve(prob).objective
        ineq = convert_standard_to_inequality(prob)
        sol_ineq = solve(ineq)
        assert sol_ineq.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
        assert_kkt(ineq, sol_ineq)
        back = convert_inequality_to_standard(ineq)
        sol_back = solve(back)
        assert sol_back.objective == pytest.approx(ref, rel=1e-6, abs=1e-6)
        assert_kkt(back, sol_back)


def test_conversion_rejects_soc():
    with pytest.raises(UnsupportedFamilyError):
        convert_standard_to_inequality(StandardProblem(make_cone("soc", 3, 2), np.ones(3)))


def test_arrow_matrix_membership():
    def arrow(t):
        return np.array([[t, 0, 3], [0, t, 4], [3, 4, t]], dtype=float)
    spec = make_cone("psd", 3, 2)
    ok, margin, _ = primal_margin(arrow(5), spec)
    assert ok and abs(margin) <= 1e-6
    assert is_sdd(arrow(5))[0]
    assert primal_margin(arrow(6), spec)[1] > 1e-3
    assert not primal_margin(arrow(4), spec)[0]
    assert not is_sdd(arrow(4))[0]


def test_socp_cast_sqrt_two():
    prob = socp_to_sdd([(np.zeros((2, 1)), [1.0, 1.0], [1.0], 0.0)], [1.0])
    assert prob.cone.d == 3 and prob.cone.k == 2
    sol = solve(prob)
    assert sol.objective == pytest.approx(np.sqrt(2), abs=1e-6)
    assert_kkt(prob, sol)


def test_socp_cast_with_equalities():
    # min t  s.t. ||(x, 1)|| <= t,  x = 2   ->  sqrt(5)
    A = np.array([[1.0, 0.0], [0.0, 0.0]])
    prob = socp_to_sdd([(A, [0.0, 1.0], [0.0, 1.0], 0.0)], [0.0, 1.0], equalities=([[1.0, 0.0]], [2.0]))
    sol = solve(prob)
    assert sol.objective == pytest.approx(np.sqrt(5), abs=1e-6)
    assert_kkt(prob, sol)


def test_kkt_residual_examples():
    prob = trace_problem(np.diag([1.0, 2.0]), 2)
    exact = Solution("optimal", X=np.diag([1.0, 0.0]), y=np.array([1.0]), Z=np.diag([0.0, 1.0]), objective=1.0)
    # the primal margin of a boundary point is resolved by a barrier solve
    assert kkt_residuals(prob, exact).max_residual() <= 1e-9
    shifted = Solution("optimal", X=np.diag([1.0 + 1e-3, 0.0]), y=np.array([1.0]), Z=np.diag([0.0, 1.0]))
    assert kkt_residuals(prob, shifted).primal_eq_res == pytest.approx(1e-3)
    A0 = np.diag([1.0, 3.0])
    empty = StandardProblem(make_cone("psd", 2, 2), A0, [np.eye(2)], [0.0])
    report = kkt_residuals(empty, Solution("optimal", X=np.zeros((2, 2)), y=np.zeros(1), Z=A0))
    assert report.complementarity == 0.0
    with pytest.raises(InputError):
        kkt_residuals(prob, Solution("optimal"))


def test_hierarchy_scan_examples():
    prob = trace_problem(np.ones((3, 3)) - np.eye(3), 1)
    report = hierarchy_scan(prob, [1, 2, 3])
    assert report.objectives == pytest.approx([0.0, -1.0, -1.0], abs=1e-6)
    assert not report.violations
    two = hierarchy_scan(trace_problem(FLIP, 1), [1, 2])
    assert two.objectives == pytest.approx([0.0, -1.0], abs=1e-6)
    pinned = StandardProblem(make_cone("psd", 2, 1), FLIP,
                             [np.diag([1.0, 0.0]), np.diag([0.0, 1.0]), FLIP], [0.5, 0.5, 0.0])
    flat = hierarchy_scan(pinned, [1, 2])
    assert flat.objectives == pytest.approx([0.0, 0.0], abs=1e-6)
    with pytest.raises(InputError):
        hierarchy_scan(trace_problem(FLIP, 1, side="dual"), [1, 2])


def test_hierarchy_scan_monotone_random():
    rng = np.random.default_rng(5)
    for _ in range(3):
        d = int(rng.integers(3, 5))
        C, A, b = random_standard(rng, d, extra=1)
        report = hierarchy_scan(StandardProblem(make_cone("psd", d, 1), C, A, b), range(1, d + 1))
        assert not report.violations
        assert all(st == "optimal" for _, _, st in report.entries)


def test_options_are_respected():
    sol = solve(trace_problem(np.diag([1.0, 2.0]), 2), SolverOptions(max_iter=1))
    assert sol.status == "max-iter"


def test_problem_json_roundtrip():
    prob = trace_problem(np.diag([1.0, 2.0]), 2)
    back = problem_from_json(problem_to_json(prob))
    assert np.array_equal(back.A0, prob.A0) and np.array_equal(back.b, prob.b)
    ineq = InequalityProblem(make_cone("psd", 2, 2), [1.0], -np.eye(2), [np.eye(2)])
    again = problem_from_json(problem_to_json(ineq))
    assert isinstance(again, InequalityProblem)
    with pytest.raises(InputError):
        problem_from_json({"form": "standard"})
    sol = solve(prob)
    payload = sol.to_json()
    assert payload["status"] == "optimal" and "kkt" in payload and "decomposition" in payload


def test_forced_zero_face_is_eliminated():
    # X_11 + X_22 = 0 pins both diagonal entries, leaving the 1x1 face on index 2
    A = [np.diag([1.0, 1.0, 0.0]), np.diag([0.0, 0.0, 1.0])]
    prob = StandardProblem(make_cone("psd", 3, 2), np.diag([0.0, 0.0, 2.0]) + 0.3 * np.ones((3, 3)), A, [0.0, 1.0])
    sol = solve(prob)
    assert sol.status == "optimal"
    assert sol.objective == pytest.approx(2.3, abs=1e-6)
    assert np.allclose(sol.X, np.diag([0.0, 0.0, 1.0]), atol=1e-7)
    assert_kkt(prob, sol)
