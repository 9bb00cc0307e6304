"""Standard- and inequality-form programs over k-th order cones.

Standard form::

    min tr(A0 X)  s.t.  tr(A_i X) = b_i,  X in K        (side "primal")
                                          X in K*       (side "dual")

Inequality form::

    min q'x  s.t.  P0 + sum_i x_i P_i in K  (or K*)

Primal-side cones are handled through their block decomposition, with one
PSD (or second-order cone) variable per tuple; dual-side cones keep
``X`` free and tie one PSD block to each truncation ``X_s``.  For the ``soc`` family all matrices
act through their diagonals and ``X``/``Z`` are vectors.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from ._engine import ConicProgram, EngineOptions, PSDBlocks, solve_conic
from .barrier import _barrier_for
from .cones import BlockLayout, dual_membership, primal_margin
from .errors import (
    DimensionMismatchError,
    InputError,
    RedundantConstraintsError,
    UnsupportedFamilyError,
)
from .matrix import (
    TOL_RECON,
    as_sym,
    scale_of,
    smat,
    svec,
    svec_basis,
    sym_from_json,
    sym_to_json,
    truncate_all,
)
from .structures import ConeSpec, Decomposition, make_cone

STATUSES = ("optimal", "infeasible", "unbounded", "max-iter", "numerical-failure")
KKT_TOL = 1e-6


@dataclass
class SolverOptions:
    tol: float = 1e-8
    max_iter: int = 200
    mu_factor: float = 10.0

    def engine(self) -> EngineOptions:
        return EngineOptions(tol=self.tol, max_iter=self.max_iter, mu=self.mu_factor)


# -- problem data -----------------------------------------------------------

def _operand(a, cone: ConeSpec, name: str) -> np.ndarray:
    """Validate one data matrix; ``soc`` data may also be a plain vector."""
    if cone.is_vector:
        arr = np.asarray(a, dtype=float)
        if arr.ndim == 1:
            if arr.shape != (cone.d,):
                raise DimensionMismatchError(f"{name} must have length {cone.d}")
            return arr.copy()
        arr = as_sym(arr, name=name)
    else:
        # tr(A X) only sees the symmetric part, so asymmetric data is averaged
        arr = np.asarray(a, dtype=float)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise DimensionMismatchError(f"{name} must be a square matrix")
        if not np.all(np.isfinite(arr)):
            raise InputError(f"{name} has non-finite entries")
        arr = 0.5 * (arr + arr.T)
    if arr.shape != (cone.d, cone.d):
        raise DimensionMismatchError(f"{name} has shape {arr.shape}, expected {(cone.d, cone.d)}")
    return np.diag(arr).copy() if cone.is_vector else arr


@dataclass
class StandardProblem:
    cone: ConeSpec
    A0: np.ndarray
    A: list = field(default_factory=list)
    b: np.ndarray = field(default_factory=lambda: np.zeros(0))
    side: str = "primal"

    def __post_init__(self):
        if self.side not in ("primal", "dual"):
            raise InputError(f"side must be 'primal' or 'dual', got {self.side!r}")
        self.A0 = _operand(self.A0, self.cone, "A0")
        self.A = [_operand(a, self.cone, f"A[{i}]") for i, a in enumerate(self.A)]
        self.b = np.asarray(self.b, dtype=float).ravel()
        if len(self.b) != len(self.A):
            raise DimensionMismatchError(f"{len(self.A)} constraint matrices but {len(self.b)} right-hand sides")

    @property
    def scale(self) -> float:
        norms = [np.linalg.norm(self.A0)] + [np.linalg.norm(a) for a in self.A]
        return max(1.0, max(norms), float(np.max(np.abs(self.b), initial=0.0)))


@dataclass
class InequalityProblem:
    cone: ConeSpec
    q: np.ndarray
    P0: np.ndarray
    P: list = field(default_factory=list)
    side: str = "primal"

    def __post_init__(self):
        if self.side not in ("primal", "dual"):
            raise InputError(f"side must be 'primal' or 'dual', got {self.side!r}")
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.P0 = _operand(self.P0, self.cone, "P0")
        self.P = [_operand(p, self.cone, f"P[{i}]") for i, p in enumerate(self.P)]
        if len(self.q) != len(self.P):
            raise DimensionMismatchError(f"q has length {len(self.q)} but there are {len(self.P)} matrices P_i")

    def lmi(self, x) -> np.ndarray:
        out = self.P0.copy()
        for xi, p in zip(x, self.P):
            out = out + xi * p
        return out

    @property
    def scale(self) -> float:
        norms = [np.linalg.norm(self.P0)] + [np.linalg.norm(p) for p in self.P]
        return max(1.0, max(norms), float(np.max(np.abs(self.q), initial=0.0)))


@dataclass
class KKTReport:
    primal_eq_res: float
    primal_cone_margin: float
    dual_cone_margin: float
    complementarity: float
    dual_eq_res: float
    gap: float

    def residuals(self) -> dict:
        """All six quantities as nonnegative residuals (cone margins clipped)."""
        return {
            "primal_eq_res": self.primal_eq_res,
            "primal_cone": max(0.0, -self.primal_cone_margin),
            "dual_cone": max(0.0, -self.dual_cone_margin),
            "complementarity": self.complementarity,
            "dual_eq_res": self.dual_eq_res,
            "gap": self.gap,
        }

    def max_residual(self) -> float:
        return max(self.residuals().values())

    def to_json(self) -> dict:
        return {k: _num(v) for k, v in self.__dict__.items()}


@dataclass
class Solution:
    status: str
    X: np.ndarray | None = None
    y: np.ndarray | None = None
    Z: np.ndarray | None = None
    objective: float = float("nan")
    iterations: int = 0
    x: np.ndarray | None = None
    decomposition: Decomposition | None = None
    dual_decomposition: Decomposition | None = None
    gap_bound: float = float("nan")
    kkt: KKTReport | None = None
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def to_json(self) -> dict:
        out = {
            "status": self.status,
            "objective": _num(self.objective),
            "iterations": int(self.iterations),
        }
        for name in ("X", "Z"):
            val = getattr(self, name)
            if val is not None:
                out[name] = _array_json(val)
        if self.y is not None:
            out["y"] = [_num(v) for v in self.y]
        if self.x is not None:
            out["x"] = [_num(v) for v in self.x]
        if self.decomposition is not None:
            out["decomposition"] = self.decomposition.to_json()
        if self.dual_decomposition is not None:
            out["dual_decomposition"] = self.dual_decomposition.to_json()
        if np.isfinite(self.gap_bound):
            out["gap_bound"] = float(self.gap_bound)
        if self.kkt is not None:
            out["kkt"] = self.kkt.to_json()
        if self.message:
            out["message"] = self.message
        return out


def _num(v):
    v = float(v)
    return v if np.isfinite(v) else None


def _array_json(a):
    a = np.asarray(a, dtype=float)
    return [float(v) for v in a] if a.ndim == 1 else sym_to_json(a)


# -- helpers ----------------------------------------------------------------

def _coords(a, cone: ConeSpec) -> np.ndarray:
    return a.copy() if cone.is_vector else svec(a)


def _from_coords(v, cone: ConeSpec) -> np.ndarray:
    return np.asarray(v, dtype=float).copy() if cone.is_vector else smat(v, cone.d)


def _check_independent(rows: np.ndarray):
    """Reject linearly dependent constraint data (pivot threshold 1e-10)."""
    if rows.shape[0] <= 1:
        if rows.shape[0] == 1 and not np.any(rows):
            raise RedundantConstraintsError("constraint 0 has an all-zero matrix")
        return
    norms = np.linalg.norm(rows, axis=1)
    if np.any(norms == 0):
        raise RedundantConstraintsError(f"constraint {int(np.argmin(norms))} has an all-zero matrix")
    _, R, _ = scipy.linalg.qr((rows / norms[:, None]).T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > 1e-10 * diag[0]))
    if rank < rows.shape[0]:
        raise RedundantConstraintsError(
            f"{rows.shape[0] - rank} of the {rows.shape[0]} constraint matrices are linearly dependent on the others"
        )


def _require_solvable(cone: ConeSpec, side: str):
    if cone.family not in ("psd", "soc"):
        raise UnsupportedFamilyError(f"solving is supported for psd and soc cones, not {cone.family!r}")
    if side == "dual" and cone.family != "psd":
        raise UnsupportedFamilyError("dual-side programs are supported for the psd family only")


def _truncation_map(cone: ConeSpec):
    """0/1 matrix sending ``svec(X)`` to the stacked svecs of every truncation."""
    bar = _barrier_for(cone.J)
    n = cone.d * (cone.d + 1) // 2
    S = np.zeros((len(cone.J) * bar.nk, n))
    S[np.arange(S.shape[0]), bar.covered[bar.positions.ravel()]] = 1.0
    return S, PSDBlocks(cone.k, len(cone.J))


def _block_decomposition(multipliers, cone: ConeSpec) -> Decomposition:
    """``Z = sum_s lift(-smat(y_s))`` from the truncation-consistency multipliers."""
    nk = cone.k * (cone.k + 1) // 2
    mats = smat(-np.asarray(multipliers).reshape(len(cone.J), nk), cone.k)
    return Decomposition(cone.d, list(zip(cone.J, mats)))


def _attach_kkt(prob, sol: Solution):
    """Compute the KKT report; an "optimal" answer that fails it is downgraded."""
    sol.kkt = kkt_residuals(prob, sol)
    worst = sol.kkt.max_residual()
    if not worst <= KKT_TOL * prob.scale:
        sol.status = "numerical-failure"
        sol.message = (sol.message + "; " if sol.message else "") + (
            f"the path-following run stopped, but the KKT residual {worst:.2e} is above tolerance"
        )


def _status_solution(res) -> Solution:
    return Solution(status=res.status, iterations=res.iterations, message=res.message)


# -- standard form ----------------------------------------------------------

def solve(prob, opts: SolverOptions | None = None) -> Solution:
    """Solve a :class:`StandardProblem` or :class:`InequalityProblem`."""
    opts = opts or SolverOptions()
    if isinstance(prob, InequalityProblem):
        return _solve_inequality(prob, opts)
    cone = prob.cone
    if cone.family in ("cp", "cpp"):
        return _solve_reduced(prob, opts)
    _require_solvable(cone, prob.side)
    rows = np.array([_coords(a, cone) for a in prob.A]).reshape(len(prob.A), _coords(prob.A0, cone).size)
    _check_independent(rows)
    if prob.side == "primal" and cone.family == "psd":
        face = _diagonal_face(prob)
        if face is not None:
            return _solve_on_face(prob, opts, *face)
    if prob.side == "primal":
        layout = BlockLayout(cone)
        E = np.array([layout.data_row(a) for a in prob.A]).reshape(len(prob.A), layout.nvars)
        program = ConicProgram(c=layout.data_row(prob.A0), E=E, f=prob.b, nfree=0, terms=[layout.term])
        res = solve_conic(program, opts.engine())
        if res.v is None:
            return _status_solution(res)
        X = layout.image(res.v)
        decomposition = layout.decomposition(res.v)
        dual_decomposition = None
    else:
        S, blocks = _truncation_map(cone)
        p, m = rows.shape
        E = np.block([[rows, np.zeros((p, blocks.size))], [-S, np.eye(blocks.size)]])
        program = ConicProgram(
            c=np.concatenate([svec(prob.A0), np.zeros(blocks.size)]), E=E,
            f=np.concatenate([prob.b, np.zeros(blocks.size)]), nfree=m, terms=[blocks],
        )
        res = solve_conic(program, opts.engine())
        if res.v is None:
            return _status_solution(res)
        X = smat(res.v[:m], cone.d)
        decomposition = None
        dual_decomposition = None
        if res.y is not None:
            dual_decomposition = _block_decomposition(res.y[p:], cone)
            res.y = res.y[:p]
    sol = Solution(
        status=res.status, X=X, objective=float(np.sum(prob.A0 * X)) if not cone.is_vector else float(prob.A0 @ X),
        iterations=res.iterations, decomposition=decomposition,
        dual_decomposition=dual_decomposition, gap_bound=res.gap,
    )
    if res.y is not None:
        sol.y = res.y
        sol.Z = prob.A0 - sum((yi * a for yi, a in zip(res.y, prob.A)), np.zeros_like(prob.A0))
    if sol.optimal:
        _attach_kkt(prob, sol)
    return sol


def _diagonal_face(prob: StandardProblem):
    """Look for diagonal entries of ``X`` that every feasible point has at zero.

    Multipliers with ``sum_i y_i A_i = diag(w)``, ``w >= 0`` and ``b'y = 0``
    prove ``X_jj = 0`` wherever ``w_j > 0``, since the cone sits inside the
    PSD cone.  The largest such support is found by a small linear program.
    """
    d, p = prob.cone.d, len(prob.A)
    if p == 0:
        return None
    iu = np.triu_indices(d)
    entries = np.array([a[iu] for a in prob.A]).T
    on_diag = np.flatnonzero(iu[0] == iu[1])
    pick = np.zeros((len(iu[0]), d))
    pick[on_diag, iu[0][on_diag]] = -1.0
    A_eq = np.vstack([np.hstack([entries, pick]), np.concatenate([prob.b, np.zeros(d)])])
    res = scipy.optimize.linprog(
        np.concatenate([np.zeros(p), -np.ones(d)]), A_eq=A_eq, b_eq=np.zeros(A_eq.shape[0]),
        bounds=[(None, None)] * p + [(0.0, 1.0)] * d, method="highs",
        options={"primal_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        return None
    y, w = res.x[:p], res.x[p:]
    removed = np.flatnonzero(w > 1e-6)
    if removed.size == 0:
        return None
    w = np.where(w > 1e-6, w, 0.0)
    # accept only certificates that hold to near machine precision
    slack = np.linalg.norm(entries @ y + pick @ w) + abs(float(prob.b @ y))
    if slack > 1e-9 * max(1.0, float(np.linalg.norm(y))) * prob.scale:
        return None
    restricted = _restrict_cone(prob.cone, removed)
    if restricted is None:
        return None
    keep, sub_cone = restricted
    return keep, sub_cone, removed, y, w


def _widen_block(t, block, cone: ConeSpec):
    """Place a block on fewer than ``k`` indices inside a covering tuple of ``cone``."""
    if len(t) == cone.k:
        return t, block
    home = next(u for u in cone.J if set(t) <= set(u))
    pos = [home.index(i) for i in t]
    out = np.zeros((cone.k, cone.k))
    out[np.ix_(pos, pos)] = block
    return home, out


def _solve_on_face(prob: StandardProblem, opts: SolverOptions, keep, sub_cone, removed, y_face, w) -> Solution:
    """Solve on the face ``X_jj = 0`` (j removed) and rebuild a full solution."""
    p = len(prob.A)
    sub_idx = np.ix_(keep, keep)
    A_sub = [a[sub_idx] for a in prob.A]
    rows = np.array([svec(a) for a in A_sub]).reshape(p, -1)
    norms = np.linalg.norm(rows, axis=1)
    active = np.flatnonzero(norms > 1e-12 * prob.scale)
    chosen = active
    if active.size:
        _, R, piv = scipy.linalg.qr((rows[active] / norms[active, None]).T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * diag[0]))
        chosen = np.sort(active[piv[:rank]])
    # dependent rows must agree with the kept ones, or the face is empty
    if chosen.size:
        coef = np.linalg.lstsq(rows[chosen].T, rows.T, rcond=None)[0]
        predicted = coef.T @ prob.b[chosen]
    else:
        predicted = np.zeros(p)
    if np.max(np.abs(predicted - prob.b), initial=0.0) > 1e-8 * prob.scale:
        return Solution(status="infeasible", message="the equality constraints conflict on the forced face")
    sub = StandardProblem(sub_cone, prob.A0[sub_idx], [A_sub[i] for i in chosen], prob.b[chosen])
    inner = solve(sub, opts)
    if inner.X is None:
        return inner
    d = prob.cone.d
    keep = np.asarray(keep)
    X = np.zeros((d, d))
    X[sub_idx] = inner.X
    decomposition = None
    if inner.decomposition is not None:
        decomposition = Decomposition(d, [_widen_block(tuple(int(keep[a]) for a in t), m, prob.cone)
                                          for t, m in inner.decomposition.blocks])
    sol = replace(inner, X=X, decomposition=decomposition, kkt=None,
                  message=f"{removed.size} diagonal entries of X are forced to zero and were eliminated")
    if inner.y is not None:
        y = np.zeros(p)
        y[chosen] = inner.y

        def slack(y):
            return prob.A0 - sum((yi * a for yi, a in zip(y, prob.A)), np.zeros_like(prob.A0))

        # rows living on the removed indices clear the mixed entries of Z
        touch = np.flatnonzero(norms <= 1e-12 * prob.scale)
        mixed = np.zeros((d, d), dtype=bool)
        mixed[removed, :] = mixed[:, removed] = True
        np.fill_diagonal(mixed, False)
        if touch.size and mixed.any():
            basis = np.array([prob.A[i][mixed] for i in touch]).T
            y[touch] += np.linalg.lstsq(basis, slack(y)[mixed], rcond=None)[0]
        # the certificate raises the removed diagonal without touching the rest;
        # when the dual optimum is not attained it has to be followed far out
        ratio = np.diag(slack(y))[removed] / w[removed]
        base = min(0.0, float(ratio.min()))
        tau, grow = base, max(1.0, abs(base))
        for _ in range(40):
            if _margin_in(slack(y + tau * y_face), prob.cone, dual=True) >= -1e-9 * prob.scale:
                break
            tau = base - grow
            grow *= 4.0
        y = y + tau * y_face
        sol.y, sol.Z = y, slack(y)
    if sol.optimal:
        _attach_kkt(prob, sol)
    return sol


def _solve_reduced(prob: StandardProblem, opts: SolverOptions) -> Solution:
    """Solve a cp/cpp program through its PSD-induced reformulation.

    ``kkt`` refers to the reformulated program; ``X``, ``y`` and ``Z`` are
    mapped back to the original data.
    """
    from .special import reduce_cp_program

    red = reduce_cp_program(prob)
    inner = solve(red.problem, opts)
    if inner.X is None:
        return inner
    p = len(prob.A)
    sol = replace(inner, X=red.recover(inner.X), decomposition=None, dual_decomposition=None,
                  message=f"solved through the PSD-induced reformulation of the {prob.cone.family} cone")
    if inner.y is not None:
        sol.y = inner.y[:p]
        sol.Z = prob.A0 - sum((yi * a for yi, a in zip(sol.y, prob.A)), np.zeros_like(prob.A0))
    sol.objective = float(np.sum(prob.A0 * sol.X))
    return sol


def _margin_in(M, cone: ConeSpec, dual: bool, decomposition: Decomposition | None = None) -> float:
    """Membership margin of ``M`` in ``K`` (``dual=False``) or ``K*``."""
    if dual:
        return dual_membership(M, cone)[1]
    if decomposition is not None:
        target = np.diag(M) if cone.is_vector else M
        err = np.linalg.norm(target - decomposition.reconstruct())
        if err <= TOL_RECON * scale_of(target):
            return decomposition.min_block_margin()
    return primal_margin(M, cone)[1]


def kkt_residuals(prob, sol: Solution) -> KKTReport:
    """Optimality residuals of ``sol`` for ``prob``.

    Standard form: ``max_i |tr(A_i X) - b_i|``, the cone margins of ``X``
    and ``Z``, ``|tr(Z X)|``, ``||A0 - sum_i y_i A_i - Z||_F`` and
    ``|tr(A0 X) - b'y|``.
    """
    if isinstance(prob, InequalityProblem):
        return _kkt_inequality(prob, sol)
    if sol.X is None or sol.y is None or sol.Z is None:
        raise InputError("KKT residuals need X, y and Z")
    cone = prob.cone
    X, y, Z = np.asarray(sol.X, float), np.asarray(sol.y, float), np.asarray(sol.Z, float)
    inner = (lambda a, b: float(a @ b)) if cone.is_vector else (lambda a, b: float(np.sum(a * b)))
    primal_eq = max((abs(inner(a, X) - bi) for a, bi in zip(prob.A, prob.b)), default=0.0)
    resid = prob.A0 - sum((yi * a for yi, a in zip(y, prob.A)), np.zeros_like(prob.A0)) - Z
    primal_side = prob.side == "primal"
    pm = _margin_in(X, cone, dual=not primal_side, decomposition=sol.decomposition)
    dm = _margin_in(Z, cone, dual=primal_side, decomposition=sol.dual_decomposition)
    return KKTReport(
        primal_eq_res=float(primal_eq),
        primal_cone_margin=float(pm),
        dual_cone_margin=float(dm),
        complementarity=abs(inner(Z, X)),
        dual_eq_res=float(np.linalg.norm(resid)),
        gap=abs(inner(prob.A0, X) - float(prob.b @ y)),
    )


# -- inequality form --------------------------------------------------------

def _solve_inequality(prob: InequalityProblem, opts: SolverOptions) -> Solution:
    _require_solvable(prob.cone, prob.side)
    reduction = _forced_zero_pairs(prob) if prob.cone.family == "psd" else None
    if reduction is None:
        return _solve_inequality_core(prob, opts)
    return _solve_without_pairs(prob, opts, *reduction)


def _forced_zero_pairs(prob: InequalityProblem):
    """Find diagonal entries the LMI pins to zero.

    An index whose row is zero off the diagonal and whose diagonal entry is
    either identically zero or the exact negative of another such entry
    (the ``a(x) >= 0, -a(x) >= 0`` encoding of an equality) must vanish
    for every feasible ``x``, so the LMI has no interior.  Returns the kept
    indices, the pairs, the cone on the kept indices and the equality rows
    ``B x = e``, or ``None`` when nothing is forced or the cone does not
    restrict cleanly.
    """
    cone = prob.cone
    d = cone.d
    data = np.array([prob.P0] + list(prob.P))
    off = np.abs(data).sum(axis=0)
    np.fill_diagonal(off, 0.0)
    atol = 1e-12 * prob.scale
    isolated = [i for i in range(d) if np.all(off[i] <= atol)]
    diag = data[:, np.arange(d), np.arange(d)].T
    removed, pairs = set(), []
    for i in isolated:
        if i in removed:
            continue
        if np.all(np.abs(diag[i]) <= atol):
            removed.add(i)
            continue
        for j in isolated:
            if j > i and j not in removed and np.all(np.abs(diag[i] + diag[j]) <= atol):
                removed.update((i, j))
                pairs.append((i, j))
                break
    restricted = _restrict_cone(cone, removed)
    if restricted is None:
        return None
    keep, sub_cone = restricted
    B = np.array([diag[i][1:] for i, _ in pairs]).reshape(len(pairs), len(prob.q))
    e = np.array([-diag[i][0] for i, _ in pairs])
    return keep, pairs, sub_cone, (B, e)


def _restrict_cone(cone: ConeSpec, removed):
    """The cone on the face where the ``removed`` rows and columns vanish.

    Blocks touching a removed index shrink to their remaining indices.  The
    face is again a k-th order cone when each shrunken tuple fits inside an
    untouched one; otherwise ``None`` is returned.
    """
    removed = set(removed)
    if not removed:
        return None
    keep = [i for i in range(cone.d) if i not in removed]
    if not keep:
        return None
    if len(keep) < cone.k:
        # every block shrinks to a subset of keep; one covering tuple makes the face PSD
        if any(set(keep) <= set(t) for t in cone.J):
            return keep, make_cone("psd", len(keep), len(keep))
        return None
    pos = {i: a for a, i in enumerate(keep)}
    untouched = [tuple(pos[i] for i in t) for t in cone.J if not removed.intersection(t)]
    sets = [frozenset(u) for u in untouched]
    for t in cone.J:
        rest = frozenset(pos[i] for i in t if i not in removed)
        if removed.intersection(t) and not any(rest <= u for u in sets):
            return None
    return keep, make_cone("psd", len(keep), cone.k, untouched, force=True)


def _solve_without_pairs(prob, opts, keep, pairs, sub_cone, equalities) -> Solution:
    """Solve on the surviving indices and map the solution back."""
    sub_idx = np.ix_(keep, keep)
    sub = InequalityProblem(sub_cone, prob.q, prob.P0[sub_idx], [p[sub_idx] for p in prob.P], prob.side)
    B, e = equalities
    nonzero = np.any(B != 0, axis=1)
    inner = _solve_inequality_core(sub, opts, (B[nonzero], e[nonzero]))
    if inner.x is None:
        return inner
    d = prob.cone.d
    keep = np.asarray(keep)
    X = np.zeros((d, d))
    X[sub_idx] = inner.X

    def remap(dec):
        if dec is None:
            return None
        return Decomposition(d, [(tuple(int(keep[a]) for a in t), m) for t, m in dec.blocks])

    sol = replace(inner, X=X, decomposition=remap(inner.decomposition),
                  dual_decomposition=remap(inner.dual_decomposition), kkt=None)
    if inner.Z is not None:
        mu = np.zeros(len(pairs))
        mu[nonzero] = inner.y[len(inner.y) - int(nonzero.sum()):]
        Z = np.zeros((d, d))
        Z[sub_idx] = inner.Z
        extra = []
        for (i, j), m in zip(pairs, mu):
            Z[i, i], Z[j, j] = max(m, 0.0), max(-m, 0.0)
            extra += [(i, Z[i, i]), (j, Z[j, j])]
        if sol.dual_decomposition is not None:
            # the diagonal entries need blocks of their own to certify Z in K
            for i, val in extra:
                t = next(t for t in prob.cone.J if i in t)
                block = np.zeros((len(t), len(t)))
                block[t.index(i), t.index(i)] = val
                sol.dual_decomposition.blocks.append((t, block))
        sol.Z = Z
    if sol.optimal:
        _attach_kkt(prob, sol)
    return sol


def _solve_inequality_core(prob: InequalityProblem, opts: SolverOptions, equalities=None) -> Solution:
    cone = prob.cone
    n = len(prob.q)
    Pc = np.array([_coords(p, cone) for p in prob.P]).reshape(n, -1).T
    P0c = _coords(prob.P0, cone)
    ncoords = P0c.size
    B, e = equalities if equalities is not None else (np.zeros((0, n)), np.zeros(0))
    neq = len(e)

    def with_equalities(E, f):
        extra = np.zeros((neq, E.shape[1]))
        extra[:, :n] = B
        return np.vstack([E, extra]), np.concatenate([f, e])

    if prob.side == "primal":
        layout = BlockLayout(cone)
        Lfull = np.zeros((ncoords, layout.nvars))
        Lfull[layout.covered] = layout.L
        E, f = with_equalities(np.hstack([-Pc, Lfull]), P0c)
        program = ConicProgram(
            c=np.concatenate([prob.q, np.zeros(layout.nvars)]), E=E, f=f, nfree=n, terms=[layout.term],
        )
        res = solve_conic(program, opts.engine())
        if res.v is None:
            return _status_solution(res)
        x = res.v[:n]
        X = layout.image(res.v[n:])
        decomposition = layout.decomposition(res.v[n:])
        dual_decomposition = None
    else:
        S, blocks = _truncation_map(cone)
        E, f = with_equalities(np.hstack([-S @ Pc, np.eye(blocks.size)]), S @ P0c)
        program = ConicProgram(
            c=np.concatenate([prob.q, np.zeros(blocks.size)]), E=E, f=f, nfree=n, terms=[blocks],
        )
        res = solve_conic(program, opts.engine())
        if res.v is None:
            return _status_solution(res)
        x = res.v[:n]
        X = smat(P0c + Pc @ x, cone.d)
        decomposition = None
        dual_decomposition = None
    sol = Solution(
        status=res.status, X=X, x=x, objective=float(prob.q @ x), iterations=res.iterations,
        decomposition=decomposition, dual_decomposition=dual_decomposition, gap_bound=res.gap,
    )
    if res.y is not None:
        cone_rows = res.y[:len(res.y) - neq]
        if prob.side == "primal":
            sol.Z = _from_coords(-cone_rows, cone)
        else:
            dual_decomposition = _block_decomposition(cone_rows, cone)
            sol.dual_decomposition = dual_decomposition
            sol.Z = dual_decomposition.reconstruct()
        sol.y = res.y
    if sol.optimal and not neq:
        _attach_kkt(prob, sol)
    return sol


def _kkt_inequality(prob: InequalityProblem, sol: Solution) -> KKTReport:
    """Residuals for ``min q'x, G(x) in K`` and ``max -tr(P0 Z), tr(P_i Z) = q_i, Z in K*``."""
    if sol.x is None or sol.Z is None or sol.X is None:
        raise InputError("KKT residuals need x, X and Z")
    cone = prob.cone
    x, X, Z = np.asarray(sol.x, float), np.asarray(sol.X, float), np.asarray(sol.Z, float)
    inner = (lambda a, b: float(a @ b)) if cone.is_vector else (lambda a, b: float(np.sum(a * b)))
    primal_side = prob.side == "primal"
    pm = _margin_in(X, cone, dual=not primal_side, decomposition=sol.decomposition)
    dm = _margin_in(Z, cone, dual=primal_side, decomposition=sol.dual_decomposition)
    dual_eq = max((abs(inner(p, Z) - qi) for p, qi in zip(prob.P, prob.q)), default=0.0)
    return KKTReport(
        primal_eq_res=float(np.linalg.norm(prob.lmi(x) - X)),
        primal_cone_margin=float(pm),
        dual_cone_margin=float(dm),
        complementarity=abs(inner(Z, X)),
        dual_eq_res=float(dual_eq),
        gap=abs(float(prob.q @ x) + inner(prob.P0, Z)),
    )


# -- form conversions -------------------------------------------------------

def _psd_only(cone: ConeSpec):
    if cone.family != "psd":
        raise UnsupportedFamilyError("form conversions are defined for the psd family only")


def _embed(cone: ConeSpec, dim: int, offset: int, extra) -> ConeSpec:
    """Tuples of ``cone`` shifted by ``offset`` plus the given extra tuples."""
    tuples = [tuple(i + offset for i in t) for t in cone.J] + list(extra)
    return make_cone("psd", dim, cone.k, tuples, force=True)


def convert_standard_to_inequality(prob: StandardProblem) -> InequalityProblem:
    """Entries of ``X`` become the variables; each equality turns into two
    nonnegative diagonal entries ``tr(A_i X) - b_i`` and ``b_i - tr(A_i X)``.

    The LMI is ``diag(X(x), diag(r(x)), diag(-r(x)))`` over the cone's tuples
    on the first block plus every k-subset of the diagonal block.
    """
    cone = prob.cone
    _psd_only(cone)
    d, k = cone.d, cone.k
    A, b = list(prob.A), list(prob.b)
    if A:
        # replicate the constraints until the diagonal block admits k-subsets
        reps = -(-k // (2 * len(A)))
        A, b = A * reps, b * reps
    p = len(A)
    dim = d + 2 * p
    diag_tuples = itertools.combinations(range(d, dim), k) if p else ()
    big = _embed(cone, dim, 0, diag_tuples)
    basis = svec_basis(d)
    P = []
    for Bj in basis:
        m = np.zeros((dim, dim))
        m[:d, :d] = Bj
        vals = np.array([np.sum(a * Bj) for a in A])
        idx = np.arange(d, d + p)
        m[idx, idx] = vals
        m[idx + p, idx + p] = -vals
        P.append(m)
    P0 = np.zeros((dim, dim))
    if p:
        idx = np.arange(d, d + p)
        P0[idx, idx] = -np.asarray(b)
        P0[idx + p, idx + p] = np.asarray(b)
    q = svec(prob.A0)
    return InequalityProblem(cone=big, q=q, P0=P0, P=P, side=prob.side)


def convert_inequality_to_standard(prob: InequalityProblem) -> StandardProblem:
    """Split ``x = x+ - x-`` and stack ``W = diag(diag(x+), diag(x-), Xbar)``.

    Entry constraints force ``Xbar = P0 + sum_i x_i P_i``; the off-diagonal
    entries of the split block are pinned to zero.  Unused padding variables
    are added when ``2n < k``.
    """
    cone = prob.cone
    _psd_only(cone)
    d, k = cone.d, cone.k
    n = len(prob.q)
    npad = max(n, -(-k // 2))
    q = np.concatenate([prob.q, np.zeros(npad - n)])
    P = list(prob.P) + [np.zeros((d, d))] * (npad - n)
    split = 2 * npad
    dim = split + d
    big = _embed(cone, dim, split, itertools.combinations(range(split), k))
    A0 = np.zeros((dim, dim))
    A0[np.arange(npad), np.arange(npad)] = q
    A0[np.arange(npad, split), np.arange(npad, split)] = -q
    A, b = [], []
    iu = np.triu_indices(d)
    for a, c in zip(*iu):
        m = np.zeros((dim, dim))
        coef = np.array([pi[a, c] for pi in P])
        m[np.arange(npad), np.arange(npad)] = coef
        m[np.arange(npad, split), np.arange(npad, split)] = -coef
        if a == c:
            m[split + a, split + a] = -1.0
        else:
            m[split + a, split + c] = m[split + c, split + a] = -0.5
        A.append(m)
        b.append(-prob.P0[a, c])
    if k >= 2:
        for i, j in itertools.combinations(range(split), 2):
            m = np.zeros((dim, dim))
            m[i, j] = m[j, i] = 0.5
            A.append(m)
            b.append(0.0)
    return StandardProblem(cone=big, A0=A0, A=A, b=np.array(b), side=prob.side)


def socp_to_sdd(soc_constraints, objective, equalities=None) -> InequalityProblem:
    """Cast ``min a'x  s.t.  ||A_i x + b_i|| <= c_i'x + d_i`` (and ``B x = e``)
    as an inequality program over the factor-width-2 cone.

    Each constraint becomes the arrow block
    ``[[(c'x+d) I, Ax+b], [(Ax+b)', c'x+d]]``; the blocks (and the paired
    diagonal entries for the equalities) are stacked block-diagonally.
    """
    a = np.asarray(objective, dtype=float).ravel()
    n = a.size
    pieces = []
    for idx, con in enumerate(soc_constraints):
        Ai, bi, ci, di = con
        Ai = np.asarray(Ai, dtype=float).reshape(-1, n)
        bi = np.asarray(bi, dtype=float).ravel()
        ci = np.asarray(ci, dtype=float).ravel()
        if bi.size != Ai.shape[0] or ci.size != n:
            raise DimensionMismatchError(f"second-order constraint {idx} has inconsistent shapes")
        pieces.append(("arrow", Ai, bi, ci, float(di)))
    if equalities is not None:
        B, e = equalities
        B = np.asarray(B, dtype=float).reshape(-1, n)
        e = np.asarray(e, dtype=float).ravel()
        if e.size != B.shape[0]:
            raise DimensionMismatchError("equality data has inconsistent shapes")
        pieces.append(("eq", B, e))
    sizes = [p[1].shape[0] + 1 if p[0] == "arrow" else 2 * p[1].shape[0] for p in pieces]
    dim = sum(sizes)
    if dim < 2:
        raise InputError("the cast needs at least one constraint of size two or more")
    P0 = np.zeros((dim, dim))
    P = [np.zeros((dim, dim)) for _ in range(n)]
    pos = 0
    for piece, size in zip(pieces, sizes):
        if piece[0] == "arrow":
            _, Ai, bi, ci, di = piece
            m = size - 1
            tail = pos + m
            diag = np.arange(pos, pos + size)
            P0[diag, diag] = di
            P0[pos:tail, tail] = P0[tail, pos:tail] = bi
            for j in range(n):
                P[j][diag, diag] = ci[j]
                P[j][pos:tail, tail] = P[j][tail, pos:tail] = Ai[:, j]
        else:
            _, B, e = piece
            r = B.shape[0]
            up = np.arange(pos, pos + r)
            down = up + r
            P0[up, up], P0[down, down] = -e, e
            for j in range(n):
                P[j][up, up], P[j][down, down] = B[:, j], -B[:, j]
        pos += size
    return InequalityProblem(cone=make_cone("psd", dim, 2), q=a, P0=P0, P=P)


# -- hierarchy scans --------------------------------------------------------

@dataclass
class ScanReport:
    entries: list
    violations: list

    @property
    def objectives(self) -> list:
        return [e[1] for e in self.entries]

    def to_json(self) -> dict:
        return {
            "entries": [{"k": k, "objective": _num(obj), "status": st} for k, obj, st in self.entries],
            "violations": [list(v) for v in self.violations],
            "monotone": not self.violations,
        }


def hierarchy_scan(prob, k_range, opts: SolverOptions | None = None, tol: float = 1e-6) -> ScanReport:
    """Solve ``prob`` over the full-index cones of each order in ``k_range``.

    For minimization over growing cones the objectives must not increase;
    any increase above ``tol * max(1, |objective|)`` is reported.
    """
    if prob.side != "primal":
        raise InputError("hierarchy scans are defined for primal-side problems")
    cone = prob.cone
    entries = []
    for k in k_range:
        cone_k = make_cone(cone.family, cone.d, int(k))
        sub = replace(prob, cone=cone_k)
        sol = solve(sub, opts)
        obj = sol.objective if sol.optimal else (float("inf") if sol.status == "infeasible" else float("nan"))
        entries.append((int(k), float(obj), sol.status))
    violations = []
    finite = [(k, o) for k, o, st in entries if st == "optimal"]
    for (k1, o1), (k2, o2) in zip(finite, finite[1:]):
        if o2 > o1 + tol * max(1.0, abs(o1)):
            violations.append((k1, k2, o2 - o1))
    return ScanReport(entries, violations)


# -- JSON -------------------------------------------------------------------

def _field(obj, key, where):
    try:
        return obj[key]
    except (KeyError, TypeError):
        raise InputError(f"{where}: missing field '{key}'") from None


def _operand_json(obj, where):
    if isinstance(obj, list) and obj and not isinstance(obj[0], (list, dict)):
        return np.asarray(obj, dtype=float)
    try:
        return sym_from_json(obj)
    except InputError as exc:
        raise InputError(f"{where}: {exc}") from None


def cone_from_json(obj, *, max_tuples=None, force: bool = False) -> ConeSpec:
    kwargs = {"force": force}
    if max_tuples is not None:
        kwargs["max_tuples"] = max_tuples
    family = _field(obj, "family", "cone")
    return make_cone(family, _field(obj, "d", "cone"), _field(obj, "k", "cone"), obj.get("J", "default"), **kwargs)


def problem_from_json(obj, **cone_kwargs):
    form = obj.get("form", "standard")
    side = obj.get("side", "primal")
    cone = cone_from_json(_field(obj, "cone", "problem"), **cone_kwargs)
    if form == "standard":
        cons = obj.get("constraints", [])
        A = [_operand_json(_field(c, "A", f"constraints[{i}]"), f"constraints[{i}].A") for i, c in enumerate(cons)]
        b = [float(_field(c, "b", f"constraints[{i}]")) for i, c in enumerate(cons)]
        return StandardProblem(cone, _operand_json(_field(obj, "A0", "problem"), "A0"), A, np.array(b), side)
    if form == "inequality":
        P = [_operand_json(p, f"P[{i}]") for i, p in enumerate(obj.get("P", []))]
        return InequalityProblem(cone, np.asarray(obj.get("q", []), dtype=float),
                                 _operand_json(_field(obj, "P0", "problem"), "P0"), P, side)
    raise InputError(f"problem: unknown form {form!r}")


def problem_to_json(prob) -> dict:
    if isinstance(prob, InequalityProblem):
        return {
            "form": "inequality", "side": prob.side, "cone": prob.cone.to_json(),
            "q": [float(v) for v in prob.q], "P0": _array_json(prob.P0), "P": [_array_json(p) for p in prob.P],
        }
    return {
        "form": "standard", "side": prob.side, "cone": prob.cone.to_json(), "A0": _array_json(prob.A0),
        "constraints": [{"A": _array_json(a), "b": float(bi)} for a, bi in zip(prob.A, prob.b)],
    }
