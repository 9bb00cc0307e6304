"""Copositive and completely positive blocks, and norm-induced cones.

For matrices of size at most four the copositive cone equals PSD + NN
(entrywise nonnegative) and the completely positive cone equals PSD ∩ NN,
so both memberships reduce to small conic programs or direct checks.

Norm cones ``{(t, X) : ||X|| <= t}`` are handled as ``(t, X)`` pairs.  The
k-th order cone uses tuples that always contain the ``t`` coordinate, so a
tuple selects ``k - 1`` entries (or a ``(k-1)``-principal submatrix) of ``X``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._engine import ConicProgram, EngineOptions, PSDBlocks, solve_conic
from .cones import primal_margin
from .errors import (
    DimensionMismatchError,
    InputError,
    SolverFailureError,
    UnsupportedFamilyError,
)
from .matrix import (
    TOL_PSD,
    as_sym,
    psd_margin,
    scale_of,
    smat,
    svec,
    sym_from_json,
    sym_to_json,
)
from .structures import ConeSpec, make_cone

SIMPLEX_SAMPLES = 2000
MAX_BLOCK = 4


# -- copositive / completely positive --------------------------------------

def _small_block(A, what: str) -> np.ndarray:
    A = as_sym(A)
    if A.shape[0] > MAX_BLOCK:
        raise UnsupportedFamilyError(
            f"{what} membership is exact only for size <= {MAX_BLOCK}; use reduce_cp_program for larger cones"
        )
    return A


def simplex_points(k: int, samples: int = SIMPLEX_SAMPLES, seed: int = 0) -> np.ndarray:
    """Vertices, pairwise midpoints and barycentre of the simplex, topped up with uniform draws."""
    eye = np.eye(k)
    fixed = [eye, np.full((1, k), 1.0 / k)]
    fixed += [0.5 * (eye[i] + eye[j])[None] for i, j in itertools.combinations(range(k), 2)]
    fixed = np.vstack(fixed)
    rng = np.random.default_rng(seed)
    extra = rng.dirichlet(np.ones(k), size=max(samples - len(fixed), 0))
    return np.vstack([fixed, extra])[:max(samples, len(fixed))]


@dataclass
class CopositiveResult:
    member: bool
    margin: float
    split: tuple | None = None
    witness: np.ndarray | None = None

    def __iter__(self):
        yield self.member
        yield self.split


def cp_membership(A, *, seed: int = 0, tol: float = 1e-9) -> CopositiveResult:
    """Copositivity of a matrix of size at most four.

    A cheap falsifier evaluates ``x'Ax`` on simplex points first; otherwise
    the split ``A = S + N`` is found by maximizing ``delta`` with
    ``S - delta*I`` PSD and ``N - delta`` entrywise nonnegative.  Unpacks as
    ``(member, (S, N) or None)``.
    """
    A = _small_block(A, "copositive")
    k = A.shape[0]
    scale = scale_of(A)
    pts = simplex_points(k, seed=seed)
    values = np.einsum("pi,ij,pj->p", pts, A, pts)
    worst = int(np.argmin(values))
    if values[worst] < -TOL_PSD * scale:
        return CopositiveResult(False, float(values[worst]), None, pts[worst])
    nk = k * (k + 1) // 2
    shift = svec(np.eye(k) + np.ones((k, k)))
    E = np.hstack([shift[:, None], np.eye(nk), np.eye(nk)])
    c = np.zeros(1 + 2 * nk)
    c[0] = -1.0
    prog = ConicProgram(c=c, E=E, f=svec(A), nfree=1, terms=[PSDBlocks(k, 1), PSDBlocks(1, nk)])
    res = solve_conic(prog, EngineOptions(tol=tol))
    if res.status != "optimal":
        raise SolverFailureError(f"copositivity program ended with status {res.status}")
    delta = float(res.v[0])
    S = smat(res.v[1:1 + nk], k) + delta * np.eye(k)
    N = A - S
    member = delta + res.gap >= -TOL_PSD * scale
    return CopositiveResult(member, delta, (S, N) if member else None)


def cpp_membership(A, tol: float | None = None) -> bool:
    """Complete positivity of a matrix of size at most four: PSD and entrywise nonnegative."""
    A = _small_block(A, "completely positive")
    tol = TOL_PSD * scale_of(A) if tol is None else tol
    return bool(psd_margin(A) >= -tol and A.min(initial=0.0) >= -tol)


@dataclass
class CPReduction:
    """A PSD-induced standard problem equivalent to a copositive or completely positive one.

    ``recover`` maps an optimal ``W`` of ``problem`` back to ``X``.
    """

    problem: object
    recover: Callable[[np.ndarray], np.ndarray]
    source: ConeSpec


def _pinned_diagonal(dim: int, start: int, count: int):
    """Constraints zeroing every off-diagonal entry of the block ``[start, start+count)``."""
    rows = []
    for i, j in itertools.combinations(range(start, start + count), 2):
        m = np.zeros((dim, dim))
        m[i, j] = m[j, i] = 0.5
        rows.append(m)
    return rows


def reduce_cp_program(prob) -> CPReduction:
    """Recast a standard problem over an induced copositive or completely positive cone.

    Copositive: ``X = sum_s lift(S_s) + N`` with ``N >= 0`` on the covered
    entries, so ``W = diag(X_S, diag(n))`` lives in a PSD-induced cone
    (nonnegativity as a diagonal block).  Completely positive: every tuple gets
    its own block ``M_s`` and the entries of ``M_s`` are tied to a diagonal
    block of nonnegative slacks.
    """
    from .solver import StandardProblem

    cone = prob.cone
    if cone.family not in ("cp", "cpp"):
        raise UnsupportedFamilyError(f"expected a cp or cpp cone, got {cone.family!r}")
    if cone.k > MAX_BLOCK:
        raise UnsupportedFamilyError(f"blocks of size {cone.k} > {MAX_BLOCK} have no exact reduction")
    if prob.side != "primal":
        raise UnsupportedFamilyError("only primal-side cp/cpp programs are reduced")
    if cone.family == "cp":
        return _reduce_copositive(prob, StandardProblem)
    return _reduce_completely_positive(prob, StandardProblem)


def _reduce_copositive(prob, StandardProblem) -> CPReduction:
    cone = prob.cone
    d, k = cone.d, cone.k
    pairs = sorted({(min(a, b), max(a, b)) for t in cone.J for a in t for b in t})
    m = len(pairs)
    npad = max(m, k)
    dim = d + npad
    tuples = list(cone.J) + [tuple(d + i for i in s) for s in itertools.combinations(range(npad), k)]
    big = make_cone("psd", dim, k, tuples, force=True)

    def embed(a):
        w = np.zeros((dim, dim))
        w[:d, :d] = a
        for idx, (i, j) in enumerate(pairs):
            w[d + idx, d + idx] = a[i, j] if i == j else 2.0 * a[i, j]
        return w

    A = [embed(a) for a in prob.A]
    b = list(prob.b)
    pins = _pinned_diagonal(dim, d, npad)
    for idx in range(m, npad):
        pad = np.zeros((dim, dim))
        pad[d + idx, d + idx] = 1.0
        pins.append(pad)
    A += pins
    b += [0.0] * len(pins)

    def recover(W):
        W = np.asarray(W, dtype=float)
        X = W[:d, :d].copy()
        for idx, (i, j) in enumerate(pairs):
            X[i, j] += W[d + idx, d + idx]
            if i != j:
                X[j, i] += W[d + idx, d + idx]
        return X

    return CPReduction(StandardProblem(big, embed(prob.A0), A, b), recover, cone)


def _reduce_completely_positive(prob, StandardProblem) -> CPReduction:
    cone = prob.cone
    d, k = cone.d, cone.k
    tuples = list(cone.J)
    nb = len(tuples)
    entries = [(s, a, c) for s in range(nb) for a in range(k) for c in range(a, k)]
    npad = max(len(entries), k)
    base = nb * k
    dim = base + npad
    block_tuples = [tuple(range(s * k, (s + 1) * k)) for s in range(nb)]
    block_tuples += [tuple(base + i for i in s) for s in itertools.combinations(range(npad), k)]
    big = make_cone("psd", dim, k, block_tuples, force=True)

    def embed(a):
        w = np.zeros((dim, dim))
        for s, t in enumerate(tuples):
            idx = np.asarray(t)
            w[s * k:(s + 1) * k, s * k:(s + 1) * k] = a[np.ix_(idx, idx)]
        return w

    A = [embed(a) for a in prob.A]
    b = list(prob.b)
    # block entry minus its slack is zero
    for e, (s, a, c) in enumerate(entries):
        row = np.zeros((dim, dim))
        i, j = s * k + a, s * k + c
        row[i, j] = row[j, i] = 0.5
        row[base + e, base + e] = -1.0
        A.append(row)
        b.append(0.0)
    pins = _pinned_diagonal(dim, base, npad)
    for e in range(len(entries), npad):
        pad = np.zeros((dim, dim))
        pad[base + e, base + e] = 1.0
        pins.append(pad)
    A += pins
    b += [0.0] * len(pins)

    def recover(W):
        W = np.asarray(W, dtype=float)
        X = np.zeros((d, d))
        for s, t in enumerate(tuples):
            idx = np.asarray(t)
            X[np.ix_(idx, idx)] += W[s * k:(s + 1) * k, s * k:(s + 1) * k]
        return X

    return CPReduction(StandardProblem(big, embed(prob.A0), A, b), recover, cone)


# -- norms ------------------------------------------------------------------

VECTOR_NORMS = ("lp",)
MATRIX_NORMS = ("spectral", "nuclear", "kyfan")


@dataclass(frozen=True)
class NormDescriptor:
    """A vector ``lp`` norm or a unitarily invariant norm on symmetric matrices."""

    kind: str
    param: float | None = None

    def __post_init__(self):
        if self.kind == "lp":
            if self.param is None or not self.param >= 1:
                raise InputError(f"lp norms need p >= 1, got {self.param}")
        elif self.kind == "kyfan":
            if self.param is None or self.param < 1 or self.param != int(self.param):
                raise InputError(f"Ky Fan norms need an integer r >= 1, got {self.param}")
        elif self.kind not in ("spectral", "nuclear"):
            raise InputError(f"unknown norm {self.kind!r}")

    @property
    def domain(self) -> str:
        return "vector" if self.kind == "lp" else "symmetric-matrix"

    @property
    def name(self) -> str:
        if self.kind == "lp":
            p = self.param
            if p == 1:
                return "l1"
            if p == 2:
                return "l2"
            if math.isinf(p):
                return "linf"
            return f"lp:{int(p) if p == int(p) else p}"
        if self.kind == "kyfan":
            return f"kyfan:{int(self.param)}"
        return self.kind

    def __str__(self) -> str:
        return self.name


def parse_norm(name) -> NormDescriptor:
    """``"l1"``, ``"l2"``, ``"linf"``, ``"lp:3"``, ``"spectral"``, ``"nuclear"`` or ``"kyfan:2"``."""
    if isinstance(name, NormDescriptor):
        return name
    text = str(name).strip().lower()
    if text.startswith("norm:"):
        text = text[5:]
    fixed = {"l1": 1.0, "l2": 2.0, "linf": math.inf}
    if text in fixed:
        return NormDescriptor("lp", fixed[text])
    if text in ("spectral", "nuclear"):
        return NormDescriptor(text)
    head, _, arg = text.partition(":")
    try:
        value = float(arg)
    except ValueError:
        raise InputError(f"cannot parse norm {name!r}") from None
    if head == "lp":
        return NormDescriptor("lp", value)
    if head == "kyfan":
        return NormDescriptor("kyfan", value)
    raise InputError(f"cannot parse norm {name!r}")


def _check_domain(N: NormDescriptor, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if N.domain == "vector":
        if X.ndim != 1:
            raise DimensionMismatchError(f"{N} acts on vectors, got shape {X.shape}")
        return X
    if X.ndim != 2 or X.shape[0] != X.shape[1]:
        raise DimensionMismatchError(f"{N} acts on square symmetric matrices, got shape {X.shape}")
    return X


def _abs_eigs(X) -> np.ndarray:
    """Singular values of symmetric matrices (stacked on the leading axes), descending."""
    if X.shape[-1] == 0:
        return np.zeros(X.shape[:-1])
    return -np.sort(-np.abs(np.linalg.eigvalsh(X)), axis=-1)


def _matrix_norm(kind: str, param, sv) -> np.ndarray:
    if kind == "spectral":
        return sv[..., 0] if sv.shape[-1] else np.zeros(sv.shape[:-1])
    if kind == "nuclear":
        return sv.sum(axis=-1)
    return sv[..., :int(param)].sum(axis=-1)


def norm_eval(N, X) -> float:
    N = parse_norm(N)
    X = _check_domain(N, X)
    if N.kind == "lp":
        return float(np.linalg.norm(X, ord=N.param)) if X.size else 0.0
    return float(_matrix_norm(N.kind, N.param, _abs_eigs(X)))


def _conjugate_exponent(p: float) -> float:
    if p == 1:
        return math.inf
    if math.isinf(p):
        return 1.0
    return p / (p - 1.0)


def _dual_of_sv(N: NormDescriptor, sv) -> np.ndarray:
    if N.kind == "spectral":
        return _matrix_norm("nuclear", None, sv)
    if N.kind == "nuclear":
        return _matrix_norm("spectral", None, sv)
    # Ky Fan r: max(spectral, nuclear / r)
    return np.maximum(_matrix_norm("spectral", None, sv), _matrix_norm("nuclear", None, sv) / N.param)


def dual_norm_eval(N, Y) -> float:
    """``||Y||_* = max { <X, Y> : ||X|| <= 1 }``."""
    N = parse_norm(N)
    Y = _check_domain(N, Y)
    if N.kind == "lp":
        return float(np.linalg.norm(Y, ord=_conjugate_exponent(N.param))) if Y.size else 0.0
    return float(_dual_of_sv(N, _abs_eigs(Y)))


def dual_pair_witness(N, X) -> np.ndarray:
    """``Y`` with ``||Y||_* = 1`` and ``<X, Y> = ||X||`` (zero when ``X = 0``)."""
    N = parse_norm(N)
    X = _check_domain(N, X)
    value = norm_eval(N, X)
    if value == 0:
        return np.zeros_like(X)
    if N.kind == "lp":
        p = N.param
        if math.isinf(p):
            Y = np.zeros_like(X)
            i = int(np.argmax(np.abs(X)))
            Y[i] = np.sign(X[i])
            return Y
        if p == 1:
            return np.sign(X)
        return np.sign(X) * np.abs(X) ** (p - 1) / value ** (p - 1)
    lam, U = np.linalg.eigh(X)
    order = np.argsort(-np.abs(lam))
    count = {"spectral": 1, "nuclear": len(lam)}.get(N.kind, min(int(N.param or 0), len(lam)))
    sel = order[:count]
    return (U[:, sel] * np.sign(lam[sel])) @ U[:, sel].T


def inner(X, Y) -> float:
    return float(np.sum(np.asarray(X, dtype=float) * np.asarray(Y, dtype=float)))


@dataclass
class NormAxiomReport:
    norm: str
    samples: int
    consistency_violations: int = 0
    monotonicity_violations: int = 0
    max_consistency_error: float = 0.0
    max_monotonicity_excess: float = 0.0

    @property
    def violations(self) -> int:
        return self.consistency_violations + self.monotonicity_violations

    def to_json(self) -> dict:
        return {
            "norm": self.norm,
            "samples": self.samples,
            "consistency_violations": self.consistency_violations,
            "monotonicity_violations": self.monotonicity_violations,
            "max_consistency_error": self.max_consistency_error,
            "max_monotonicity_excess": self.max_monotonicity_excess,
            "violations": self.violations,
        }


def check_norm_axioms(norm, samples: int = 500, seed: int = 0, *, dim: int | None = None,
                      domain: str | None = None, tol: float = 1e-9) -> NormAxiomReport:
    """Count consistency and monotonicity violations on random points and index subsets.

    ``norm`` is a descriptor, a norm name, or any callable (then ``domain``
    says whether it takes vectors or symmetric matrices).
    """
    if callable(norm) and not isinstance(norm, NormDescriptor):
        evaluate, label, domain = norm, getattr(norm, "__name__", "custom"), domain or "vector"
    else:
        desc = parse_norm(norm)
        evaluate, label, domain = (lambda X: norm_eval(desc, X)), desc.name, desc.domain
    n = dim or (6 if domain == "vector" else 5)
    rng = np.random.default_rng(seed)
    report = NormAxiomReport(label, samples)
    for _ in range(samples):
        size = int(rng.integers(1, n + 1))
        idx = np.sort(rng.choice(n, size=size, replace=False))
        if domain == "vector":
            X = rng.standard_normal(n)
            sub = X[idx]
            lifted = np.zeros(n)
            lifted[idx] = sub
        else:
            G = rng.standard_normal((n, n))
            X = 0.5 * (G + G.T)
            sub = X[np.ix_(idx, idx)]
            lifted = np.zeros((n, n))
            lifted[np.ix_(idx, idx)] = sub
        full, part, padded = evaluate(X), evaluate(sub), evaluate(lifted)
        scale = max(1.0, abs(full))
        err = abs(part - padded)
        excess = part - full
        report.max_consistency_error = max(report.max_consistency_error, float(err))
        report.max_monotonicity_excess = max(report.max_monotonicity_excess, float(excess))
        report.consistency_violations += int(err > tol * scale)
        report.monotonicity_violations += int(excess > tol * scale)
    return report


@dataclass
class NormConePoint:
    """``(t, X)`` standing for ``diag(t, X)``; ``X`` is a vector or a symmetric matrix."""

    t: float
    X: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        self.t = float(self.t)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 2:
            self.X = as_sym(self.X)
        elif self.X.ndim != 1:
            raise DimensionMismatchError(f"X must be a vector or a square matrix, got shape {self.X.shape}")

    @property
    def is_vector(self) -> bool:
        return self.X.ndim == 1

    @property
    def ambient(self) -> int:
        return 1 + self.X.shape[0]

    def scale(self) -> float:
        return max(1.0, abs(self.t), float(np.linalg.norm(self.X)))

    def embedded(self) -> np.ndarray:
        """``diag(t, X)`` as one matrix (vectors become diagonals)."""
        X = np.diag(self.X) if self.is_vector else self.X
        out = np.zeros((self.ambient, self.ambient))
        out[0, 0] = self.t
        out[1:, 1:] = X
        return out

    def to_json(self) -> dict:
        if self.is_vector:
            return {"t": self.t, "x": [float(v) for v in self.X]}
        return {"t": self.t, "X": sym_to_json(self.X)}

    @classmethod
    def from_json(cls, obj) -> "NormConePoint":
        try:
            t = float(obj["t"])
            if "x" in obj:
                return cls(t, np.asarray(obj["x"], dtype=float))
            return cls(t, sym_from_json(obj["X"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed norm-cone point: {exc}") from None


def _norm_family(N: NormDescriptor, d: int, k: int, max_tuples=None, force=False) -> ConeSpec:
    kwargs = {"force": force}
    if max_tuples is not None:
        kwargs["max_tuples"] = max_tuples
    return make_cone(f"norm:{N.name}", d, k, "soc", **kwargs)


def normcone_k_membership(point: NormConePoint, N, d: int, k: int, side: str = "dual", *,
                          tol: float | None = None, max_tuples=None, force: bool = False) -> tuple[bool, float]:
    """Membership of ``(t, X)`` in the k-th order norm cone or its dual.

    Returns ``(verdict, margin)``.  Dual side: the margin is ``t`` minus the
    largest dual norm of a truncation of ``X`` to ``k - 1`` indices.  Primal
    side (l1 and l2 only): the largest uniform shift of the block ``t``
    entries that keeps a decomposition feasible.
    """
    N = parse_norm(N)
    if not isinstance(point, NormConePoint):
        point = NormConePoint(*point)
    if point.is_vector != (N.domain == "vector"):
        raise DimensionMismatchError(f"{N} needs a {N.domain} point")
    if point.ambient != d:
        raise DimensionMismatchError(f"point has ambient dimension {point.ambient}, expected {d}")
    if side not in ("primal", "dual"):
        raise InputError(f"side must be 'primal' or 'dual', got {side!r}")
    cone = _norm_family(N, d, k, max_tuples, force)
    scale = point.scale()
    tol = TOL_PSD * scale if tol is None else tol
    if side == "dual":
        margin = point.t - _largest_dual_truncation(point, N, cone)
        return bool(margin >= -tol), float(margin)
    return _primal_norm_membership(point, N, cone, tol)


def _largest_dual_truncation(point: NormConePoint, N: NormDescriptor, cone: ConeSpec) -> float:
    width = cone.k - 1
    if width == 0 or point.X.shape[0] == 0:
        return 0.0
    if N.kind == "lp":
        # the q-norm is monotone in |x_i|, so the worst tuple takes the largest entries
        top = -np.sort(-np.abs(point.X))[:width]
        return float(np.linalg.norm(top, ord=_conjugate_exponent(N.param)))
    idx = cone.J.index[:, 1:] - 1
    subs = point.X[idx[:, :, None], idx[:, None, :]]
    return float(np.max(_dual_of_sv(N, _abs_eigs(subs))))


def _primal_norm_membership(point: NormConePoint, N: NormDescriptor, cone: ConeSpec, tol: float):
    if N.kind == "lp" and N.param == 2:
        z = np.concatenate([[point.t], point.X])
        verdict, delta, _ = primal_margin(z, make_cone("soc", cone.d, cone.k, cone.J, force=True))
        return bool(verdict), float(delta)
    if N.kind == "lp" and N.param == 1:
        x = point.X
        if cone.k == 1:
            if np.any(np.abs(x) > tol):
                return False, float("-inf")
            return bool(point.t >= -tol), point.t
        # blocks partition x, so the t budget must cover ||x||_1 plus a shift per block
        margin = (point.t - float(np.abs(x).sum())) / len(cone.J)
        return bool(margin >= -tol), float(margin)
    raise UnsupportedFamilyError(f"primal membership is implemented for l1 and l2 only, not {N}")


def norm_nesting_certificate(N, d: int, k: int) -> NormConePoint:
    """A point of the order-``k`` dual cone outside the order-``k+1`` dual cone.

    l2: ``(sqrt(k-1), 1)``; nuclear: ``(k, I + 11')``.
    """
    N = parse_norm(N)
    m = d - 1
    if N.kind == "lp" and N.param == 2:
        return NormConePoint(math.sqrt(k - 1), np.ones(m))
    if N.kind == "nuclear":
        return NormConePoint(float(k), np.eye(m) + np.ones((m, m)))
    raise UnsupportedFamilyError(f"no nesting certificate is known for {N}")


__all__ = [
    "CPReduction",
    "CopositiveResult",
    "NormAxiomReport",
    "NormConePoint",
    "NormDescriptor",
    "check_norm_axioms",
    "cp_membership",
    "cpp_membership",
    "dual_norm_eval",
    "dual_pair_witness",
    "inner",
    "norm_eval",
    "norm_nesting_certificate",
    "normcone_k_membership",
    "parse_norm",
    "reduce_cp_program",
    "simplex_points",
]
