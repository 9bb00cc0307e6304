"""Membership, decomposition and certificates for k-th order cones.

A k-th order cone ``K^d_k(J)`` collects the sums ``sum_s lift(M_s)`` of
base-cone blocks over the tuples of ``J``; its dual consists of the matrices
whose truncations all lie in the base dual cone.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import sqrt
from typing import Callable

import numpy as np

from ._engine import ConicProgram, EngineOptions, PSDBlocks, SOCBlocks, solve_conic
from .barrier import _barrier_for
from .errors import (
    DimensionMismatchError,
    EigenFailureError,
    InputError,
    NotSDDError,
    SolverFailureError,
    UnsupportedFamilyError,
)
from .matrix import (
    TOL_PSD,
    TOL_RECON,
    as_sym,
    comparison_matrix,
    eigvalsh,
    enumerate_tuples,
    lift,
    lift_vec,
    psd_margin,
    scale_of,
    smat,
    svec,
    truncate,
    truncate_all,
)
from .structures import ConeSpec, Decomposition, make_cone, soc_margin


# -- block layout shared with the solver -----------------------------------

class BlockLayout:
    """Linear map from stacked block variables to ambient coordinates.

    For the psd family the ambient coordinates are the svec entries of a
    ``d x d`` matrix; for soc they are the ``d`` vector entries.  Only the
    ``covered`` coordinates can be nonzero in a cone member.
    """

    def __init__(self, spec: ConeSpec):
        if spec.family not in ("psd", "soc"):
            raise UnsupportedFamilyError(f"no block solver for the {spec.family!r} family")
        self.spec = spec
        J, k = spec.J, spec.k
        nb = len(J)
        if spec.family == "psd":
            bar = _barrier_for(J)
            self.ncoords = spec.d * (spec.d + 1) // 2
            self.covered = bar.covered
            local = bar.positions
            self.block_size = k * (k + 1) // 2
            self.term = PSDBlocks(k, nb)
        else:
            self.ncoords = spec.d
            self.covered = np.unique(J.index)
            local = np.searchsorted(self.covered, J.index)
            self.block_size = k
            self.term = SOCBlocks(k, nb)
        self.nvars = nb * self.block_size
        L = np.zeros((len(self.covered), self.nvars))
        cols = np.arange(self.nvars).reshape(nb, self.block_size)
        L[local.ravel(), cols.ravel()] = 1.0
        self.L = L
        self.identity_image = L @ self.term.identity()

    def coords(self, X) -> np.ndarray:
        """Full ambient coordinate vector of ``X``."""
        X = np.asarray(X, dtype=float)
        if self.spec.family == "psd":
            return svec(X)
        return X if X.ndim == 1 else np.diag(X).copy()

    def data_row(self, A) -> np.ndarray:
        """Coefficients ``c`` with ``<A, sum_s lift(M_s)> = c @ blocks``."""
        return self.coords(A)[self.covered] @ self.L

    def image(self, v) -> np.ndarray:
        """Ambient matrix (psd) or vector (soc) of ``sum_s lift(M_s)``."""
        full = np.zeros(self.ncoords)
        full[self.covered] = self.L @ v
        if self.spec.family == "psd":
            return smat(full, self.spec.d)
        return full

    def decomposition(self, v) -> Decomposition:
        blocks = v.reshape(len(self.spec.J), self.block_size)
        if self.spec.family == "psd":
            mats = smat(blocks, self.spec.k)
            return Decomposition(self.spec.d, [(t, m) for t, m in zip(self.spec.J, mats)])
        return Decomposition(self.spec.d, [(t, z.copy()) for t, z in zip(self.spec.J, blocks)], "vector")


# -- dual membership --------------------------------------------------------

def _as_point(A, spec: ConeSpec):
    if spec.is_vector:
        a = np.asarray(A, dtype=float)
        if a.ndim == 2:
            a = np.diag(a).copy()
        if a.shape != (spec.d,):
            raise DimensionMismatchError(f"expected a vector of length {spec.d}, got shape {a.shape}")
        return a
    a = as_sym(A)
    if a.shape != (spec.d, spec.d):
        raise DimensionMismatchError(f"expected a {spec.d}x{spec.d} matrix, got {a.shape}")
    return a


def dual_membership(A, spec: ConeSpec) -> tuple[bool, float]:
    """Is ``A`` in the dual cone, i.e. is every truncation in the base dual cone?

    The margin is the smallest base margin over the tuples: the minimum
    eigenvalue of a truncation (psd), or ``t - ||x||`` of a sub-vector (soc).
    """
    if spec.family in ("cp", "cpp"):
        raise UnsupportedFamilyError("dual membership for cp/cpp induced cones is not supported")
    if spec.family.startswith("norm:"):
        raise UnsupportedFamilyError("use special.normcone_k_membership for norm-induced cones")
    a = _as_point(A, spec)
    if spec.family == "psd":
        if not len(spec.J):
            return True, float("inf")
        try:
            margin = float(np.linalg.eigvalsh(truncate_all(a, spec.J))[:, 0].min())
        except np.linalg.LinAlgError as exc:
            raise EigenFailureError(str(exc)) from exc
    else:
        idx = spec.J.index
        sub = a[idx]
        margin = float(np.min(sub[:, 0] - np.linalg.norm(sub[:, 1:], axis=1), initial=np.inf))
    return margin >= -TOL_PSD * scale_of(a), margin


# -- primal membership ------------------------------------------------------

def primal_margin(X, spec: ConeSpec, *, tol: float = 1e-9) -> tuple[bool, float, Decomposition | None]:
    """Largest ``delta`` with ``X = sum_s lift(M_s)`` and ``M_s - delta*e`` in the base cone.

    ``e`` is the identity (psd) or ``(1, 0, ..., 0)`` (soc).  Returns the
    verdict, ``delta`` and the maximizing decomposition.
    """
    if spec.family not in ("psd", "soc"):
        raise UnsupportedFamilyError(f"primal membership is solved only for psd and soc, not {spec.family!r}")
    x = _as_point(X, spec)
    layout = BlockLayout(spec)
    coords = layout.coords(x)
    scale = scale_of(x)
    outside = np.setdiff1d(np.arange(layout.ncoords), layout.covered)
    if np.any(np.abs(coords[outside]) > 1e-12 * scale):
        return False, float("-inf"), None
    shift = layout.identity_image
    E = np.hstack([shift[:, None], layout.L])
    c = np.zeros(1 + layout.nvars)
    c[0] = -1.0
    prog = ConicProgram(c=c, E=E, f=coords[layout.covered], nfree=1, terms=[layout.term])
    res = solve_conic(prog, EngineOptions(tol=tol))
    if res.status != "optimal":
        raise SolverFailureError(f"membership program ended with status {res.status}")
    delta = float(res.v[0])
    blocks = res.v[1:] + delta * layout.term.identity()
    decomp = layout.decomposition(blocks)
    # delta is attained by the decomposition; the optimum can exceed it by at most the gap bound
    return delta + res.gap >= -TOL_PSD * scale, delta, decomp


# -- scaled diagonal dominance ---------------------------------------------

def _components(A) -> list[np.ndarray]:
    """Connected components of the graph of nonzero off-diagonal entries."""
    n = A.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    rows, cols = np.nonzero(np.triu(A != 0, 1))
    for i, j in zip(rows, cols):
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return [np.array(g) for g in groups.values()]


def _perron_vector(B, tol=1e-12, max_iter=10_000) -> np.ndarray:
    """Dominant eigenvector of a nonnegative irreducible matrix (power iteration)."""
    n = B.shape[0]
    shifted = B + np.eye(n)
    x = np.ones(n) / sqrt(n)
    for _ in range(max_iter):
        y = shifted @ x
        y /= np.linalg.norm(y)
        if np.linalg.norm(y - x) < tol:
            return y
        x = y
    _, V = np.linalg.eigh(B)
    return np.abs(V[:, -1])


def is_sdd(A) -> tuple[bool, np.ndarray | None]:
    """Scaled diagonal dominance, decided by positive semidefiniteness of ``M(A)``.

    On success the witness ``w > 0`` satisfies
    ``w_i a_ii >= sum_{j != i} w_j |a_ij|`` for every row ``i``.
    """
    a = as_sym(A)
    M = comparison_matrix(a)
    if psd_margin(M) < -TOL_PSD * scale_of(a):
        return False, None
    w = np.ones(a.shape[0])
    for comp in _components(a):
        if comp.size == 1:
            continue
        Mc = M[np.ix_(comp, comp)]
        s = float(eigvalsh(Mc)[-1])
        B = s * np.eye(comp.size) - Mc
        np.fill_diagonal(B, np.maximum(np.diag(B), 0.0))
        p = _perron_vector(B)
        w[comp] = p / p.max()
    return True, w


def factor_width2_decompose(A) -> Decomposition:
    """Split an SDD matrix into 2x2 PSD blocks, one per index pair.

    Block ``(i, j)`` is ``[[w_j/w_i |a_ij|, a_ij], [a_ij, w_i/w_j |a_ij|]]``;
    the leftover diagonal of row ``i`` is added to block ``(0, 1)`` for
    ``i = 0`` and to block ``(0, i)`` otherwise.
    """
    a = as_sym(A)
    d = a.shape[0]
    if d < 2:
        raise InputError("factor-width-2 decomposition needs dimension at least 2")
    ok, w = is_sdd(a)
    if not ok:
        raise NotSDDError("matrix is not scaled diagonally dominant")
    blocks = {}
    used = np.zeros(d)
    for i in range(d):
        for j in range(i + 1, d):
            x = a[i, j]
            m = np.array([[w[j] / w[i] * abs(x), x], [x, w[i] / w[j] * abs(x)]])
            blocks[(i, j)] = m
            used[i] += m[0, 0]
            used[j] += m[1, 1]
    surplus = np.diag(a) - used
    blocks[(0, 1)][0, 0] += surplus[0]
    for i in range(1, d):
        blocks[(0, i)][1, 1] += surplus[i]
    return Decomposition(d, sorted(blocks.items()))


def verify_decomposition(X, D: Decomposition, spec: ConeSpec) -> tuple[bool, float, float]:
    """Check ``X = sum_s lift(M_s)`` with every block in the base cone."""
    x = _as_point(X, spec)
    if D.d != spec.d:
        raise DimensionMismatchError(f"decomposition has d={D.d}, cone has d={spec.d}")
    target = np.diag(x) if spec.is_vector else x
    allowed = set(spec.J.tuples)
    for t, m in D.blocks:
        shape = (spec.k,) if D.kind == "vector" else (spec.k, spec.k)
        if np.shape(m) != shape:
            raise DimensionMismatchError(f"block for tuple {t} has shape {np.shape(m)}, expected {shape}")
    recon_err = float(np.linalg.norm(target - D.reconstruct()))
    min_margin = D.min_block_margin()
    scale = scale_of(target)
    valid = (
        recon_err <= TOL_RECON * scale
        and min_margin >= -TOL_PSD * scale
        and all(tuple(t) in allowed for t, _ in D.blocks)
    )
    return valid, recon_err, min_margin


# -- embedding-property audits ---------------------------------------------

@dataclass
class ConeFamily:
    """A dimension-indexed family of cones given by a sampler and a margin.

    ``vector`` families (second-order cone style) are truncated along the
    index map that pins coordinate 0.
    """

    name: str
    sample: Callable[[int, np.random.Generator], np.ndarray]
    margin: Callable[[np.ndarray], float]
    vector: bool = False


def _sample_psd(n, rng):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = rng.exponential(size=n)
    lam[rng.random(n) < 0.2] = 0.0
    return (Q * lam) @ Q.T


def _sample_dd(n, rng):
    off = rng.standard_normal((n, n))
    off = np.triu(off, 1)
    off = off + off.T
    return off + np.diag(np.abs(off).sum(axis=1) + rng.exponential(size=n))


def _sample_sdd(n, rng):
    scale = np.exp(rng.standard_normal(n))
    return _sample_dd(n, rng) * np.outer(scale, scale)


def _sample_soc(n, rng):
    x = rng.standard_normal(n - 1)
    return np.concatenate([[np.linalg.norm(x) + rng.exponential()], x])


def _dd_margin(a):
    off = np.abs(a).sum(axis=1) - np.abs(np.diag(a))
    return float(np.min(np.diag(a) - off))


def _factor_width_family(width: int) -> ConeFamily:
    def sample(n, rng):
        if n <= width:
            return _sample_psd(n, rng)
        out = np.zeros((n, n))
        for _ in range(max(2, n)):
            t = np.sort(rng.choice(n, size=width, replace=False))
            out += lift(_sample_psd(width, rng), t, n)
        return out

    def margin(a):
        n = a.shape[0]
        if n <= width:
            return psd_margin(a)
        if width == 1:
            return float(np.min(np.diag(a))) if not np.any(a - np.diag(np.diag(a))) else float("-inf")
        if width == 2:
            return psd_margin(comparison_matrix(a))
        return primal_margin(a, make_cone("psd", n, width))[1]

    return ConeFamily(f"factor-width:{width}", sample, margin)


BUILTIN_FAMILIES = {
    "psd": ConeFamily("psd", _sample_psd, psd_margin),
    "dd": ConeFamily("dd", _sample_dd, _dd_margin),
    "sdd": ConeFamily("sdd", _sample_sdd, lambda a: psd_margin(comparison_matrix(a))),
    "soc": ConeFamily("soc", _sample_soc, soc_margin, vector=True),
}


def get_family(family) -> ConeFamily:
    if isinstance(family, ConeFamily):
        return family
    if family in BUILTIN_FAMILIES:
        return BUILTIN_FAMILIES[family]
    if isinstance(family, str) and family.startswith("factor-width:"):
        try:
            width = int(family.split(":", 1)[1])
        except ValueError:
            raise UnsupportedFamilyError(f"bad factor-width family {family!r}") from None
        if width < 1:
            raise UnsupportedFamilyError("factor width must be positive")
        return _factor_width_family(width)
    raise UnsupportedFamilyError(f"no sampler for family {family!r}")


@dataclass
class EmbeddingReport:
    family: str
    d: int
    k: int
    samples: int
    seed: int
    truncation_violations: int = 0
    lift_violations: int = 0
    worst_margin: float = float("inf")
    failures: list = field(default_factory=list)

    @property
    def violations(self) -> int:
        return self.truncation_violations + self.lift_violations

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "d": self.d,
            "k": self.k,
            "samples": self.samples,
            "seed": self.seed,
            "violations": self.violations,
            "truncation_violations": self.truncation_violations,
            "lift_violations": self.lift_violations,
            "worst_margin": self.worst_margin,
        }


def verify_embedding(family, d: int, k: int, samples: int = 100, seed: int = 0,
                     tol: float = TOL_PSD) -> EmbeddingReport:
    """Sample members of ``K^d`` and ``K^k`` and check the embedding property.

    Each sample contributes one truncation check (``K^d -> K^k``) and one
    lift check (``K^k -> K^d``) along a random tuple of the index map.
    """
    fam = get_family(family)
    if not 1 <= k <= d:
        raise InputError(f"need 1 <= k <= d, got d={d}, k={k}")
    rng = np.random.default_rng(seed)
    tuples = list(enumerate_tuples(d, k, "soc" if fam.vector else "full"))
    report = EmbeddingReport(fam.name, d, k, samples, seed)
    for n in range(samples):
        t = tuples[rng.integers(len(tuples))]
        Z = fam.sample(d, rng)
        X = fam.sample(k, rng)
        if fam.vector:
            down, up = Z[list(t)], lift_vec(X, t, d)
        else:
            down, up = truncate(Z, t), lift(X, t, d)
        for kind, item in (("truncation", down), ("lift", up)):
            m = float(fam.margin(item))
            report.worst_margin = min(report.worst_margin, m)
            if m < -tol * scale_of(item):
                if kind == "truncation":
                    report.truncation_violations += 1
                else:
                    report.lift_violations += 1
                if len(report.failures) < 10:
                    report.failures.append({"sample": n, "kind": kind, "tuple": list(t), "margin": m})
    return report


# -- strict nesting and direct sums ----------------------------------------

def nesting_certificate(family: str, d: int, k: int) -> np.ndarray:
    """Element of the order-k dual cone that is outside the order-(k+1) dual cone.

    psd: ``[[a, 1'], [1, a I]]`` with ``a = sqrt(k-1)``; soc: ``(a, 1, ..., 1)``.
    """
    if not 1 <= k < d:
        raise InputError(f"need 1 <= k < d, got d={d}, k={k}")
    a = sqrt(k - 1)
    if family == "psd":
        out = a * np.eye(d)
        out[0, 1:] = out[1:, 0] = 1.0
        return out
    if family == "soc":
        out = np.ones(d)
        out[0] = a
        return out
    raise UnsupportedFamilyError(f"no nesting certificate for family {family!r}")


def direct_sum(X1, X2) -> np.ndarray:
    a, b = as_sym(X1), as_sym(X2)
    out = np.zeros((a.shape[0] + b.shape[0],) * 2)
    out[:a.shape[0], :a.shape[0]] = a
    out[a.shape[0]:, a.shape[0]:] = b
    return out


def split_direct_sum(X, first_dim: int) -> tuple[np.ndarray, np.ndarray]:
    x = as_sym(X)
    if not 0 < first_dim < x.shape[0]:
        raise DimensionMismatchError("split point must fall strictly inside the matrix")
    return x[:first_dim, :first_dim].copy(), x[first_dim:, first_dim:].copy()
