"""Sum-of-squares certificates with Gram matrices in k-th order PSD cones.

A polynomial ``p`` of degree ``2m`` is kDDSOS when ``p = b(x)' A b(x)`` for
the monomial vector ``b(x)`` of degree at most ``m`` and some ``A`` in
``(S+^h)_k``.  Certification is a feasibility program (one equality per
monomial of ``b b'``); verification expands the returned blocks as explicit
sums of squares with exact integer exponent arithmetic.
"""

from __future__ import annotations

import itertools
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
import scipy.linalg.lapack

from .errors import BlockNotPSDError, InputError, SizeCapExceededError, SolverFailureError
from .matrix import TOL_PSD, as_sym, psd_margin, scale_of
from .structures import Decomposition, make_cone

MAX_BASIS = 2000
PIVOT_THRESHOLD = 1e-10
COEF_RTOL = 1e-7


@dataclass
class Polynomial:
    """Sparse real polynomial: ``terms`` maps exponent tuples to nonzero coefficients."""

    nvars: int
    terms: dict

    def __post_init__(self):
        self.nvars = int(self.nvars)
        if self.nvars < 1:
            raise InputError("a polynomial needs at least one variable")
        clean = {}
        for exp, coef in dict(self.terms).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != self.nvars or min(exp, default=0) < 0:
                raise InputError(f"exponent {exp} does not match {self.nvars} variables")
            coef = float(coef)
            if not math.isfinite(coef):
                raise InputError(f"coefficient of {exp} is not finite")
            if coef != 0.0:
                clean[exp] = clean.get(exp, 0.0) + coef
        self.terms = {e: c for e, c in clean.items() if c != 0.0}

    @property
    def degree(self) -> int:
        return max((sum(e) for e in self.terms), default=0)

    @property
    def is_zero(self) -> bool:
        return not self.terms

    def is_homogeneous(self) -> bool:
        return len({sum(e) for e in self.terms}) <= 1

    def max_abs_coef(self) -> float:
        return max((abs(c) for c in self.terms.values()), default=0.0)

    def __add__(self, other: "Polynomial") -> "Polynomial":
        if other.nvars != self.nvars:
            raise InputError("cannot add polynomials in different numbers of variables")
        out = dict(self.terms)
        for e, c in other.terms.items():
            out[e] = out.get(e, 0.0) + c
        return Polynomial(self.nvars, out)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return self + other.scaled(-1.0)

    def scaled(self, factor: float) -> "Polynomial":
        return Polynomial(self.nvars, {e: factor * c for e, c in self.terms.items()})

    def evaluate(self, points) -> np.ndarray:
        """Values at the rows of ``points`` (shape ``(N, nvars)`` or ``(nvars,)``)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.nvars:
            raise InputError(f"points must have {self.nvars} columns")
        if not self.terms:
            return np.zeros(len(pts))
        exps = np.array(list(self.terms), dtype=int)
        coefs = np.array(list(self.terms.values()))
        monos = np.prod(pts[:, None, :] ** exps[None, :, :], axis=2)
        return monos @ coefs

    def coefficient_error(self, other: "Polynomial") -> float:
        keys = set(self.terms) | set(other.terms)
        return max((abs(self.terms.get(e, 0.0) - other.terms.get(e, 0.0)) for e in keys), default=0.0)

    def to_json(self) -> dict:
        return {
            "nvars": self.nvars,
            "terms": [{"exp": list(e), "coef": c} for e, c in sorted(self.terms.items(), reverse=True)],
        }

    @classmethod
    def from_json(cls, obj) -> "Polynomial":
        try:
            nvars = int(obj["nvars"])
            terms = defaultdict(float)
            for i, term in enumerate(obj["terms"]):
                if "exp" not in term or "coef" not in term:
                    raise InputError(f"terms[{i}] needs 'exp' and 'coef'")
                terms[tuple(int(e) for e in term["exp"])] += float(term["coef"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed polynomial JSON: {exc}") from None
        return cls(nvars, dict(terms))


@dataclass(frozen=True)
class MonomialBasis:
    nvars: int
    half_degree: int
    monomials: tuple

    def __len__(self) -> int:
        return len(self.monomials)

    @property
    def exponents(self) -> np.ndarray:
        return np.array(self.monomials, dtype=int).reshape(len(self.monomials), self.nvars)

    def evaluate(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        return np.prod(pts[:, None, :] ** self.exponents[None, :, :], axis=2)

    def to_json(self) -> list:
        return [list(m) for m in self.monomials]


def _graded(n: int, degree: int):
    """Exponent vectors of total degree exactly ``degree`` in lexicographic order (x1 first)."""
    for combo in itertools.combinations_with_replacement(range(n), degree):
        exp = [0] * n
        for var in combo:
            exp[var] += 1
        yield tuple(exp)


def monomial_basis(n: int, d: int, *, homogeneous: bool = False, max_size: int = MAX_BASIS) -> MonomialBasis:
    """All monomials of degree at most ``d`` (exactly ``d`` if ``homogeneous``), graded-lex ordered."""
    n, d = int(n), int(d)
    if n < 1 or d < 0:
        raise InputError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
    size = math.comb(n + d - 1, d) if homogeneous else math.comb(n + d, d)
    if size > max_size:
        raise SizeCapExceededError(f"monomial basis would have {size} elements, above the cap of {max_size}")
    degrees = [d] if homogeneous else range(d + 1)
    monos = tuple(m for deg in degrees for m in _graded(n, deg))
    return MonomialBasis(n, d, monos)


def _pair_exponents(basis: MonomialBasis):
    """Upper-triangle index pairs and the exponent of each product ``b_i b_j``."""
    iu, ju = np.triu_indices(len(basis))
    E = basis.exponents
    return iu, ju, E[iu] + E[ju]


def gram_to_poly(A, basis: MonomialBasis) -> Polynomial:
    """Expand ``b(x)' A b(x)``."""
    A = as_sym(A, name="Gram matrix")
    if A.shape[0] != len(basis):
        raise InputError(f"Gram matrix has size {A.shape[0]}, basis has {len(basis)} monomials")
    iu, ju, sums = _pair_exponents(basis)
    weights = np.where(iu == ju, 1.0, 2.0) * A[iu, ju]
    coefs = defaultdict(list)
    for exp, w in zip(map(tuple, sums), weights):
        coefs[exp].append(w)
    return Polynomial(basis.nvars, {e: math.fsum(ws) for e, ws in coefs.items()})


@dataclass
class GramCertificate:
    basis: MonomialBasis
    decomposition: Decomposition

    def gram(self) -> np.ndarray:
        if not self.decomposition.blocks:
            return np.zeros((len(self.basis), len(self.basis)))
        return self.decomposition.reconstruct()

    @property
    def k(self) -> int:
        blocks = self.decomposition.blocks
        return len(blocks[0][0]) if blocks else 0

    def to_json(self) -> dict:
        return {
            "nvars": self.basis.nvars,
            "half_degree": self.basis.half_degree,
            "basis": self.basis.to_json(),
            "decomposition": self.decomposition.to_json(),
        }

    @classmethod
    def from_json(cls, obj) -> "GramCertificate":
        try:
            nvars = int(obj["nvars"])
            monos = tuple(tuple(int(e) for e in m) for m in obj["basis"])
            half = int(obj.get("half_degree", max((sum(m) for m in monos), default=0)))
            decomposition = Decomposition.from_json(obj["decomposition"])
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed certificate JSON: {exc}") from None
        if any(len(m) != nvars for m in monos):
            raise InputError("basis exponents do not match nvars")
        if decomposition.d != len(monos):
            raise InputError(f"decomposition acts on dimension {decomposition.d}, basis has {len(monos)} monomials")
        return cls(MonomialBasis(nvars, half, monos), decomposition)


def basis_for(p: Polynomial, *, prune: bool = True) -> MonomialBasis:
    """Half-degree basis for ``p``; homogeneous ``p`` keeps only top-degree monomials when ``prune``."""
    half = p.degree // 2
    return monomial_basis(p.nvars, half, homogeneous=prune and p.is_homogeneous() and not p.is_zero)


def certify_kddsos(p: Polynomial, k: int, *, opts=None, prune: bool = True, max_tuples=None,
                   force: bool = False) -> tuple[bool, GramCertificate | None]:
    """Search for a Gram matrix of ``p`` in ``(S+^h)_k``.

    Returns ``(True, certificate)`` or ``(False, None)``.  Odd-degree
    polynomials are never sums of squares and are rejected without solving.
    ``k`` above the basis size is clamped to it (the full PSD cone).
    """
    from .solver import StandardProblem, solve

    if k < 1:
        raise InputError(f"k must be at least 1, got {k}")
    if p.is_zero:
        return True, GramCertificate(monomial_basis(p.nvars, 0), Decomposition(1, []))
    if p.degree % 2:
        return False, None
    basis = basis_for(p, prune=prune)
    h = len(basis)
    iu, ju, sums = _pair_exponents(basis)
    keys = sorted(set(map(tuple, sums)), reverse=True)
    if set(p.terms) - set(keys):
        # some monomial of p cannot appear in b' A b
        return False, None
    position = {e: i for i, e in enumerate(keys)}
    rows = [np.zeros((h, h)) for _ in keys]
    for i, j, exp in zip(iu, ju, map(tuple, sums)):
        M = rows[position[exp]]
        if i == j:
            M[i, i] = 1.0
        else:
            M[i, j] = M[j, i] = 1.0
    b = np.array([p.terms.get(e, 0.0) for e in keys])
    kwargs = {"force": force}
    if max_tuples is not None:
        kwargs["max_tuples"] = max_tuples
    cone = make_cone("psd", h, min(int(k), h), **kwargs)
    sol = solve(StandardProblem(cone, np.zeros((h, h)), rows, b), opts)
    if sol.status == "infeasible":
        return False, None
    if not sol.optimal or sol.decomposition is None:
        raise SolverFailureError(f"certification program ended with status {sol.status}")
    return True, GramCertificate(basis, sol.decomposition)


def _square_factors(M, scale: float) -> np.ndarray:
    """Columns ``v_l`` with ``M = sum_l v_l v_l'`` from pivoted Cholesky."""
    k = M.shape[0]
    if k == 0:
        return np.zeros((0, 0))
    c, piv, rank, info = scipy.linalg.lapack.dpstrf(M, tol=PIVOT_THRESHOLD * scale, lower=1)
    if info < 0:
        raise BlockNotPSDError("pivoted Cholesky rejected its input")
    F = np.zeros((k, rank))
    F[piv - 1] = np.tril(c)[:, :rank]
    return F


def expand_squares(basis: MonomialBasis, decomposition: Decomposition, tol: float | None = None) -> Polynomial:
    """``sum_s sum_l (v_l' b_s(x))^2`` with every block factored as ``sum_l v_l v_l'``."""
    coefs = defaultdict(list)
    monos = basis.monomials
    for t, M in decomposition.blocks:
        M = as_sym(M, name="certificate block")
        scale = scale_of(M)
        limit = TOL_PSD * scale if tol is None else tol
        margin = psd_margin(M)
        if margin < -limit:
            raise BlockNotPSDError(f"block {tuple(t)} has minimum eigenvalue {margin:.3e}")
        F = _square_factors(M, scale)
        for a, ia in enumerate(t):
            for b_, ib in enumerate(t):
                w = float(F[a] @ F[b_])
                if w == 0.0:
                    continue
                exp = tuple(x + y for x, y in zip(monos[ia], monos[ib]))
                coefs[exp].append(w)
    return Polynomial(basis.nvars, {e: math.fsum(ws) for e, ws in coefs.items()})


def verify_certificate(p: Polynomial, cert: GramCertificate, *, rtol: float = COEF_RTOL) -> tuple[bool, float]:
    """Expand the certificate as an explicit sum of squares and compare with ``p``.

    Returns ``(ok, max_coef_err)`` with ``ok`` iff the error is at most
    ``rtol * max(1, max|coef|)``.  Raises ``BlockNotPSDError`` for blocks with
    a clearly negative eigenvalue.
    """
    if cert.basis.nvars != p.nvars:
        raise InputError("certificate and polynomial use different numbers of variables")
    for t, _ in cert.decomposition.blocks:
        if max(t, default=-1) >= len(cert.basis):
            raise InputError(f"block tuple {tuple(t)} indexes past the basis")
    expanded = expand_squares(cert.basis, cert.decomposition)
    err = expanded.coefficient_error(p)
    return bool(err <= rtol * max(1.0, p.max_abs_coef())), float(err)


def motzkin() -> Polynomial:
    """``x1^4 x2^2 + x1^2 x2^4 - 3 x1^2 x2^2 x3^2 + x3^6``: nonnegative but not a sum of squares."""
    return Polynomial(3, {(4, 2, 0): 1.0, (2, 4, 0): 1.0, (2, 2, 2): -3.0, (0, 0, 6): 1.0})


__all__ = [
    "GramCertificate",
    "MonomialBasis",
    "Polynomial",
    "basis_for",
    "certify_kddsos",
    "expand_squares",
    "gram_to_poly",
    "monomial_basis",
    "motzkin",
    "verify_certificate",
]
