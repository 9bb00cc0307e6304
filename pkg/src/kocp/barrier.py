"""Log-det barrier of the dual cone ``{Y : every truncation of Y is PSD}``.

``f(Y) = sum_s -log det Y_s`` where ``Y_s`` runs over the principal
submatrices selected by the index family.  It is a ``k*|J|``-logarithmically
homogeneous self-concordant barrier.  The primal barrier ``F`` on the
k-th order cone itself is obtained by Legendre inversion of ``f``.

Internally everything is expressed in scaled-vector (``svec``) coordinates
restricted to the entries the family actually touches.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    NewtonDivergenceError,
    NotInteriorError,
    UnsupportedFamilyError,
)
from .matrix import (
    IndexFamily,
    global_svec_positions,
    scale_of,
    smat,
    svec,
    svec_basis,
    upper_indices,
)
from .structures import ConeSpec

INTERIOR_CUSHION = 1e-12


class IntersectionBarrier:
    """Barrier ``f`` for one index family, in covered-svec coordinates.

    ``covered`` lists the global svec positions touched by at least one
    tuple; vectors handled by this class have one entry per covered position.
    """

    def __init__(self, fam: IndexFamily):
        self.fam = fam
        self.k = fam.k
        self.nk = fam.k * (fam.k + 1) // 2
        gpos = global_svec_positions(fam.d)
        li, lj = upper_indices(fam.k)
        idx = fam.index
        global_pos = gpos[idx[:, li], idx[:, lj]] if len(fam) else np.zeros((0, self.nk), dtype=int)
        self.covered = np.unique(global_pos)
        self.positions = np.searchsorted(self.covered, global_pos)
        self.size = len(self.covered)
        self.nu = fam.k * len(fam)
        self._basis = svec_basis(fam.k)

    @cached_property
    def identity(self) -> np.ndarray:
        return svec(np.eye(self.fam.d))[self.covered]

    def from_matrix(self, Y) -> np.ndarray:
        return svec(np.asarray(Y, dtype=float))[self.covered]

    def to_matrix(self, y) -> np.ndarray:
        d = self.fam.d
        full = np.zeros(d * (d + 1) // 2)
        full[self.covered] = y
        return smat(full, d)

    def blocks(self, y) -> np.ndarray:
        return smat(np.asarray(y)[self.positions], self.k)

    def block_margins(self, y) -> np.ndarray:
        if not len(self.fam):
            return np.zeros(0)
        return np.linalg.eigvalsh(self.blocks(y))[:, 0]

    def margin(self, y) -> float:
        m = self.block_margins(y)
        return float(m.min()) if m.size else float("inf")

    def factor(self, y):
        """Cholesky factors and inverses of every block; ``None`` if not PD."""
        T = self.blocks(y)
        try:
            C = np.linalg.cholesky(T)
        except np.linalg.LinAlgError:
            return None
        eye = np.broadcast_to(np.eye(self.k), T.shape)
        Cinv = np.linalg.solve(C, eye)
        Tinv = np.swapaxes(Cinv, -1, -2) @ Cinv
        return C, 0.5 * (Tinv + np.swapaxes(Tinv, -1, -2))

    def value(self, y, factors=None) -> float:
        C, _ = factors or self._require(y)
        return float(-2.0 * np.sum(np.log(np.diagonal(C, axis1=1, axis2=2))))

    def grad(self, y, factors=None) -> np.ndarray:
        _, Tinv = factors or self._require(y)
        g = np.zeros(self.size)
        np.add.at(g, self.positions, -svec(Tinv))
        return g

    def hessian(self, y, factors=None) -> np.ndarray:
        _, Tinv = factors or self._require(y)
        W = Tinv[:, None] @ self._basis[None] @ Tinv[:, None]
        Hs = svec(W)
        H = np.zeros((self.size, self.size))
        P = self.positions
        np.add.at(H, (P[:, :, None], P[:, None, :]), Hs)
        return 0.5 * (H + H.T)

    def hess_vec(self, y, dy, factors=None) -> np.ndarray:
        _, Tinv = factors or self._require(y)
        D = smat(np.asarray(dy)[self.positions], self.k)
        out = np.zeros(self.size)
        np.add.at(out, self.positions, svec(Tinv @ D @ Tinv))
        return out

    def quadform(self, y, dy, factors=None) -> float:
        _, Tinv = factors or self._require(y)
        D = smat(np.asarray(dy)[self.positions], self.k)
        P = Tinv @ D
        return float(np.einsum("bij,bji->", P, P))

    def _require(self, y):
        fac = self.factor(y)
        if fac is None or self.margin(y) <= INTERIOR_CUSHION * max(1.0, float(np.linalg.norm(y))):
            raise NotInteriorError("point is not in the interior of the dual cone")
        return fac


class BarrierPoint:
    """A strictly interior ``Y`` with cached per-tuple factorizations."""

    def __init__(self, Y, spec: ConeSpec):
        _check_spec(spec)
        Y = _as_matrix(Y, spec.d)
        self.spec = spec
        self.Y = Y
        self.barrier = _barrier_for(spec.J)
        self.y = self.barrier.from_matrix(Y)
        scale = scale_of(Y)
        fac = self.barrier.factor(self.y)
        if fac is None or self.barrier.margin(self.y) <= INTERIOR_CUSHION * scale:
            raise NotInteriorError("every truncation must be positive definite")
        self.factors = fac
        self.theta = spec.theta

    def value(self) -> float:
        return self.barrier.value(self.y, self.factors)

    def grad(self) -> np.ndarray:
        return self.barrier.to_matrix(self.barrier.grad(self.y, self.factors))

    def quadform(self, H) -> float:
        H = _as_matrix(H, self.spec.d)
        return self.barrier.quadform(self.y, self.barrier.from_matrix(H), self.factors)


_BARRIER_CACHE: dict = {}


def _barrier_for(fam: IndexFamily) -> IntersectionBarrier:
    key = (fam.d, fam.k, fam.tuples)
    bar = _BARRIER_CACHE.get(key)
    if bar is None:
        if len(_BARRIER_CACHE) > 64:
            _BARRIER_CACHE.clear()
        bar = _BARRIER_CACHE[key] = IntersectionBarrier(fam)
    return bar


def _check_spec(spec: ConeSpec):
    if spec.family != "psd":
        raise UnsupportedFamilyError("the log-det barrier is defined for the psd family only")


def _as_matrix(a, d):
    a = np.asarray(a, dtype=float)
    if a.shape != (d, d):
        raise DimensionMismatchError(f"expected a {d}x{d} matrix, got shape {a.shape}")
    return 0.5 * (a + a.T)


def barrier_value(Y, spec: ConeSpec) -> float:
    return BarrierPoint(Y, spec).value()


def barrier_grad(Y, spec: ConeSpec) -> np.ndarray:
    """``-sum_s lift(Y_s^{-1})``."""
    return BarrierPoint(Y, spec).grad()


def barrier_hess_quadform(Y, H, spec: ConeSpec) -> float:
    """``D^2 f(Y)[H, H] = sum_s tr(Y_s^{-1} H_s Y_s^{-1} H_s)``."""
    return BarrierPoint(Y, spec).quadform(H)


def legendre_invert(X, spec: ConeSpec, *, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Solve ``grad f(Y) = -X`` for ``Y`` in the dual interior.

    Minimizes ``f(Y) + <X, Y>`` by damped Newton, which is bounded below
    exactly when ``X`` lies in the interior of the primal cone.
    """
    _check_spec(spec)
    X = _as_matrix(X, spec.d)
    bar = _barrier_for(spec.J)
    scale = scale_of(X)
    outside = ~spec.J.coverage
    if np.any(np.abs(X[outside]) > 1e-12 * scale):
        raise NotInteriorError("X has nonzero entries outside every tuple, so it is not in the cone")
    trace = float(np.trace(X))
    if trace <= 0:
        raise NotInteriorError("X must have positive trace to be interior")
    x = bar.from_matrix(X)
    y = bar.identity * (bar.nu / trace)
    target = tol * scale
    resid = np.inf
    for _ in range(max_iter):
        fac = bar.factor(y)
        if fac is None:
            raise NewtonDivergenceError("Newton iterate left the dual interior", resid)
        r = bar.grad(y, fac) + x
        resid = float(np.linalg.norm(r))
        if resid <= target:
            return bar.to_matrix(y)
        H = bar.hessian(y, fac)
        try:
            step = -scipy.linalg.cho_solve(scipy.linalg.cho_factor(H), r)
        except np.linalg.LinAlgError:
            raise NewtonDivergenceError("singular barrier Hessian", resid) from None
        decrement = float(np.sqrt(max(-(r @ step), 0.0)))
        alpha = 1.0 if decrement < 0.25 else 1.0 / (1.0 + decrement)
        y = y + alpha * step
        if not np.all(np.isfinite(y)) or np.linalg.norm(y) > 1e12 * (1 + np.linalg.norm(bar.identity)):
            break
    raise NewtonDivergenceError(
        f"Legendre inversion did not converge (last residual {resid:.3e}); "
        "X is probably not interior to the cone", resid,
    )


def primal_barrier(X, spec: ConeSpec) -> float:
    """``F(X) = -<X, Y*> - f(Y*)`` with ``Y* = legendre_invert(X)``."""
    X = _as_matrix(X, spec.d)
    Y = legendre_invert(X, spec)
    return float(-np.sum(X * Y) - barrier_value(Y, spec))


__all__ = [
    "BarrierPoint",
    "IntersectionBarrier",
    "barrier_value",
    "barrier_grad",
    "barrier_hess_quadform",
    "legendre_invert",
    "primal_barrier",
]
