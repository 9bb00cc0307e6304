"""Path-following barrier method for ``min c'v  s.t.  E v = f, v_cone in K``.

The variable vector is ``v = [free | cone_1 | cone_2 | ...]``.  Each cone
term owns a contiguous slice and supplies a self-concordant barrier together
with a factor ``W`` of its inverse Hessian.  Newton steps are computed in the
scaled coordinates ``dv = W d`` as an equality-constrained least-squares
problem, which stays far better conditioned near the boundary than the usual
normal equations.

A strictly feasible start is found by a phase-I problem that minimizes a
uniform shift ``s`` of the identity element; a bounding row
``<e, v_c> + u = R`` keeps every centering subproblem well posed (it guards
against recession directions when the objective is zero or the feasible set
is unbounded) and is enlarged whenever it becomes active.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import RedundantConstraintsError
from .matrix import smat, svec


# -- cone terms -------------------------------------------------------------
# Each term exposes, after ``prepare(v)``, its barrier value, gradient and
# Hessian product, plus a factor ``W`` of the inverse Hessian
# (``W W' = H^{-1}``) through ``scale`` (``W X``) and ``scale_t`` (``W' X``).

class PSDBlocks:
    """``nb`` independent ``k x k`` PSD blocks stored as consecutive svecs."""

    def __init__(self, k: int, nb: int):
        self.k, self.nb = k, nb
        self.nk = k * (k + 1) // 2
        self.size = self.nk * nb
        self.nu = k * nb

    def identity(self):
        return np.tile(svec(np.eye(self.k)), self.nb)

    def mats(self, v):
        return smat(v.reshape(self.nb, self.nk), self.k)

    def block_margins(self, v):
        if self.k == 1:
            return v.copy()
        return np.linalg.eigvalsh(self.mats(v))[:, 0]

    def margin(self, v):
        return float(self.block_margins(v).min()) if self.nb else np.inf

    def prepare(self, v):
        if self.k == 1:
            if np.any(v <= 0):
                return False
            self._v = v
            return True
        lam, V = np.linalg.eigh(self.mats(v))
        if np.any(lam <= 0):
            return False
        self._lam = lam
        Vt = np.swapaxes(V, 1, 2)
        self._Minv = (V / lam[:, None, :]) @ Vt
        self._sqrtM = (V * np.sqrt(lam)[:, None, :]) @ Vt
        return True

    def value(self):
        if self.k == 1:
            return -float(np.sum(np.log(self._v)))
        return -float(np.sum(np.log(self._lam)))

    def grad(self):
        if self.k == 1:
            return -1.0 / self._v
        return -svec(self._Minv).ravel()

    def hess_vec(self, dv):
        if self.k == 1:
            return dv / self._v ** 2
        D = self.mats(dv)
        return svec(self._Minv @ D @ self._Minv).ravel()

    def scale(self, X):
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        X = X.reshape(self.size, -1)
        if self.k == 1:
            out = X * self._v[:, None]
        else:
            p = X.shape[1]
            U = smat(X.reshape(self.nb, self.nk, p).transpose(0, 2, 1), self.k)
            Rt = self._sqrtM[:, None]
            out = svec(Rt @ U @ Rt).transpose(0, 2, 1).reshape(self.size, p)
        return out.ravel() if vec else out

    scale_t = scale


class SOCBlocks:
    """``nb`` second-order cone blocks ``z_0 >= ||z_1:||`` of length ``k``."""

    def __init__(self, k: int, nb: int):
        self.k, self.nb = k, nb
        self.size = k * nb
        self.nu = (2 if k > 1 else 1) * nb
        self._J = np.ones(k)
        self._J[1:] = -1.0

    def identity(self):
        e = np.zeros(self.k)
        e[0] = 1.0
        return np.tile(e, self.nb)

    def block_margins(self, v):
        Z = v.reshape(self.nb, self.k)
        return Z[:, 0] - np.linalg.norm(Z[:, 1:], axis=1)

    def margin(self, v):
        return float(self.block_margins(v).min()) if self.nb else np.inf

    def prepare(self, v):
        Z = v.reshape(self.nb, self.k)
        gap = self.block_margins(v)
        if np.any(gap <= 0):
            return False
        self._Z = Z
        if self.k == 1:
            self._q = Z[:, 0].copy()
            return True
        nbar = np.linalg.norm(Z[:, 1:], axis=1)
        big = Z[:, 0] + nbar
        self._q = gap * big
        # W = P(sqrt z) / sqrt 2 with P the quadratic representation, so that
        # W^2 = H^{-1}; unlike an eigen-square-root of H^{-1} this keeps the
        # small direction accurate near the boundary
        s1, s2 = np.sqrt(big), np.sqrt(gap)
        direction = np.divide(Z[:, 1:], nbar[:, None], out=np.zeros_like(Z[:, 1:]), where=nbar[:, None] > 0)
        w = np.empty_like(Z)
        w[:, 0] = 0.5 * (s1 + s2)
        w[:, 1:] = 0.5 * (s1 - s2)[:, None] * direction
        P = 2.0 * w[:, :, None] * w[:, None, :] - (s1 * s2)[:, None, None] * np.diag(self._J)
        self._W = P / np.sqrt(2.0)
        return True

    def value(self):
        return -float(np.sum(np.log(self._q)))

    def grad(self):
        if self.k == 1:
            return -1.0 / self._Z.ravel()
        W = self._Z * self._J
        return (-2.0 * W / self._q[:, None]).ravel()

    def hess_vec(self, dv):
        D = dv.reshape(self.nb, self.k)
        if self.k == 1:
            return (D / self._Z ** 2).ravel()
        q = self._q[:, None]
        W = self._Z * self._J
        wd = np.sum(W * D, axis=1, keepdims=True)
        return (4.0 * W * wd / q ** 2 - 2.0 * D * self._J / q).ravel()

    def scale(self, X):
        X = np.asarray(X, dtype=float)
        vec = X.ndim == 1
        X = X.reshape(self.nb, self.k, -1)
        if self.k == 1:
            out = X * self._Z[:, :, None]
        else:
            out = self._W @ X
        out = out.reshape(self.size, -1)
        return out.ravel() if vec else out

    scale_t = scale


# -- problem container and result ------------------------------------------

@dataclass
class ConicProgram:
    c: np.ndarray
    E: np.ndarray
    f: np.ndarray
    nfree: int
    terms: list

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.E = np.asarray(self.E, dtype=float).reshape(-1, len(self.c))
        self.f = np.asarray(self.f, dtype=float).ravel()
        self.offsets = np.cumsum([self.nfree] + [t.size for t in self.terms])
        if self.offsets[-1] != len(self.c):
            raise ValueError("variable count does not match the cone terms")

    def slices(self):
        return [slice(a, b) for a, b in zip(self.offsets[:-1], self.offsets[1:])]


@dataclass
class EngineResult:
    status: str
    v: np.ndarray | None = None
    y: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    t: float = np.nan
    shift: float = 0.0
    gap: float = 0.0
    message: str = ""
    cone_duals: list = field(default_factory=list)


@dataclass
class EngineOptions:
    tol: float = 1e-8
    max_iter: int = 200
    mu: float = 10.0
    center_tol: float = 1e-10
    redundancy: str = "drop"
    infeasible_tol: float = 1e-7


class _Stop(Exception):
    pass


# -- Newton machinery -------------------------------------------------------

class _Path:
    """Centering and outer continuation on one (augmented) program."""

    def __init__(self, c, E, f, nfree, terms, opts: EngineOptions):
        self.c, self.E, self.f = c, E, f
        self.nfree, self.terms, self.opts = nfree, terms, opts
        self.off = np.cumsum([nfree] + [t.size for t in terms])
        self.sl = [slice(a, b) for a, b in zip(self.off[:-1], self.off[1:])]
        self.nu = float(sum(t.nu for t in terms))
        self.Ef = E[:, :nfree]
        self.iterations = 0
        self.w = np.zeros(E.shape[0])
        # running multiplier estimate; the objective is shifted by E'yhat so
        # that t * c stays moderate along the path
        self.yhat = np.zeros(E.shape[0])
        self.last = None
        self._fweight = 1.0 / (1.0 + np.abs(f))

    def residual(self, v):
        """Largest equality violation, relative to each right-hand side."""
        return float(np.max(np.abs(self.E @ v - self.f) * self._fweight, initial=0.0))

    def prepare(self, v):
        return all(t.prepare(v[s]) for t, s in zip(self.terms, self.sl))

    def interior(self, v):
        return all(t.margin(v[s]) > 0 for t, s in zip(self.terms, self.sl))

    def newton_step(self, v, t):
        """Newton direction for ``t c'v + phi(v)`` on ``E v = f``.

        In scaled coordinates ``dv_c = W d`` the step is the least-squares
        problem ``min |d + W'g|`` subject to the linearized equalities, solved
        through a QR factorization of ``(E_c W)'``.
        """
        E, nf = self.E, self.nfree
        g = t * (self.c - self.yhat @ E)
        for term, s in zip(self.terms, self.sl):
            g[s] += term.grad()
        r = E @ v - self.f
        Bt = np.vstack([term.scale_t(E[:, s].T) for term, s in zip(self.terms, self.sl)])
        gt = np.concatenate([term.scale_t(g[s]) for term, s in zip(self.terms, self.sl)])
        # equilibrate the scaled rows; otherwise a single large slack (such as
        # the bounding row) dominates the rank test of the factorization
        rho = np.linalg.norm(Bt, axis=0)
        rho[rho == 0] = 1.0
        Bt = Bt / rho
        r = r / rho
        Q, R = self._qr(Bt)
        Qn = Q[:gt.size]
        tri = scipy.linalg.solve_triangular
        G = R2 = None
        if nf:
            G = tri(R.T, self.Ef / rho[:, None], lower=True)
            _, R2 = self._qr(G)

        def solve(gt, gfree, r):
            at = Qn.T @ gt - tri(R.T, r, lower=True)
            if nf == 0:
                return -gt + Qn @ at, None, -at
            rhs = G.T @ at - gfree
            dfree = tri(R2, tri(R2.T, rhs, lower=True))
            u = G @ dfree - at
            return -gt - Qn @ u, dfree, u

        def expand(dt, dfree):
            dv = np.zeros_like(v)
            if nf:
                dv[:nf] = dfree
            pos = 0
            for term, s in zip(self.terms, self.sl):
                dv[s] = term.scale(dt[pos:pos + term.size])
                pos += term.size
            return dv

        dt, dfree, u = solve(gt, g[:nf], r)
        dv = expand(dt, dfree)
        # one round of iterative refinement on the linearized equalities
        lin = (E @ (v + dv) - self.f) / rho
        if np.any(lin):
            ct, cfree, _ = solve(np.zeros_like(gt), np.zeros(nf), lin)
            dv = dv + expand(ct, cfree)
        w = tri(R, u) / rho
        lam2 = float(dt @ dt)
        if not (np.all(np.isfinite(dv)) and np.isfinite(lam2) and np.all(np.isfinite(w))):
            raise _Stop("numerical-failure")
        return dv, w, lam2

    @staticmethod
    def _qr(A):
        """Economic QR with a ``1e-12`` Tikhonov fallback for rank loss."""
        Q, R = np.linalg.qr(A)
        d = np.abs(np.diag(R))
        big = float(np.max(d, initial=0.0))
        if d.size and d.min() > 1e-13 * max(big, 1.0):
            return Q, R
        n = A.shape[1]
        reg = np.sqrt(1e-12) * max(big, 1.0)
        Q, R = np.linalg.qr(np.vstack([A, reg * np.eye(n)]))
        d = np.abs(np.diag(R))
        if d.min() <= 1e-15 * max(big, 1.0):
            raise _Stop("numerical-failure")
        return Q, R

    def center(self, v, t, stop=None):
        """Damped Newton centering; returns ``(v, converged, stopped)``."""
        opts = self.opts
        self.last = v
        for _ in range(60):
            if self.iterations >= opts.max_iter:
                raise _Stop("max-iter")
            if not self.prepare(v):
                raise _Stop("numerical-failure")
            dv, w, lam2 = self.newton_step(v, t)
            res_old = self.residual(v)
            res_tol = max(10.0 * res_old, 1e-10)
            if self.residual(v + dv) > res_tol:
                # the scaled system has lost too much accuracy to keep E v = f
                return v, False, False
            self.w = w
            self.iterations += 1
            cand, alpha = self._line_search(v, dv, t, lam2)
            if cand is None:
                return v, False, False
            if self.residual(cand) > res_tol:
                return v, False, False
            if stop is not None:
                adjusted = stop(v, cand)
                if adjusted is not None:
                    return adjusted, True, True
            v = cand
            self.last = v
            if lam2 / 2.0 <= opts.center_tol and alpha == 1.0:
                return v, True, False
        return v, False, False

    def merit(self, v, t):
        """``t (c - E'yhat)'v + phi(v)``, or ``inf`` outside the interior."""
        if not self.interior(v) or not self.prepare(v):
            return np.inf
        return t * float((self.c - self.yhat @ self.E) @ v) + sum(term.value() for term in self.terms)

    def _line_search(self, v, dv, t, lam2):
        """Armijo backtracking on the merit, never shorter than the damped step.

        The damped step ``1/(1+lambda)`` always decreases a self-concordant
        merit, so it is the floor; longer steps are accepted when they pass
        the sufficient-decrease test.
        """
        lam = np.sqrt(lam2)
        damped = 1.0 if lam < 0.25 else 1.0 / (1.0 + lam)
        if damped < 1.0:
            base = self.merit(v, t)
            alpha = 1.0
            while alpha > damped:
                cand = v + alpha * dv
                if self.merit(cand, t) <= base - 0.1 * alpha * lam2 / (1.0 + alpha * lam):
                    return cand, alpha
                alpha *= 0.5
        alpha = damped
        for _ in range(60):
            cand = v + alpha * dv
            if self.interior(cand):
                return cand, alpha
            alpha *= 0.5
        return None, 0.0

    def run(self, v, t, stop=None, gap_tol=None):
        """Follow the central path from ``v``; returns ``(v, t, stopped)``.

        If centering stalls once the duality-gap bound is already within
        ``100 * tol`` the last well-centred iterate is returned.
        """
        good = None
        while True:
            try:
                v_new, converged, stopped = self.center(v, t, stop)
            except _Stop as exc:
                if str(exc) == "numerical-failure" and self._close_enough(good):
                    return self._restore(good)
                raise
            if stopped:
                return v_new, t, True
            if not converged:
                if self._close_enough(good):
                    return self._restore(good)
                raise _Stop("numerical-failure")
            v = v_new
            if converged:
                self.yhat = self.yhat - self.w / t
                self.w = np.zeros_like(self.w)
                good = (v.copy(), t, self.yhat.copy())
            obj = float(self.c @ v)
            if gap_tol is not None and gap_tol(v, t):
                return v, t, False
            if gap_tol is None and self.nu / t < self.opts.tol * max(1.0, abs(obj)):
                return v, t, False
            t *= self.opts.mu

    def project(self, v):
        """Minimal-norm correction of ``v`` onto ``E v = f``."""
        if not hasattr(self, "_pinv"):
            self._pinv = np.linalg.pinv(self.E, rcond=1e-12)
        return v - self._pinv @ (self.E @ v - self.f)

    def _close_enough(self, good):
        if good is None:
            return False
        v, t, _ = good
        return self.nu / t < 100.0 * self.opts.tol * max(1.0, abs(float(self.c @ v)))

    def _restore(self, good):
        v, t, yhat = good
        self.yhat = yhat
        return v, t, False


# -- presolve ---------------------------------------------------------------

def _presolve(prog: ConicProgram, redundancy: str):
    """Drop empty rows, equilibrate and remove dependent rows.

    Returns ``(E, f, keep, rowscale)`` or raises ``_Stop("infeasible")``.
    """
    E, f = prog.E, prog.f
    m = E.shape[0]
    norms = np.linalg.norm(E, axis=1) if m else np.zeros(0)
    fscale = max(1.0, float(np.max(np.abs(f), initial=0.0)))
    emax = float(np.max(norms, initial=0.0))
    zero = norms <= 1e-14 * max(1.0, emax)
    if np.any(np.abs(f[zero]) > 1e-12 * fscale):
        raise _Stop("infeasible")
    keep = np.flatnonzero(~zero)
    En = E[keep] / norms[keep, None]
    fn = f[keep] / norms[keep]
    if len(keep):
        _, R, piv = scipy.linalg.qr(En.T, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        rank = int(np.sum(diag > 1e-10 * diag[0])) if diag.size else 0
        if rank < len(keep):
            sel = np.sort(piv[:rank])
            x0 = np.linalg.lstsq(En[sel], fn[sel], rcond=None)[0]
            if np.max(np.abs(En @ x0 - fn)) > 1e-9 * max(1.0, float(np.max(np.abs(fn)))):
                raise _Stop("infeasible")
            if redundancy == "error":
                raise RedundantConstraintsError(
                    f"{len(keep) - rank} equality constraint(s) are linearly dependent on the others"
                )
            keep, En, fn = keep[sel], En[sel], fn[sel]
    return En, fn, keep, norms


def _free_basis(Ef, cf):
    """Orthonormal basis of the row space of ``Ef`` and whether ``cf`` leaks into its null space."""
    nf = Ef.shape[1]
    if nf == 0:
        return np.zeros((0, 0)), False
    if Ef.shape[0] == 0:
        return np.zeros((nf, 0)), bool(np.linalg.norm(cf) > 1e-12)
    _, sv, Vt = np.linalg.svd(Ef, full_matrices=True)
    tol = 1e-10 * max(1.0, sv[0] if sv.size else 0.0)
    rank = int(np.sum(sv > tol))
    Q = Vt[:rank].T
    N = Vt[rank:].T
    leak = N.shape[1] > 0 and np.linalg.norm(N.T @ cf) > 1e-9 * max(1.0, np.linalg.norm(cf))
    return Q, bool(leak)


def solve_conic(prog: ConicProgram, opts: EngineOptions | None = None) -> EngineResult:
    opts = opts or EngineOptions()
    try:
        return _solve(prog, opts)
    except _Stop as stop:
        return EngineResult(status=str(stop))


def _split_rows(Ef, Ec, f):
    """Rotate rows so that the trailing ones touch free variables only.

    Returns the rotation ``(U1, U2)`` with ``U2' Ec = 0`` and ``U1' Ec`` of
    full row rank.
    """
    m = Ec.shape[0]
    if m == 0:
        return np.zeros((0, 0)), np.zeros((0, 0))
    if Ec.shape[1] == 0:
        return np.zeros((m, 0)), np.eye(m)
    U, sv, _ = np.linalg.svd(Ec, full_matrices=True)
    rc = int(np.sum(sv > 1e-10 * max(1.0, sv[0]))) if sv.size else 0
    return U[:, :rc], U[:, rc:]


def _solve(prog: ConicProgram, opts: EngineOptions) -> EngineResult:
    n = len(prog.c)
    nf = prog.nfree
    E, f, keep, rownorms = _presolve(prog, opts.redundancy)
    terms = prog.terms
    ncone = n - nf
    c = prog.c
    e = np.concatenate([t.identity() for t in terms]) if terms else np.zeros(0)
    Ef_all, Ec_all = E[:, :nf], E[:, nf:]

    # constraints that involve free variables only fix an affine subspace
    U1, U2 = _split_rows(Ef_all, Ec_all, f)
    F2, g2 = U2.T @ Ef_all, U2.T @ f
    ftol = 1e-9 * max(1.0, float(np.linalg.norm(f)))
    if nf:
        if F2.shape[0]:
            xp = np.linalg.lstsq(F2, g2, rcond=None)[0]
            N = scipy.linalg.null_space(F2, rcond=1e-10)
        else:
            xp, N = np.zeros(nf), np.eye(nf)
        if np.linalg.norm(F2 @ xp - g2) > ftol:
            raise _Stop("infeasible")
    else:
        if np.linalg.norm(g2) > ftol:
            raise _Stop("infeasible")
        xp, N = np.zeros(0), np.zeros((0, 0))
    E1f = U1.T @ Ef_all
    Ec = U1.T @ Ec_all
    f1 = U1.T @ f - E1f @ xp
    m = Ec.shape[0]
    Qb, leak = _free_basis(E1f @ N if nf else np.zeros((m, 0)), N.T @ c[:nf] if nf else np.zeros(0))
    P = N @ Qb if nf else np.zeros((0, 0))
    nq = P.shape[1]
    Ef = E1f @ P if nf else np.zeros((m, 0))
    cq = P.T @ c[:nf] if nf else np.zeros(0)
    cc = c[nf:]
    cone_slices = [slice(a - nf, b - nf) for a, b in zip(prog.offsets[:-1], prog.offsets[1:])]

    def expand(free_q, cone):
        v = np.zeros(n)
        if nf:
            v[:nf] = xp + P @ free_q
        v[nf:] = cone
        return v

    def recover_y(w1):
        y = U1 @ w1
        if nf and U2.shape[1]:
            rhs = c[:nf] - E1f.T @ w1
            y = y + U2 @ np.linalg.lstsq(F2.T, rhs, rcond=None)[0]
        return y

    def cone_margin(vc):
        return min((t.margin(vc[s]) for t, s in zip(terms, cone_slices)), default=np.inf)

    if ncone == 0:
        if leak:
            raise _Stop("unbounded")
        v = expand(np.zeros(nq), np.zeros(0))
        return _result("optimal", v, recover_y(np.zeros(m)), prog, keep, rownorms, 0, np.inf, 0.0)

    # starting point: minimum-norm solution of the equalities
    A0 = np.hstack([Ef, Ec])
    if m and A0.size:
        x0 = np.linalg.lstsq(A0, f1, rcond=None)[0]
        if np.linalg.norm(A0 @ x0 - f1) > 1e-8 * max(1.0, np.linalg.norm(f1)):
            raise _Stop("infeasible")
    else:
        x0 = np.zeros(nq + ncone)
    xq, vc = x0[:nq], x0[nq:]
    total_iter = 0
    shift = 0.0
    scale = max(1.0, float(np.max(np.abs(vc), initial=0.0)))

    margin0 = cone_margin(vc)
    if not margin0 > 1e-6 * scale:
        # phase I: minimize s with vc + s e = n interior
        Ece = Ec @ e
        direct = None
        if nq:
            sol = np.linalg.lstsq(Ef, Ece, rcond=None)[0]
            if np.linalg.norm(Ef @ sol - Ece) <= 1e-10 * max(1.0, np.linalg.norm(Ece)):
                direct = sol
        s0 = -margin0 + scale
        if direct is not None or m == 0:
            vc = vc + s0 * e
            if direct is not None:
                xq = xq + s0 * direct
        else:
            xq, vc, s_final, iters = _phase_one(Ef, Ec, f1, e, xq, vc, s0, terms, opts)
            total_iter += iters
            shift = max(s_final, 0.0)
    if not np.any(cc) and not np.any(cq):
        # constant objective: any multiplier fitting the free columns is optimal
        v = expand(xq, vc)
        return _result("optimal", v, recover_y(np.zeros(m)), prog, keep, rownorms, total_iter, np.inf, shift)
    if leak:
        raise _Stop("unbounded")

    # phase II with a bounding row, enlarged while it stays active
    trace = float(e @ (vc + shift * e))
    R = 1e3 * (1.0 + abs(trace))
    R_start = R
    recession_checked = False
    previous = None
    while True:
        u = R - trace
        Eaug = np.zeros((m + 1, nq + ncone + 1))
        Eaug[:m, :nq] = Ef
        Eaug[:m, nq:nq + ncone] = Ec
        Eaug[m, nq:nq + ncone] = e
        Eaug[m, -1] = 1.0
        faug = np.concatenate([f1 + shift * (Ec @ e), [R]])
        caug = np.concatenate([cq, cc, [0.0]])
        path = _Path(caug, Eaug, faug, nq, terms + [PSDBlocks(1, 1)], opts)
        v = np.concatenate([xq, vc + shift * e, [u]])
        try:
            v, t, _ = path.run(v, 1.0)
        except _Stop as stop:
            total_iter += path.iterations
            if str(stop) == "numerical-failure" and previous is not None:
                _, v, t, path = previous
                break
            if str(stop) == "max-iter":
                vv = expand(path.last[:nq], path.last[nq:nq + ncone] - shift * e)
                return _result("max-iter", vv, None, prog, keep, rownorms, total_iter, np.nan, shift)
            raise
        total_iter += path.iterations
        polished = path.project(v)
        if path.interior(polished):
            v = polished
        u = v[-1]
        if u > 1e-3 * R:
            break
        objective = float(caug @ v)
        if previous is not None and objective >= previous[0] - 10 * opts.tol * max(1.0, abs(previous[0])):
            # a larger bound buys nothing: the optimal face itself is unbounded,
            # so keep the better conditioned solve
            _, v, t, path = previous
            break
        if not recession_checked:
            if _has_recession(prog, e, opts):
                raise _Stop("unbounded")
            recession_checked = True
        if R > 1e12 * R_start:
            raise _Stop("unbounded")
        if recession_checked:
            previous = (objective, v, t, path)
        xq, vc = v[:nq], v[nq:nq + ncone] - shift * e
        trace = float(e @ v[nq:nq + ncone])
        R *= 100.0
    y = recover_y(path.yhat[:m] - path.w[:m] / t)
    vv = expand(v[:nq], v[nq:nq + ncone] - shift * e)
    cone_duals = []
    for term, s in zip(terms, path.sl[:-1]):
        term.prepare(v[s])
        cone_duals.append(-term.grad() / t)
    res = _result("optimal", vv, y, prog, keep, rownorms, total_iter, t, shift)
    res.cone_duals = cone_duals
    res.gap = path.nu / t
    return res


def _has_recession(prog: ConicProgram, e, opts: EngineOptions) -> bool:
    """Is there a direction ``E d = 0``, ``d`` in the cone, with ``c'd < 0``?

    Solved as a conic program normalized by ``<e, d_cone> <= 1``.
    """
    n, nf = len(prog.c), prog.nfree
    cnorm = float(np.linalg.norm(prog.c))
    E = np.zeros((prog.E.shape[0] + 1, n + 1))
    E[:-1, :n] = prog.E
    E[-1, nf:n] = e
    E[-1, n] = 1.0
    f = np.zeros(E.shape[0])
    f[-1] = 1.0
    c = np.concatenate([prog.c / cnorm, [0.0]])
    inner = ConicProgram(c, E, f, nf, list(prog.terms) + [PSDBlocks(1, 1)])
    try:
        res = _solve(inner, opts)
    except _Stop:
        return False
    return res.status == "optimal" and res.objective < -1e-6


def _phase_one(Ef, Ec, f, e, xq, vc, s0, terms, opts):
    """Minimize ``s`` over ``Ef x + Ec (n - s e) = f``, ``n`` interior."""
    m, nq = Ef.shape
    ncone = Ec.shape[1]
    nvec = vc + s0 * e
    trace = float(e @ nvec)
    R = 1e3 * (1.0 + abs(trace))
    total = 0
    s = s0
    x = xq
    for _ in range(8):
        E1 = np.zeros((m + 1, nq + 1 + ncone + 1))
        E1[:m, :nq] = Ef
        E1[:m, nq] = -(Ec @ e)
        E1[:m, nq + 1:nq + 1 + ncone] = Ec
        E1[m, nq + 1:nq + 1 + ncone] = e
        E1[m, -1] = 1.0
        f1 = np.concatenate([f, [R]])
        c1 = np.zeros(nq + 1 + ncone + 1)
        c1[nq] = 1.0
        path = _Path(c1, E1, f1, nq + 1, terms + [PSDBlocks(1, 1)], opts)
        v = np.concatenate([x, [s], nvec, [R - trace]])
        nu = path.nu
        status = {}

        def stop(v_old, v_new):
            s_old, s_new = v_old[nq], v_new[nq]
            if s_new >= 0:
                return None
            target = -0.5 * abs(s_old)
            if s_new < target < s_old:
                beta = (target - s_old) / (s_new - s_old)
                v_new = v_old + beta * (v_new - v_old)
            v_new = path.project(v_new)
            if v_new[nq] < 0 and path.interior(v_new):
                return v_new
            return None

        def done(vv, t):
            sv = vv[nq]
            bound_active = vv[-1] <= 1e-3 * R
            if sv - nu / t > opts.infeasible_tol and not bound_active:
                status["infeasible"] = True
                return True
            if nu / t < 0.1 * opts.infeasible_tol and sv <= opts.infeasible_tol:
                status["boundary"] = True
                return True
            return False

        try:
            v, t, stopped = path.run(v, 1.0, stop=stop, gap_tol=done)
        finally:
            total += path.iterations
        if not stopped:
            v = path.project(v)
        x, s, nvec = v[:nq], float(v[nq]), v[nq + 1:nq + 1 + ncone]
        if stopped:
            return x, nvec - s * e, s, total
        if status.get("infeasible"):
            raise _Stop("infeasible")
        if v[-1] > 1e-3 * R:
            if s > opts.infeasible_tol:
                raise _Stop("infeasible")
            return x, nvec - s * e, s, total
        trace = float(e @ nvec)
        R *= 100.0
    raise _Stop("infeasible")


def _result(status, v, y_red, prog, keep, rownorms, iters, t, shift):
    m_orig = prog.E.shape[0]
    y = None
    if y_red is not None:
        y = np.zeros(m_orig)
        if len(keep):
            y[keep] = y_red / rownorms[keep]
    obj = float(prog.c @ v) if v is not None else np.nan
    return EngineResult(status=status, v=v, y=y, objective=obj, iterations=iters, t=t, shift=shift)
