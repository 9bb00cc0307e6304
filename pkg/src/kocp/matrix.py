"""Dense symmetric-matrix primitives shared by every other module.

Symmetric matrices are plain ``numpy`` arrays that have passed through
:func:`as_sym`, which guarantees ``A[i, j] == A[j, i]`` bit for bit.  Index
tuples are zero-based and strictly increasing.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb, sqrt

import numpy as np

from .errors import (
    DimensionMismatchError,
    EigenFailureError,
    IndexOutOfRangeError,
    InputError,
    NotSymmetricError,
)

TOL_PSD = 1e-9
TOL_RECON = 1e-8
SQRT2 = sqrt(2.0)


def scale_of(a) -> float:
    """``max(1, ||a||_F)``, the scale used by relative tolerances."""
    return max(1.0, float(np.linalg.norm(a)))


def as_sym(a, *, name: str = "matrix", tol: float = 1e-9) -> np.ndarray:
    """Return ``a`` as an exactly symmetric float array.

    Inputs whose asymmetry exceeds ``tol * max(1, ||a||_F)`` are rejected;
    smaller discrepancies are averaged away.
    """
    arr = np.array(a, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 1:
        raise DimensionMismatchError(f"{name} must be a non-empty square matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} has non-finite entries")
    if np.max(np.abs(arr - arr.T), initial=0.0) > tol * scale_of(arr):
        raise NotSymmetricError(f"{name} is not symmetric")
    return 0.5 * (arr + arr.T)


def symmetrize(a) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    return 0.5 * (arr + arr.T)


# -- packed storage ---------------------------------------------------------

def upper_indices(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-major upper-triangle index arrays (diagonal included)."""
    return np.triu_indices(d)


def to_upper(a) -> list[float]:
    a = np.asarray(a, dtype=float)
    iu = upper_indices(a.shape[0])
    return [float(v) for v in a[iu]]


def from_upper(dim: int, upper) -> np.ndarray:
    dim = int(dim)
    vals = np.asarray(upper, dtype=float)
    if dim < 1 or vals.shape != (dim * (dim + 1) // 2,):
        raise DimensionMismatchError(
            f"'upper' must hold dim*(dim+1)/2 = {dim * (dim + 1) // 2} values for dim={dim}"
        )
    out = np.zeros((dim, dim))
    out[upper_indices(dim)] = vals
    return out + np.triu(out, 1).T


def sym_to_json(a) -> dict:
    a = np.asarray(a, dtype=float)
    return {"dim": int(a.shape[0]), "upper": to_upper(a)}


def sym_from_json(obj) -> np.ndarray:
    if isinstance(obj, dict):
        try:
            return from_upper(obj["dim"], obj["upper"])
        except KeyError as exc:
            raise InputError(f"symmetric matrix JSON is missing field {exc}") from None
    return as_sym(obj)


# -- scaled vectorization ---------------------------------------------------
# svec keeps <svec(A), svec(B)> = tr(AB): off-diagonal entries carry sqrt(2).

def svec(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    n = a.shape[-1]
    iu = upper_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, SQRT2)
    return a[..., iu[0], iu[1]] * w


def smat(v, n: int | None = None) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if n is None:
        n = int(round((sqrt(8 * v.shape[-1] + 1) - 1) / 2))
    iu = upper_indices(n)
    w = np.where(iu[0] == iu[1], 1.0, 1.0 / SQRT2)
    out = np.zeros(v.shape[:-1] + (n, n))
    out[..., iu[0], iu[1]] = v * w
    out[..., iu[1], iu[0]] = v * w
    return out


def svec_basis(n: int) -> np.ndarray:
    """Matrices ``B_q`` with ``svec(B_q) = e_q``; shape ``(n(n+1)/2, n, n)``."""
    return smat(np.eye(n * (n + 1) // 2), n)


# -- index tuples -----------------------------------------------------------

@dataclass(frozen=True)
class IndexFamily:
    """A set ``J`` of strictly increasing k-tuples drawn from ``range(d)``."""

    d: int
    k: int
    tuples: tuple[tuple[int, ...], ...]
    _index: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.d < 1 or not 1 <= self.k <= self.d:
            raise InputError(f"need 1 <= k <= d, got d={self.d}, k={self.k}")
        cleaned = []
        for t in self.tuples:
            t = tuple(int(i) for i in t)
            if len(t) != self.k:
                raise InputError(f"tuple {t} does not have length k={self.k}")
            if any(b <= a for a, b in zip(t, t[1:])):
                raise InputError(f"tuple {t} is not strictly increasing")
            if t and (t[0] < 0 or t[-1] >= self.d):
                raise IndexOutOfRangeError(f"tuple {t} out of range for d={self.d}")
            cleaned.append(t)
        ordered = tuple(sorted(set(cleaned)))
        if len(ordered) != len(cleaned):
            raise InputError("index family contains duplicate tuples")
        object.__setattr__(self, "tuples", ordered)
        idx = np.array(ordered, dtype=int).reshape(len(ordered), self.k)
        object.__setattr__(self, "_index", idx)

    def __len__(self):
        return len(self.tuples)

    def __iter__(self):
        return iter(self.tuples)

    @property
    def index(self) -> np.ndarray:
        return self._index

    @cached_property
    def coverage(self) -> np.ndarray:
        """Boolean ``d x d`` mask of entries touched by at least one tuple."""
        mask = np.zeros((self.d, self.d), dtype=bool)
        for t in self.tuples:
            mask[np.ix_(t, t)] = True
        return mask

    @cached_property
    def counts(self) -> np.ndarray:
        """How many tuples contain each index."""
        return np.bincount(self._index.ravel(), minlength=self.d)

    def is_full(self) -> bool:
        return len(self) == comb(self.d, self.k)

    def to_json(self):
        return [list(t) for t in self.tuples]


def enumerate_tuples(d: int, k: int, map: str = "full") -> IndexFamily:
    """All tuples of the ``full`` index map C([d], k), or of the ``soc`` map.

    The ``soc`` map pins the first coordinate: ``(0, i_1, ..., i_{k-1})`` with
    ``1 <= i_1 < ... < i_{k-1} <= d-1``.
    """
    if not 1 <= k <= d:
        raise InputError(f"need 1 <= k <= d, got d={d}, k={k}")
    if map == "full":
        tuples = itertools.combinations(range(d), k)
    elif map == "soc":
        tuples = ((0,) + rest for rest in itertools.combinations(range(1, d), k - 1))
    else:
        raise InputError(f"unknown index map {map!r}")
    return IndexFamily(d, k, tuple(tuples))


def family_size(d: int, k: int, map: str = "full") -> int:
    return comb(d, k) if map == "full" else comb(d - 1, k - 1)


def _check_tuple(t, d):
    t = tuple(int(i) for i in t)
    if any(b <= a for a, b in zip(t, t[1:])):
        raise InputError(f"tuple {t} is not strictly increasing")
    if not t or t[0] < 0 or t[-1] >= d:
        raise IndexOutOfRangeError(f"tuple {t} out of range for dimension {d}")
    return list(t)


def truncate(z, t) -> np.ndarray:
    """Principal submatrix of ``z`` on the indices ``t``."""
    z = np.asarray(z, dtype=float)
    idx = _check_tuple(t, z.shape[0])
    return z[np.ix_(idx, idx)].copy()


def lift(x, t, d: int) -> np.ndarray:
    """Embed the k x k matrix ``x`` at indices ``t`` of a zero d x d matrix."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1, 1)
    idx = _check_tuple(t, d)
    if x.shape != (len(idx), len(idx)):
        raise DimensionMismatchError(f"block of shape {x.shape} does not match tuple {tuple(idx)}")
    out = np.zeros((d, d))
    out[np.ix_(idx, idx)] = x
    return out


def truncate_vec(x, t) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return x[_check_tuple(t, x.shape[0])].copy()


def lift_vec(y, t, d: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    idx = _check_tuple(t, d)
    if y.shape != (len(idx),):
        raise DimensionMismatchError(f"vector of length {y.shape} does not match tuple {tuple(idx)}")
    out = np.zeros(d)
    out[idx] = y
    return out


def truncate_all(z, fam: IndexFamily) -> np.ndarray:
    """Stack of truncations, shape ``(len(fam), k, k)``, in tuple order."""
    z = np.asarray(z, dtype=float)
    if z.shape != (fam.d, fam.d):
        raise DimensionMismatchError(f"matrix of shape {z.shape} used with d={fam.d}")
    idx = fam.index
    return z[idx[:, :, None], idx[:, None, :]]


def lift_sum(blocks, fam: IndexFamily) -> np.ndarray:
    """``sum_s lift(blocks[s], fam.tuples[s], fam.d)``."""
    blocks = np.asarray(blocks, dtype=float)
    out = np.zeros((fam.d, fam.d))
    idx = fam.index
    if len(fam):
        np.add.at(out, (idx[:, :, None], idx[:, None, :]), blocks)
    return out


def lift_matrix(fam: IndexFamily) -> np.ndarray:
    """0/1 matrix ``L`` with ``svec(sum_s lift(M_s)) = L @ concat_s svec(M_s)``."""
    d, k = fam.d, fam.k
    nk = k * (k + 1) // 2
    gpos = -np.ones((d, d), dtype=int)
    gpos[upper_indices(d)] = np.arange(d * (d + 1) // 2)
    gpos = np.maximum(gpos, gpos.T)
    li, lj = upper_indices(k)
    L = np.zeros((d * (d + 1) // 2, len(fam) * nk))
    for s, t in enumerate(fam.index):
        L[gpos[t[li], t[lj]], s * nk + np.arange(nk)] = 1.0
    return L


def global_svec_positions(d: int) -> np.ndarray:
    """``pos[i, j]`` is the svec coordinate of entry ``(i, j)``."""
    gpos = -np.ones((d, d), dtype=int)
    gpos[upper_indices(d)] = np.arange(d * (d + 1) // 2)
    return np.maximum(gpos, gpos.T)


# -- spectral primitives ----------------------------------------------------

def eigvalsh(a) -> np.ndarray:
    try:
        return np.linalg.eigvalsh(a)
    except np.linalg.LinAlgError as exc:
        raise EigenFailureError(f"symmetric eigensolver did not converge: {exc}") from exc


def psd_margin(a) -> float:
    """Smallest eigenvalue of the symmetric matrix ``a``."""
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return float("inf")
    return float(eigvalsh(a)[..., 0])


def is_psd(a, tol: float = TOL_PSD) -> bool:
    return psd_margin(a) >= -tol * scale_of(a)


def comparison_matrix(a) -> np.ndarray:
    """Keep the diagonal, replace off-diagonal entries by ``-|a_ij|``."""
    a = np.asarray(a, dtype=float)
    m = -np.abs(a)
    np.fill_diagonal(m, np.diag(a))
    return m


def project_psd(a) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    w, v = np.linalg.eigh(a)
    out = (v * np.maximum(w, 0.0)) @ v.T
    return 0.5 * (out + out.T)
