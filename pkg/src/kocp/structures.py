"""Cone identifiers and block decompositions."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    InputError,
    SizeCapExceededError,
    UnsupportedFamilyError,
)
from .matrix import (
    IndexFamily,
    enumerate_tuples,
    family_size,
    from_upper,
    lift,
    lift_vec,
    psd_margin,
    to_upper,
)

DEFAULT_MAX_TUPLES = 200_000

BASE_FAMILIES = ("psd", "soc", "cp", "cpp")
NORM_NAMES = ("l1", "l2", "linf", "spectral", "nuclear")


def _valid_family(family: str) -> bool:
    if family in BASE_FAMILIES:
        return True
    if family.startswith("norm:"):
        name = family[5:]
        return name in NORM_NAMES or name.startswith(("lp:", "kyfan:"))
    return False


@dataclass(frozen=True)
class ConeSpec:
    """One cone ``K^d_k(J)`` of a hierarchy.

    ``family`` is ``"psd"``, ``"soc"``, ``"cp"``, ``"cpp"`` or ``"norm:<name>"``.
    For ``soc`` and norm families the ambient vector ``(t, x)`` has length ``d``
    and every tuple must start at coordinate 0.
    """

    family: str
    d: int
    k: int
    J: IndexFamily

    def __post_init__(self):
        if not _valid_family(self.family):
            raise UnsupportedFamilyError(f"unknown cone family {self.family!r}")
        if not 1 <= self.k <= self.d:
            raise InputError(f"need 1 <= k <= d, got d={self.d}, k={self.k}")
        if self.J.d != self.d or self.J.k != self.k:
            raise DimensionMismatchError("index family does not match the cone's d and k")
        if self.is_vector and any(t[0] != 0 for t in self.J):
            raise InputError(f"{self.family} tuples must all start at coordinate 0")
        if self.family in ("cp", "cpp") and self.k > 4:
            raise UnsupportedFamilyError(f"{self.family} blocks are supported only for k <= 4")

    @property
    def is_vector(self) -> bool:
        return self.family == "soc" or self.family.startswith("norm:")

    @property
    def ntuples(self) -> int:
        return len(self.J)

    @property
    def theta(self) -> int:
        return self.k * len(self.J)

    def with_order(self, k: int) -> "ConeSpec":
        return make_cone(self.family, self.d, k)

    def to_json(self) -> dict:
        full = "soc" if self.is_vector else "full"
        J = full if len(self.J) == family_size(self.d, self.k, full) else self.J.to_json()
        return {"family": self.family, "d": self.d, "k": self.k, "J": J}


def make_cone(family: str, d: int, k: int, J="default", *,
              max_tuples: int = DEFAULT_MAX_TUPLES, force: bool = False) -> ConeSpec:
    """Build a :class:`ConeSpec`, enumerating ``J`` from a map name if asked.

    ``J`` may be ``"default"`` (``soc`` map for vector families, ``full``
    otherwise), ``"full"``, ``"soc"``, an explicit list of tuples or an
    :class:`IndexFamily`.
    """
    d, k = int(d), int(k)
    if not _valid_family(family):
        raise UnsupportedFamilyError(f"unknown cone family {family!r}")
    if not 1 <= k <= d:
        raise InputError(f"need 1 <= k <= d, got d={d}, k={k}")
    if isinstance(J, IndexFamily):
        fam = J
    elif isinstance(J, str):
        name = J
        if name == "default":
            name = "soc" if (family == "soc" or family.startswith("norm:")) else "full"
        if name not in ("full", "soc"):
            raise InputError(f"unknown index map {J!r}")
        n = family_size(d, k, name)
        if n > max_tuples and not force:
            raise SizeCapExceededError(
                f"index family has {n} tuples, above the cap of {max_tuples}; pass force to override"
            )
        fam = enumerate_tuples(d, k, name)
    else:
        fam = IndexFamily(d, k, tuple(tuple(t) for t in J))
    if len(fam) > max_tuples and not force:
        raise SizeCapExceededError(
            f"index family has {len(fam)} tuples, above the cap of {max_tuples}; pass force to override"
        )
    return ConeSpec(family, d, k, fam)


def soc_margin(z) -> float:
    """``z_0 - ||z_1:||``, or ``z_0`` for a length-one vector."""
    z = np.asarray(z, dtype=float)
    return float(z[0] - np.linalg.norm(z[1:]))


@dataclass
class Decomposition:
    """Blocks ``(tuple, M_s)`` certifying ``X = sum_s lift(M_s)``.

    Matrix blocks are ``k x k`` arrays.  Vector blocks (second-order cone
    family) are length-``k`` arrays and reconstruct a diagonal matrix.
    """

    d: int
    blocks: list = field(default_factory=list)
    kind: str = "matrix"

    def reconstruct(self) -> np.ndarray:
        if self.kind == "vector":
            out = np.zeros(self.d)
            for t, z in self.blocks:
                out += lift_vec(z, t, self.d)
            return np.diag(out)
        out = np.zeros((self.d, self.d))
        for t, m in self.blocks:
            out += lift(m, t, self.d)
        return out

    def block_margins(self) -> list[float]:
        if self.kind == "vector":
            return [soc_margin(z) for _, z in self.blocks]
        return [psd_margin(m) for _, m in self.blocks]

    def min_block_margin(self) -> float:
        margins = self.block_margins()
        return min(margins) if margins else float("inf")

    def to_json(self) -> dict:
        blocks = []
        for t, m in self.blocks:
            entry = {"tuple": [int(i) for i in t]}
            if self.kind == "vector":
                entry["vector"] = [float(v) for v in m]
            else:
                entry["upper"] = to_upper(m)
            blocks.append(entry)
        out = {"d": int(self.d), "blocks": blocks}
        if self.kind == "vector":
            out["kind"] = "vector"
        return out

    @classmethod
    def from_json(cls, obj) -> "Decomposition":
        try:
            d = int(obj["d"])
            kind = obj.get("kind", "matrix")
            blocks = []
            for i, b in enumerate(obj["blocks"]):
                t = tuple(int(v) for v in b["tuple"])
                if kind == "vector":
                    blocks.append((t, np.asarray(b["vector"], dtype=float)))
                else:
                    blocks.append((t, from_upper(len(t), b["upper"])))
        except (KeyError, TypeError) as exc:
            raise InputError(f"malformed decomposition JSON: missing or bad field {exc}") from None
        return cls(d, blocks, kind)
