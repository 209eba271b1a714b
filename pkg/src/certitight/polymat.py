"""Named-block symmetric matrices and the scaled half-vectorization.

A :class:`VarLayout` fixes the order and size of the variable blocks of a
lifted vector ``x = [h, theta, z_1, ...]``. A :class:`PolyMatrix` stores a
symmetric matrix over such a layout as dense blocks keyed by variable pairs.

``vech`` stacks the upper triangle row by row and multiplies off-diagonal
entries by sqrt(2), so that ``<A, B> = vech(A) @ vech(B)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import re
from typing import Iterable, Iterator, Mapping

import numpy as np

SQRT2 = np.sqrt(2.0)
HOMOGENIZATION = "h"

_INSTANCE_RE = re.compile(r"^(.*\D)_(\d+)$")


def split_name(name: str) -> tuple[str, int | None]:
    """Split ``"z_3"`` into ``("z", 3)``; names without a numeric suffix are global."""
    m = _INSTANCE_RE.match(name)
    if m is None:
        return name, None
    return m.group(1), int(m.group(2))


def join_name(kind: str, index: int | None) -> str:
    return kind if index is None else f"{kind}_{index}"


# ---------------------------------------------------------------------------
# half-vectorization


@lru_cache(maxsize=64)
def _triu(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows, cols = np.triu_indices(n)
    scale = np.where(rows == cols, 1.0, SQRT2)
    for a in (rows, cols, scale):
        a.flags.writeable = False
    return rows, cols, scale


def vech_size(n: int) -> int:
    return n * (n + 1) // 2


def vech_dim(length: int) -> int:
    """Matrix size N with N(N+1)/2 == length, or ValueError."""
    n = int(round((np.sqrt(8 * length + 1) - 1) / 2))
    if vech_size(n) != length:
        raise ValueError(f"length {length} is not a triangular number")
    return n


def vech_index(i: int, j: int, n: int) -> int:
    """Position of entry (i, j) of an n x n matrix inside vech."""
    if i > j:
        i, j = j, i
    return i * n - i * (i - 1) // 2 + (j - i)


def vech(M: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Scaled half-vectorization of a symmetric matrix.

    Raises ValueError if ``M`` is not square or is asymmetric beyond
    ``tol`` relative to its largest entry.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    scale = max(np.abs(M).max(initial=0.0), 1.0)
    if np.abs(M - M.T).max(initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric")
    rows, cols, s = _triu(M.shape[0])
    return M[rows, cols] * s


def vech_inv(v: np.ndarray) -> np.ndarray:
    """Symmetric matrix whose ``vech`` is ``v``."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("vech_inv expects a 1-d vector")
    n = vech_dim(v.size)
    rows, cols, s = _triu(n)
    M = np.zeros((n, n))
    M[rows, cols] = v / s
    M[cols, rows] = v / s
    return M


def vech_outer(x: np.ndarray) -> np.ndarray:
    """``vech(x x^T)`` without forming the outer product twice."""
    x = np.asarray(x, dtype=float)
    rows, cols, s = _triu(x.size)
    return x[rows] * x[cols] * s


def vech_outer_many(xs: np.ndarray) -> np.ndarray:
    """Column-stacked ``vech(x x^T)`` for the columns of ``xs``."""
    xs = np.asarray(xs, dtype=float)
    rows, cols, s = _triu(xs.shape[0])
    return xs[rows] * xs[cols] * s[:, None]


# ---------------------------------------------------------------------------
# layouts


@dataclass(frozen=True)
class VarLayout:
    """Ordered variable blocks. The first block is always ``h`` of size 1."""

    blocks: tuple[tuple[str, int], ...]

    def __init__(self, blocks: Iterable[tuple[str, int]]):
        blocks = tuple((str(n), int(d)) for n, d in blocks)
        names = [n for n, _ in blocks]
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate variable names in {names}")
        if any(d <= 0 for _, d in blocks):
            raise ValueError("variable dimensions must be positive")
        if not blocks or blocks[0] != (HOMOGENIZATION, 1):
            raise ValueError("layout must start with ('h', 1)")
        object.__setattr__(self, "blocks", blocks)
        offsets, pos = {}, 0
        for n, d in blocks:
            offsets[n] = pos
            pos += d
        object.__setattr__(self, "_offsets", offsets)
        object.__setattr__(self, "_dims", dict(blocks))
        object.__setattr__(self, "size", pos)

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.blocks]

    @property
    def vech_size(self) -> int:
        return vech_size(self.size)

    def __contains__(self, name: object) -> bool:
        return name in self._dims

    def __iter__(self) -> Iterator[tuple[str, int]]:
        return iter(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def dim(self, name: str) -> int:
        try:
            return self._dims[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def offset(self, name: str) -> int:
        try:
            return self._offsets[name]
        except KeyError:
            raise KeyError(f"unknown variable {name!r}") from None

    def slice(self, name: str) -> slice:
        o = self.offset(name)
        return slice(o, o + self._dims[name])

    def position(self, name: str) -> int:
        return self.names.index(name)

    def indices(self, names: Iterable[str]) -> np.ndarray:
        """Entry indices of ``names`` (in the given order) within this layout."""
        return np.concatenate([np.arange(self.offset(n), self.offset(n) + self.dim(n)) for n in names])

    def sub(self, names: Iterable[str]) -> "VarLayout":
        """Layout restricted to ``names``, kept in this layout's order."""
        keep = set(names)
        unknown = keep - set(self._dims)
        if unknown:
            raise KeyError(f"unknown variables {sorted(unknown)}")
        return VarLayout((n, d) for n, d in self.blocks if n in keep)

    def to_list(self) -> list[list]:
        return [[n, d] for n, d in self.blocks]


# ---------------------------------------------------------------------------
# block matrices


class PolyMatrix:
    """Symmetric matrix over a :class:`VarLayout`, stored as dense blocks.

    Blocks are keyed by ordered pairs ``(a, b)`` with ``a`` not after ``b``
    in the layout; the transposed block is implied.
    """

    __slots__ = ("layout", "_blocks")

    def __init__(self, layout: VarLayout, blocks: Mapping[tuple[str, str], np.ndarray] | None = None):
        self.layout = layout
        self._blocks: dict[tuple[str, str], np.ndarray] = {}
        for (a, b), M in (blocks or {}).items():
            self.add_block(a, b, M)

    # construction -----------------------------------------------------
    def _key(self, a: str, b: str) -> tuple[tuple[str, str], bool]:
        pa, pb = self.layout.position(a), self.layout.position(b)
        return ((a, b), False) if pa <= pb else ((b, a), True)

    def add_block(self, a: str, b: str, M) -> "PolyMatrix":
        """Add ``M`` to block (a, b) and its transpose to (b, a).

        For a diagonal block the symmetric part of ``M`` is added, so
        ``add_block("h", "h", 1)`` contributes ``h^2``.
        """
        M = np.atleast_2d(np.asarray(M, dtype=float))
        shape = (self.layout.dim(a), self.layout.dim(b))
        if M.shape != shape:
            raise ValueError(f"block ({a},{b}) must have shape {shape}, got {M.shape}")
        key, flip = self._key(a, b)
        if flip:
            M = M.T
        if a == b:
            M = 0.5 * (M + M.T)
        cur = self._blocks.get(key)
        self._blocks[key] = M.copy() if cur is None else cur + M
        return self

    def add_entry(self, a: str, i: int, b: str, j: int, value: float) -> "PolyMatrix":
        """Add ``value`` at (a[i], b[j]) and mirror it; on the diagonal it is set once."""
        B = np.zeros((self.layout.dim(a), self.layout.dim(b)))
        B[i, j] = value
        if a == b and i != j:
            B[j, i] = value
        key, flip = self._key(a, b)
        if flip:
            B = B.T
        cur = self._blocks.get(key)
        self._blocks[key] = B if cur is None else cur + B
        return self

    def add_bilinear(self, a: str, i: int, b: str, j: int, coeff: float) -> "PolyMatrix":
        """Add the monomial ``coeff * x_a[i] * x_b[j]`` to the quadratic form."""
        if a == b and i == j:
            return self.add_entry(a, i, b, j, coeff)
        return self.add_entry(a, i, b, j, 0.5 * coeff)

    @classmethod
    def from_dense(cls, layout: VarLayout, M: np.ndarray, tol: float = 0.0) -> "PolyMatrix":
        M = np.asarray(M, dtype=float)
        if M.shape != (layout.size, layout.size):
            raise ValueError("dense matrix does not match layout size")
        if np.abs(M - M.T).max(initial=0.0) > 1e-12 * max(1.0, np.abs(M).max(initial=0.0)):
            raise ValueError("matrix is not symmetric")
        out = cls(layout)
        names = layout.names
        for ia, a in enumerate(names):
            for b in names[ia:]:
                B = M[layout.slice(a), layout.slice(b)]
                if np.abs(B).max() > tol:
                    out._blocks[(a, b)] = B.copy()
        return out

    @classmethod
    def from_vech(cls, layout: VarLayout, v: np.ndarray, tol: float = 0.0) -> "PolyMatrix":
        if len(v) != layout.vech_size:
            raise ValueError(f"vech length {len(v)} does not match layout ({layout.vech_size})")
        return cls.from_dense(layout, vech_inv(v), tol=tol)

    # access --------------------------------------------------------------
    def block(self, a: str, b: str) -> np.ndarray:
        key, flip = self._key(a, b)
        B = self._blocks.get(key)
        if B is None:
            return np.zeros((self.layout.dim(a), self.layout.dim(b)))
        return B.T.copy() if flip else B.copy()

    def items(self) -> Iterator[tuple[tuple[str, str], np.ndarray]]:
        return iter(self._blocks.items())

    @property
    def variables(self) -> list[str]:
        """Variables touched by a nonzero block, in layout order."""
        used = set()
        for (a, b), B in self._blocks.items():
            if np.any(B != 0):
                used.update((a, b))
        return [n for n in self.layout.names if n in used]

    def to_dense(self) -> np.ndarray:
        L = self.layout
        M = np.zeros((L.size, L.size))
        for (a, b), B in self._blocks.items():
            M[L.slice(a), L.slice(b)] = B
            M[L.slice(b), L.slice(a)] = B.T
        return M

    def vech(self) -> np.ndarray:
        return vech(self.to_dense())

    def vech_entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Nonzero entries of :meth:`vech` as sorted ``(indices, values)``, built block by block."""
        L, n = self.layout, self.layout.size
        idx, val = [], []
        for (a, b), B in self._blocks.items():
            r, c = np.nonzero(B)
            if r.size == 0:
                continue
            i, j = r + L.offset(a), c + L.offset(b)
            v = B[r, c]
            if a == b:
                upper = i <= j
                i, j, v = i[upper], j[upper], v[upper]
            # blocks are stored with a not after b, so i <= j holds off the diagonal blocks
            idx.append(i * n - i * (i - 1) // 2 + (j - i))
            val.append(np.where(i == j, v, SQRT2 * v))
        if not idx:
            return np.zeros(0, dtype=int), np.zeros(0)
        idx, val = np.concatenate(idx), np.concatenate(val)
        order = np.argsort(idx)
        return idx[order], val[order]

    def quad(self, x: np.ndarray) -> float:
        """``x^T M x``."""
        x = np.asarray(x, dtype=float)
        return float(x @ self.to_dense() @ x)

    def inner(self, other: "PolyMatrix | np.ndarray") -> float:
        other_dense = other.to_dense() if isinstance(other, PolyMatrix) else np.asarray(other)
        return float(np.sum(self.to_dense() * other_dense))

    def is_zero(self, tol: float = 0.0) -> bool:
        return all(np.abs(B).max() <= tol for B in self._blocks.values())

    def copy(self) -> "PolyMatrix":
        out = PolyMatrix(self.layout)
        out._blocks = {k: B.copy() for k, B in self._blocks.items()}
        return out

    # algebra -------------------------------------------------------------
    def __add__(self, other: "PolyMatrix") -> "PolyMatrix":
        if other.layout != self.layout:
            raise ValueError("layouts differ")
        out = self.copy()
        for k, B in other._blocks.items():
            out._blocks[k] = out._blocks[k] + B if k in out._blocks else B.copy()
        return out

    def __sub__(self, other: "PolyMatrix") -> "PolyMatrix":
        return self + (-1.0) * other

    def __mul__(self, alpha: float) -> "PolyMatrix":
        out = PolyMatrix(self.layout)
        out._blocks = {k: alpha * B for k, B in self._blocks.items()}
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "PolyMatrix":
        return -1.0 * self

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PolyMatrix) or other.layout != self.layout:
            return NotImplemented
        return np.array_equal(self.to_dense(), other.to_dense())

    __hash__ = None  # mutable via add_block

    def __repr__(self) -> str:
        return f"PolyMatrix({self.layout.names}, blocks={sorted(self._blocks)})"

    # structural operations --------------------------------------------
    def rename(self, mapping: Mapping[str, str]) -> "PolyMatrix":
        """Same numbers, variables relabelled by ``mapping`` (missing names kept)."""
        return rename(self, mapping)

    def embed(self, target: VarLayout) -> "PolyMatrix":
        return embed(self, target)

    def restrict(self, names: Iterable[str]) -> "PolyMatrix":
        """Drop every block outside ``names``; the layout shrinks accordingly."""
        sub = self.layout.sub(names)
        out = PolyMatrix(sub)
        out._blocks = {k: B.copy() for k, B in self._blocks.items() if k[0] in sub and k[1] in sub}
        return out

    # serialization -----------------------------------------------------
    def to_triplets(self, tol: float = 0.0) -> list[tuple[str, int, str, int, float]]:
        """Upper-triangular nonzeros as ``(row_var, row_off, col_var, col_off, value)``."""
        out = []
        names = self.layout.names
        for a_pos, a in enumerate(names):
            for b in names[a_pos:]:
                B = self._blocks.get((a, b))
                if B is None:
                    continue
                for i in range(B.shape[0]):
                    for j in range(i if a == b else 0, B.shape[1]):
                        if abs(B[i, j]) > tol:
                            out.append((a, i, b, j, float(B[i, j])))
        return out

    @classmethod
    def from_triplets(cls, layout: VarLayout, triplets: Iterable) -> "PolyMatrix":
        out = cls(layout)
        for a, i, b, j, value in triplets:
            out.add_entry(a, int(i), b, int(j), float(value))
        return out


def rename(M: PolyMatrix, mapping: Mapping[str, str]) -> PolyMatrix:
    """Relabel variables of ``M``; block values and order are untouched.

    ``mapping`` must be injective on the layout's names and must not map
    onto a name that stays in the layout.
    """
    names = M.layout.names
    unknown = set(mapping) - set(names)
    if unknown:
        raise KeyError(f"cannot rename unknown variables {sorted(unknown)}")
    new_names = [mapping.get(n, n) for n in names]
    if len(set(new_names)) != len(new_names):
        raise ValueError(f"renaming {dict(mapping)} causes a name collision")
    if new_names[0] != HOMOGENIZATION:
        raise ValueError("the homogenization variable cannot be renamed")
    new_layout = VarLayout(zip(new_names, (d for _, d in M.layout)))
    lookup = dict(zip(names, new_names))
    out = PolyMatrix(new_layout)
    out._blocks = {(lookup[a], lookup[b]): B.copy() for (a, b), B in M.items()}
    return out


def embed(M: PolyMatrix, target: VarLayout) -> PolyMatrix:
    """Zero-pad ``M`` into a larger layout containing all of its variables."""
    for name, d in M.layout:
        if name not in target:
            raise KeyError(f"variable {name!r} not in target layout")
        if target.dim(name) != d:
            raise ValueError(f"dimension of {name!r} differs: {d} vs {target.dim(name)}")
    out = PolyMatrix(target)
    for (a, b), B in M.items():
        if a == b:
            out._blocks[(a, a)] = B.copy()
        else:
            out.add_block(a, b, B)
    return out


def homogenization_matrix(layout: VarLayout) -> PolyMatrix:
    """``A_0``: a single one at the (h, h) entry."""
    return PolyMatrix(layout, {(HOMOGENIZATION, HOMOGENIZATION): np.ones((1, 1))})
