"""Constraint learning from samples via rank-revealing QR.

Every column of the data matrix ``Y`` is ``vech(x x^T)`` for a feasible
lifted sample ``x``. A vector ``a`` with ``a @ Y = 0`` defines a quadratic
constraint ``x^T vech_inv(a) x = 0`` satisfied by all samples. The left
nullspace is read off a column-pivoted QR factorization of ``Y^T``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy import sparse

from .liftprob import LiftedProblem
from .polymat import PolyMatrix, VarLayout, vech_outer_many

#: smallest gap (in orders of magnitude) in diag(R) accepted as a rank drop
MIN_RANK_GAP = 4.0
#: relative size of R_ii below which an entry after a gap is treated as round-off
NOISE_FLOOR = 1e-10
#: entries of max-normalized basis vectors below this are round-off and set to zero
ROUNDOFF = 1e-10


@dataclass
class DataMatrix:
    """Sample columns followed by optional known-constraint columns."""

    Y: np.ndarray
    tags: list[str]
    layout: VarLayout | None = None

    @property
    def n_samples(self) -> int:
        return self.tags.count("sample")

    @property
    def n_known(self) -> int:
        return self.tags.count("known")

    @property
    def samples(self) -> np.ndarray:
        return self.Y[:, [i for i, t in enumerate(self.tags) if t == "sample"]]

    def drop_sample(self, j: int) -> "DataMatrix":
        sample_cols = [i for i, t in enumerate(self.tags) if t == "sample"]
        col = sample_cols[j]
        keep = [i for i in range(len(self.tags)) if i != col]
        return DataMatrix(self.Y[:, keep], [self.tags[i] for i in keep], self.layout)


@dataclass
class PivotedQrResult:
    perm: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    rank: int
    diag: np.ndarray

    @property
    def n_null(self) -> int:
        return self.R2.shape[1]


@dataclass
class ConstraintBasis:
    """Learned constraint vectors, one per column of ``vectors``."""

    vectors: np.ndarray
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))
    layout: VarLayout | None = None

    def __len__(self) -> int:
        return self.vectors.shape[1]

    def __iter__(self):
        return iter(self.vectors.T)

    def matrices(self, layout: VarLayout | None = None) -> list[PolyMatrix]:
        layout = layout or self.layout
        if layout is None:
            raise ValueError("basis has no layout")
        return [PolyMatrix.from_vech(layout, a) for a in self.vectors.T]

    @property
    def max_residual(self) -> float:
        return float(self.residuals.max(initial=0.0))


# ---------------------------------------------------------------------------
# QR


def householder_qrcp(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Householder QR with greedy column pivoting, written out in numpy.

    Returns ``(perm, R)`` with ``A[:, perm] = Q R``. The orthogonal factor
    is never formed. Ties in column norm go to the lowest index. This is the
    reference implementation; :func:`pivoted_qr` uses LAPACK by default.
    """
    R = np.array(A, dtype=float, order="C", copy=True)
    m, n = R.shape
    perm = np.arange(n)
    norms = np.einsum("ij,ij->j", R, R)
    reference = norms.copy()
    for k in range(min(m, n)):
        j = k + int(np.argmax(norms[k:]))
        if j != k:
            R[:, [k, j]] = R[:, [j, k]]
            for arr in (perm, norms, reference):
                arr[[k, j]] = arr[[j, k]]
        x = R[k:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            break
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        R[k:, k:] -= 2.0 * np.outer(v, v @ R[k:, k:])
        R[k + 1 :, k] = 0.0
        norms[k + 1 :] -= R[k, k + 1 :] ** 2
        # downdating cancels badly once a column is mostly eliminated
        stale = k + 1 + np.flatnonzero(norms[k + 1 :] < 1e-10 * reference[k + 1 :])
        if stale.size:
            norms[stale] = np.einsum("ij,ij->j", R[k + 1 :, stale], R[k + 1 :, stale])
            reference[stale] = norms[stale]
    return perm, np.triu(R[: min(m, n)])


def _lapack_qrcp(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    R, perm = sla.qr(A, mode="r", pivoting=True, check_finite=False)
    return perm, R


def numerical_rank(diag: np.ndarray, rank_tol: float | None = None) -> int:
    """Rank from the magnitudes of the diagonal of R.

    With ``rank_tol`` the rank counts entries above ``rank_tol * |R_11|``.
    Otherwise the rank is placed at the first drop of ``log10 |R_ii|`` that
    spans at least ``MIN_RANK_GAP`` orders of magnitude and lands below the
    noise floor ``NOISE_FLOOR``. Without such a drop the largest gap of that
    size ending below 1e-6 is used; else every entry above 1e-13 counts.
    """
    d = np.abs(np.asarray(diag, dtype=float))
    if d.size == 0 or d[0] == 0.0:
        return 0
    rel = d / d[0]
    if rank_tol is not None:
        return int(np.sum(rel > rank_tol))
    logs = np.log10(np.maximum(rel, 1e-300))
    gaps = logs[:-1] - logs[1:]
    for i, g in enumerate(gaps):
        if g >= MIN_RANK_GAP and rel[i + 1] < NOISE_FLOOR:
            return i + 1
    best, rank = 0.0, d.size
    for i, g in enumerate(gaps):
        if g >= MIN_RANK_GAP and rel[i + 1] < 1e-6 and g > best:
            best, rank = g, i + 1
    if rank == d.size and rel[-1] < 1e-13:
        # the drop happens before the first entry below machine precision
        rank = int(np.sum(rel > 1e-13))
    return rank


def pivoted_qr(A: np.ndarray, rank_tol: float | None = None, engine: str = "lapack") -> PivotedQrResult:
    """Column-pivoted QR of ``A`` split at its numerical rank."""
    A = np.asarray(A, dtype=float)
    if engine == "lapack":
        perm, R = _lapack_qrcp(A)
    elif engine == "householder":
        perm, R = householder_qrcp(A)
    else:
        raise ValueError(f"unknown QR engine {engine!r}")
    n = A.shape[1]
    diag = np.abs(np.diag(R))
    if diag.size < n:
        diag = np.concatenate([diag, np.zeros(n - diag.size)])
    r = numerical_rank(diag, rank_tol)
    return PivotedQrResult(perm=perm, R1=R[:r, :r], R2=R[:r, r:n], rank=r, diag=diag)


# ---------------------------------------------------------------------------
# data matrix and nullspace


def build_data_matrix(
    problem: LiftedProblem,
    known: Sequence[PolyMatrix] = (),
    oversample: float = 0.2,
    rng: np.random.Generator | None = None,
    n_samples: int | None = None,
) -> DataMatrix:
    """Stack ``vech(x x^T)`` of fresh samples, then the vech of ``known``.

    The homogenization matrix is skipped among ``known`` since it is not
    annihilated by samples (its right-hand side is one).
    """
    if oversample <= 0:
        raise ValueError("oversample must be positive")
    rng = np.random.default_rng(0) if rng is None else rng
    layout = problem.layout
    n = layout.vech_size
    count = n_samples if n_samples is not None else math.ceil((1.0 + oversample) * n)
    X = np.column_stack([problem.sample_lifted(rng) for _ in range(count)])
    cols = [vech_outer_many(X)]
    tags = ["sample"] * count
    known_vecs = [A.embed(layout).vech() for A in known if not _is_homogenization(A)]
    if known_vecs:
        cols.append(np.column_stack(known_vecs))
        tags += ["known"] * len(known_vecs)
    return DataMatrix(np.hstack(cols), tags, layout)


def _is_homogenization(A: PolyMatrix) -> bool:
    D = A.to_dense()
    E = np.zeros_like(D)
    E[0, 0] = D[0, 0]
    return D[0, 0] != 0 and np.array_equal(D, E)


def normalize_max(vectors: np.ndarray) -> np.ndarray:
    """Scale each column so its largest-magnitude entry is +1 (first on ties)."""
    V = np.array(vectors, dtype=float, copy=True)
    for j in range(V.shape[1]):
        k = int(np.argmax(np.abs(V[:, j])))
        if V[k, j] != 0:
            V[:, j] /= V[k, j]
    return V


def nullspace_from_qr(qr: PivotedQrResult, n: int) -> np.ndarray:
    """``P [R1^{-1} R2; -I]`` with normalized columns."""
    r = qr.rank
    B = np.zeros((n, n - r))
    if r:
        B[qr.perm[:r]] = sla.solve_triangular(qr.R1, qr.R2, check_finite=False)
    B[qr.perm[r:]] = -np.eye(n - r)
    return normalize_max(B)


def drop_roundoff(vectors: np.ndarray) -> np.ndarray:
    """Zero the entries of normalized basis vectors that are below ``ROUNDOFF``."""
    return np.where(np.abs(vectors) < ROUNDOFF, 0.0, vectors)


def sample_residuals(vectors: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """``|a_i^T y_s| / ||y_s||`` for every basis vector and sample."""
    if vectors.size == 0 or samples.size == 0:
        return np.zeros((vectors.shape[1], samples.shape[1]))
    return np.abs(vectors.T @ samples) / np.linalg.norm(samples, axis=0)[None, :]


def learn_nullspace(
    Y: DataMatrix | np.ndarray,
    rank_tol: float | None = None,
    engine: str = "lapack",
) -> tuple[ConstraintBasis, PivotedQrResult]:
    """Left nullspace of ``Y`` as a normalized, QR-sparse basis."""
    data = Y if isinstance(Y, DataMatrix) else DataMatrix(np.asarray(Y, dtype=float), ["sample"] * np.shape(Y)[1])
    n, cols = data.Y.shape
    if cols < n:
        warnings.warn(f"data matrix has fewer columns ({cols}) than rows ({n}); the nullspace is overestimated")
    qr = pivoted_qr(data.Y.T, rank_tol=rank_tol, engine=engine)
    while qr.rank > 0:
        r1_diag = np.abs(np.diag(qr.R1))
        if r1_diag.min() > 1e-14 * r1_diag.max():
            break
        warnings.warn("R1 numerically singular at the chosen rank; shrinking rank")
        r = qr.rank - 1
        full_R = np.hstack([qr.R1, qr.R2])
        qr = PivotedQrResult(qr.perm, full_R[:r, :r], full_R[:r, r:], r, qr.diag)
    vectors = nullspace_from_qr(qr, n)
    res = sample_residuals(vectors, data.samples).max(axis=1, initial=0.0) if vectors.size else np.zeros(0)
    return ConstraintBasis(vectors, res, data.layout), qr


class NullspaceError(RuntimeError):
    pass


def two_pass_refine(
    Y: DataMatrix,
    basis: ConstraintBasis | None = None,
    rank_tol: float | None = None,
    engine: str = "lapack",
    tol: float = 1e-10,
) -> tuple[DataMatrix, ConstraintBasis]:
    """Drop the worst-fitting sample and relearn the nullspace.

    Raises :class:`NullspaceError` when the largest residual of the second
    pass is still above ``tol``.
    """
    if basis is None:
        basis, _ = learn_nullspace(Y, rank_tol=rank_tol, engine=engine)
    samples = Y.samples
    if len(basis) and samples.shape[1] > 1:
        worst = int(np.argmax(sample_residuals(basis.vectors, samples).max(axis=0)))
        Y = Y.drop_sample(worst)
    basis, _ = learn_nullspace(Y, rank_tol=rank_tol, engine=engine)
    if basis.max_residual > tol:
        raise NullspaceError(
            f"nullspace residual {basis.max_residual:.3e} above {tol:.0e} after two passes "
            f"({len(basis)} vectors, {Y.n_samples} samples)"
        )
    return Y, basis


def independent_subset(
    vectors: Sequence | np.ndarray,
    rank_tol: float = 1e-9,
    n_fixed: int = 0,
) -> list[int]:
    """Indices of a maximal linearly independent subset, in original order.

    ``vectors`` holds vech vectors or :class:`PolyMatrix` objects (the latter
    are never densified). The first ``n_fixed`` vectors are kept
    unconditionally. Columns are grouped by overlapping support, ignoring
    "hub" rows shared by a large share of the columns (such as the ``h^2``
    entry); each group is reduced by pivoted QR, and dependencies that run
    through the hub rows are resolved afterwards. Cost therefore grows with
    the size of the groups, not of the whole set.
    """
    U = _unit_columns(vectors)
    m = U.shape[1]
    if m == 0:
        return []
    n_fixed = min(n_fixed, m)
    nonzero = np.diff(U.indptr) > 0
    cols = list(range(n_fixed)) + [j for j in range(n_fixed, m) if nonzero[j]]
    hubs = _hub_rows(U, cols)

    kept_by_group = []
    for group in _support_components(U, cols, hubs):
        sub = U[:, group]
        rows = np.unique(sub.indices)
        D = sub[rows, :].toarray()
        fixed = [i for i, j in enumerate(group) if j < n_fixed]
        cand = [i for i, j in enumerate(group) if j >= n_fixed]
        kept = [group[i] for i in fixed]
        if cand:
            C = D[:, cand]
            if fixed:
                Qf, _ = np.linalg.qr(D[:, fixed])
                C = C - Qf @ (Qf.T @ C)
            qr = pivoted_qr(C, rank_tol=rank_tol)
            kept.extend(group[cand[i]] for i in qr.perm[: qr.rank])
        kept_by_group.append(sorted(kept))
    if hubs.size:
        kept_by_group = _resolve_hub_dependencies(U, kept_by_group, hubs, n_fixed, rank_tol)
    return sorted(j for g in kept_by_group for j in g)


def _unit_columns(vectors) -> sparse.csc_matrix:
    """Unit-norm columns as a sparse matrix (zero columns stay zero)."""
    if isinstance(vectors, np.ndarray) and vectors.ndim == 2:
        V = sparse.csc_matrix(vectors)
    else:
        vectors = list(vectors)
        if not vectors:
            return sparse.csc_matrix((0, 0))
        idx, val, ptr, n_rows = [], [], [0], None
        for v in vectors:
            if isinstance(v, PolyMatrix):
                i, x = v.vech_entries()
                n_rows = v.layout.vech_size
            else:
                v = np.asarray(v, dtype=float)
                i = np.flatnonzero(v)
                x = v[i]
                n_rows = v.size
            idx.append(i)
            val.append(x)
            ptr.append(ptr[-1] + i.size)
        V = sparse.csc_matrix((np.concatenate(val), np.concatenate(idx), ptr), shape=(n_rows, len(vectors)))
    V.eliminate_zeros()
    norms = np.sqrt(np.asarray(V.multiply(V).sum(axis=0))).ravel()
    scale = np.where(norms > 0, 1.0 / np.where(norms > 0, norms, 1.0), 0.0)
    return sparse.csc_matrix(V @ sparse.diags(scale))


def _hub_rows(U: sparse.csc_matrix, cols: list[int]) -> np.ndarray:
    """Rows touched by more than a quarter of the columns (at least 8)."""
    counts = np.bincount(U[:, cols].indices, minlength=U.shape[0])
    return np.flatnonzero(counts > max(8, len(cols) // 4))


def _support_components(U: sparse.csc_matrix, cols: list[int], hubs: np.ndarray) -> list[list[int]]:
    """Group columns whose supports overlap outside the hub rows (transitively)."""
    parent = {j: j for j in cols}

    def find(j):
        while parent[j] != j:
            parent[j] = parent[parent[j]]
            j = parent[j]
        return j

    hub = set(hubs.tolist())
    owner: dict[int, int] = {}
    for j in cols:
        for r in U.indices[U.indptr[j] : U.indptr[j + 1]]:
            if r in hub:
                continue
            if r in owner:
                a, b = find(owner[r]), find(j)
                if a != b:
                    parent[max(a, b)] = min(a, b)
            else:
                owner[r] = j
    groups: dict[int, list[int]] = {}
    for j in cols:
        groups.setdefault(find(j), []).append(j)
    return sorted(groups.values(), key=min)


def _resolve_hub_dependencies(U, groups, hubs, n_fixed, rank_tol) -> list[list[int]]:
    """Drop columns that are dependent only through the hub rows.

    Within a group, combinations of kept columns that vanish outside the
    hub rows span a subspace whose hub-row images must be independent of
    those collected from earlier groups; otherwise one column of the
    offending combination is removed.
    """
    hub_set = set(hubs.tolist())
    basis = np.zeros((hubs.size, 0))
    out = []
    for group in groups:
        group = list(group)
        while group:
            sub = U[:, group]
            rows = np.unique(sub.indices)
            private = np.array([r for r in rows if r not in hub_set], dtype=int)
            if private.size:
                Pm = sub[private, :].toarray()
                _, s, Vt = np.linalg.svd(Pm, full_matrices=True)
                tol = rank_tol * max(s.max(initial=0.0), 1.0)
                K = Vt[int(np.sum(s > tol)) :].T
            else:
                K = np.eye(len(group))
            if K.shape[1] == 0:
                break
            images = sub[hubs, :].toarray() @ K
            resid = images - basis @ (basis.T @ images)
            _, s2, V2t = np.linalg.svd(resid, full_matrices=True)
            null = int(np.sum(s2 > rank_tol)) if s2.size else 0
            if null < K.shape[1]:
                combo = K @ V2t[null:][0]
                free = [i for i, j in enumerate(group) if j >= n_fixed and abs(combo[i]) > rank_tol]
                if free:
                    del group[max(free, key=lambda i: group[i])]
                    continue
            if resid.size:
                Qr, Rr = np.linalg.qr(resid)
                basis = np.hstack([basis, Qr[:, np.abs(np.diag(Rr)) > rank_tol]])
            break
        out.append(group)
    return out
