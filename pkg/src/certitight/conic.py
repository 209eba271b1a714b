"""Semidefinite programs used by the pipeline, solved with cvxopt.

All programs are posed in the dual variables ``(rho, lam)`` of the
relaxation, with the certificate matrix

    H(rho, lam) = Q + rho * A_0 + sum_i lam_i * A_i.

The primal relaxation min <Q, X> s.t. <A_0, X> = 1, <A_i, X> = 0, X >= 0
is recovered from the multiplier of the matrix inequality ``H >= 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from cvxopt import matrix as cvx_matrix
from cvxopt import solvers

from .polymat import PolyMatrix

SOLVER_TOL = 1e-10
OPTIMAL_TOL = 1e-9
NEAR_OPTIMAL_TOL = 1e-7
EPS_MAX = 1e-3
PSD_TOL = 1e-8
#: certify asks for H >= PSD_MARGIN * I in normalized units, so interior-point
#: round-off on the zero eigenvalue cannot turn negative once H is rescaled
PSD_MARGIN = 1e-9


def _dense(M) -> np.ndarray:
    return M.to_dense() if isinstance(M, PolyMatrix) else np.asarray(M, dtype=float)


def eig_sym(M) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and matching eigenvectors (columns)."""
    M = _dense(M)
    w, V = np.linalg.eigh(0.5 * (M + M.T))
    return w[::-1], V[:, ::-1]


@dataclass
class SdpSolution:
    X: np.ndarray
    p_star: float
    d_star: float
    rho: float
    lam: np.ndarray
    status: str
    residuals: dict = field(default_factory=dict)
    iterations: int = 0

    @property
    def H(self) -> np.ndarray:
        return self.residuals.get("H")


@dataclass
class Certificate:
    eps: float
    rho: float
    lam: np.ndarray
    H_eigs: np.ndarray
    certified: bool
    status: str = "ok"
    reason: str = ""
    eps_max: float = EPS_MAX

    @property
    def min_eig_H(self) -> float:
        """Smallest eigenvalue of H, NaN when the solver produced no duals."""
        return float(self.H_eigs[-1]) if self.H_eigs.size else float("nan")

    def to_dict(self) -> dict:
        return {
            "certified": self.certified,
            "eps": self.eps,
            "eps_max": self.eps_max,
            "rho": self.rho,
            "lam": self.lam.tolist(),
            "min_eig_H": self.min_eig_H if self.H_eigs.size else None,
            "H_eigs": self.H_eigs.tolist(),
            "status": self.status,
            "reason": self.reason,
        }


def _options(tol: float, max_iters: int = 200) -> dict:
    return {
        "show_progress": False,
        "abstol": tol,
        "reltol": tol,
        "feastol": tol,
        "maxiters": max_iters,
        "refinement": 2,
    }


def _prepare(Q, constraints) -> tuple[np.ndarray, list[np.ndarray], float, np.ndarray]:
    Qd = _dense(Q)
    As = [_dense(A) for A in constraints]
    if not As:
        raise ValueError("at least the homogenization constraint is required")
    n = Qd.shape[0]
    if any(A.shape != (n, n) for A in As):
        raise ValueError("constraint and cost shapes differ")
    norms = np.array([np.linalg.norm(A) for A in As])
    if np.any(norms == 0):
        raise ValueError("zero constraint matrix")
    return Qd, As, float(np.linalg.norm(Qd)), norms


def _psd_columns(As: Sequence[np.ndarray]) -> np.ndarray:
    return np.column_stack([-A.ravel(order="F") for A in As])


def H_of(Q, constraints, rho: float, lam) -> np.ndarray:
    H = _dense(Q) + rho * _dense(constraints[0])
    for l, A in zip(lam, constraints[1:]):
        H = H + l * _dense(A)
    return H


def free_coordinates(
    Q: np.ndarray, As: Sequence[np.ndarray], tol: float = 1e-14, rel_tol: float = 0.0
) -> np.ndarray:
    """Coordinates whose diagonal entry vanishes in ``Q`` and every constraint.

    ``H`` then has a zero diagonal entry for every choice of duals, so a
    feasible ``H >= 0`` has the whole row equal to zero. Solving on the
    remaining coordinates with those rows as linear equalities restores a
    strictly feasible dual; without it the primal optimum can drift off to
    infinity along these coordinates. With ``rel_tol`` an entry also counts
    as zero when it is below ``rel_tol`` times the largest entry of its matrix.
    """
    mats = [Q] + list(As)
    diag = np.abs(np.column_stack([np.diag(M) for M in mats]))
    limit = np.maximum(tol, rel_tol * np.array([np.abs(M).max(initial=0.0) for M in mats]))
    return np.flatnonzero(np.all(diag <= limit[None, :], axis=1))


def _free_row_equalities(Q, As, free) -> tuple[np.ndarray, np.ndarray]:
    """Independent equalities ``H[k, j] = 0`` for ``k`` in ``free`` (all ``j``)."""
    n = Q.shape[0]
    pairs = [(k, j) for k in free for j in range(n) if j not in free or j >= k]
    rows = np.array([[A[k, j] for A in As] for k, j in pairs])
    rhs = -np.array([Q[k, j] for k, j in pairs])
    nz = np.abs(rows).max(axis=1) > 0
    if np.any(~nz & (np.abs(rhs) > 0)):
        raise ValueError("the dual is infeasible: a free coordinate couples to the cost only")
    rows, rhs = rows[nz], rhs[nz]
    if rows.size == 0:
        return np.zeros((0, len(As))), np.zeros(0)
    # keep a row basis; cvxopt needs full row rank
    _, R, perm = sla.qr(rows.T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    r = int(np.sum(d > 1e-12 * d[0]))
    return rows[perm[:r]], rhs[perm[:r]]


def _complete(Xk, keep, free, n, As) -> np.ndarray:
    """Full primal matrix from the reduced block.

    Entries coupling free and kept coordinates are fitted to the primal
    constraints by least squares; the free-free block is the smallest
    PSD completion. The cost has no entries in the free rows.
    """
    X = np.zeros((n, n))
    X[np.ix_(keep, keep)] = Xk
    if free.size == 0:
        return X
    # choose X[free, keep] to satisfy the primal constraints in the least-squares sense
    target = np.array([(1.0 if i == 0 else 0.0) - np.sum(A[np.ix_(keep, keep)] * Xk) for i, A in enumerate(As)])
    cols = [(k, j) for k in free for j in keep]
    M = np.column_stack([[2.0 * A[k, j] for A in As] for k, j in cols]) if cols else np.zeros((len(As), 0))
    used = np.abs(M).max(axis=0) > 0 if cols else np.zeros(0, bool)
    if np.any(used):
        z = np.linalg.lstsq(M[:, used], target, rcond=None)[0]
        for (k, j), v in zip([c for c, u in zip(cols, used) if u], z):
            X[k, j] = X[j, k] = v
    B = X[np.ix_(free, keep)]
    X[np.ix_(free, free)] = B @ np.linalg.pinv(Xk, rcond=1e-12, hermitian=True) @ B.T
    return X


def solve_primal(Q, constraints: Sequence, tol: float = SOLVER_TOL, max_iters: int = 200) -> SdpSolution:
    """Solve the relaxation with ``constraints[0] = A_0`` (rhs 1) and rhs 0 for the rest.

    Costs and constraints are scaled to unit Frobenius norm before solving;
    all returned quantities are in the original units.
    """
    Qd, As, q_norm, a_norms = _prepare(Q, constraints)
    n = Qd.shape[0]
    q_scale = q_norm if q_norm > 0 else 1.0
    Qs = Qd / q_scale
    Ascaled = [A / s for A, s in zip(As, a_norms)]
    m = len(As)
    c = np.zeros(m)
    c[0] = 1.0
    free = free_coordinates(Qs, Ascaled)
    keep = np.setdiff1d(np.arange(n), free)
    try:
        if free.size:
            A_eq, b_eq = _free_row_equalities(Qs, Ascaled, free)
            eq = {"A": cvx_matrix(A_eq), "b": cvx_matrix(b_eq)} if b_eq.size else {}
            sol = solvers.sdp(
                cvx_matrix(c),
                Gs=[cvx_matrix(_psd_columns([A[np.ix_(keep, keep)] for A in Ascaled]))],
                hs=[cvx_matrix(Qs[np.ix_(keep, keep)])],
                options=_options(tol, max_iters),
                **eq,
            )
        else:
            sol = solvers.sdp(
                cvx_matrix(c),
                Gs=[cvx_matrix(_psd_columns(Ascaled))],
                hs=[cvx_matrix(Qs)],
                options=_options(tol, max_iters),
            )
    except (ArithmeticError, ValueError) as exc:
        nan = np.full((n, n), np.nan)
        return SdpSolution(nan, np.nan, np.nan, np.nan, np.full(m - 1, np.nan), "numerical-failure", {"error": str(exc)})
    if sol["x"] is None:
        nan = np.full((n, n), np.nan)
        return SdpSolution(nan, np.nan, np.nan, np.nan, np.full(m - 1, np.nan), "infeasible", {"solver_status": sol["status"]})

    y = np.array(sol["x"]).ravel()
    Xk = np.array(sol["zs"][0]).reshape((keep.size, keep.size), order="F")
    X = _complete(Xk, keep, free, n, Ascaled) / a_norms[0]
    X = 0.5 * (X + X.T)
    rho = y[0] / a_norms[0] * q_scale
    lam = y[1:] / a_norms[1:] * q_scale
    H = H_of(Qd, As, rho, lam)
    p_star = float(np.sum(Qd * X))
    d_star = -rho
    x_norm = max(1.0, float(np.linalg.norm(X)))
    primal_res = max(abs(float(np.sum(A * X)) - (1.0 if i == 0 else 0.0)) / s for i, (A, s) in enumerate(zip(As, a_norms))) / x_norm
    dual_res = max(0.0, -float(np.linalg.eigvalsh(H / q_scale)[0]))
    gap = abs(p_star - d_star) / (q_scale * (1.0 + abs(p_star) / q_scale))
    worst = max(primal_res, dual_res, gap)
    if sol["status"] in ("primal infeasible", "dual infeasible"):
        status = "infeasible"
    elif worst <= OPTIMAL_TOL:
        status = "optimal"
    elif worst <= NEAR_OPTIMAL_TOL:
        status = "near-optimal"
    else:
        status = "numerical-failure"
    residuals = {"primal": primal_res, "dual": dual_res, "gap": gap, "H": H, "solver_status": sol["status"]}
    return SdpSolution(X, p_star, d_star, rho, lam, status, residuals, int(sol.get("iterations", 0)))


def solve_dual(Q, constraints: Sequence, tol: float = SOLVER_TOL) -> tuple[float, float, np.ndarray]:
    """Debug path: the dual value only, ``max -rho s.t. H >= 0``."""
    sol = solve_primal(Q, constraints, tol=tol)
    return sol.d_star, sol.rho, sol.lam


def _conelp(c, G_lin, h_lin, G_psd, h_psd, n, A_eq=None, b_eq=None, tol=SOLVER_TOL, max_iters=200):
    rows = [] if G_lin is None else [G_lin]
    G = np.vstack(rows + [G_psd]) if rows else G_psd
    h = np.concatenate(([] if h_lin is None else [h_lin]) + [h_psd])
    dims = {"l": 0 if G_lin is None else G_lin.shape[0], "q": [], "s": [n]}
    kwargs = {}
    if A_eq is not None:
        kwargs = {"A": cvx_matrix(A_eq), "b": cvx_matrix(b_eq)}
    return solvers.conelp(
        cvx_matrix(c), cvx_matrix(G), cvx_matrix(h), dims, options=_options(tol, max_iters), **kwargs
    )


def certify(
    Q,
    constraints: Sequence,
    x_hat: np.ndarray,
    eps_max: float = EPS_MAX,
    relaxation: str = "hx",
    tol: float = SOLVER_TOL,
) -> Certificate:
    """Look for duals with ``H >= 0`` and small stationarity residual at ``x_hat``.

    ``relaxation="hx"`` bounds ``|H x_hat|`` elementwise by ``eps``;
    ``relaxation="h"`` bounds every entry of ``H`` instead. The cost is
    divided by ``1 + ||Q||_F`` first, so ``eps`` is scale-free.
    """
    Qd, As, q_norm, a_norms = _prepare(Q, constraints)
    x = np.asarray(x_hat, dtype=float)
    n = Qd.shape[0]
    if x.shape != (n,) or abs(x[0] - 1.0) > 1e-9:
        raise ValueError("candidate must be a lifted vector with x[0] = 1")
    scale = 1.0 + q_norm
    Qs = Qd / scale
    Asc = [A / s for A, s in zip(As, a_norms)]
    m = len(As)
    nv = m + 1  # rho, lam..., eps
    c = np.zeros(nv)
    c[-1] = 1.0
    if relaxation == "hx":
        Ax = np.column_stack([A @ x for A in Asc])  # n x m
        G_lin = np.vstack([np.hstack([Ax, -np.ones((n, 1))]), np.hstack([-Ax, -np.ones((n, 1))])])
        h_lin = np.concatenate([-(Qs @ x), Qs @ x])
    elif relaxation == "h":
        Avec = np.column_stack([A.ravel() for A in Asc])
        q = Qs.ravel()
        G_lin = np.vstack([np.hstack([Avec, -np.ones((n * n, 1))]), np.hstack([-Avec, -np.ones((n * n, 1))])])
        h_lin = np.concatenate([-q, q])
    else:
        raise ValueError(f"unknown relaxation {relaxation!r}")
    G_psd = np.hstack([_psd_columns(Asc), np.zeros((n * n, 1))])
    try:
        # free coordinates have H[k, :] = 0, so the margin only covers the others;
        # learned constraints carry round-off there, hence the relative test
        margin = np.ones(n)
        margin[free_coordinates(Qs, Asc, rel_tol=1e-9)] = 0.0
        sol = _conelp(c, G_lin, h_lin, G_psd, (Qs - PSD_MARGIN * np.diag(margin)).ravel(order="F"), n, tol=tol)
        if sol["x"] is None or sol["status"] != "optimal":
            sol = _conelp(c, G_lin, h_lin, G_psd, Qs.ravel(order="F"), n, tol=tol)
    except (ArithmeticError, ValueError) as exc:
        return Certificate(np.inf, np.nan, np.full(m - 1, np.nan), np.zeros(0), False, "numerical-failure", str(exc), eps_max)
    if sol["x"] is None:
        return Certificate(np.inf, np.nan, np.full(m - 1, np.nan), np.zeros(0), False, "numerical-failure", sol["status"], eps_max)
    y = np.array(sol["x"]).ravel()
    rho_s, lam_s = y[0] / a_norms[0], y[1:m] / a_norms[1:]
    H_s = H_of(Qs, As, rho_s, lam_s)
    if relaxation == "hx":
        eps = float(np.abs(H_s @ x).max())
    else:
        eps = float(np.abs(H_s).max())
    H = H_s * scale
    eigs = eig_sym(H)[0]
    psd_ok = eigs[-1] >= -PSD_TOL
    certified = bool(eps <= eps_max and psd_ok)
    reason = "" if certified else ("eps above threshold" if psd_ok else "H not positive semidefinite")
    return Certificate(eps, rho_s * scale, lam_s * scale, eigs, certified, sol["status"], reason, eps_max)


def solve_l1_reduction(
    Q,
    constraints: Sequence,
    x_hat: np.ndarray,
    n_free: int = 1,
    slack: float | None = None,
    tol: float = 1e-8,
) -> np.ndarray:
    """Sparse duals: minimize ``sum |lam_i|`` over the redundant constraints.

    ``constraints[:n_free]`` (``A_0`` and the primary constraints) carry
    unpenalized multipliers. Stationarity ``H x_hat = 0`` is imposed up to
    ``slack`` elementwise; by default the slack is derived from the best
    certificate residual at ``x_hat``. Returns ``|lam|`` for all
    constraints after the first.
    """
    Qd, As, q_norm, a_norms = _prepare(Q, constraints)
    x = np.asarray(x_hat, dtype=float)
    n = Qd.shape[0]
    scale = 1.0 + q_norm
    Qs = Qd / scale
    Asc = [A / s for A, s in zip(As, a_norms)]
    m = len(As)
    if slack is None:
        cert = certify(Qd, As, x)
        slack = max(10.0 * cert.eps, 1e-9) if np.isfinite(cert.eps) else 1e-6
    pen = list(range(n_free, m))
    k = len(pen)
    nv = m + k  # rho/lam for all constraints, then t for penalized ones
    c = np.zeros(nv)
    c[m:] = 1.0
    Ax = np.column_stack([A @ x for A in Asc])
    Z = np.zeros((n, k))
    stat = np.vstack([np.hstack([Ax, Z]), np.hstack([-Ax, Z])])
    h_stat = np.concatenate([slack - Qs @ x, slack + Qs @ x])
    # |lam_j| <= t_j
    B = np.zeros((2 * k, nv))
    for r, j in enumerate(pen):
        B[r, j], B[r, m + r] = 1.0, -1.0
        B[k + r, j], B[k + r, m + r] = -1.0, -1.0
    G_lin = np.vstack([stat, B])
    h_lin = np.concatenate([h_stat, np.zeros(2 * k)])
    G_psd = np.hstack([_psd_columns(Asc), np.zeros((n * n, k))])
    sol = _conelp(c, G_lin, h_lin, G_psd, Qs.ravel(order="F"), n, tol=tol)
    if sol["x"] is None or sol["status"] in ("primal infeasible", "dual infeasible"):
        raise RuntimeError(f"L1 reduction failed: {sol['status']}")
    y = np.array(sol["x"]).ravel()
    return np.abs(y[1:m] / a_norms[1:] * scale)
