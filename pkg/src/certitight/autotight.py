"""Learn all redundant constraints of one problem instance and test tightness."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .conic import SdpSolution, eig_sym, solve_primal
from .liftprob import LiftedProblem
from .localsolve import LocalOptions, LocalResult, gauss_newton, multistart
from .nullspace import ConstraintBasis, build_data_matrix, independent_subset, two_pass_refine
from .polymat import PolyMatrix

RDG_TOL = 1e-3
ER_TOL = 1e7
ER_CAP = 1e16
QUANTIZED = np.array([0.0, 1.0, 0.5, np.sqrt(2.0), 1.0 / np.sqrt(2.0), 2.0])


def compute_rdg(q_hat: float, d_star: float) -> float:
    """Relative duality gap ``(q_hat - d_star) / q_hat`` (signed).

    For ``|q_hat| < 1e-12`` the absolute gap is returned instead.
    """
    if abs(q_hat) < 1e-12:
        return float(q_hat - d_star)
    return float((q_hat - d_star) / q_hat)


def is_cost_tight(q_hat: float, d_star: float, tol: float = RDG_TOL) -> bool:
    rdg = compute_rdg(q_hat, d_star)
    return rdg < (1e-9 if abs(q_hat) < 1e-12 else tol)


def compute_er(X: np.ndarray) -> float:
    """Eigenvalue ratio ``l1 / max(l2, 1e-16 l1)``, capped at 1e16."""
    w = eig_sym(X)[0]
    if w.size == 0 or w[0] <= 0:
        raise ValueError("largest eigenvalue must be positive")
    if w.size == 1:
        return ER_CAP
    return float(min(w[0] / max(w[1], 1e-16 * w[0]), ER_CAP))


def quantized_fraction(vectors: np.ndarray, tol: float = 1e-6) -> float:
    """Share of nonzero entries close to 0, +-1, +-1/2, +-sqrt2, +-1/sqrt2 or +-2."""
    v = np.abs(np.asarray(vectors, dtype=float).ravel())
    v = v[v > tol]
    if v.size == 0:
        return 1.0
    close = np.min(np.abs(v[:, None] - QUANTIZED[None, :]), axis=1) < tol
    return float(np.mean(close))


@dataclass
class TightnessReport:
    rdg: float
    er: float
    eigenvalues: list
    p_star: float
    d_star: float
    q_hat: float
    n_known: int
    n_learned: int
    cost_tight: bool
    rank_tight: bool
    outcome: str
    sdp_status: str = ""
    quantized: float = 1.0
    n_constraints: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


@dataclass
class AutoTightOptions:
    oversample: float = 0.2
    rank_tol: float | None = None
    use_known: bool = False
    seed: int = 0
    rdg_tol: float = RDG_TOL
    er_tol: float = ER_TOL
    local_restarts: int = 5
    local: LocalOptions = field(default_factory=LocalOptions)


def local_candidate(problem: LiftedProblem, rng: np.random.Generator, restarts: int = 5, opts=None) -> LocalResult:
    """Local solution started at the ground truth, plus random restarts.

    The lowest-cost run is kept; the random starts guard against a ground
    truth that lies in the basin of a non-global minimum.
    """
    starts = [problem.ground_truth()]
    for _ in range(max(0, restarts - 1)):
        starts.append(problem.sample_theta(rng))
    return multistart(problem, starts, opts) if len(starts) > 1 else gauss_newton(problem, starts[0], opts)


def assemble_constraints(known: Sequence[PolyMatrix], extra: Sequence[PolyMatrix]) -> list[PolyMatrix]:
    """``known`` (with ``A_0`` first) followed by the independent part of ``extra``."""
    allc = list(known) + list(extra)
    keep = independent_subset(allc, n_fixed=len(known))
    return [allc[i] for i in keep]


def tightness_report(
    problem: LiftedProblem,
    constraints: Sequence[PolyMatrix],
    q_hat: float,
    n_known: int,
    rdg_tol: float = RDG_TOL,
    er_tol: float = ER_TOL,
    quantized: float = 1.0,
    Q: PolyMatrix | None = None,
) -> tuple[TightnessReport, SdpSolution]:
    Q = problem.cost_matrix() if Q is None else Q
    sol = solve_primal(Q, constraints)
    if not np.all(np.isfinite(sol.X)):
        rep = TightnessReport(np.nan, 1.0, [], np.nan, np.nan, q_hat, n_known, len(constraints) - n_known,
                              False, False, "solver-failure", sol.status, quantized, len(constraints))
        return rep, sol
    eigs = eig_sym(sol.X)[0]
    rdg = compute_rdg(q_hat, sol.d_star)
    er = compute_er(sol.X)
    cost_tight = is_cost_tight(q_hat, sol.d_star, rdg_tol)
    rank_tight = er > er_tol
    if not cost_tight:
        outcome = "not-tightenable"
    else:
        outcome = "tight-interpretable" if quantized == 1.0 else "tight-needs-templates"
    rep = TightnessReport(
        rdg=rdg,
        er=er,
        eigenvalues=eigs.tolist(),
        p_star=sol.p_star,
        d_star=sol.d_star,
        q_hat=q_hat,
        n_known=n_known,
        n_learned=len(constraints) - n_known,
        cost_tight=cost_tight,
        rank_tight=rank_tight,
        outcome=outcome,
        sdp_status=sol.status,
        quantized=quantized,
        n_constraints=len(constraints),
    )
    return rep, sol


def learn_constraints(problem: LiftedProblem, options: AutoTightOptions | None = None) -> ConstraintBasis:
    options = options or AutoTightOptions()
    rng = np.random.default_rng(options.seed)
    known = problem.known_constraints() if options.use_known else []
    Y = build_data_matrix(problem, known=known, oversample=options.oversample, rng=rng)
    _, basis = two_pass_refine(Y, rank_tol=options.rank_tol)
    return basis


def autotight(problem: LiftedProblem, options: AutoTightOptions | None = None) -> tuple[ConstraintBasis, TightnessReport]:
    """Sample, learn the nullspace, solve locally and test the relaxation.

    The relaxation uses ``A_0``, the known constraints and every learned
    constraint that is independent of those.
    """
    options = options or AutoTightOptions()
    basis = learn_constraints(problem, options)
    rng = np.random.default_rng(options.seed + 1)
    local = local_candidate(problem, rng, options.local_restarts, options.local)
    known = problem.known_constraints()
    constraints = assemble_constraints(known, basis.matrices())
    report, _ = tightness_report(
        problem,
        constraints,
        local.cost,
        n_known=len(known),
        rdg_tol=options.rdg_tol,
        er_tol=options.er_tol,
        quantized=quantized_fraction(basis.vectors),
    )
    return basis, report
