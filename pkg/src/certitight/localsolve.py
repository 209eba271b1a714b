"""Gauss-Newton with Armijo backtracking and a Levenberg fallback."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .liftprob import LiftedProblem


@dataclass
class LocalOptions:
    grad_tol: float = 1e-6
    step_tol: float = 1e-10
    max_iters: int = 200
    armijo: float = 1e-4
    max_backtracks: int = 40


@dataclass
class LocalResult:
    theta: np.ndarray
    cost: float
    iterations: int
    reason: str
    grad_norm: float

    @property
    def q_hat(self) -> float:
        return self.cost


def gauss_newton(problem: LiftedProblem, theta0: np.ndarray, opts: LocalOptions | None = None) -> LocalResult:
    """Minimize ``sum r(theta)^2`` starting at ``theta0``.

    Steps come from the Gauss-Newton normal equations in the problem's
    tangent space. A step that fails the Armijo test is halved; if halving
    does not help, Levenberg damping is increased instead.
    """
    opts = opts or LocalOptions()
    theta = np.asarray(theta0, dtype=float).copy()
    r = problem.residuals(theta)
    cost = float(r @ r)
    if not np.isfinite(cost):
        raise FloatingPointError("non-finite cost at the initial point")
    damping = 0.0
    reason, it, gnorm = "max-iter", 0, np.inf
    for it in range(1, opts.max_iters + 1):
        J = problem.jacobian(theta)
        g = 2.0 * J.T @ r
        gnorm = float(np.linalg.norm(g))
        if gnorm < opts.grad_tol:
            reason, it = "gradient", it - 1
            break
        JtJ = J.T @ J
        accepted = False
        for _ in range(8):
            step = _solve_normal(JtJ, J.T @ r, damping)
            t = 1.0
            for _ in range(opts.max_backtracks):
                cand = problem.retract(theta, -t * step)
                rc = problem.residuals(cand)
                cc = float(rc @ rc)
                # g @ (-t step) is the predicted decrease along the step
                if np.isfinite(cc) and cc <= cost - opts.armijo * t * float(g @ step):
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            damping = max(1e-8 * np.trace(JtJ), 10.0 * damping)
        if not accepted:
            reason = "step"
            break
        step_norm = t * float(np.linalg.norm(step))
        theta, r, cost = cand, rc, cc
        damping *= 0.1 if damping > 0 else 0.0
        if step_norm < opts.step_tol:
            reason = "step"
            break
    else:
        J = problem.jacobian(theta)
        gnorm = float(np.linalg.norm(2.0 * J.T @ r))
    final = problem.residuals(theta)
    return LocalResult(theta, float(final @ final), it, reason, gnorm)


def _solve_normal(JtJ: np.ndarray, Jtr: np.ndarray, damping: float) -> np.ndarray:
    A = JtJ + damping * np.eye(JtJ.shape[0])
    try:
        return np.linalg.solve(A, Jtr)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(A, Jtr, rcond=None)[0]


def multistart(problem: LiftedProblem, starts, opts: LocalOptions | None = None) -> LocalResult:
    """Best of several :func:`gauss_newton` runs (lowest cost, first on ties)."""
    best = None
    for theta0 in starts:
        try:
            res = gauss_newton(problem, theta0, opts)
        except FloatingPointError:
            continue
        if best is None or res.cost < best.cost:
            best = res
    if best is None:
        raise RuntimeError("no local solve succeeded")
    return best
