"""Point-to-point (PPR) and point-to-line (PLR) registration.

Unknowns are a rotation ``C`` and translation ``t``; the cost is
``sum_i ||C p_i + t - y_i||^2_{W_i}`` with ``W_i = I`` (PPR) or
``W_i = I - v_i v_i^T`` (PLR). The lifted vector is
``x = [h, t, vec(C)]`` with ``vec`` stacking columns, and the state passed
to the local solver is the flat vector ``[t, vec(C)]``.
"""

from __future__ import annotations

import itertools

import numpy as np
from scipy.spatial.transform import Rotation

from ..liftprob import LiftedProblem, ProblemSetup, Template
from ..polymat import PolyMatrix, VarLayout


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform rotation from a normalized Gaussian quaternion."""
    return Rotation.random(random_state=rng).as_matrix()


def split_state(theta: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    theta = np.asarray(theta, dtype=float)
    return theta[:d], theta[d:].reshape((d, d), order="F")


def join_state(t: np.ndarray, C: np.ndarray) -> np.ndarray:
    return np.concatenate([t, C.ravel(order="F")])


class Registration(LiftedProblem):
    var_kinds = (("theta", False),)

    def __init__(self, setup: ProblemSetup):
        super().__init__(setup)
        if setup.d != 3:
            raise ValueError("registration is implemented for d = 3")
        self.mode = setup.options.get("mode", "ppr")
        if self.mode not in ("ppr", "plr"):
            raise ValueError(f"unknown registration mode {self.mode!r}")
        self.family = self.mode
        d = setup.d
        self.points = np.asarray(setup.data["points"], dtype=float).reshape(-1, d)
        self.targets = np.asarray(setup.data.get("targets", np.zeros_like(self.points)), dtype=float).reshape(-1, d)
        if self.mode == "plr":
            v = np.asarray(setup.data["directions"], dtype=float).reshape(-1, d)
            if not np.allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-9):
                raise ValueError("line directions must be unit vectors")
            self.weights = np.stack([np.eye(d) - np.outer(vi, vi) for vi in v])
        else:
            self.weights = np.stack([np.eye(d)] * self.points.shape[0])
        if self.points.shape[0] != setup.n or self.targets.shape != self.points.shape:
            raise ValueError("points and targets must have n rows")
        self._layout = VarLayout([("h", 1), ("theta", d + d * d)])

    @property
    def layout(self) -> VarLayout:
        return self._layout

    @property
    def d(self) -> int:
        return self.setup.d

    @property
    def n_instances(self) -> int:
        return 0

    # sampling and lifting ---------------------------------------------
    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        C = random_rotation(rng)
        t = rng.uniform(0.0, 1.0, size=self.d)
        return join_state(t, C)

    def lift(self, theta: np.ndarray) -> np.ndarray:
        return np.concatenate([[1.0], np.asarray(theta, dtype=float)])

    # cost -------------------------------------------------------------
    def _design(self, i: int) -> np.ndarray:
        """Matrix J_i with ``C p_i + t - y_i = J_i x``."""
        d = self.d
        return np.hstack([-self.targets[i][:, None], np.eye(d), np.kron(self.points[i][None, :], np.eye(d))])

    def cost_matrix(self) -> PolyMatrix:
        Q = sum(self._design(i).T @ self.weights[i] @ self._design(i) for i in range(self.points.shape[0]))
        return PolyMatrix.from_dense(self.layout, np.asarray(Q))

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        t, C = split_state(theta, self.d)
        e = self.points @ C.T + t - self.targets
        return np.einsum("ijk,ik->ij", self.weights, e).ravel()

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        _, C = split_state(theta, self.d)
        blocks = []
        for i, p in enumerate(self.points):
            J = np.hstack([np.eye(self.d), -C @ skew(p)])
            blocks.append(self.weights[i] @ J)
        return np.vstack(blocks)

    def retract(self, theta: np.ndarray, delta: np.ndarray) -> np.ndarray:
        t, C = split_state(theta, self.d)
        C_new = C @ Rotation.from_rotvec(delta[self.d :]).as_matrix()
        return join_state(t + delta[: self.d], C_new)

    def tangent_dim(self, theta: np.ndarray) -> int:
        return self.d + self.d * (self.d - 1) // 2

    def theta_from_x(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x[1:]) / x[0]

    # constraints --------------------------------------------------------
    def _col(self, j: int, a: int) -> int:
        """Index inside ``theta`` of C[a, j]."""
        return self.d + j * self.d + a

    def _orthonormal(self, columns: bool) -> list[PolyMatrix]:
        d, out = self.d, []
        for i, j in itertools.combinations_with_replacement(range(d), 2):
            A = PolyMatrix(self.layout)
            for a in range(d):
                p, q = (self._col(i, a), self._col(j, a)) if columns else (self._col(a, i), self._col(a, j))
                A.add_bilinear("theta", p, "theta", q, 1.0)
            if i == j:
                A.add_bilinear("h", 0, "h", 0, -1.0)
            out.append(A)
        return out

    def _handedness(self) -> list[PolyMatrix]:
        out = []
        for i, j, k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
            for l in range(3):
                A = PolyMatrix(self.layout)
                l1, l2 = (l + 1) % 3, (l + 2) % 3
                # (c_i x c_j)_l = c_i[l1] c_j[l2] - c_i[l2] c_j[l1]
                A.add_bilinear("theta", self._col(i, l1), "theta", self._col(j, l2), 1.0)
                A.add_bilinear("theta", self._col(i, l2), "theta", self._col(j, l1), -1.0)
                A.add_bilinear("h", 0, "theta", self._col(k, l), -1.0)
                out.append(A)
        return out

    def known_templates(self) -> list[Template]:
        L = self.layout
        return [Template.from_polymats(L, {"1": A}, label="orthonormal-columns") for A in self._orthonormal(True)]

    def analytic_constraints(self) -> list[PolyMatrix]:
        """``h^2 = 1``, ``C^T C = I``, ``C C^T = I`` and the 9 handedness equations."""
        return [self.homogenization()] + self._orthonormal(True) + self._orthonormal(False) + self._handedness()

    def random_like(self, n_instances: int, rng: np.random.Generator) -> "Registration":
        return self

    def param_values(self) -> dict[str, float]:
        return {}


def generate(
    n: int = 3,
    noise: float = 1e-2,
    seed: int | None = 0,
    mode: str = "ppr",
    rng: np.random.Generator | None = None,
) -> ProblemSetup:
    """Random points in [-1, 1]^3, random pose; PLR adds a random line per point."""
    d = 3
    rng = np.random.default_rng(seed) if rng is None else rng
    C = random_rotation(rng)
    t = rng.uniform(0.0, 1.0, size=d)
    points = rng.uniform(-1.0, 1.0, size=(n, d))
    targets = points @ C.T + t
    data = {"points": points, "theta_gt": join_state(t, C)}
    if mode == "plr":
        v = rng.standard_normal((n, d))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        targets = targets + rng.uniform(-1.0, 1.0, size=(n, 1)) * v
        data["directions"] = v
    targets = targets + noise * rng.standard_normal((n, d))
    data["targets"] = targets
    return ProblemSetup(mode, d=d, n=n, noise=noise, seed=seed, data=data, options={"mode": mode})
