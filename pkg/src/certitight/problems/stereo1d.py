"""One-dimensional stereo toy problem.

A point at unknown position ``theta`` observes landmarks ``m_i`` through the
inverse-depth measurement ``u_i = 1 / (theta - m_i) + noise``. Lifting
``z_i = 1 / (theta - m_i)`` makes the least-squares cost quadratic.
"""

from __future__ import annotations

import itertools

import numpy as np

from ..liftprob import DegenerateLift, LiftedProblem, ProblemSetup, Template
from ..polymat import PolyMatrix, VarLayout

#: setup used throughout the docs and tests
FIXTURE = {"m": [0.5488, 0.7152], "u": [18.14, -8.719], "theta_gt": [0.6028]}


class Stereo1D(LiftedProblem):
    family = "stereo1d"
    var_kinds = (("theta", False), ("z", True))
    param_symbols = ("m",)
    param_degree = 1
    #: samples closer than this fraction of the landmark spread to a landmark are redrawn
    margin = 1e-2

    def __init__(self, setup: ProblemSetup):
        super().__init__(setup)
        self.m = np.asarray(setup.data["m"], dtype=float).ravel()
        self.u = np.asarray(setup.data.get("u", np.zeros_like(self.m)), dtype=float).ravel()
        if self.m.size != setup.n or self.u.size != setup.n:
            raise ValueError("stereo1d: m and u must have n entries")
        if np.unique(self.m).size != self.m.size:
            raise ValueError("stereo1d: landmarks must be distinct")
        self._layout = VarLayout([("h", 1), ("theta", 1)] + [(f"z_{i + 1}", 1) for i in range(setup.n)])

    @classmethod
    def fixture(cls) -> "Stereo1D":
        return cls(ProblemSetup("stereo1d", d=1, n=2, noise=0.0, seed=None, data=FIXTURE))

    @property
    def layout(self) -> VarLayout:
        return self._layout

    def _interval(self) -> tuple[float, float]:
        lo, hi = float(self.m.min()), float(self.m.max())
        if hi - lo < 1e-3:  # a single landmark has no bounding interval
            lo, hi = lo - 0.5, hi + 0.5
        return lo, hi

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self._interval()
        gap = self.margin * (hi - lo)
        for _ in range(self.rejection_budget):
            theta = rng.uniform(lo, hi)
            if np.all(np.abs(theta - self.m) > gap):
                return np.array([theta])
        raise RuntimeError("stereo1d: could not sample away from the landmarks")

    def lift(self, theta: np.ndarray) -> np.ndarray:
        t = float(np.ravel(theta)[0])
        diff = t - self.m
        if np.any(np.abs(diff) < 1e-6):
            raise DegenerateLift("theta coincides with a landmark")
        return np.concatenate([[1.0, t], 1.0 / diff])

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        t = float(np.ravel(theta)[0])
        return self.u - 1.0 / (t - self.m)

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        t = float(np.ravel(theta)[0])
        return (1.0 / (t - self.m) ** 2)[:, None]

    def cost_matrix(self) -> PolyMatrix:
        Q = PolyMatrix(self.layout)
        Q.add_entry("h", 0, "h", 0, float(self.u @ self.u))
        for i, ui in enumerate(self.u):
            z = f"z_{i + 1}"
            Q.add_entry("h", 0, z, 0, -ui)
            Q.add_entry(z, 0, z, 0, 1.0)
        return Q

    def known_templates(self) -> list[Template]:
        # theta * z_1 - m_1 * z_1 - h^2 = 0
        L = VarLayout([("h", 1), ("theta", 1), ("z_1", 1)])
        one = PolyMatrix(L).add_bilinear("theta", 0, "z_1", 0, 1.0).add_bilinear("h", 0, "h", 0, -1.0)
        m = PolyMatrix(L).add_bilinear("h", 0, "z_1", 0, -1.0)
        return [Template.from_polymats(L, {"1": one, "m_1": m}, label="substitution")]

    def analytic_constraints(self) -> list[PolyMatrix]:
        """Pairwise identities ``z_i - z_j = (m_i - m_j) z_i z_j``."""
        out = []
        for i, j in itertools.combinations(range(self.setup.n), 2):
            A = PolyMatrix(self.layout)
            A.add_bilinear("h", 0, f"z_{i + 1}", 0, 1.0)
            A.add_bilinear("h", 0, f"z_{j + 1}", 0, -1.0)
            A.add_bilinear(f"z_{i + 1}", 0, f"z_{j + 1}", 0, -(self.m[i] - self.m[j]))
            out.append(A)
        return out

    def param_values(self) -> dict[str, float]:
        return {f"m_{i + 1}": float(v) for i, v in enumerate(self.m)}

    def random_like(self, n_instances: int, rng: np.random.Generator) -> "Stereo1D":
        return Stereo1D(generate(n_instances, noise=0.0, rng=rng, seed=None))


def generate(n: int, noise: float = 0.1, seed: int | None = 0, rng: np.random.Generator | None = None) -> ProblemSetup:
    """Random landmarks in [0, 1], ground truth between them, noisy ``u``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    while True:
        m = np.sort(rng.uniform(0.0, 1.0, size=n))
        if n == 1 or np.min(np.diff(m)) > 1e-3:
            break
    lo, hi = (m.min(), m.max()) if n > 1 else (m[0] - 0.5, m[0] + 0.5)
    while True:
        theta = rng.uniform(lo, hi)
        if np.all(np.abs(theta - m) > 1e-2 * max(hi - lo, 1e-3)):
            break
    u = 1.0 / (theta - m) + noise * rng.standard_normal(n)
    return ProblemSetup("stereo1d", d=1, n=n, noise=noise, seed=seed, data={"m": m, "u": u, "theta_gt": [theta]})
