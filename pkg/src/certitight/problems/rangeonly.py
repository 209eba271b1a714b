"""Range-only localization of N positions from N_m fixed anchors.

Cost: ``sum_nk (d_nk^2 - ||m_k - theta_n||^2)^2``. Two liftings make it
quadratic: ``z_n = ||theta_n||^2`` (mode ``"z"``) or
``y_n = vecaug(theta_n theta_n^T)`` (mode ``"y"``), where ``vecaug`` uses
the same sqrt(2) scaling as ``vech``.
"""

from __future__ import annotations

import numpy as np

from ..liftprob import LiftedProblem, ProblemSetup, Template
from ..polymat import PolyMatrix, VarLayout, vech_outer

_TRIU_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _triu(d: int):
    if d not in _TRIU_CACHE:
        _TRIU_CACHE[d] = np.triu_indices(d)
    return _TRIU_CACHE[d]


class RangeOnly(LiftedProblem):
    param_symbols = ()
    param_degree = 0

    def __init__(self, setup: ProblemSetup):
        super().__init__(setup)
        self.mode = setup.options.get("mode", "z")
        if self.mode not in ("z", "y"):
            raise ValueError(f"unknown RO substitution mode {self.mode!r}")
        self.family = f"roloc-{self.mode}"
        self.var_kinds = (("theta", True), (self.mode, True))
        self.use_substitution = bool(setup.options.get("known_substitution", False))
        d = setup.d
        self.anchors = np.asarray(setup.data["anchors"], dtype=float).reshape(-1, d)
        dist = setup.data.get("distances")
        self.distances = (
            np.zeros((setup.n, self.anchors.shape[0])) if dist is None else np.asarray(dist, dtype=float).reshape(setup.n, -1)
        )
        if self.distances.shape != (setup.n, self.anchors.shape[0]):
            raise ValueError("distances must be n x n_anchors")
        if np.any(self.distances < 0):
            raise ValueError("distances must be nonnegative")
        self.sub_dim = 1 if self.mode == "z" else d * (d + 1) // 2
        blocks = [("h", 1)] + [(f"theta_{i + 1}", d) for i in range(setup.n)]
        blocks += [(f"{self.mode}_{i + 1}", self.sub_dim) for i in range(setup.n)]
        self._layout = VarLayout(blocks)

    @property
    def layout(self) -> VarLayout:
        return self._layout

    @property
    def d(self) -> int:
        return self.setup.d

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.anchors.min(axis=0), self.anchors.max(axis=0)
        return rng.uniform(lo, hi, size=(self.setup.n, self.d)).ravel()

    def substitution(self, p: np.ndarray) -> np.ndarray:
        if self.mode == "z":
            return np.array([p @ p])
        return vech_outer(p)

    def lift(self, theta: np.ndarray) -> np.ndarray:
        P = np.asarray(theta, dtype=float).reshape(self.setup.n, self.d)
        return np.concatenate([[1.0], P.ravel()] + [self.substitution(p) for p in P])

    def theta_from_x(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x[1 : 1 + self.setup.n * self.d]) / x[0]

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        P = np.asarray(theta, dtype=float).reshape(self.setup.n, self.d)
        diff = self.anchors[None, :, :] - P[:, None, :]
        return (self.distances**2 - np.sum(diff**2, axis=2)).ravel()

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        P = np.asarray(theta, dtype=float).reshape(self.setup.n, self.d)
        n, K, d = self.setup.n, self.anchors.shape[0], self.d
        J = np.zeros((n * K, n * d))
        for i in range(n):
            J[i * K : (i + 1) * K, i * d : (i + 1) * d] = 2.0 * (self.anchors - P[i])
        return J

    def cost_matrix(self) -> PolyMatrix:
        L = self.layout
        Q = np.zeros((L.size, L.size))
        iu = _triu(self.d)
        sub_coef = np.where(iu[0] == iu[1], 1.0, 0.0)  # trace picks the diagonal of vecaug
        for i in range(self.setup.n):
            th, sub = L.slice(f"theta_{i + 1}"), L.slice(f"{self.mode}_{i + 1}")
            for k, m in enumerate(self.anchors):
                g = np.zeros(L.size)
                g[0] = self.distances[i, k] ** 2 - m @ m
                g[th] = 2.0 * m
                g[sub] = -1.0 if self.mode == "z" else -sub_coef
                Q += np.outer(g, g)
        return PolyMatrix.from_dense(L, Q)

    def known_templates(self) -> list[Template]:
        if not self.use_substitution:
            return []
        d = self.d
        L = VarLayout([("h", 1), ("theta_1", d), (f"{self.mode}_1", self.sub_dim)])
        out = []
        if self.mode == "z":
            A = PolyMatrix(L).add_bilinear("h", 0, "z_1", 0, 1.0)
            A.add_block("theta_1", "theta_1", -np.eye(d))
            out.append(Template.from_polymats(L, {"1": A}, label="substitution"))
        else:
            rows, cols = _triu(d)
            for e, (a, b) in enumerate(zip(rows, cols)):
                s = 1.0 if a == b else np.sqrt(2.0)
                A = PolyMatrix(L).add_bilinear("h", 0, "y_1", e, 1.0)
                A.add_bilinear("theta_1", a, "theta_1", b, -s)
                out.append(Template.from_polymats(L, {"1": A}, label="substitution"))
        return out

    def random_like(self, n_instances: int, rng: np.random.Generator) -> "RangeOnly":
        setup = generate(self.d, n_instances, self.anchors.shape[0], 0.0, seed=None, mode=self.mode, rng=rng)
        setup.data["anchors"] = self.anchors.copy()
        setup.options["known_substitution"] = self.use_substitution
        return RangeOnly(setup)

    def param_values(self) -> dict[str, float]:
        return {}


def generate(
    d: int = 3,
    n: int = 3,
    n_anchors: int = 10,
    noise: float = 1e-2,
    seed: int | None = 0,
    mode: str = "z",
    rng: np.random.Generator | None = None,
    known_substitution: bool = False,
) -> ProblemSetup:
    """Anchors and positions uniform in the unit cube, noisy distances."""
    rng = np.random.default_rng(seed) if rng is None else rng
    anchors = rng.uniform(0.0, 1.0, size=(n_anchors, d))
    lo, hi = anchors.min(axis=0), anchors.max(axis=0)
    theta = rng.uniform(lo, hi, size=(n, d))
    dist = np.linalg.norm(anchors[None, :, :] - theta[:, None, :], axis=2)
    dist = np.abs(dist + noise * rng.standard_normal(dist.shape))
    return ProblemSetup(
        f"roloc-{mode}",
        d=d,
        n=n,
        n_anchors=n_anchors,
        noise=noise,
        seed=seed,
        data={"anchors": anchors, "distances": dist, "theta_gt": theta.ravel()},
        options={"mode": mode, "known_substitution": known_substitution},
    )
