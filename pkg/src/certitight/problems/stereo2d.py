"""Planar stereo-camera localization from known landmarks.

The camera pose maps a world landmark ``m`` to ``p = C m + t = (x, y)`` in
the camera frame, ``y`` being the depth. A stereo pair measures the two
horizontal pixel coordinates ``M2 @ (x/y, 1, 1/y)`` with
``M2 = [[f_u, c_u, b_u], [f_u, c_u, -b_u]]``. With ``u = (x/y, 1/y)`` the
reprojection cost is quadratic in ``[h, u]``; the substitution itself is
enforced by the bilinear constraints ``h x = u_1 y`` and ``h^2 = u_2 y``.

Two liftings are offered: ``"u"`` keeps ``z_k = u_k`` and ``"z"`` appends
the products with the translation, ``z_k = [u_k, kron(u_k, t)]``.
The rotation is relaxed to O(2) (``C^T C = I``).
"""

from __future__ import annotations

import numpy as np

from ..liftprob import DegenerateLift, LiftedProblem, ProblemSetup, Template
from ..polymat import PolyMatrix, VarLayout
from .registration import join_state, split_state

F_U = 484.5
C_U = 322.0
BASELINE = 0.24
B_U = F_U * BASELINE / 2.0
M2 = np.array([[F_U, C_U, B_U], [F_U, C_U, -B_U]])

#: landmark depth range and lateral extent (in units of depth) in the camera frame
DEPTH_RANGE = (1.0, 5.0)
LATERAL = 1.0
#: states putting a landmark closer than this to the image plane are redrawn
MIN_DEPTH = 1e-1

_S = np.array([[0.0, -1.0], [1.0, 0.0]])


def rotation2(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


class Stereo2D(LiftedProblem):
    var_kinds = (("theta", False), ("z", True))
    param_symbols = ("mx", "my")
    param_degree = 2

    def __init__(self, setup: ProblemSetup):
        super().__init__(setup)
        if setup.d != 2:
            raise ValueError("stereo2d requires d = 2")
        self.mode = setup.options.get("lifting", "z")
        if self.mode not in ("u", "z"):
            raise ValueError(f"unknown stereo2d lifting {self.mode!r}")
        self.family = "stereo2d" if self.mode == "z" else "stereo2d-u"
        self.landmarks = np.asarray(setup.data["landmarks"], dtype=float).reshape(-1, 2)
        if self.landmarks.shape[0] != setup.n:
            raise ValueError("stereo2d: need n landmarks")
        pix = setup.data.get("pixels")
        self.pixels = np.zeros((setup.n, 2)) if pix is None else np.asarray(pix, dtype=float).reshape(setup.n, 2)
        self.sub_dim = 2 if self.mode == "u" else 6
        self._layout = VarLayout([("h", 1), ("theta", 6)] + [(f"z_{k + 1}", self.sub_dim) for k in range(setup.n)])

    @property
    def layout(self) -> VarLayout:
        return self._layout

    # geometry ---------------------------------------------------------
    def camera_points(self, theta: np.ndarray, landmarks: np.ndarray | None = None) -> np.ndarray:
        t, C = split_state(theta, 2)
        m = self.landmarks if landmarks is None else landmarks
        return m @ C.T + t

    def substitution(self, p: np.ndarray, t: np.ndarray) -> np.ndarray:
        x, y = p
        if abs(y) < 1e-6:
            raise DegenerateLift("landmark on the image plane")
        u = np.array([x / y, 1.0 / y])
        return u if self.mode == "u" else np.concatenate([u, np.kron(u, t)])

    def lift(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        t, _ = split_state(theta, 2)
        P = self.camera_points(theta)
        return np.concatenate([[1.0], theta] + [self.substitution(p, t) for p in P])

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:
        for _ in range(self.rejection_budget):
            theta = join_state(rng.uniform(0.0, 1.0, size=2), rotation2(rng.uniform(-np.pi, np.pi)))
            if np.all(np.abs(self.camera_points(theta)[:, 1]) > MIN_DEPTH):
                return theta
        raise RuntimeError("stereo2d: could not sample a pose away from the landmarks")

    def sample_augmented(self, rng: np.random.Generator, param_keys):
        """Random pose with fresh landmarks in front of it, and their parameters."""
        theta = join_state(rng.uniform(0.0, 1.0, size=2), rotation2(rng.uniform(-np.pi, np.pi)))
        t, C = split_state(theta, 2)
        P = _camera_frame_points(self.n_instances, rng)
        fresh = self._with_landmarks((P - t) @ C)
        return fresh.lift(theta), fresh.param_vector().restrict(param_keys)

    def _with_landmarks(self, landmarks: np.ndarray) -> "Stereo2D":
        setup = ProblemSetup(self.setup.family, 2, landmarks.shape[0], data={"landmarks": landmarks},
                             options={"lifting": self.mode})
        return Stereo2D(setup)

    # cost -------------------------------------------------------------
    def _rows(self, k: int) -> list[np.ndarray]:
        """Linear maps g with ``pixel_k[i] - (M2 v_k)[i] = g @ x``."""
        L = self.layout
        out = []
        for i in range(2):
            g = np.zeros(L.size)
            off = L.offset(f"z_{k + 1}")
            g[0] = self.pixels[k, i] - M2[i, 1]
            g[off] = -M2[i, 0]
            g[off + 1] = -M2[i, 2]
            out.append(g)
        return out

    def cost_matrix(self) -> PolyMatrix:
        Q = sum(np.outer(g, g) for k in range(self.setup.n) for g in self._rows(k))
        return PolyMatrix.from_dense(self.layout, np.asarray(Q))

    def residuals(self, theta: np.ndarray) -> np.ndarray:
        P = self.camera_points(theta)
        v = np.column_stack([P[:, 0] / P[:, 1], np.ones(len(P)), 1.0 / P[:, 1]])
        return (self.pixels - v @ M2.T).ravel()

    def jacobian(self, theta: np.ndarray) -> np.ndarray:
        _, C = split_state(theta, 2)
        P = self.camera_points(theta)
        rows = []
        for (x, y), m in zip(P, self.landmarks):
            dp = np.hstack([np.eye(2), (C @ _S @ m)[:, None]])  # d p / d(dt, dphi)
            for sign in (1.0, -1.0):
                dr = -np.array([F_U / y, -F_U * x / y**2 - sign * B_U / y**2])
                rows.append(dr @ dp)
        return np.array(rows)

    def retract(self, theta: np.ndarray, delta: np.ndarray) -> np.ndarray:
        t, C = split_state(theta, 2)
        return join_state(t + delta[:2], C @ rotation2(delta[2]))

    def tangent_dim(self, theta: np.ndarray) -> int:
        return 3

    # constraints ------------------------------------------------------
    @staticmethod
    def _c(a: int, b: int) -> int:
        """Index inside ``theta`` of C[a, b]."""
        return 2 + 2 * b + a

    def known_templates(self) -> list[Template]:
        L0 = VarLayout([("h", 1), ("theta", 6)])
        out = []
        for i, j in ((0, 0), (0, 1), (1, 1)):
            A = PolyMatrix(L0)
            for a in range(2):
                A.add_bilinear("theta", self._c(a, i), "theta", self._c(a, j), 1.0)
            if i == j:
                A.add_bilinear("h", 0, "h", 0, -1.0)
            out.append(Template.from_polymats(L0, {"1": A}, label="orthonormal"))

        L = VarLayout([("h", 1), ("theta", 6), ("z_1", self.sub_dim)])
        c = self._c
        # h x - u_1 y = 0 with x = C[0] m + t_0, y = C[1] m + t_1
        one = PolyMatrix(L).add_bilinear("h", 0, "theta", 0, 1.0).add_bilinear("z_1", 0, "theta", 1, -1.0)
        mx = PolyMatrix(L).add_bilinear("h", 0, "theta", c(0, 0), 1.0).add_bilinear("z_1", 0, "theta", c(1, 0), -1.0)
        my = PolyMatrix(L).add_bilinear("h", 0, "theta", c(0, 1), 1.0).add_bilinear("z_1", 0, "theta", c(1, 1), -1.0)
        out.append(Template.from_polymats(L, {"1": one, "mx_1": mx, "my_1": my}, label="substitution"))
        # h^2 - u_2 y = 0
        one = PolyMatrix(L).add_bilinear("h", 0, "h", 0, 1.0).add_bilinear("z_1", 1, "theta", 1, -1.0)
        mx = PolyMatrix(L).add_bilinear("z_1", 1, "theta", c(1, 0), -1.0)
        my = PolyMatrix(L).add_bilinear("z_1", 1, "theta", c(1, 1), -1.0)
        out.append(Template.from_polymats(L, {"1": one, "mx_1": mx, "my_1": my}, label="substitution"))
        if self.mode == "z":
            # h w_ij - u_i t_j = 0 with w = kron(u, t)
            for i in range(2):
                for j in range(2):
                    A = PolyMatrix(L).add_bilinear("h", 0, "z_1", 2 + 2 * i + j, 1.0)
                    A.add_bilinear("z_1", i, "theta", j, -1.0)
                    out.append(Template.from_polymats(L, {"1": A}, label="product"))
        return out

    def param_values(self) -> dict[str, float]:
        out = {}
        for k, (a, b) in enumerate(self.landmarks):
            out[f"mx_{k + 1}"] = float(a)
            out[f"my_{k + 1}"] = float(b)
        return out

    def random_like(self, n_instances: int, rng: np.random.Generator) -> "Stereo2D":
        return Stereo2D(generate(n_instances, noise=0.0, seed=None, lifting=self.mode, rng=rng))


def _camera_frame_points(n: int, rng: np.random.Generator) -> np.ndarray:
    depth = rng.uniform(*DEPTH_RANGE, size=n)
    lateral = rng.uniform(-LATERAL, LATERAL, size=n) * depth
    return np.column_stack([lateral, depth])


def generate(
    n: int = 3,
    noise: float = 1.0,
    seed: int | None = 0,
    lifting: str = "z",
    rng: np.random.Generator | None = None,
) -> ProblemSetup:
    """Random pose, ``n`` landmarks in front of the camera, pixel noise ``noise``."""
    rng = np.random.default_rng(seed) if rng is None else rng
    t = rng.uniform(0.0, 1.0, size=2)
    C = rotation2(rng.uniform(-np.pi, np.pi))
    P = _camera_frame_points(n, rng)
    landmarks = (P - t) @ C  # rows are C^T (p - t)
    v = np.column_stack([P[:, 0] / P[:, 1], np.ones(n), 1.0 / P[:, 1]])
    pixels = v @ M2.T + noise * rng.standard_normal((n, 2))
    family = "stereo2d" if lifting == "z" else "stereo2d-u"
    return ProblemSetup(
        family,
        d=2,
        n=n,
        noise=noise,
        seed=seed,
        data={"landmarks": landmarks, "pixels": pixels, "theta_gt": join_state(t, C)},
        options={"lifting": lifting},
    )
