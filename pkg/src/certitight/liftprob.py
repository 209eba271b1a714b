"""Problem-definition contract shared by all problem families.

A :class:`LiftedProblem` knows its variable layout, how to sample feasible
states and lift them, its cost matrix, its known constraints and the data
parameters that templates factor out. Known constraints are declared as
:class:`Template` objects so the same description serves both the
per-instance learner and the template learner.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .polymat import (
    PolyMatrix,
    VarLayout,
    homogenization_matrix,
    join_name,
    split_name,
)


class DegenerateLift(ValueError):
    """Raised by ``lift`` when a state makes a substitution singular."""


# ---------------------------------------------------------------------------
# setups and parameters


@dataclass
class ProblemSetup:
    """Data of one problem instance, serializable to JSON.

    ``data`` maps names to arrays (anchors, landmarks, measurements, ground
    truth ...). ``options`` holds family switches such as the lifting mode.
    """

    family: str
    d: int
    n: int
    n_anchors: int = 0
    noise: float = 0.0
    seed: int | None = None
    data: dict[str, np.ndarray] = field(default_factory=dict)
    options: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.data = {k: np.asarray(v, dtype=float) for k, v in self.data.items()}

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "d": self.d,
            "n": self.n,
            "n_anchors": self.n_anchors,
            "noise": self.noise,
            "seed": self.seed,
            "options": dict(sorted(self.options.items())),
            "data": {k: self.data[k].tolist() for k in sorted(self.data)},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "ProblemSetup":
        try:
            return cls(
                family=str(obj["family"]),
                d=int(obj["d"]),
                n=int(obj["n"]),
                n_anchors=int(obj.get("n_anchors", 0)),
                noise=float(obj.get("noise", 0.0)),
                seed=obj.get("seed"),
                data={k: np.asarray(v, dtype=float) for k, v in obj.get("data", {}).items()},
                options=dict(obj.get("options", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"invalid problem setup: {exc}") from exc

    @classmethod
    def from_json(cls, text: str) -> "ProblemSetup":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ParamVector:
    """Parameter realization ``p`` with ``p[0] = 1`` under the key ``"1"``."""

    keys: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        if not self.keys or self.keys[0] != "1":
            raise ValueError('the first parameter key must be "1"')
        if len(set(self.keys)) != len(self.keys):
            raise ValueError("parameter keys must be unique")
        if len(self.values) != len(self.keys) or self.values[0] != 1.0:
            raise ValueError("values must match keys and start with 1")

    def __getitem__(self, key: str) -> float:
        return float(self.values[self.keys.index(key)])

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.keys, self.values.tolist()))

    def restrict(self, keys: Sequence[str]) -> np.ndarray:
        lookup = self.as_dict()
        return np.array([lookup[k] for k in keys])


def key_symbols(key: str) -> list[str]:
    return [] if key == "1" else key.split("*")


def make_key(symbols: Iterable[str]) -> str:
    symbols = sorted(symbols)
    return "*".join(symbols) if symbols else "1"


def multiply_keys(a: str, b: str) -> str:
    return make_key(key_symbols(a) + key_symbols(b))


def rename_key(key: str, index_map: Mapping[int, int]) -> str:
    out = []
    for sym in key_symbols(key):
        base, idx = split_name(sym)
        out.append(join_name(base, index_map.get(idx, idx) if idx is not None else None))
    return make_key(out)


# ---------------------------------------------------------------------------
# templates


@dataclass
class Template:
    """A constraint with its data parameters factored out.

    ``mataug`` has one row per vech entry of ``layout`` and one column per
    parameter key; the constraint for a realization ``p`` is
    ``vech_inv(mataug @ p)``.
    """

    layout: VarLayout
    param_keys: tuple[str, ...]
    mataug: np.ndarray
    label: str = ""

    def __post_init__(self):
        self.param_keys = tuple(self.param_keys)
        self.mataug = np.asarray(self.mataug, dtype=float)
        shape = (self.layout.vech_size, len(self.param_keys))
        if self.mataug.shape != shape:
            raise ValueError(f"mataug must have shape {shape}, got {self.mataug.shape}")

    @property
    def variables(self) -> list[str]:
        return self.layout.names

    @property
    def a_bar(self) -> np.ndarray:
        """Augmented vector: the columns of ``mataug`` stacked."""
        return self.mataug.ravel(order="F")

    @classmethod
    def from_a_bar(cls, layout: VarLayout, param_keys: Sequence[str], a_bar: np.ndarray, label: str = "") -> "Template":
        a_bar = np.asarray(a_bar, dtype=float)
        return cls(layout, tuple(param_keys), a_bar.reshape((layout.vech_size, len(param_keys)), order="F"), label)

    @classmethod
    def from_polymats(cls, layout: VarLayout, parts: Mapping[str, PolyMatrix], label: str = "") -> "Template":
        """Build from one coefficient matrix per parameter key."""
        keys = tuple(parts)
        cols = [parts[k].embed(layout).vech() for k in keys]
        return cls(layout, keys, np.column_stack(cols), label)

    def coefficient(self, key: str) -> PolyMatrix:
        return PolyMatrix.from_vech(self.layout, self.mataug[:, self.param_keys.index(key)])

    def evaluate(self, params: Mapping[str, float]) -> PolyMatrix:
        """Factor in a parameter realization given as a key -> value mapping."""
        p = np.array([params[k] for k in self.param_keys])
        return PolyMatrix.from_vech(self.layout, self.mataug @ p)

    def rename(self, index_map: Mapping[int, int]) -> "Template":
        """Relabel instance indices of both variables and parameter keys."""
        names = []
        for name, _ in self.layout:
            base, idx = split_name(name)
            names.append(join_name(base, index_map.get(idx, idx)) if idx is not None else name)
        layout = VarLayout(zip(names, (d for _, d in self.layout)))
        keys = tuple(rename_key(k, index_map) for k in self.param_keys)
        return Template(layout, keys, self.mataug.copy(), self.label)

    def instances(self) -> list[int]:
        return sorted({i for n in self.layout.names if (i := split_name(n)[1]) is not None})

    def normalized(self) -> "Template":
        a = self.a_bar
        k = int(np.argmax(np.abs(a)))
        if a[k] == 0:
            return self
        return Template.from_a_bar(self.layout, self.param_keys, a / a[k], self.label)


# ---------------------------------------------------------------------------
# problem base class


class LiftedProblem:
    """Base class of all problem families.

    Subclasses set ``family`` and ``var_kinds`` and implement the abstract
    hooks ``layout``, ``sample_theta``, ``lift``, ``cost_matrix``,
    ``cost``, ``residuals`` and ``random_like``. Instanced variables are
    named ``kind_k`` with ``k`` starting at 1; all variables named with the
    same ``k`` belong to the same instance.
    """

    family: str = ""
    #: (kind, instanced) in the order variables appear in the layout
    var_kinds: tuple[tuple[str, bool], ...] = ()
    #: parameter symbols attached to each instance, e.g. ("m",) -> "m_3"
    param_symbols: tuple[str, ...] = ()
    #: highest monomial degree of per-instance parameters
    param_degree: int = 0
    #: redraws allowed before a sampler gives up
    rejection_budget: int = 1000

    def __init__(self, setup: ProblemSetup):
        self.setup = setup

    # required hooks ------------------------------------------------------
    @property
    def layout(self) -> VarLayout:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def n_instances(self) -> int:
        return self.setup.n

    def sample_theta(self, rng: np.random.Generator) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def lift(self, theta: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def cost_matrix(self) -> PolyMatrix:  # pragma: no cover
        raise NotImplementedError

    def cost(self, theta: np.ndarray) -> float:
        r = self.residuals(theta)
        return float(r @ r)

    def residuals(self, theta: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def jacobian(self, theta: np.ndarray) -> np.ndarray:  # pragma: no cover
        raise NotImplementedError

    def retract(self, theta: np.ndarray, delta: np.ndarray) -> np.ndarray:
        """Move along a tangent step; plain addition for Euclidean states."""
        return np.asarray(theta, dtype=float) + delta

    def tangent_dim(self, theta: np.ndarray) -> int:
        return int(np.size(theta))

    def random_like(self, n_instances: int, rng: np.random.Generator) -> "LiftedProblem":  # pragma: no cover
        """Fresh problem of the same family with ``n_instances`` random instances."""
        raise NotImplementedError

    def known_templates(self) -> list[Template]:
        """Parametric known constraints, written on instance 1 (or globally)."""
        return []

    def analytic_constraints(self) -> list[PolyMatrix]:
        return []

    def param_values(self) -> dict[str, float]:
        """Value of every parameter symbol, e.g. ``{"m_1": 0.55}``."""
        return {}

    def ground_truth(self) -> np.ndarray:
        return np.asarray(self.setup.data["theta_gt"], dtype=float).ravel()

    def theta_from_x(self, x: np.ndarray) -> np.ndarray:
        """Recover the state from a lifted vector (the entries after ``h``)."""
        L = self.layout
        return np.asarray(x, dtype=float)[L.indices(self.theta_names)] / x[0]

    @property
    def theta_names(self) -> list[str]:
        return [n for n in self.layout.names if split_name(n)[0] == "theta"]

    # derived -------------------------------------------------------------
    def sample_feasible(self, rng: np.random.Generator) -> np.ndarray:
        return self.sample_theta(rng)

    def sample_lifted(self, rng: np.random.Generator) -> np.ndarray:
        """Lifted feasible sample; degenerate lifts are redrawn."""
        for _ in range(self.rejection_budget):
            try:
                return self.lift(self.sample_theta(rng))
            except DegenerateLift:
                continue
        raise RuntimeError(f"{self.family}: sampler exceeded its retry budget")

    def sample_augmented(self, rng: np.random.Generator, param_keys: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Lifted sample and parameter realization of a freshly drawn instance."""
        if not self.param_symbols:
            return self.sample_lifted(rng), np.ones(len(param_keys))
        for _ in range(self.rejection_budget):
            fresh = self.random_like(self.n_instances, rng)
            try:
                x = fresh.lift(fresh.sample_theta(rng))
            except DegenerateLift:
                continue
            return x, fresh.param_vector().restrict(param_keys)
        raise RuntimeError(f"{self.family}: sampler exceeded its retry budget")

    def param_keys_for(self, instances: Iterable[int]) -> list[str]:
        """Keys of all parameter monomials attached to ``instances``."""
        keys = ["1"]
        for k in sorted(set(instances)):
            symbols = [f"{s}_{k}" for s in self.param_symbols]
            for deg in range(1, self.param_degree + 1):
                for combo in itertools.combinations_with_replacement(symbols, deg):
                    keys.append(make_key(combo))
        return keys

    def param_vector(self) -> ParamVector:
        keys = self.param_keys_for(range(1, self.n_instances + 1)) if self.param_symbols else ["1"]
        vals = self.param_values()
        values = [float(np.prod([vals[s] for s in key_symbols(k)])) for k in keys]
        return ParamVector(tuple(keys), np.array(values))

    def instantiate(self, template: Template, index_map: Mapping[int, int] | None = None) -> PolyMatrix:
        """Rename, factor in this problem's parameters and zero-pad."""
        t = template.rename(index_map) if index_map else template
        return t.evaluate(self.param_vector().as_dict()).embed(self.layout)

    def known_constraints(self, include_a0: bool = True) -> list[PolyMatrix]:
        """``A_0`` followed by every known template applied to every instance."""
        out = [homogenization_matrix(self.layout)] if include_a0 else []
        for t in self.known_templates():
            for index_map in instance_maps(t, self.n_instances, ordered=True):
                out.append(self.instantiate(t, index_map))
        return out

    def homogenization(self) -> PolyMatrix:
        return homogenization_matrix(self.layout)


def instance_maps(template: Template, n_instances: int, ordered: bool = True) -> list[dict[int, int]]:
    """Injective maps of a template's instance indices into ``1..n_instances``.

    With ``ordered`` the maps preserve order (sorted tuples); otherwise every
    injective assignment is returned.
    """
    inst = template.instances()
    targets = range(1, n_instances + 1)
    if not inst:
        return [{}]
    gen = itertools.combinations(targets, len(inst)) if ordered else itertools.permutations(targets, len(inst))
    return [dict(zip(inst, combo)) for combo in gen]


__all__ = [
    "DegenerateLift",
    "LiftedProblem",
    "ParamVector",
    "ProblemSetup",
    "Template",
    "instance_maps",
    "key_symbols",
    "make_key",
    "multiply_keys",
    "rename_key",
]
