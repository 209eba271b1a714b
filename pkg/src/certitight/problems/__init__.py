"""Problem families and a registry keyed by CLI id."""

from __future__ import annotations

from ..liftprob import LiftedProblem, ProblemSetup
from . import rangeonly, registration, stereo1d, stereo2d
from .rangeonly import RangeOnly
from .registration import Registration
from .stereo1d import Stereo1D
from .stereo2d import Stereo2D

#: family id -> (class, default generator keyword arguments)
FAMILIES = {
    "stereo1d": (Stereo1D, {"n": 2, "noise": 0.1}),
    "roloc-z": (RangeOnly, {"d": 3, "n": 3, "n_anchors": 10, "noise": 1e-2, "mode": "z"}),
    "roloc-y": (RangeOnly, {"d": 3, "n": 3, "n_anchors": 10, "noise": 1e-2, "mode": "y"}),
    "ppr": (Registration, {"n": 3, "noise": 1e-2, "mode": "ppr"}),
    "plr": (Registration, {"n": 5, "noise": 1e-3, "mode": "plr"}),
    "stereo2d": (Stereo2D, {"n": 3, "noise": 1.0, "lifting": "z"}),
    "stereo2d-u": (Stereo2D, {"n": 3, "noise": 1.0, "lifting": "u"}),
}


def generate_setup(
    family: str,
    n: int | None = None,
    noise: float | None = None,
    seed: int | None = 0,
    d: int | None = None,
    n_anchors: int | None = None,
) -> ProblemSetup:
    """Deterministic synthetic setup of ``family``; unset sizes use the family defaults."""
    if family not in FAMILIES:
        raise ValueError(f"unknown problem family {family!r}; choose from {sorted(FAMILIES)}")
    _, defaults = FAMILIES[family]
    kw = dict(defaults)
    if n is not None:
        kw["n"] = n
    if noise is not None:
        kw["noise"] = noise
    if family == "stereo1d":
        if kw["n"] == 2 and n is None and noise is None:
            return Stereo1D.fixture().setup
        return stereo1d.generate(kw["n"], kw["noise"], seed)
    if family.startswith("roloc"):
        if d is not None:
            kw["d"] = d
        if n_anchors is not None:
            kw["n_anchors"] = n_anchors
        return rangeonly.generate(kw["d"], kw["n"], kw["n_anchors"], kw["noise"], seed, kw["mode"])
    if family in ("ppr", "plr"):
        if d not in (None, 3):
            raise ValueError("registration is only available in 3D")
        return registration.generate(kw["n"], kw["noise"], seed, kw["mode"])
    if d not in (None, 2):
        raise ValueError("stereo localization is only available in 2D")
    return stereo2d.generate(kw["n"], kw["noise"], seed, kw["lifting"])


def make_problem(setup: ProblemSetup) -> LiftedProblem:
    """Problem object for a setup; the family id selects the class and mode."""
    if setup.family not in FAMILIES:
        raise ValueError(f"unknown problem family {setup.family!r}")
    cls, defaults = FAMILIES[setup.family]
    for key in ("mode", "lifting"):
        if key in defaults:
            setup.options.setdefault(key, defaults[key])
    return cls(setup)


__all__ = [
    "FAMILIES",
    "RangeOnly",
    "Registration",
    "Stereo1D",
    "Stereo2D",
    "generate_setup",
    "make_problem",
]
