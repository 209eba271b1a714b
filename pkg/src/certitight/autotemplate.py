"""Learn constraint templates on small variable sets and apply them at any size.

A template is a nullspace vector of the augmented data matrix whose columns
are ``kron(p_G, vech(x_G x_G^T))`` for a variable set ``G`` and the data
parameters ``p_G`` attached to it. Folding the vector column-wise into
``mataug`` (one column per parameter key) and multiplying with a parameter
realization gives a concrete constraint on ``G``; renaming the instance
indices moves it to any other group of variables of the same kinds.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autotight import (
    ER_TOL,
    RDG_TOL,
    TightnessReport,
    compute_er,
    compute_rdg,
    local_candidate,
    quantized_fraction,
    tightness_report,
)
from .conic import solve_l1_reduction, solve_primal
from .liftprob import LiftedProblem, Template, multiply_keys
from .localsolve import LocalOptions
from .nullspace import DataMatrix, drop_roundoff, independent_subset, two_pass_refine
from .polymat import PolyMatrix, VarLayout, join_name, split_name, vech_outer_many

LIBRARY_VERSION = 1
#: L1 weights below this fraction of the largest count as zero
L1_ZERO = 1e-6

# ---------------------------------------------------------------------------
# variable sets


@dataclass(frozen=True)
class VariableSet:
    """Variables ``G`` (``h`` first) and the parameter keys that travel with them."""

    layout: VarLayout
    param_keys: tuple[str, ...]
    symmetric: bool = False

    def __post_init__(self):
        if self.layout.names[0] != "h":
            raise ValueError('a variable set must start with "h"')
        if not self.param_keys or self.param_keys[0] != "1":
            raise ValueError('parameter keys must start with "1"')

    @property
    def names(self) -> list[str]:
        return self.layout.names

    @property
    def instances(self) -> list[int]:
        return sorted({i for n in self.names if (i := split_name(n)[1]) is not None})

    @property
    def n_rows(self) -> int:
        """Length of an augmented sample, ``n_k * K_k``."""
        return self.layout.vech_size * len(self.param_keys)

    def label(self) -> str:
        return "{" + ", ".join(self.names) + "}"

    def to_dict(self) -> dict:
        return {"variables": self.layout.to_list(), "param_keys": list(self.param_keys), "symmetric": self.symmetric}

    @classmethod
    def from_dict(cls, obj: Mapping) -> "VariableSet":
        layout = VarLayout((str(n), int(d)) for n, d in obj["variables"])
        return cls(layout, tuple(obj["param_keys"]), bool(obj.get("symmetric", False)))


def _kind_dims(problem: LiftedProblem) -> dict[str, int]:
    dims: dict[str, int] = {}
    for name, dim in problem.layout:
        dims.setdefault(split_name(name)[0], dim)
    return dims


def _kind_order(problem: LiftedProblem) -> dict[str, int]:
    return {kind: i for i, (kind, _) in enumerate(problem.var_kinds)}


def _canonical(elems: frozenset, order: Mapping[str, int]) -> tuple:
    """Relabel instance indices to ``1..m`` choosing the smallest sorted tuple."""
    inst = sorted({i for _, i in elems if i is not None})
    best = None
    for perm in itertools.permutations(range(1, len(inst) + 1)):
        relabel = dict(zip(inst, perm))
        cand = tuple(sorted((order[k], relabel.get(i, 0)) for k, i in elems))
        if best is None or cand < best:
            best = cand
    return best


def _is_symmetric(canon: tuple) -> bool:
    inst = sorted({i for _, i in canon if i})
    base = set(canon)
    for perm in itertools.permutations(inst):
        relabel = dict(zip(inst, perm))
        if {(k, relabel.get(i, 0)) for k, i in canon} != base:
            return False
    return True


def variable_set_sequence(
    problem: LiftedProblem,
    max_size: int = 4,
    max_instances: int | None = None,
) -> list[VariableSet]:
    """Variable sets of growing size.

    The first sets hold ``h`` and one variable of each kind. Every later set
    adds one variable to a previous one, either a global variable not yet
    present or an instanced variable with an existing or a new instance
    index. Sets equal up to a relabeling of instances are kept once, and
    the result is sorted by size, then by the number of instances involved.
    ``max_size`` counts ``h``; ``max_instances`` defaults to the number of
    instances of ``problem``.
    """
    kinds = list(problem.var_kinds)
    order = _kind_order(problem)
    dims = _kind_dims(problem)
    limit = problem.n_instances if max_instances is None else max_instances
    names_of = {v: k for k, v in order.items()}
    instanced = dict(kinds)

    level = {}
    for kind, inst in kinds:
        if inst and limit < 1:
            continue
        c = _canonical(frozenset({(kind, 1 if inst else None)}), order)
        level[c] = None
    seen = dict(level)
    frontier = list(level)
    for _ in range(max_size - 2):
        nxt = {}
        for canon in frontier:
            present = {(names_of[k], i or None) for k, i in canon}
            used = sorted({i for _, i in canon if i})
            for kind, inst in kinds:
                options = [None] if not inst else used + [len(used) + 1]
                for idx in options:
                    if (kind, idx) in present or (inst and idx > limit):
                        continue
                    c = _canonical(frozenset(present | {(kind, idx)}), order)
                    if c not in seen:
                        seen[c] = None
                        nxt[c] = None
        frontier = list(nxt)
    def sort_key(c):
        return (len(c), len({i for _, i in c if i}), c)

    out = []
    for canon in sorted(seen, key=sort_key):
        blocks = [("h", 1)]
        for k, i in canon:
            kind = names_of[k]
            blocks.append((join_name(kind, i if instanced[kind] else None), dims[kind]))
        inst = sorted({i for _, i in canon if i})
        keys = tuple(problem.param_keys_for(inst)) if problem.param_symbols else ("1",)
        out.append(VariableSet(VarLayout(blocks), keys, _is_symmetric(canon)))
    return out


# ---------------------------------------------------------------------------
# learning


def _set_problem(problem: LiftedProblem, vset: VariableSet, rng: np.random.Generator) -> LiftedProblem:
    """Smallest problem of the same family that contains every variable of ``vset``."""
    inst = vset.instances
    if problem.n_instances == 0:
        return problem
    return problem.random_like(max(inst) if inst else 1, rng)


def augmented_samples(
    problem: LiftedProblem, vset: VariableSet, count: int, rng: np.random.Generator
) -> np.ndarray:
    """``count`` columns ``kron(p_G, vech(x_G x_G^T))``."""
    small = _set_problem(problem, vset, rng)
    idx = small.layout.indices(vset.names)
    xs, ps = [], []
    for _ in range(count):
        x, p = small.sample_augmented(rng, vset.param_keys)
        xs.append(x[idx])
        ps.append(p)
    V = vech_outer_many(np.column_stack(xs))
    P = np.column_stack(ps)
    # column s is kron(P[:, s], V[:, s]); key-major blocks match mataug.ravel("F")
    return (P[:, None, :] * V[None, :, :]).reshape(-1, count)


def _template_maps(template: Template, vset: VariableSet) -> list[dict[int, int]]:
    """Injective instance relabelings that move ``template`` inside ``vset``."""
    src = template.instances()
    dst = vset.instances
    names = set(vset.names)
    maps = []
    for combo in itertools.permutations(dst, len(src)):
        m = dict(zip(src, combo))
        renamed = [join_name(b, m[i]) if i is not None else n for n in template.variables for b, i in [split_name(n)]]
        if all(n in names for n in renamed):
            maps.append(m)
    return maps


def augmented_columns(template: Template, vset: VariableSet) -> list[np.ndarray]:
    """Augmented vectors of ``template`` and its parameter multiples inside ``vset``.

    The template is moved to every placement inside the set. Each placement
    is also multiplied by every parameter key ``mu`` of the set for which all
    products ``key * mu`` are again keys of the set.
    """
    n, keys = vset.layout.vech_size, vset.param_keys
    pos = {k: j for j, k in enumerate(keys)}
    out = []
    for m in _template_maps(template, vset):
        t = template.rename(m) if m else template
        base = [PolyMatrix.from_vech(t.layout, t.mataug[:, j]).embed(vset.layout).vech() for j in range(len(t.param_keys))]
        for mu in keys:
            target = [pos.get(multiply_keys(k, mu)) for k in t.param_keys]
            if any(c is None for c in target):
                continue
            v = np.zeros(n * len(keys))
            for col, c in zip(base, target):
                v[c * n : (c + 1) * n] += col
            if np.any(v):
                out.append(v)
    return out


def learn_templates(
    problem: LiftedProblem,
    vset: VariableSet,
    prior: Sequence[Template] = (),
    rng: np.random.Generator | None = None,
    oversample: float = 0.2,
    rank_tol: float | None = None,
) -> list[Template]:
    """New templates on ``vset``.

    ``prior`` (known templates and those learned on earlier sets) enter the
    data matrix as extra columns, so only constraints outside their span
    are returned.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    count = math.ceil((1.0 + oversample) * vset.n_rows)
    cols = [augmented_samples(problem, vset, count, rng)]
    tags = ["sample"] * count
    known = [v for t in prior for v in augmented_columns(t, vset)]
    if known:
        cols.append(np.column_stack(known))
        tags += ["known"] * len(known)
    data = DataMatrix(np.hstack(cols), tags, vset.layout)
    _, basis = two_pass_refine(data, rank_tol=rank_tol)
    V = drop_roundoff(basis.vectors)
    return [Template.from_a_bar(vset.layout, vset.param_keys, V[:, j], label=vset.label()) for j in range(V.shape[1])]


# ---------------------------------------------------------------------------
# library


@dataclass
class TemplateLibrary:
    family: str
    seed: int | None = None
    sets: list[tuple[VariableSet, list[Template]]] = field(default_factory=list)
    #: template order (flat indices), plus sufficient prefix lengths
    reduction: dict | None = None
    provenance: dict = field(default_factory=dict)

    def add(self, vset: VariableSet, templates: list[Template]) -> None:
        self.sets.append((vset, list(templates)))

    def templates(self) -> list[tuple[VariableSet, Template]]:
        return [(vs, t) for vs, ts in self.sets for t in ts]

    def __len__(self) -> int:
        return sum(len(ts) for _, ts in self.sets)

    def reduced(self, target: str = "cost") -> "TemplateLibrary":
        """Library restricted to the templates of the stored sufficient prefix."""
        if not self.reduction:
            raise ValueError("library has no reduction metadata")
        prefix = self.reduction.get(f"prefix_{target}")
        if prefix is None:
            raise ValueError(f"no {target} prefix stored")
        keep = set(self.reduction["order"][:prefix])
        out = TemplateLibrary(self.family, self.seed, provenance=dict(self.provenance))
        flat = 0
        for vs, ts in self.sets:
            kept = []
            for t in ts:
                if flat in keep:
                    kept.append(t)
                flat += 1
            out.add(vs, kept)
        return out

    # serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        sets = []
        for vs, ts in self.sets:
            entry = vs.to_dict()
            entry["templates"] = [
                {
                    "mataug": [
                        [int(r), vs.param_keys[c], _num(t.mataug[r, c])]
                        for c in range(t.mataug.shape[1])
                        for r in np.flatnonzero(t.mataug[:, c])
                    ]
                }
                for t in ts
            ]
            sets.append(entry)
        return {
            "family": self.family,
            "version": LIBRARY_VERSION,
            "seed": self.seed,
            "sets": sets,
            "reduction": self.reduction,
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, obj: Mapping) -> "TemplateLibrary":
        try:
            if int(obj.get("version", LIBRARY_VERSION)) != LIBRARY_VERSION:
                raise ValueError(f"unsupported library version {obj['version']}")
            lib = cls(str(obj["family"]), obj.get("seed"), reduction=obj.get("reduction"),
                      provenance=dict(obj.get("provenance") or {}))
            for entry in obj["sets"]:
                vs = VariableSet.from_dict(entry)
                ts = []
                for tobj in entry["templates"]:
                    M = np.zeros((vs.layout.vech_size, len(vs.param_keys)))
                    for r, key, val in tobj["mataug"]:
                        M[int(r), vs.param_keys.index(key)] = float(val)
                    ts.append(Template(vs.layout, vs.param_keys, M, vs.label()))
                lib.add(vs, ts)
        except (KeyError, TypeError, IndexError) as exc:
            raise ValueError(f"invalid template library: {exc}") from exc
        return lib

    @classmethod
    def from_json(cls, text: str) -> "TemplateLibrary":
        return cls.from_dict(json.loads(text))


def _num(v: float) -> float:
    return float(f"{float(v):.17g}")


# ---------------------------------------------------------------------------
# application


def instantiate_templates(
    lib: TemplateLibrary, problem: LiftedProblem
) -> tuple[list[PolyMatrix], list[int]]:
    """Every template at every placement, with the flat index of its source.

    Sets that are unchanged under a permutation of their instances are
    placed on increasing index tuples only; other sets use every injective
    placement.
    """
    if lib.family != problem.family:
        raise ValueError(f"library is for {lib.family!r}, problem is {problem.family!r}")
    params = problem.param_vector().as_dict()
    L = problem.layout
    n_inst = problem.n_instances
    out, src = [], []
    flat = 0
    for vs, ts in lib.sets:
        inst = vs.instances
        gen = itertools.combinations if vs.symmetric else itertools.permutations
        maps = [dict(zip(inst, combo)) for combo in gen(range(1, n_inst + 1), len(inst))] if inst else [{}]
        for t in ts:
            for m in maps:
                tm = t.rename(m) if m else t
                if not all(name in L for name in tm.variables):
                    continue
                A = tm.evaluate(params)
                if A.is_zero():
                    continue
                out.append(A.embed(L))
                src.append(flat)
            flat += 1
    return out, src


def apply_templates(lib: TemplateLibrary, problem: LiftedProblem) -> list[PolyMatrix]:
    """Known constraints of ``problem`` followed by the independent applied templates."""
    return _apply(lib, problem)[0]


def _apply(lib: TemplateLibrary, problem: LiftedProblem) -> tuple[list[PolyMatrix], list[int], int]:
    known = problem.known_constraints()
    applied, src = instantiate_templates(lib, problem)
    allc = known + applied
    keep = independent_subset(allc, n_fixed=len(known))
    constraints = [allc[i] for i in keep]
    sources = [src[i - len(known)] for i in keep if i >= len(known)]
    return constraints, sources, len(known)


# ---------------------------------------------------------------------------
# reduction


@dataclass
class ReductionResult:
    #: indices into the redundant constraints, most important first
    order: list[int]
    lam: np.ndarray
    #: smallest sufficient number of redundant constraints found
    prefix: int
    target: str
    #: (prefix length, rdg, er) for every prefix evaluated
    evaluations: list[tuple[int, float, float]]

    def n_total(self, n_known: int) -> int:
        return n_known + self.prefix


class ReductionError(RuntimeError):
    pass


def _prefix_check(Q, known, redundant, order, k, q_hat, target, rdg_tol, er_tol):
    sol = solve_primal(Q, known + [redundant[i] for i in order[:k]])
    if not np.all(np.isfinite(sol.X)):
        return False, np.nan, np.nan
    rdg = compute_rdg(q_hat, sol.d_star)
    er = compute_er(sol.X)
    ok = rdg < rdg_tol if target == "cost" else (rdg < rdg_tol and er > er_tol)
    return ok, rdg, er


def importance_order(
    problem: LiftedProblem,
    constraints: Sequence[PolyMatrix],
    x_hat: np.ndarray,
    n_known: int = 1,
    Q: PolyMatrix | None = None,
) -> tuple[list[int], np.ndarray]:
    """Redundant constraints sorted by decreasing L1 dual weight at ``x_hat``.

    The L1 solution is sparse and leaves most weights tied at zero. Ties are
    broken by the multipliers of the full interior-point solve, whose dual
    lies in the relative interior of the optimal face (maximal rank), and
    then by index.
    """
    Q = problem.cost_matrix() if Q is None else Q
    M = len(constraints) - n_known
    if M <= 0:
        return [], np.zeros(0)
    lam = solve_l1_reduction(Q, list(constraints), x_hat, n_free=n_known)[n_known - 1 :]
    full = solve_primal(Q, list(constraints))
    tie = np.abs(np.asarray(full.lam, dtype=float))[n_known - 1 :]
    if tie.shape != (M,) or not np.all(np.isfinite(tie)):
        tie = np.zeros(M)
    scale = max(float(lam.max(initial=0.0)), 1e-300)
    weight = np.where(lam > L1_ZERO * scale, lam, 0.0)
    return sorted(range(M), key=lambda i: (-weight[i], -tie[i], i)), lam


def reduce_constraints(
    problem: LiftedProblem,
    constraints: Sequence[PolyMatrix],
    x_hat: np.ndarray,
    q_hat: float,
    n_known: int = 1,
    target: str = "cost",
    rdg_tol: float = RDG_TOL,
    er_tol: float = ER_TOL,
) -> ReductionResult:
    """Order redundant constraints by L1 dual weight and bisect on the prefix.

    ``constraints[:n_known]`` are always kept. The redundant ones are sorted
    by decreasing ``|lambda|`` from the L1-minimal certificate at ``x_hat``;
    constraints the L1 solution leaves at zero are ranked by their
    multiplier in the full solve. The empty prefix is tried first, then
    the full one, then the interval between the last failing and the first
    passing length is halved until it has size one. ``target="rank"`` also
    asks for ``ER > er_tol``.
    """
    if target not in ("cost", "rank"):
        raise ValueError(f"unknown reduction target {target!r}")
    Q = problem.cost_matrix()
    known, redundant = list(constraints[:n_known]), list(constraints[n_known:])
    M = len(redundant)
    evaluations = []

    def check(order, k):
        ok, rdg, er = _prefix_check(Q, known, redundant, order, k, q_hat, target, rdg_tol, er_tol)
        evaluations.append((k, rdg, er))
        return ok

    ident = list(range(M))
    if check(ident, 0):
        return ReductionResult(ident, np.zeros(M), 0, target, evaluations)
    if M == 0 or not check(ident, M):
        raise ReductionError(f"the full constraint set is not {target}-tight")
    order, lam = importance_order(problem, constraints, x_hat, n_known, Q)
    lo, hi = 0, M
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if check(order, mid):
            hi = mid
        else:
            lo = mid
    return ReductionResult(order, lam, hi, target, evaluations)


def template_ranking(sources: Sequence[int], order: Sequence[int], n_templates: int, prefix: int) -> tuple[list[int], int]:
    """Order templates by the first position of their constraints in ``order``.

    Returns the template order and how many templates are needed to cover
    the first ``prefix`` constraints.
    """
    first = {}
    for pos, i in enumerate(order):
        first.setdefault(sources[i], pos)
    ranked = sorted(first, key=first.get)
    rest = [t for t in range(n_templates) if t not in first]
    need = sum(1 for t in ranked if first[t] < prefix)
    return ranked + rest, need


# ---------------------------------------------------------------------------
# driver


@dataclass
class AutoTemplateOptions:
    oversample: float = 0.2
    rank_tol: float | None = None
    seed: int = 0
    max_set_size: int = 4
    #: feed the problem's known templates into learning
    use_known: bool = True
    #: stop at the first "cost" or "rank" tight set
    stop_on: str = "cost"
    reduce: bool = False
    reduce_targets: tuple[str, ...] = ("cost",)
    rdg_tol: float = RDG_TOL
    er_tol: float = ER_TOL
    local_restarts: int = 5
    local: LocalOptions = field(default_factory=LocalOptions)


@dataclass
class AutoTemplateResult:
    library: TemplateLibrary
    report: TightnessReport
    constraints: list[PolyMatrix]
    n_known: int
    sets_used: int
    reductions: dict[str, ReductionResult] = field(default_factory=dict)


def autotemplate(problem: LiftedProblem, options: AutoTemplateOptions | None = None) -> AutoTemplateResult:
    """Learn templates set by set until the example problem becomes tight.

    After every set that contributes new templates, all templates so far are
    applied to ``problem`` and the relaxation is tested. Learning stops at
    the first tight configuration; when the sequence runs out the outcome
    is ``not-tightenable``, or ``solver-failure`` if the last SDP broke down.
    """
    options = options or AutoTemplateOptions()
    rng = np.random.default_rng(options.seed)
    local = local_candidate(problem, np.random.default_rng(options.seed + 1), options.local_restarts, options.local)
    q_hat = local.cost
    lib = TemplateLibrary(problem.family, options.seed)
    lib.provenance = {
        "n": problem.n_instances,
        "oversample": options.oversample,
        "rank_tol": options.rank_tol,
        "rdg_tol": options.rdg_tol,
        "er_tol": options.er_tol,
        "max_set_size": options.max_set_size,
        "use_known": options.use_known,
    }
    prior = list(problem.known_templates()) if options.use_known else []
    report = constraints = None
    n_known, sets_used = 0, 0
    for vset in variable_set_sequence(problem, options.max_set_size):
        sets_used += 1
        learned = learn_templates(problem, vset, prior, rng, options.oversample, options.rank_tol)
        lib.add(vset, learned)
        prior.extend(learned)
        if report is not None and not learned:
            continue
        constraints, _, n_known = _apply(lib, problem)
        report, _ = _report(problem, lib, constraints, n_known, q_hat, options)
        done = report.cost_tight and (options.stop_on == "cost" or report.rank_tight)
        if done:
            break
    if report is None:  # no variable set at all
        constraints, _, n_known = _apply(lib, problem)
        report, _ = _report(problem, lib, constraints, n_known, q_hat, options)
    lib.provenance["sets_used"] = sets_used

    result = AutoTemplateResult(lib, report, constraints, n_known, sets_used)
    if options.reduce and report.cost_tight:
        constraints, sources, n_known = _apply(lib, problem)
        x_hat = problem.lift(local.theta)
        red = {"order": None}
        for target in options.reduce_targets:
            try:
                r = reduce_constraints(problem, constraints, x_hat, q_hat, n_known, target, options.rdg_tol, options.er_tol)
            except ReductionError:
                red[f"prefix_{target}"] = None
                continue
            result.reductions[target] = r
            if red["order"] is None:
                red["order"] = template_ranking(sources, r.order, len(lib), r.prefix)[0]
            need = _cover(red["order"], sources, r.order[: r.prefix])
            red[f"prefix_{target}"] = need
            red[f"constraints_{target}"] = n_known + r.prefix
        if red["order"] is not None:
            lib.reduction = red
    return result


def _cover(template_order: Sequence[int], sources: Sequence[int], needed: Iterable[int]) -> int:
    """Shortest prefix of ``template_order`` containing the sources of ``needed``."""
    pos = {t: i for i, t in enumerate(template_order)}
    return max((pos[sources[i]] + 1 for i in needed), default=0)


def _report(problem, lib, constraints, n_known, q_hat, options):
    vecs = np.concatenate([t.a_bar for _, t in lib.templates()]) if len(lib) else np.zeros(0)
    return tightness_report(
        problem,
        constraints,
        q_hat,
        n_known=n_known,
        rdg_tol=options.rdg_tol,
        er_tol=options.er_tol,
        quantized=quantized_fraction(vecs),
    )


__all__ = [
    "AutoTemplateOptions",
    "AutoTemplateResult",
    "ReductionError",
    "ReductionResult",
    "TemplateLibrary",
    "VariableSet",
    "apply_templates",
    "augmented_columns",
    "augmented_samples",
    "autotemplate",
    "instantiate_templates",
    "learn_templates",
    "reduce_constraints",
    "template_ranking",
    "variable_set_sequence",
]
