import json

import numpy as np
import pytest

from certitight.autotemplate import (
    AutoTemplateOptions,
    ReductionError,
    TemplateLibrary,
    VariableSet,
    apply_templates,
    augmented_samples,
    autotemplate,
    instantiate_templates,
    reduce_constraints,
    variable_set_sequence,
)
from certitight.autotight import local_candidate
from certitight.polymat import VarLayout, vech
from certitight.problems import generate_setup, make_problem


@pytest.fixture(scope="module")
def stereo1d_result():
    p = make_problem(generate_setup("stereo1d"))
    return p, autotemplate(p, AutoTemplateOptions(reduce=True))


def test_variable_set_sequence_for_stereo1d():
    p = make_problem(generate_setup("stereo1d"))
    labels = [vs.label() for vs in variable_set_sequence(p, max_size=3)]
    assert labels[:3] == ["{h, theta}", "{h, z_1}", "{h, theta, z_1}"]
    assert "{h, z_1, z_2}" in labels
    seq = variable_set_sequence(p, max_size=3)
    assert [len(vs.names) for vs in seq] == sorted(len(vs.names) for vs in seq)
    pair = next(vs for vs in seq if vs.label() == "{h, z_1, z_2}")
    assert pair.symmetric and pair.param_keys == ("1", "m_1", "m_2")


def test_variable_set_validation():
    with pytest.raises(ValueError):
        VariableSet(VarLayout([("h", 1), ("z_1", 1)]), ("m_1",))


def test_augmented_samples_are_parameter_major():
    p = make_problem(generate_setup("stereo1d"))
    vs = VariableSet(VarLayout([("h", 1), ("theta", 1), ("z_1", 1)]), ("1", "m_1"))
    S = augmented_samples(p, vs, 4, np.random.default_rng(0))
    n = vs.layout.vech_size
    assert S.shape == (2 * n, 4)
    # first block is vech(x x^T) (parameter "1"), second is m_1 times it
    for s in range(4):
        ratio = S[n:, s] / np.where(S[:n, s] == 0, 1, S[:n, s])
        nz = S[:n, s] != 0
        assert np.allclose(ratio[nz], ratio[nz][0])
        assert S[0, s] == 1.0


def test_stereo1d_learns_one_pairwise_template(stereo1d_result):
    p, res = stereo1d_result
    assert res.report.cost_tight
    learned = [(vs.label(), len(ts)) for vs, ts in res.library.sets if ts]
    assert learned == [("{h, z_1, z_2}", 1)]
    # it vanishes on augmented samples of fresh instances
    vs, ts = res.library.sets[-1]
    S = augmented_samples(p, vs, 5, np.random.default_rng(4))
    assert np.abs(ts[0].mataug.ravel("F") @ S).max() < 1e-9


def test_pairwise_template_applies_to_every_pair():
    p = make_problem(generate_setup("stereo1d"))
    p4 = make_problem(generate_setup("stereo1d", n=4, seed=2))
    lib = autotemplate(p).library
    applied, src = instantiate_templates(lib, p4)
    assert len(applied) == 6  # unordered pairs among 4 landmarks
    x = p4.lift(p4.sample_theta(np.random.default_rng(0)))
    assert max(abs(A.quad(x)) for A in applied) < 1e-9
    cons = apply_templates(lib, p4)
    # A_0, four substitutions and six pair identities; each pair has its own
    # z_i z_j entry, so the pair identities are independent as matrices
    assert len(cons) == 1 + 4 + 6


def test_library_json_roundtrip(stereo1d_result):
    p, res = stereo1d_result
    text = res.library.to_json()
    back = TemplateLibrary.from_json(text)
    assert back.family == "stereo1d" and len(back) == len(res.library)
    a = [A.to_dense() for A in apply_templates(res.library, p)]
    b = [A.to_dense() for A in apply_templates(back, p)]
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert json.loads(text)["reduction"]["prefix_cost"] == 1
    with pytest.raises(ValueError):
        TemplateLibrary.from_json(json.dumps({"family": "stereo1d", "sets": [{"variables": [["h", 1]]}]}))


def test_family_mismatch_is_rejected(stereo1d_result):
    _, res = stereo1d_result
    with pytest.raises(ValueError):
        apply_templates(res.library, make_problem(generate_setup("roloc-z")))


def test_reduced_library(stereo1d_result):
    _, res = stereo1d_result
    red = res.library.reduced("cost")
    assert len(red) == 1
    with pytest.raises(ValueError):
        res.library.reduced("rank")


def test_reduce_constraints_bisects_to_sufficient_prefix():
    p = make_problem(generate_setup("stereo1d", n=4, seed=2))
    lib = autotemplate(make_problem(generate_setup("stereo1d"))).library
    cons = apply_templates(lib, p)
    local = local_candidate(p, np.random.default_rng(0))
    n_known = len(p.known_constraints())
    red = reduce_constraints(p, cons, p.lift(local.theta), local.cost, n_known=n_known)
    assert 0 < red.prefix <= len(cons) - n_known
    assert sorted(red.order) == list(range(len(cons) - n_known))
    with pytest.raises(ValueError):
        reduce_constraints(p, cons, p.lift(local.theta), local.cost, n_known=n_known, target="size")
    with pytest.raises(ReductionError):
        reduce_constraints(p, p.known_constraints(), p.lift(local.theta), local.cost, n_known=1)
