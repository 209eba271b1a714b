import json

import numpy as np
import pytest

from certitight.liftprob import (
    ParamVector,
    ProblemSetup,
    Template,
    instance_maps,
    make_key,
    multiply_keys,
    rename_key,
)
from certitight.polymat import PolyMatrix, VarLayout
from certitight.problems import generate_setup, make_problem


def test_setup_json_roundtrip():
    s = generate_setup("roloc-y", n=2, seed=3)
    back = ProblemSetup.from_json(s.to_json())
    assert back.family == s.family and back.n == 2
    np.testing.assert_allclose(back.data["anchors"], s.data["anchors"])


def test_setup_rejects_garbage():
    with pytest.raises(ValueError):
        ProblemSetup.from_json(json.dumps({"family": "roloc-z"}))


def test_param_keys():
    assert make_key(["my_1", "mx_1"]) == "mx_1*my_1"
    assert multiply_keys("1", "m_2") == "m_2"
    assert rename_key("mx_1*my_2", {1: 3, 2: 1}) == "mx_3*my_1"
    with pytest.raises(ValueError):
        ParamVector(("m_1",), np.array([1.0]))


def test_param_vector_of_stereo2d():
    p = make_problem(generate_setup("stereo2d", n=2, seed=0))
    pv = p.param_vector()
    assert pv.keys[0] == "1"
    assert np.isclose(pv["mx_1*my_1"], pv["mx_1"] * pv["my_1"])
    # degree two in two symbols per landmark: 1 + 2 * (2 + 3)
    assert len(pv.keys) == 11


def test_template_evaluate_and_rename():
    L = VarLayout([("h", 1), ("theta", 1), ("z_1", 1)])
    one = PolyMatrix(L).add_bilinear("theta", 0, "z_1", 0, 1.0)
    m = PolyMatrix(L).add_bilinear("h", 0, "z_1", 0, -1.0)
    t = Template.from_polymats(L, {"1": one, "m_1": m})
    A = t.evaluate({"1": 1.0, "m_1": 0.25})
    x = np.array([1.0, 2.0, 1.0 / (2.0 - 0.25)])
    assert np.isclose(A.quad(x), 1.0)  # theta z - m z = 1 = h^2
    r = t.rename({1: 4})
    assert r.layout.names == ["h", "theta", "z_4"] and r.param_keys == ("1", "m_4")
    np.testing.assert_allclose(Template.from_a_bar(L, t.param_keys, t.a_bar).mataug, t.mataug)
    assert np.abs(t.normalized().a_bar).max() == 1.0


def test_instance_maps():
    L = VarLayout([("h", 1), ("z_1", 1), ("z_2", 1)])
    t = Template(L, ("1",), np.zeros((L.vech_size, 1)))
    assert len(instance_maps(t, 4, ordered=True)) == 6
    assert len(instance_maps(t, 4, ordered=False)) == 12
    t0 = Template(VarLayout([("h", 1)]), ("1",), np.zeros((1, 1)))
    assert instance_maps(t0, 5) == [{}]


@pytest.mark.parametrize("family", ["stereo1d", "roloc-z", "roloc-y", "ppr", "plr", "stereo2d", "stereo2d-u"])
def test_lift_is_feasible_and_cost_matches(family):
    p = make_problem(generate_setup(family, seed=4))
    rng = np.random.default_rng(0)
    theta = p.sample_theta(rng)
    x = p.lift(theta)
    assert x[0] == 1.0 and x.size == p.layout.size
    for A in p.known_constraints()[1:]:
        assert abs(A.quad(x)) < 1e-9
    assert np.isclose(p.cost_matrix().quad(x), np.sum(p.residuals(theta) ** 2), rtol=1e-8, atol=1e-10)


def test_generate_is_deterministic():
    a = generate_setup("stereo2d", seed=7).to_json()
    b = generate_setup("stereo2d", seed=7).to_json()
    assert a == b
