import numpy as np
import pytest

from certitight.conic import certify, eig_sym, free_coordinates, solve_primal

# x = [h, t, s]: minimize -2 h t subject to t^2 = h^2; s appears nowhere.
Q = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
A0 = np.diag([1.0, 0.0, 0.0])
A1 = np.diag([-1.0, 1.0, 0.0])


def test_two_by_two_relaxation_is_tight():
    sol = solve_primal(Q[:2, :2], [A0[:2, :2], A1[:2, :2]])
    assert sol.status == "optimal"
    assert sol.p_star == pytest.approx(-2.0, abs=1e-6)
    assert sol.d_star == pytest.approx(-2.0, abs=1e-6)
    np.testing.assert_allclose(sol.X, np.ones((2, 2)), atol=1e-5)


def test_free_coordinate_is_detected_and_completed():
    assert free_coordinates(Q, [A0, A1]).tolist() == [2]
    sol = solve_primal(Q, [A0, A1])
    assert sol.d_star == pytest.approx(-2.0, abs=1e-6)
    assert eig_sym(sol.X)[0][-1] > -1e-8
    assert sol.X[0, 0] == pytest.approx(1.0, abs=1e-7)


def test_certify_accepts_minimum_and_rejects_maximum():
    good = certify(Q[:2, :2], [A0[:2, :2], A1[:2, :2]], np.array([1.0, 1.0]))
    assert good.certified and good.min_eig_H > -1e-6
    bad = certify(Q[:2, :2], [A0[:2, :2], A1[:2, :2]], np.array([1.0, -1.0]))
    assert not bad.certified
    d = bad.to_dict()
    assert d["certified"] is False and d["reason"]


def test_certify_h_relaxation_and_errors():
    c = certify(Q[:2, :2], [A0[:2, :2], A1[:2, :2]], np.array([1.0, 1.0]), relaxation="h")
    # entries of H are bounded, and here H must be [[1, -1], [-1, 1]]
    assert c.eps == pytest.approx(1.0 / (1.0 + np.sqrt(2.0)), abs=1e-6)
    with pytest.raises(ValueError):
        certify(Q[:2, :2], [A0[:2, :2], A1[:2, :2]], np.array([2.0, 1.0]))
    with pytest.raises(ValueError):
        certify(Q[:2, :2], [A0[:2, :2], A1[:2, :2]], np.array([1.0, 1.0]), relaxation="x")


def test_eig_sym_sorted_descending():
    w, V = eig_sym(np.diag([1.0, 3.0, 2.0]))
    assert w.tolist() == [3.0, 2.0, 1.0]
    assert abs(V[1, 0]) == pytest.approx(1.0)


@pytest.mark.parametrize("family", ["stereo1d", "roloc-z"])
def test_certify_decision_is_scale_equivariant(family):
    from certitight.autotight import assemble_constraints, learn_constraints, local_candidate
    from certitight.problems import generate_setup, make_problem

    p = make_problem(generate_setup(family))
    cons = assemble_constraints(p.known_constraints(), learn_constraints(p).matrices())
    x = p.lift(local_candidate(p, np.random.default_rng(1)).theta)
    Qd = p.cost_matrix().to_dense()
    decisions = []
    for alpha in (0.1, 1.0, 10.0):
        c = certify(alpha * Qd, cons, x)
        decisions.append(c.certified)
        if c.certified:
            assert c.min_eig_H >= -1e-8
    assert decisions == [True, True, True]
