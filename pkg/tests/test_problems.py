import numpy as np
import pytest

from certitight.problems import FAMILIES, Stereo1D, generate_setup, make_problem


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_analytic_constraints_hold_on_samples(family):
    p = make_problem(generate_setup(family, seed=1))
    rng = np.random.default_rng(2)
    A0 = p.homogenization().to_dense()
    for _ in range(3):
        x = p.sample_lifted(rng)
        for A in p.analytic_constraints():
            rhs = 1.0 if np.array_equal(A.to_dense(), A0) else 0.0
            assert abs(A.quad(x) - rhs) < 1e-8


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_theta_roundtrip_through_lift(family):
    p = make_problem(generate_setup(family, seed=0))
    theta = p.ground_truth()
    np.testing.assert_allclose(p.theta_from_x(p.lift(theta)), theta, atol=1e-10)


@pytest.mark.parametrize("family", sorted(FAMILIES))
def test_random_like_changes_size_only(family):
    p = make_problem(generate_setup(family, seed=0))
    q = p.random_like(2, np.random.default_rng(0))
    assert q.family == p.family and q.layout.names[0] == "h"
    if p.n_instances:
        assert q.n_instances == 2
    else:  # registration has no instanced variables
        assert q.layout.names == p.layout.names


def test_stereo1d_fixture():
    p = Stereo1D.fixture()
    assert p.layout.names == ["h", "theta", "z_1", "z_2"]
    assert p.cost(np.array([0.6028])) < 0.5


def test_generate_setup_errors():
    with pytest.raises(ValueError):
        generate_setup("sudoku")
    with pytest.raises(ValueError):
        generate_setup("ppr", d=2)
    with pytest.raises(ValueError):
        generate_setup("stereo2d", d=3)


def test_seeds_give_different_setups():
    a = generate_setup("roloc-z", seed=0).to_json()
    b = generate_setup("roloc-z", seed=1).to_json()
    assert a != b
