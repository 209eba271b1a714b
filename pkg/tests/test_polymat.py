import numpy as np
import pytest

from certitight.polymat import (
    PolyMatrix,
    VarLayout,
    homogenization_matrix,
    join_name,
    split_name,
    vech,
    vech_dim,
    vech_index,
    vech_inv,
    vech_outer,
    vech_outer_many,
)


def sym(rng, n):
    A = rng.standard_normal((n, n))
    return A + A.T


def test_vech_inner_product_matches_trace():
    rng = np.random.default_rng(0)
    A, B = sym(rng, 5), sym(rng, 5)
    assert np.isclose(vech(A) @ vech(B), np.trace(A @ B))


def test_vech_roundtrip_and_index():
    rng = np.random.default_rng(1)
    A = sym(rng, 4)
    np.testing.assert_allclose(vech_inv(vech(A)), A)
    v = vech(A)
    for i in range(4):
        for j in range(4):
            scale = 1.0 if i == j else np.sqrt(2.0)
            assert np.isclose(v[vech_index(i, j, 4)], scale * A[i, j])


def test_vech_outer_variants_agree():
    rng = np.random.default_rng(2)
    xs = rng.standard_normal((5, 3))
    for k in range(3):
        np.testing.assert_allclose(vech_outer(xs[:, k]), vech(np.outer(xs[:, k], xs[:, k])))
    np.testing.assert_allclose(vech_outer_many(xs)[:, 1], vech_outer(xs[:, 1]))


def test_vech_rejects_bad_input():
    with pytest.raises(ValueError):
        vech(np.array([[0.0, 1.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        vech(np.zeros((2, 3)))
    with pytest.raises(ValueError):
        vech_dim(7)


def test_names():
    assert split_name("z_12") == ("z", 12)
    assert split_name("theta") == ("theta", None)
    assert join_name("z", 3) == "z_3"


def test_layout_validation():
    with pytest.raises(ValueError):
        VarLayout([("x", 1)])
    with pytest.raises(ValueError):
        VarLayout([("h", 1), ("x", 2), ("x", 1)])
    L = VarLayout([("h", 1), ("x", 2), ("z_1", 1)])
    assert L.size == 4 and L.offset("z_1") == 3 and L.vech_size == 10
    assert L.sub(["z_1", "h"]).names == ["h", "z_1"]
    with pytest.raises(KeyError):
        L.dim("nope")


def test_bilinear_quadratic_form():
    L = VarLayout([("h", 1), ("x", 2)])
    A = PolyMatrix(L).add_bilinear("h", 0, "x", 1, 3.0).add_bilinear("x", 0, "x", 0, -2.0)
    x = np.array([1.0, 0.5, 2.0])
    assert np.isclose(A.quad(x), 3.0 * 1.0 * 2.0 - 2.0 * 0.25)


def test_block_transpose_and_dense():
    L = VarLayout([("h", 1), ("a", 2), ("b", 3)])
    M = np.arange(6.0).reshape(2, 3)
    A = PolyMatrix(L).add_block("b", "a", M.T)
    np.testing.assert_allclose(A.block("a", "b"), M)
    D = A.to_dense()
    np.testing.assert_allclose(D, D.T)
    assert A.variables == ["a", "b"]


def test_from_dense_rejects_asymmetric():
    L = VarLayout([("h", 1), ("x", 1)])
    with pytest.raises(ValueError):
        PolyMatrix.from_dense(L, np.array([[0.0, 1.0], [2.0, 0.0]]))


def test_triplets_roundtrip():
    rng = np.random.default_rng(3)
    L = VarLayout([("h", 1), ("x", 2), ("y_1", 2)])
    A = PolyMatrix.from_dense(L, sym(rng, 5))
    B = PolyMatrix.from_triplets(L, A.to_triplets())
    np.testing.assert_allclose(A.to_dense(), B.to_dense())


def test_vech_entries_matches_dense_vech():
    rng = np.random.default_rng(4)
    L = VarLayout([("h", 1), ("x", 3), ("y_1", 2), ("y_2", 2)])
    D = sym(rng, 8)
    D[np.abs(D) < 0.8] = 0.0
    A = PolyMatrix.from_dense(L, D)
    idx, val = A.vech_entries()
    dense = np.zeros(L.vech_size)
    dense[idx] = val
    np.testing.assert_allclose(dense, A.vech())


def test_rename_and_embed():
    L = VarLayout([("h", 1), ("z_1", 1)])
    A = PolyMatrix(L).add_bilinear("h", 0, "z_1", 0, 1.0)
    B = A.rename({"z_1": "z_3"})
    assert B.layout.names == ["h", "z_3"]
    big = VarLayout([("h", 1), ("z_1", 1), ("z_2", 1), ("z_3", 1)])
    E = B.embed(big)
    assert E.to_dense()[0, 3] == 0.5
    with pytest.raises(ValueError):
        A.rename({"h": "g"})
    with pytest.raises(KeyError):
        A.rename({"w": "v"})


def test_algebra_and_homogenization():
    L = VarLayout([("h", 1), ("x", 1)])
    A0 = homogenization_matrix(L)
    assert A0.to_dense()[0, 0] == 1.0 and A0.to_dense().sum() == 1.0
    S = A0 + 2.0 * A0 - A0
    np.testing.assert_allclose(S.to_dense(), 2.0 * A0.to_dense())
