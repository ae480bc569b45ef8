import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dflis.linalg import (
    FactorizationError,
    SpdMatrix,
    ValidationError,
    coordinate_projector,
    generalized_eig,
    projector_from_pairs,
)

from conftest import random_spd


def test_spd_factor_reconstructs(rng):
    a = random_spd(rng, 6)
    m = SpdMatrix(a)
    L = m.factor
    assert np.linalg.norm(L @ L.T - a) <= 1e-10 * np.linalg.norm(a)
    assert np.isclose(m.logdet, np.linalg.slogdet(a)[1])


def test_spd_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValidationError):
        SpdMatrix(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(FactorizationError):
        SpdMatrix(np.diag([1.0, -1.0])).factor


def test_identity_case():
    pairs = generalized_eig(np.eye(2), SpdMatrix(np.eye(2)))
    assert np.allclose(pairs.eigenvalues, [1, 1])
    assert np.allclose(pairs.eigenvectors.T @ pairs.eigenvectors, np.eye(2))


def test_diagonal_case():
    pairs = generalized_eig(np.diag([4.0, 1.0]), SpdMatrix(np.eye(2)))
    assert np.allclose(pairs.eigenvalues, [4, 1])
    assert np.allclose(np.abs(pairs.eigenvectors), np.eye(2))


def test_weighted_diagonal_case():
    # H v = lambda Gamma v with Gamma = diag(1, 4): lambda = (4, 1/4), v2 = e2 / 2
    pairs = generalized_eig(np.diag([4.0, 1.0]), SpdMatrix(np.diag([1.0, 4.0])))
    assert np.allclose(pairs.eigenvalues, [4.0, 0.25])
    assert np.allclose(np.abs(pairs.eigenvectors[:, 0]), [1, 0])
    assert np.allclose(np.abs(pairs.eigenvectors[:, 1]), [0, 0.5])
    proj = projector_from_pairs(pairs, 1)
    assert np.allclose(proj.matrix, [[1, 0], [0, 0]])


def test_asymmetric_H_rejected():
    with pytest.raises(ValidationError):
        generalized_eig(np.array([[1.0, 1.0], [0.0, 1.0]]), SpdMatrix(np.eye(2)))


def test_eig_invariants(rng):
    d = 7
    b = rng.standard_normal((3, d))
    H = b.T @ b
    gam = SpdMatrix(random_spd(rng, d))
    pairs = generalized_eig(H, gam)
    lam, V = pairs.eigenvalues, pairs.eigenvectors
    assert np.all(np.diff(lam) <= 0) and np.all(lam >= 0)
    assert np.allclose(V.T @ gam.matrix @ V, np.eye(d), atol=1e-8)
    res = H @ V - gam.matrix @ V * lam
    assert np.max(np.linalg.norm(res, axis=0)) <= 1e-8 * (lam[0] + 1)
    assert np.isclose(lam.sum(), np.trace(np.linalg.solve(gam.matrix, H)), atol=1e-8)
    # clamped: rank 3
    assert np.all(lam[3:] == 0)


def test_standard_case_agrees_with_eigh(rng):
    b = rng.standard_normal((5, 5))
    H = b @ b.T
    pairs = generalized_eig(H, SpdMatrix(np.eye(5)))
    assert np.allclose(pairs.eigenvalues, np.linalg.eigvalsh(H)[::-1], atol=1e-8)


def test_projector_full_rank_and_range(rng):
    pairs = generalized_eig(np.diag([4.0, 1.0]), SpdMatrix(np.eye(2)))
    assert np.allclose(projector_from_pairs(pairs, 1).matrix, np.diag([1.0, 0.0]))
    assert np.allclose(projector_from_pairs(pairs, 2).matrix, np.eye(2))
    for r in (0, 3):
        with pytest.raises(ValidationError):
            projector_from_pairs(pairs, r)


def test_coordinate_projector_examples():
    # 1-based {2} in d=3 is index 1 here
    assert np.allclose(coordinate_projector([1], 3).matrix, np.diag([0.0, 1.0, 0.0]))
    assert np.allclose(coordinate_projector(range(4), 4).matrix, np.eye(4))
    xr, xp = coordinate_projector([0, 2], 4).split(np.array([1.0, 2.0, 3.0, 4.0]))
    assert np.array_equal(xr, [1, 0, 3, 0]) and np.array_equal(xp, [0, 2, 0, 4])
    for bad in ([0, 0], [4], [-1], []):
        with pytest.raises(ValidationError):
            coordinate_projector(bad, 4)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.data())
def test_projector_properties(d, data):
    seed = data.draw(st.integers(0, 2**31))
    r = data.draw(st.integers(1, d))
    rng = np.random.default_rng(seed)
    b = rng.standard_normal((d, d))
    gam = SpdMatrix(random_spd(rng, d))
    proj = projector_from_pairs(generalized_eig(b @ b.T, gam), r)
    P = proj.matrix
    assert np.max(np.abs(P @ P - P)) <= 1e-10 * max(1.0, np.max(np.abs(P)))
    x = rng.standard_normal(d)
    xr, xp = proj.split(x)
    assert np.allclose(xr + xp, x, atol=1e-10)
    assert np.allclose(P @ xr, xr, atol=1e-9)
    assert np.allclose(P @ xp, 0, atol=1e-9)
    # Gamma-orthogonal split
    assert abs(xr @ gam.matrix @ xp) <= 1e-8 * (1 + np.linalg.norm(x) ** 2) * np.max(gam.matrix)
