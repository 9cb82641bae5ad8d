import re

import numpy as np
import pytest

from envavg.finite import (FiniteModel, adjoint, ball_positivity_margin, check_gap_equivalence,
                           counterexample_3pt, doubly_stochastic_residual, is_ball_positive,
                           is_conservative, is_symmetric, random_finite_model, sinkhorn,
                           spectral_gap_finite)


def test_validation():
    with pytest.raises(ValueError):
        FiniteModel([1, 1], [[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ValueError):
        FiniteModel([1, -1], np.eye(2))
    with pytest.raises(ValueError):
        FiniteModel([1, 1], [[1.1, -0.1], [0, 1]])


def test_identity_has_every_property():
    fm = FiniteModel([1.0, 2.0, 3.0], np.eye(3))
    assert is_conservative(fm) and is_symmetric(fm)
    ok, margin, _ = is_ball_positive(fm)
    assert ok and margin == pytest.approx(0.0, abs=1e-14)


def test_non_conservative_two_point():
    fm = FiniteModel([1, 1], [[1, 0], [0.5, 0.5]])
    assert not is_conservative(fm)
    assert not is_ball_positive(fm)[0]


def test_counterexample_matrix_entries():
    fm = counterexample_3pt(0.5, 1 / 3)
    expect = np.array([[11 / 6, 1 / 3, 5 / 6], [1 / 2, 2, 1 / 2], [2 / 3, 2 / 3, 5 / 3]]) / 3
    np.testing.assert_allclose(fm.A, expect, atol=1e-15)
    np.testing.assert_array_equal(fm.kappa, np.ones(3))


def test_counterexample_properties():
    fm = counterexample_3pt(0.5, 1 / 3)
    assert doubly_stochastic_residual(fm) < 1e-12
    assert is_conservative(fm)
    assert not is_symmetric(fm)
    assert is_ball_positive(fm)[0]
    # condition (l1+l2-2 l1 l2)^2 <= 16 (l2-l2^2)(l1-l1^2): 1/4 <= 8/9
    l1, l2 = 0.5, 1 / 3
    assert (l1 + l2 - 2 * l1 * l2) ** 2 == pytest.approx(0.25)
    assert 16 * (l2 - l2 ** 2) * (l1 - l1 ** 2) == pytest.approx(8 / 9)


def test_counterexample_on_eigenvectors():
    fm = counterexample_3pt(0.5, 1 / 3)
    e1, e2 = np.array([1, -1, 0.0]), np.array([1, 0, -1.0])
    np.testing.assert_allclose(fm.A @ e1, 0.5 * e1, atol=1e-15)
    np.testing.assert_allclose(fm.A @ e2, e2 / 3, atol=1e-15)


@pytest.mark.parametrize("l1,l2,msg", [(0.5, 0.5, "≠"), (0.9, 0.1, "1+λ₂−2λ₁")])
def test_counterexample_rejects(l1, l2, msg):
    with pytest.raises(ValueError, match=re.escape(msg)):
        counterexample_3pt(l1, l2)


def test_two_point_ball_positive_implies_symmetric():
    grid = np.linspace(0, 1, 21)
    for k2 in (0.5, 1.0, 2.0):
        for a in grid:
            for b in grid:
                fm = FiniteModel([1.0, k2], [[1 - a, a], [b, 1 - b]])
                if ball_positivity_margin(fm) >= -1e-12:
                    assert is_symmetric(fm)


def test_gap_of_trivial_models():
    n = 4
    ident = FiniteModel(np.ones(n), np.eye(n))
    glob = FiniteModel(np.full(n, 0.25), np.full((n, n), 0.25))
    rho = np.full(n, 0.25)
    assert spectral_gap_finite(ident, rho=rho) == pytest.approx(0.0, abs=1e-12)
    assert spectral_gap_finite(glob, rho=rho) == pytest.approx(1.0)


def test_gap_equivalence(rng):
    fm = random_finite_model(rng, 6, "symmetric")
    rho = fm.kappa / fm.kappa.sum()
    ratio = fm.kappa / rho
    ok, rep = check_gap_equivalence(fm, rho, ratio.min(), ratio.max())
    assert ok


@pytest.mark.parametrize("family", ["symmetric", "conservative", "ball_positive"])
def test_random_families_have_their_property(family, rng):
    for _ in range(50):
        fm = random_finite_model(rng, int(rng.integers(2, 8)), family)
        assert is_conservative(fm)
        if family == "symmetric":
            assert is_symmetric(fm)
        if family == "ball_positive":
            assert is_ball_positive(fm)[0]


def test_lattice_implications(rng):
    fams = ["generic", "sparse", "symmetric", "conservative", "ball_positive"]
    for i in range(1000):
        fm = random_finite_model(rng, int(rng.integers(2, 7)), fams[i % 5])
        if is_symmetric(fm) or is_ball_positive(fm)[0]:
            assert is_conservative(fm)


def test_adjoint_of_symmetric_is_itself(rng):
    fm = random_finite_model(rng, 5, "symmetric")
    np.testing.assert_allclose(adjoint(fm), fm.A, atol=1e-13)


def test_sinkhorn_marginals(rng):
    r = rng.uniform(1, 2, 4)
    M = sinkhorn(rng.uniform(0.1, 1, (4, 4)), r, r)
    np.testing.assert_allclose(M.sum(axis=1), r, atol=1e-12)
    np.testing.assert_allclose(M.sum(axis=0), r, atol=1e-12)


def test_json_roundtrip():
    fm = counterexample_3pt(0.5, 1 / 3)
    back = FiniteModel.from_json(fm.to_json())
    np.testing.assert_array_equal(back.A, fm.A)
