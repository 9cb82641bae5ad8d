import math

import numpy as np
import pytest

from envavg.measures import (Measure, ball_thickness, bochner, bump, chi, convolve, cs_power,
                             dyadic_lipschitz_field, gaussian, line, measure_from_json,
                             measure_to_json, mollified_velocity, random_grid_density,
                             smooth_cutoff, tabulated, torus, transport_cost, wasserstein1,
                             wasserstein2)


def test_smooth_cutoff_limits_and_symmetry():
    t = np.linspace(-0.5, 1.5, 201)
    s = smooth_cutoff(t)
    assert np.all(s[t <= 0] == 1) and np.all(s[t >= 1] == 0)
    inner = (t > 0) & (t < 1)
    np.testing.assert_allclose(s[inner] + smooth_cutoff(1 - t[inner]), 1.0, atol=1e-14)
    assert np.all(np.diff(s) <= 0)
    assert smooth_cutoff(0.5) == pytest.approx(0.5)


def test_chi_is_one_inside_and_zero_outside():
    assert chi(0.0) == 1.0
    assert chi(10.0) == 0.0


def test_kernel_profiles():
    assert cs_power(1.0)(0.0) == 1.0
    assert cs_power(2.0)(1.0) == pytest.approx(0.5)
    b = bump(0.1, 0.2)
    assert b(0.05) == 1.0 and b(0.25) == 0.0
    assert b.locality == 0.1 and b.support == 0.2
    assert bump(0.1).params["R0"] == pytest.approx(0.15)
    t = tabulated([0, 1, 2], [2, 1, 0])
    assert t(0.5) == pytest.approx(1.5) and t(3.0) == 0.0


@pytest.mark.parametrize("bad", [dict(r0=-1), dict(r0=0.2, R0=0.1)])
def test_bump_rejects_bad_parameters(bad):
    with pytest.raises(ValueError):
        bump(**bad)


def test_gaussian_bochner_closed_form_matches_quadrature():
    psi = gaussian(0.2)
    phi = bochner(psi)
    y = np.linspace(-3, 3, 20001)
    for r in (0.0, 0.1, 0.37):
        direct = np.trapezoid(psi(y) * psi(r - y), y)
        assert phi(r) == pytest.approx(direct, rel=1e-10)


def test_normalized_kernel_has_unit_integral():
    k = bump(0.1, 0.2).normalized(torus())
    x = (np.arange(20000) + 0.5) / 20000 - 0.5
    assert np.sum(k(x)) / 20000 == pytest.approx(1.0, rel=1e-8)


def test_measure_validation():
    with pytest.raises(ValueError):
        Measure.atomic([0.1, 0.2], [0.5, 0.6])
    with pytest.raises(ValueError):
        Measure.atomic([0.1, 0.2], [-0.5, 1.5])
    rho = Measure.atomic([1.25], domain=torus())
    assert rho.x[0] == pytest.approx(0.25)


def test_grid_measure_density_and_json_roundtrip():
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), torus(), 64)
    assert rho.weights.sum() == pytest.approx(1.0)
    assert rho.density.mean() == pytest.approx(1.0)
    back = measure_from_json(measure_to_json(rho))
    np.testing.assert_array_equal(back.weights, rho.weights)
    assert back.cell == rho.cell


def test_convolve_single_atom():
    rho = Measure.atomic([0.3], domain=torus())
    k = bump(0.1, 0.2)
    np.testing.assert_allclose(convolve(rho, k, np.array([0.3, 0.45, 0.8])), k([0.0, 0.15, 0.5]))


def test_ball_thickness_uniform_is_ball_volume():
    # chi_r integrates to 1.5 r in 1D (1 on half the ball, mean 1/2 on the rest)
    rho = Measure.uniform(torus(), 512)
    assert ball_thickness(rho, 0.05) == pytest.approx(1.5 * 0.05, rel=1e-4)


def test_wasserstein_shifted_dirac():
    a = Measure.atomic([0.0], domain=line())
    b = Measure.atomic([0.3], domain=line())
    assert wasserstein1(a, b) == pytest.approx(0.3)
    assert wasserstein2(a, b) == pytest.approx(0.3)


def test_wasserstein_circle_uses_minimal_image():
    a = Measure.atomic([0.05], domain=torus())
    b = Measure.atomic([0.95], domain=torus())
    assert wasserstein1(a, b) == pytest.approx(0.1)


def test_transport_cost_matches_permutation_optimum(rng):
    D = rng.uniform(size=(4, 4))
    w = np.full(4, 0.25)
    from itertools import permutations
    best = min(sum(D[i, p[i]] for i in range(4)) for p in permutations(range(4))) / 4
    assert transport_cost(D, w, w) == pytest.approx(best)


def test_mollified_velocity_preserves_constants():
    rho = Measure.grid(lambda x: 1 + 0.3 * np.sin(2 * np.pi * x), torus(), 128)
    np.testing.assert_allclose(mollified_velocity(np.full(rho.n, 2.5), rho, 0.1), 2.5, atol=1e-12)


def test_mollification_error_roughly_halves(rng):
    n, L = 1024, 4.0
    rho = Measure(torus(L), (np.arange(n) + 0.5) * L / n, np.full(n, 1 / n), cell=L / n)
    u = dyadic_lipschitz_field(rng, n, L)
    e = [math.sqrt(rho.weights @ (mollified_velocity(u, rho, d) - u) ** 2) for d in (0.2, 0.1)]
    assert 1.5 < e[0] / e[1] < 2.6


def test_dyadic_field_is_lipschitz_and_mean_zero(rng):
    u = dyadic_lipschitz_field(rng, 256, 1.0)
    assert abs(u.mean()) < 1e-14
    assert np.max(np.abs(np.diff(u))) * 256 <= 8 + 1e-9


def test_random_grid_density_positive(rng):
    rho = random_grid_density(rng, torus(), 64, floor=0.1, spikes=2)
    assert np.all(rho.density > 0)
