import numpy as np
import pytest

from envavg.measures import Measure, bochner, bump, gaussian, line, random_grid_density, torus
from envavg.models import (average, cucker_smale, global_model, identity_model, overmollified,
                           segregation, Partition)
from envavg.spectral import (cs_flatness_gap, energies, low_energy_bounds, mt_gap_condition,
                             nested_favre_average, overmollified_alignment_identity,
                             spectral_gap)

T1 = torus()


def test_energies_of_constant_field():
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 64)
    model = overmollified(bump(0.1, 0.2), domain=T1)
    from envavg.models import kappa
    E = energies(model, rho, np.full(rho.n, 2.0))
    np.testing.assert_allclose(E, 4.0 * kappa(model, rho).sum())


def test_energies_global_zero_momentum(rng):
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 64)
    u = rng.normal(size=rho.n)
    u -= rho.integrate(u)
    E0, E1, E2 = energies(global_model(), rho, u)
    assert E1 == pytest.approx(0.0, abs=1e-14) and E2 == pytest.approx(0.0, abs=1e-14)
    assert E0 == pytest.approx(rho.weights @ u ** 2)


@pytest.mark.parametrize("model", [
    overmollified(bump(0.1, 0.2), quad_nodes=256, domain=T1),
    cucker_smale(bochner(gaussian(0.05))),
    segregation(Partition.uniform(4, T1)),
])
def test_energy_chain_for_ball_positive_models(model, rng):
    for _ in range(20):
        rho = random_grid_density(rng, T1, 64, floor=0.05)
        E0, E1, E2 = energies(model, rho, rng.normal(size=rho.n))
        assert E0 >= E1 - 1e-12 >= E2 - 2e-12
        assert E0 - E1 >= E1 - E2 - 1e-12


def test_gap_of_identity_and_global():
    rho = Measure.uniform(T1, 32)
    assert spectral_gap(identity_model(), rho) == pytest.approx(0.0, abs=1e-12)
    assert spectral_gap(global_model(), rho) == pytest.approx(1.0)


def test_overmollified_alignment_identity(rng):
    model = overmollified(bump(0.1, 0.2), quad_nodes=256, domain=T1)
    for _ in range(5):
        rho = random_grid_density(rng, T1, 64, floor=0.1)
        a, q = overmollified_alignment_identity(model, rho, rng.normal(size=64))
        assert a == pytest.approx(q, abs=1e-8)
        assert a >= 0


def test_nested_favre_equals_cs_average(rng):
    psi = gaussian(0.2)
    for _ in range(5):
        n = 15
        w = rng.uniform(0.2, 1, n)
        rho = Measure.atomic(rng.uniform(-1, 1, n), w / w.sum(), line())
        u = rng.normal(size=n)
        np.testing.assert_allclose(nested_favre_average(psi, rho, u),
                                   average(cucker_smale(bochner(psi)), rho, u), atol=1e-9)


def test_low_energy_bounds_hold_on_uniform_and_random(rng, tmp_path):
    model = overmollified(bump(0.1, 0.15), domain=T1)
    from envavg.spectral import calibrate_constant
    U = Measure.uniform(T1, 64)
    c = calibrate_constant(model, U)
    rep = low_energy_bounds(model, U, c)
    assert rep.ok and rep.eps_measured == pytest.approx(rep.eps_bound)
    for _ in range(5):
        assert low_energy_bounds(model, random_grid_density(rng, T1, 64), c).ok


def test_low_energy_bounds_reject_identity():
    with pytest.raises(ValueError, match="inapplicable"):
        low_energy_bounds(identity_model(), Measure.uniform(T1, 16), 1.0)


def test_flatness_gap():
    phi = bump(0.05, 0.1).normalized(T1)
    U = Measure.uniform(T1, 128)
    from envavg.spectral import fourier_sup
    c0 = fourier_sup(phi, U)
    assert cs_flatness_gap(U, phi) == pytest.approx(1 - c0)
    gentle = Measure.grid(lambda x: 1 + 0.1 * np.cos(2 * np.pi * x), T1, 128)
    eps = cs_flatness_gap(gentle, phi)
    assert isinstance(eps, float) and eps > 0
    assert eps <= spectral_gap(cucker_smale(phi), gentle) + 1e-12
    peaked = Measure.grid(lambda x: 0.01 + np.exp(-0.5 * ((x - 0.5) / 0.002) ** 2), T1, 1024)
    assert cs_flatness_gap(peaked, phi) == "inapplicable"


def test_mt_gap_condition():
    phi = bump(0.1, 0.2)
    holds, pred, lam = mt_gap_condition(Measure.uniform(T1, 64), phi)
    assert holds and lam > 0 and lam >= pred
    holds, _, _ = mt_gap_condition(Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 64), phi)
    assert not holds
