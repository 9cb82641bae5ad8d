import math

import numpy as np
import pytest

from envavg.kinetic import (CFLError, KineticState, PhaseGrid, bimodal, csiszar_kullback_slack,
                            evolve, fit_rate, fpa_step, maxwellian, max_dt, monokinetic_w2,
                            relative_entropy, velocity_step)
from envavg.measures import bump
from envavg.models import cucker_smale


@pytest.fixture
def grid():
    return PhaseGrid(nx=32, nv=64, L=1.0, V=6.0)


def test_maxwellian_is_normalized_and_has_zero_entropy(grid):
    mu = maxwellian(1.0, 0.3, grid)
    assert mu.mass == pytest.approx(1.0, abs=1e-13)
    assert mu.ubar == pytest.approx(0.3, abs=1e-6)
    assert relative_entropy(mu, mu) == pytest.approx(0.0, abs=1e-15)


def test_maxwellian_is_stationary(grid):
    model = cucker_smale(bump(0.2, 0.3))
    mu = maxwellian(1.0, 0.0, grid)
    st = mu
    for _ in range(20):
        st = fpa_step(model, st, 0.9 * max_dt(grid))
    # the discrete equilibrium of the Scharfetter-Gummel flux is the sampled Maxwellian
    # up to the tail cut at +-V
    assert np.abs(st.f - mu.f).max() < 1e-6 * mu.f.max()


def test_velocity_step_preserves_mass_mean_and_positivity(grid, rng):
    f = rng.uniform(0, 1, (grid.nx, grid.nv)) * np.exp(-grid.v ** 2 / 4)
    s = rng.uniform(0.5, 2.0, grid.nx)
    w = np.zeros(grid.nx)
    g = velocity_step(f, grid, s, w, 1.0, 0.05)
    assert g.min() >= 0
    np.testing.assert_allclose(g.sum(axis=1), f.sum(axis=1), rtol=1e-12)
    g0 = velocity_step(f, grid, s, w, 0.0, 0.05)
    np.testing.assert_allclose(g0.sum(axis=1), f.sum(axis=1), rtol=1e-12)
    # sigma = 0 relaxes column means toward w = 0 by exp(-s dt)
    m0 = (f @ grid.v) / f.sum(axis=1)
    m1 = (g0 @ grid.v) / g0.sum(axis=1)
    np.testing.assert_allclose(m1, m0 * np.exp(-s * 0.05), atol=1e-12)


def test_fpa_conserves_mass_and_momentum_and_decays_entropy():
    grid = PhaseGrid.for_sigma(1.0, umax=1.5, nx=32, nv=96)
    f0 = bimodal(grid, 1.0)
    model = cucker_smale(bump(0.2, 0.3))
    fin, diag, _ = evolve(lambda s, h: fpa_step(model, s, h), f0, 1.0, record_every=5)
    assert max(abs(m - 1.0) for m in diag.mass) < 1e-12
    assert max(abs(u - diag.ubar[0]) for u in diag.ubar) < 1e-10
    assert fin.f.min() >= 0
    assert diag.H[-1] < diag.H[0]
    assert csiszar_kullback_slack(fin) >= -1e-12


def test_cfl_violation_raises_with_suggestion(grid):
    mu = maxwellian(1.0, 0.0, grid)
    with pytest.raises(CFLError) as info:
        fpa_step(cucker_smale(bump(0.2, 0.3)), mu, 2 * max_dt(grid))
    assert info.value.suggested == pytest.approx(max_dt(grid))


def test_fit_rate_recovers_exact_exponential():
    t = np.linspace(0, 5, 51)
    rate, r2 = fit_rate(t, 3.0 * np.exp(-1.7 * t))
    assert rate == pytest.approx(-1.7, rel=1e-10)
    assert r2 == pytest.approx(1.0)
    assert math.isnan(fit_rate(t, np.zeros_like(t))[0])


def test_state_validation(grid):
    with pytest.raises(ValueError, match="shape"):
        KineticState(np.ones((3, 3)), grid, 1.0)
    with pytest.raises(ValueError, match="sigma"):
        KineticState(np.ones((grid.nx, grid.nv)), grid, -1.0)
    with pytest.raises(ValueError):
        maxwellian(0.0, 0.0, grid)


def test_monokinetic_distance_of_delta_profile_is_zero_offset(grid):
    # a state concentrated in one velocity cell at each x, compared with that cell velocity
    f = np.zeros((grid.nx, grid.nv))
    f[:, 40] = 1.0
    st = KineticState(f / (f.sum() * grid.cell), grid, 0.0)
    u = np.full(grid.nx, grid.v[40])
    assert monokinetic_w2(st, st.rho, u) == pytest.approx(0.0, abs=1e-12)
    assert monokinetic_w2(st, st.rho, u + 0.5) == pytest.approx(0.5, rel=1e-12)
