import numpy as np
import pytest

from envavg.hydro import (BlowUpError, HydroState, e_quantity, eas_step, run_hydro, stable_dt,
                          translate)
from envavg.measures import bump, cs_power
from envavg.models import cucker_smale, global_model


def smooth(n=128):
    return HydroState.from_functions(lambda x: 1 + 0.3 * np.cos(2 * np.pi * x),
                                     lambda x: 0.2 * np.sin(2 * np.pi * x), n=n)


def test_constant_state_is_stationary():
    st = HydroState.from_functions(lambda x: 1.0, lambda x: 0.7, n=64)
    model = cucker_smale(bump(0.2, 0.3))
    out = run_hydro(model, st, 0.5)
    np.testing.assert_allclose(out.states[-1].rho, 1.0, atol=1e-13)
    np.testing.assert_allclose(out.states[-1].u, 0.7, atol=1e-13)


def test_mass_and_momentum_conserved():
    st = smooth()
    out = run_hydro(cucker_smale(bump(0.2, 0.3)), st, 0.5)
    fin = out.states[-1]
    assert fin.mass == pytest.approx(st.mass, abs=1e-13)
    assert fin.momentum == pytest.approx(st.momentum, abs=1e-12)
    assert fin.energy < st.energy


def test_global_model_damps_velocity_fluctuation():
    st = smooth()
    out = run_hydro(global_model(), st, 1.0)
    fin = out.states[-1]
    ubar = st.momentum / st.mass
    assert np.max(np.abs(fin.u - ubar)) < np.max(np.abs(st.u - ubar))


def test_translate_is_periodic_shift():
    st = smooth(64)
    moved = translate(st, 1.0, 1.0)
    np.testing.assert_allclose(moved.rho, st.rho, atol=1e-12)
    half = translate(st, 0.5, 1.0)
    np.testing.assert_allclose(half.rho, np.roll(st.rho, 32), atol=1e-12)


def test_e_quantity_on_uniform_density_is_strength_plus_gradient():
    st = HydroState.from_functions(lambda x: 1.0, lambda x: np.sin(2 * np.pi * x), n=256)
    model = global_model()
    e = e_quantity(model, st)
    expect = 2 * np.pi * np.cos(2 * np.pi * st.x) + 1.0
    assert np.max(np.abs(e - expect)) < 1e-3


def test_compressive_data_blows_up():
    st = HydroState.from_functions(lambda x: 1.0, lambda x: -2.0 * np.sin(2 * np.pi * x), n=256)
    out = run_hydro(cucker_smale(cs_power(1.0, lam=0.1)), st, 2.0)
    assert out.blowup is not None
    assert isinstance(out.blowup, BlowUpError)
    assert 0 < out.blowup_time < 2.0


def test_stable_dt_and_validation():
    st = smooth()
    assert stable_dt(global_model(), st, 0.4) <= 0.4 * st.dx / np.max(np.abs(st.u))
    with pytest.raises(ValueError):
        HydroState(np.ones(3), np.ones(4))
    with pytest.raises(ValueError, match="non-negative"):
        HydroState(-np.ones(3), np.ones(3))
    eas_step(global_model(), st, 1e-3)
