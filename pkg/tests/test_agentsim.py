import numpy as np
import pytest

from envavg.agentsim import (SwarmState, chain_bound, chain_connected, diverging_pair,
                             kinetic_energy, meanfield_experiment, phase_space_w1, random_swarm,
                             read_frames, reduced_chain_length, run, spawn_seeds, step_deterministic,
                             step_stochastic)
from envavg.measures import Measure, bump, cs_power, line, torus
from envavg.models import cucker_smale, global_model, motsch_tadmor


def test_two_agents_with_constant_kernel_relax_exponentially():
    # phi = 1: v1 - v2 obeys w' = -w since s = 1, so w(t) = w0 e^{-t}
    st = SwarmState.create([0.0, 1.0], [1.0, -1.0])
    model = cucker_smale(cs_power(0.0))
    for _ in range(100):
        st = step_deterministic(model, st, 0.01)
    assert st.v[0, 0] - st.v[1, 0] == pytest.approx(2 * np.exp(-1.0), rel=1e-9)
    assert st.mean_velocity[0] == pytest.approx(0.0, abs=1e-15)


def test_rk4_is_fourth_order():
    model = cucker_smale(cs_power(1.0))
    st0 = random_swarm(6, seed=3)

    def final(dt):
        st = st0
        for _ in range(int(round(1 / dt))):
            st = step_deterministic(model, st, dt)
        return st.v

    ref = final(1 / 400)
    e1 = np.abs(final(1 / 20) - ref).max()
    e2 = np.abs(final(1 / 40) - ref).max()
    assert 12 < e1 / e2 < 20


def test_momentum_and_energy_for_symmetric_model():
    d = run(cucker_smale(bump(0.3, 0.5)), random_swarm(30, seed=4, domain=torus()), 2.0,
            dt=1e-2, record_every=10)
    assert np.max(np.abs(np.array(d.ubar) - d.ubar[0])) < 1e-12
    assert d.max_energy_increase <= 1e-12
    assert d.max_overshoot <= 1e-12


def test_global_model_aligns_in_one_shot_rate():
    d = run(global_model(), random_swarm(10, seed=0), 1.0, dt=1e-2, record_every=100)
    assert d.A[-1] == pytest.approx(d.A[0] * np.exp(-1.0), rel=1e-8)


def test_mt_does_not_preserve_momentum():
    d = run(motsch_tadmor(bump(0.3, 0.5)), random_swarm(20, seed=5, spread=2.0), 2.0, dt=1e-2,
            record_every=200)
    assert abs(d.ubar[-1][0] - d.ubar[0][0]) > 1e-6


def test_diverging_pair_does_not_align():
    d = run(cucker_smale(cs_power(3.0)), diverging_pair(), 10.0, dt=1e-2, record_every=1000)
    assert d.A[-1] >= 0.9 * d.A[0]


def test_stochastic_step_reproducible_and_noise_free_at_zero_sigma():
    model = cucker_smale(cs_power(1.0))
    st = random_swarm(10, seed=1)
    a = step_stochastic(model, st, 0.01, 0.2, np.random.default_rng(7))
    b = step_stochastic(model, st, 0.01, 0.2, np.random.default_rng(7))
    np.testing.assert_array_equal(a.v, b.v)
    c = step_stochastic(model, st, 0.01, 0.0, np.random.default_rng(7))
    d = step_stochastic(model, st, 0.01, 0.0, np.random.default_rng(8))
    np.testing.assert_array_equal(c.v, d.v)


def test_frame_log_roundtrip(tmp_path):
    path = tmp_path / "frames.bin"
    st = random_swarm(5, seed=2)
    run(global_model(), st, 0.1, dt=0.01, record_every=5, frame_log=path)
    dt, t, x, v = read_frames(path)
    assert dt == 0.01 and len(t) == 3 and x.shape == (3, 5, 1)
    np.testing.assert_array_equal(x[0, :, 0], st.x[:, 0])


def test_chain_connectivity_and_bound(rng):
    pts = np.sort(rng.uniform(0, 1, 40))
    rho = Measure.atomic(pts, domain=line())
    r = 1.01 * max(np.max(np.diff(pts)), 0.02)
    assert chain_connected(rho, r)
    assert not chain_connected(Measure.atomic([0.0, 1.0], domain=line()), 0.1)
    assert reduced_chain_length(rho, r) <= chain_bound(rho, r)


def test_phase_space_w1_zero_for_identical():
    st = random_swarm(8, seed=0)
    assert phase_space_w1(st, st) == pytest.approx(0.0, abs=1e-12)


def test_meanfield_reference_count_gives_zero_error():
    samp = lambda r, n: (r.uniform(-1, 1, n), r.normal(size=n))
    res = meanfield_experiment(cucker_smale(cs_power(1.0)), samp, [10, 40], 0.2, dt=0.05,
                               reference=40)
    assert res.error[-1] == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError, match="reference unavailable"):
        meanfield_experiment(global_model(), samp, [10], 0.1, reference=None)


def test_spawn_seeds_are_independent_and_reproducible():
    a = [s.generate_state(1)[0] for s in spawn_seeds(3, 4)]
    b = [s.generate_state(1)[0] for s in spawn_seeds(3, 4)]
    assert a == b and len(set(a)) == 4


def test_kinetic_energy():
    st = SwarmState.create([0.0, 1.0], [1.0, 3.0])
    assert kinetic_energy(st) == pytest.approx(0.5 * (0.5 * 1 + 0.5 * 9))


@pytest.mark.slow
def test_two_agent_gap_matches_ou_variance():
    # w = (v1 - v2) / sqrt(2) solves dw = -w dt + sqrt(2 sigma) dB, Var w(t) = sigma (1 - e^{-2t})
    sigma, dt, paths = 0.3, 0.01, 10_000
    model = global_model()
    rng = np.random.default_rng(11)
    w = np.empty(paths)
    for k in range(paths):
        st = SwarmState.create([0.0, 0.5], [0.0, 0.0])
        for _ in range(100):
            st = step_stochastic(model, st, dt, sigma, rng)
        w[k] = (st.v[0, 0] - st.v[1, 0]) / np.sqrt(2)
    assert w.var() == pytest.approx(sigma * (1 - np.exp(-2.0)), rel=0.05)
