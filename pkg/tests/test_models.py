import numpy as np
import pytest

from envavg.measures import Measure, bochner, bump, cs_power, gaussian, line, torus
from envavg.models import (Model, Partition, VacuumError, average, beta_model, builtin_models,
                           check_ball_positive, check_conservative, check_galilean, check_jensen,
                           check_kmt_inequality, check_max_principle, cucker_smale, global_model,
                           identity_model, kernel_matrix, model_from_config, model_to_config,
                           motsch_tadmor, overmollified, search_ball_positivity_violation,
                           segregation, strength, topological)

T1 = torus()
BUILTINS = builtin_models(T1)
ATOMIC = [k for k in BUILTINS if k != "rough_partition"]


@pytest.mark.parametrize("name", list(BUILTINS))
def test_constants_are_preserved(name, rng):
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 32)
    np.testing.assert_allclose(average(BUILTINS[name], rho, np.full(rho.n, 3.0)), 3.0, atol=1e-10)


@pytest.mark.parametrize("name", ATOMIC)
def test_maximum_principle(name, atoms, rng):
    assert check_max_principle(BUILTINS[name], atoms, rng.normal(size=atoms.n))


@pytest.mark.parametrize("name", list(BUILTINS))
def test_kernel_matrix_reproduces_average(name, rng):
    rho = Measure.grid(lambda x: 1 + 0.5 * np.sin(2 * np.pi * x), T1, 32)
    model = BUILTINS[name]
    km = kernel_matrix(model, rho)
    u = rng.normal(size=rho.n)
    assert km.row_residual(rho.weights) < 1e-9
    np.testing.assert_allclose(km.phi @ (rho.weights * u), km.s * average(model, rho, u), atol=1e-9)
    np.testing.assert_allclose(km.s, strength(model, rho), atol=1e-12)


def test_global_average_of_two_atoms():
    rho = Measure.atomic([0.1, 0.6], [0.3, 0.7], T1)
    np.testing.assert_allclose(average(global_model(), rho, [2.0, -1.0]), 0.3 * 2 - 0.7)
    np.testing.assert_array_equal(strength(global_model(), rho), 1.0)


def test_cs_strength_single_atom():
    rho = Measure.atomic([0.4], domain=T1)
    k = cs_power(1.0)
    assert strength(cucker_smale(k), rho)[0] == pytest.approx(k(0.0))


def test_beta_strength_two_atoms():
    k = bump(0.1, 0.3)
    d = 0.2
    rho = Measure.atomic([0.0, d], [0.5, 0.5], line())
    s = strength(beta_model(k, 0.5), rho)
    np.testing.assert_allclose(s, np.sqrt(0.5 * k(0.0) + 0.5 * k(d)))


def test_cs_kernel_symmetric_and_mt_not(atoms):
    k = bump(0.2, 0.4)
    cs = kernel_matrix(cucker_smale(k), atoms).phi
    mt = kernel_matrix(motsch_tadmor(k), atoms).phi
    np.testing.assert_allclose(cs, cs.T)
    np.testing.assert_allclose(cs, k(atoms.pairwise()))
    assert np.max(np.abs(mt - mt.T)) > 1e-3


def test_segregation_kernel_symmetric_on_five_atoms(rng):
    rho = Measure.atomic(rng.uniform(0, 1, 5), domain=T1)
    phi = kernel_matrix(BUILTINS["segregation"], rho).phi
    np.testing.assert_allclose(phi, phi.T, atol=1e-14)


def test_segregation_hand_evaluation():
    # two bumps on the torus; rho has three atoms
    part = Partition(np.array([[0.25], [0.75]]), 0.375, T1)
    model = segregation(part)
    x = np.array([0.2, 0.3, 0.45])
    m = np.array([0.2, 0.5, 0.3])
    u = np.array([1.0, -2.0, 4.0])
    rho = Measure.atomic(x, m, T1)
    G = part(x[:, None])
    expect = sum(G[:, l] * (m * u * G[:, l]).sum() / (m * G[:, l]).sum() for l in range(2))
    np.testing.assert_allclose(average(model, rho, u), expect)


def test_conservative_flags(atoms):
    assert check_conservative(cucker_smale(bump(0.2, 0.4)), atoms)[0]
    assert check_conservative(global_model(), atoms)[0]
    rho = Measure.atomic([0.0, 0.1, 0.35], [0.2, 0.3, 0.5], line())
    ok, res = check_conservative(motsch_tadmor(bump(0.2, 0.4)), rho)
    assert not ok and res > 1e-6


def test_ball_positive_models(atoms):
    assert check_ball_positive(overmollified(bump(0.15, 0.25), domain=T1), atoms)[0]
    assert check_ball_positive(Model("cucker_smale", bochner(gaussian(0.05))), atoms)[0]


def test_topological_search_finds_violation(tmp_path):
    model = topological(gaussian(0.3), alpha=4.0, eps=0.01)

    def sampler(r):
        n = int(r.integers(3, 7))
        return Measure.atomic(r.uniform(size=n), r.dirichlet(np.full(n, 0.5)), T1)

    out = tmp_path / "violation.json"
    rec = search_ball_positivity_violation(model, sampler, trials=300, seed=0, artifact=out)
    assert rec is not None and rec["margin"] < -1e-10
    assert out.exists()


@pytest.mark.parametrize("name", [k for k, m in BUILTINS.items() if m.flags["galilean"]])
def test_galilean_invariance(name, rng):
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 32)
    assert check_galilean(BUILTINS[name], rho, rng.normal(size=rho.n), 0.137) < 1e-12


def test_jensen():
    rho = Measure.atomic(np.linspace(0, 0.7, 8), domain=T1)
    u = np.linspace(-1, 2, 8)
    ok, margin = check_jensen(global_model(), rho, u)
    assert ok and margin > 0
    assert check_jensen(motsch_tadmor(bump(0.2, 0.4)), rho, u, "cosh")[0]
    ok, margin = check_jensen(global_model(), rho, np.full(8, 2.0), "abs")
    assert margin == pytest.approx(0.0, abs=1e-14)


def test_kmt_inequality_trivial_cases(rng):
    phi = bump(0.1, 0.2)
    rho = Measure.grid(lambda x: 1 + 0.5 * np.cos(2 * np.pi * x), T1, 128)
    assert check_kmt_inequality(phi, 1.0, rho) == 1.0
    assert check_kmt_inequality(phi, 0.0, Measure.uniform(T1, 128)) == pytest.approx(1.0)


def test_mt_vacuum_evaluation_errors():
    rho = Measure.atomic([0.0], domain=line())
    with pytest.raises(VacuumError):
        strength(motsch_tadmor(bump(0.1, 0.2)), rho, at=np.array([5.0]))


def test_config_roundtrip():
    for name, model in BUILTINS.items():
        if name == "overmollified":
            continue
        cfg = model_to_config(model)
        back = model_from_config({k: v for k, v in cfg.items() if k != "flags"}, T1)
        assert back.kind == model.kind and back.flags == model.flags


def test_bad_config_names_field():
    with pytest.raises(ValueError, match="model.kernel"):
        model_from_config({"kind": "cucker_smale", "kernel": {"profile": "bump", "r0": -1}})


def test_describe_mentions_locality():
    text = BUILTINS["motsch_tadmor"].describe()
    assert "phi(x-y) / rho_phi(x)" in text and "locality radius r0 = 0.2" in text
    assert "phi(x-y)" in BUILTINS["cucker_smale"].describe()


def test_identity_average_is_identity(atoms, rng):
    u = rng.normal(size=atoms.n)
    np.testing.assert_allclose(average(identity_model(), atoms, u), u)
