"""The acceptance battery: ten numbered, self-contained checks at desk scale.

Each ``criterion_k`` returns a :class:`CriterionResult` with the measured
quantities; ``run_suite`` runs a selection and optionally writes a JSON summary.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm, qmc

from . import agentsim, finite, hydro, kinetic, spectral
from .measures import (Measure, ball_thickness, bochner, bump, convolve, cs_power,
                       dyadic_lipschitz_field, gaussian, line, mollified_velocity,
                       random_grid_density, torus)
from .models import (Partition, check_kmt_inequality, cucker_smale, overmollified,
                     segregation)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    metrics: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"[{tag}] criterion {self.number:2d}: {self.title} ({self.seconds:.1f}s)"


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


def _timed(number, title, fn):
    t0 = time.perf_counter()
    passed, metrics = fn()
    return CriterionResult(number, title, bool(passed), _jsonable(metrics), time.perf_counter() - t0)


# ---------------------------------------------------------------------------

def criterion_1() -> CriterionResult:
    def body():
        d = agentsim.run(cucker_smale(cs_power(0.4)), agentsim.random_swarm(50, seed=1), 10.0,
                         dt=1e-2, record_every=10)
        t, A = np.asarray(d.t), np.asarray(d.A)
        sel = t >= 2.0 - 1e-9
        slope, icpt = np.polyfit(t[sel], np.log(A[sel]), 1)
        r2 = np.corrcoef(t[sel], np.log(A[sel]))[0, 1] ** 2
        d3 = agentsim.run(cucker_smale(cs_power(3.0)), agentsim.diverging_pair(), 10.0,
                          dt=1e-2, record_every=100)
        ratio = d3.A[-1] / d3.A[0]
        m = {"slope": slope, "r2": r2, "diverging_ratio": ratio}
        return slope < -0.01 and r2 > 0.95 and ratio >= 0.9, m
    r = _timed(1, "Cucker-Smale flocking dichotomy", body)
    r.passed = r.passed and r.seconds < 30
    return r


def two_point_sweep(steps: int = 41, strengths=(0.5, 1.0, 1.5, 2.0)):
    """All 2-point models on a grid of (a, b, kappa); returns the largest symmetry
    residual among the ball-positive ones and how many were ball-positive."""
    worst, count = 0.0, 0
    grid = np.linspace(0.0, 1.0, steps)
    for k1 in strengths:
        for k2 in strengths:
            for a in grid:
                for b in grid:
                    fm = finite.FiniteModel([k1, k2], [[1 - a, a], [b, 1 - b]])
                    if finite.ball_positivity_margin(fm) >= -1e-12:
                        count += 1
                        worst = max(worst, finite.symmetry_residual(fm))
    return worst, count


def criterion_2(samples: int = 10_000, seed: int = 0) -> CriterionResult:
    def body():
        rng = np.random.default_rng(seed)
        fams = ["generic", "sparse", "symmetric", "conservative", "ball_positive"]
        sym_bad = bp_bad = n_sym = n_bp = 0
        for i in range(samples):
            fm = finite.random_finite_model(rng, int(rng.integers(2, 9)), fams[i % len(fams)])
            cons = finite.is_conservative(fm)
            if finite.is_symmetric(fm):
                n_sym += 1
                sym_bad += not cons
            if finite.is_ball_positive(fm)[0]:
                n_bp += 1
                bp_bad += not cons
        ce = finite.counterexample_3pt(0.5, 1 / 3)
        ce_bp = finite.ball_positivity_margin(ce)
        ce_ds = finite.doubly_stochastic_residual(ce)
        ce_sym = finite.symmetry_residual(ce)
        worst, count = two_point_sweep()
        m = {"symmetric": n_sym, "symmetric_violations": sym_bad, "ball_positive": n_bp,
             "ball_positive_violations": bp_bad, "counterexample_margin": ce_bp,
             "counterexample_doubly_stochastic_residual": ce_ds,
             "counterexample_asymmetry": ce_sym, "two_point_ball_positive": count,
             "two_point_max_asymmetry": worst}
        ok = (sym_bad == 0 and bp_bad == 0 and n_sym > 0 and n_bp > 0
              and ce_bp > -1e-12 and ce_ds < 1e-12 and ce_sym > 1e-12
              and count > 0 and worst <= 1e-9)
        return ok, m
    return _timed(2, "structural lattice of finite models", body)


def criterion_3() -> CriterionResult:
    def body():
        T1 = torus()
        st = agentsim.random_swarm(100, seed=2, domain=T1)
        models = {"cucker_smale": cucker_smale(bump(0.2, 0.3)),
                  "overmollified": overmollified(bump(0.2, 0.3), quad_nodes=128, domain=T1),
                  "segregation": segregation(Partition.uniform(4, T1))}
        m, ok = {}, True
        for name, model in models.items():
            d = agentsim.run(model, st, 10.0, dt=1e-3, record_every=1000)
            drift = float(np.max(np.abs(d.ubar[-1] - d.ubar[0])))
            rise = d.max_energy_increase
            m[name] = {"ubar_drift": drift, "overshoot": d.max_overshoot,
                       "max_energy_increase": rise, "dt_halved": d.dt_halved}
            ok &= drift < 1e-8 and d.max_overshoot < 1e-6 and rise <= 1e-6
        return ok, m
    r = _timed(3, "conservation and maximum principle", body)
    r.passed = r.passed and r.seconds < 60
    return r


def criterion_4(densities: int = 100, cells: int = 128, seed: int = 0) -> CriterionResult:
    def body():
        T1 = torus()
        U = Measure.uniform(T1, cells)
        models = {"overmollified": overmollified(bump(0.1, 0.15), domain=T1),
                  "cs_bochner": cucker_smale(bochner(bump(0.1, 0.15)))}
        consts = {k: spectral.gap_constant(mod, U) for k, mod in models.items()}
        rng = np.random.default_rng(seed)
        viol = {k: 0 for k in models}
        worst = {k: math.inf for k in models}
        for _ in range(densities):
            rho = random_grid_density(rng, T1, cells, modes=int(rng.integers(1, 9)),
                                      floor=float(rng.choice([0.0, 0.01, 0.1, 1.0])),
                                      spikes=int(rng.integers(0, 3)))
            for k, mod in models.items():
                _, r, p = spectral._law(mod)
                eps = spectral.spectral_gap(mod, rho)
                bound = consts[k] * ball_thickness(rho, r) ** p
                worst[k] = min(worst[k], eps / bound)
                viol[k] += eps < bound * (1 - 1e-12)
        # identities
        mphi = overmollified(bump(0.1, 0.2), quad_nodes=256, domain=T1)
        amf = 0.0
        for _ in range(20):
            rho = random_grid_density(rng, T1, 64, floor=0.1)
            a, q = spectral.overmollified_alignment_identity(mphi, rho, rng.normal(size=64))
            amf = max(amf, abs(a - q))
        psi = gaussian(0.2)
        cs = cucker_smale(bochner(psi))
        order = 0.0
        for _ in range(20):
            n = int(rng.integers(5, 40))
            w = rng.uniform(0.2, 1.0, n)
            rho = Measure.atomic(rng.uniform(-1, 1, n), w / w.sum(), line())
            u = rng.normal(size=n)
            from .models import average
            order = max(order, float(np.max(np.abs(average(cs, rho, u)
                                                   - spectral.nested_favre_average(psi, rho, u)))))
        m = {"constants": consts, "violations": viol, "min_ratio": worst,
             "amf_max_error": amf, "csorder_max_error": order}
        ok = all(v == 0 for v in viol.values()) and amf < 1e-8 and order < 1e-9
        return ok, m
    return _timed(4, "spectral gap lower bounds and identities", body)


def criterion_5() -> CriterionResult:
    def body():
        psi = bump(0.1, 0.2, amplitude=4.0)
        model = cucker_smale(bochner(psi))
        sigma = 0.5
        grid = kinetic.PhaseGrid.for_sigma(sigma, 1.5)
        res = kinetic.relax_experiment(model, kinetic.bimodal(grid, sigma), 4.0, record_every=50)
        diag = res.diagnostics
        ck = float(np.min(diag.ck_slack))
        mono = res.monotone_after(1.0)
        audit = kinetic.entropy_law_audit(model, diag)
        g2 = kinetic.PhaseGrid.for_sigma(sigma, 0.0)
        f0 = kinetic.from_profiles(lambda x: (x < 0.5).astype(float),
                                   lambda x, v: np.exp(-v * v), g2, sigma)
        fin, _, _ = kinetic.evolve(lambda s, h: kinetic.fpa_step(model, s, h), f0, 0.5,
                                   record_every=10 ** 9, diagnostics=False)
        rmin = float(fin.rho.min())
        m = {"rate": res.rate, "r2": res.r2, "monotone_after_1": mono, "min_ck_slack": ck,
             "entropy_audit_ok": audit["ok"], "half_vacuum_min_rho": rmin,
             "half_vacuum_initial_min_rho": float(f0.rho.min())}
        return mono and res.rate < -0.05 and ck >= -1e-10 and rmin > 0, m
    r = _timed(5, "Fokker-Planck-alignment relaxation", body)
    r.passed = r.passed and r.seconds < 300
    return r


def halton_sampler(rng, N):
    """Low-discrepancy draws: x uniform on [-1, 1], v standard normal."""
    u = qmc.Halton(2, seed=rng).random(N)
    return 2 * u[:, 0] - 1, norm.ppf(u[:, 1])


def random_sampler(rng, N):
    return rng.uniform(-1, 1, N), rng.normal(0, 1, N)


def criterion_6(paths: int = 64) -> CriterionResult:
    def body():
        model = cucker_smale(cs_power(1.0))
        Ns = [25, 50, 100, 200]
        det = agentsim.meanfield_experiment(model, halton_sampler, Ns, 1.0, dt=1e-2,
                                            reference=800, seed=0)
        sto = agentsim.meanfield_experiment(model, random_sampler, Ns, 1.0, dt=1e-2,
                                            reference=800, sigma=0.1, paths=paths, seed=0)
        m = {"N": Ns, "deterministic_w1": det.error, "stochastic_mean_w1": sto.error,
             "stochastic_std": sto.std, "paths": paths}
        return det.decreasing and sto.decreasing, m
    r = _timed(6, "mean-field convergence", body)
    r.passed = r.passed and r.seconds < 300
    return r


def criterion_7() -> CriterionResult:
    def body():
        res = kinetic.monokinetic_experiment(
            cucker_smale(cs_power(0.5)), lambda x: 1 + 0.3 * np.cos(2 * np.pi * x),
            lambda x: 0.1 * np.sin(2 * np.pi * x), [0.4, 0.2, 0.1], T=1.0)
        m = {"eps": res.eps, "w2": res.w2, "slope": res.slope, "decreasing": res.decreasing}
        return res.decreasing and 0.3 <= res.slope <= 0.7, m
    r = _timed(7, "monokinetic limit", body)
    r.passed = r.passed and r.seconds < 600
    return r


def criterion_8() -> CriterionResult:
    def body():
        model = cucker_smale(cs_power(0.5))
        rho0 = lambda x: 1 + 0.3 * np.cos(2 * np.pi * x)
        st = hydro.HydroState.from_functions(rho0, lambda x: 0.1 * np.sin(2 * np.pi * x), n=128)
        smooth = hydro.run_hydro(model, st, 5.0, record_every=20)
        audit = hydro.e_quantity_audit(model, smooth)
        times = {}
        for n in (256, 512):
            s0 = hydro.HydroState.from_functions(np.ones_like,
                                                 lambda x: -0.3 * np.sin(2 * np.pi * x), n=n)
            times[n] = hydro.run_hydro(model, s0, 5.0, record_every=10 ** 9).blowup_time
            if n == 256:
                e0min = float(hydro.e_quantity(model, s0).min())
        st = hydro.HydroState.from_functions(rho0, lambda x: 0.2 * np.sin(2 * np.pi * x), n=128)
        from dataclasses import replace
        st = replace(st, s=convolve(st.measure(), model.kernel))
        tr = hydro.run_hydro(model, st, 2.0, record_every=10, transport_strength=True)
        drift = hydro.strength_ratio_drift(model, tr)
        stable = (times[256] is not None and times[512] is not None
                  and abs(times[256] - times[512]) <= 0.1 * times[512])
        m = {"smooth_blowup": smooth.blowup_time, "integral_e_drift": audit["integral_drift"],
             "lagrangian_ratio_drift": audit["lagrangian_ratio_drift"], "blowup_e0_min": e0min,
             "blowup_times": {str(k): v for k, v in times.items()},
             "strength_ratio_drift": drift, "strength_run_blowup": tr.blowup_time}
        ok = (smooth.blowup is None and audit["integral_drift"] < 1e-6 and e0min < 0
              and stable and tr.blowup is None and drift < 0.01)
        return ok, m
    return _timed(8, "hydrodynamic e-quantity", body)


def criterion_9(fields: int = 20, seed: int = 0) -> CriterionResult:
    def body():
        L, n = 4.0, 4096
        dom = torus(L)
        x = (np.arange(n) + 0.5) * L / n
        w = np.full(n, 1.0 / n)
        rho = Measure(dom, x, w, cell=L / n)
        deltas = np.array([0.2, 0.1, 0.05, 0.025])
        rng = np.random.default_rng(seed)
        slopes, logs = [], []
        for _ in range(fields):
            u = dyadic_lipschitz_field(rng, n, L)
            err = [math.sqrt(w @ (mollified_velocity(u, rho, d) - u) ** 2) for d in deltas]
            logs.append(np.log(err))
            slopes.append(np.polyfit(np.log(deltas), np.log(err), 1)[0])
        pooled = float(np.polyfit(np.log(deltas), np.mean(logs, axis=0), 1)[0])
        m = {"slopes": slopes, "pooled_slope": pooled, "deltas": deltas}
        ok = all(abs(s - 1) <= 0.15 for s in slopes) and abs(pooled - 1) <= 0.15
        return ok, m
    return _timed(9, "mollification error is linear in delta", body)


def criterion_10(densities: int = 100, seed: int = 0) -> CriterionResult:
    def body():
        phi = bump(0.1, 0.2)
        rng = np.random.default_rng(seed)
        rhos = [random_grid_density(rng, torus(), modes=int(rng.integers(1, 9)),
                                    floor=float(rng.choice([0.0, 0.01, 0.1, 1.0])),
                                    spikes=int(rng.integers(0, 4))) for _ in range(densities)]
        C = {b: max(check_kmt_inequality(phi, b, r) for r in rhos) for b in (0.0, 0.5, 1.0)}
        spread = max(C.values()) / min(C.values())
        m = {"C": {str(k): v for k, v in C.items()}, "spread": spread}
        return spread <= 2.0 and abs(C[1.0] - 1.0) < 1e-12, m
    return _timed(10, "kernel-density inequality constant", body)


CRITERIA = {k: globals()[f"criterion_{k}"] for k in range(1, 11)}


def run_suite(selected=None, out: Path | None = None, echo=print) -> list:
    results = []
    for k in (selected or sorted(CRITERIA)):
        res = CRITERIA[k]()
        results.append(res)
        if echo:
            echo(res.line())
    if out is not None:
        Path(out).write_text(json.dumps([asdict(r) for r in results], indent=2))
    return results
