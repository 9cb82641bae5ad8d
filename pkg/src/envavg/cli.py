"""Command line entry point: ``envavg run|list-models|describe|suite|schema``.

Exit codes: 0 success, 1 a checked inequality failed (or the solver stopped),
2 configuration error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, acceptance, agentsim, hydro, kinetic, spectral
from .config import SCHEMA, ConfigError, config_hash, load_config
from .measures import Measure, line, random_grid_density, torus
from .models import (builtin_models, check_ball_positive, check_conservative, check_galilean,
                     finite_reduction, model_from_config)
from .finite import is_symmetric

OUTPUT_ENV = "ENVAVG_OUTPUT_ROOT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


# ---------------------------------------------------------------------------
# config helpers
# ---------------------------------------------------------------------------

def profile(spec: dict | None, default=1.0):
    """Callable x -> value for a profile spec (constant + Fourier terms + indicator)."""
    if spec is None:
        return lambda x: np.full_like(np.asarray(x, dtype=float), default)
    c = spec.get("constant", 0.0 if ("cos" in spec or "sin" in spec or "indicator" in spec) else default)
    cos, sin, ind = spec.get("cos", []), spec.get("sin", []), spec.get("indicator")

    def f(x, L=1.0):
        x = np.asarray(x, dtype=float)
        out = np.full_like(x, c)
        for k, a in enumerate(cos, start=1):
            out = out + a * np.cos(2 * np.pi * k * x / L)
        for k, a in enumerate(sin, start=1):
            out = out + a * np.sin(2 * np.pi * k * x / L)
        if ind is not None:
            out = out + ((x >= ind[0]) & (x < ind[1])).astype(float)
        return out
    return f


def _domain(cfg):
    d = cfg.get("domain", {})
    if d.get("kind", "torus") == "line":
        return line()
    return torus(d.get("length", 1.0))


def _model(cfg, spec, domain, key="model"):
    try:
        return model_from_config(spec, domain)
    except ValueError as exc:
        raise ConfigError(f"{cfg['_path']}:{cfg['_lines'].get(key)}: {exc}") from exc


def _need(cfg, key):
    if key not in cfg:
        raise ConfigError(f"{cfg['_path']}:1: {key}: required for experiment {cfg['experiment']}")
    return cfg[key]


def _check(name, ok, value=None):
    return {"check": name, "passed": bool(ok), "value": value}


# ---------------------------------------------------------------------------
# experiments; each returns (summary dict, list of checks) and writes files to out
# ---------------------------------------------------------------------------

def exp_flocking(cfg, out: Path):
    dom = _domain(cfg)
    model = _model(cfg, _need(cfg, "model"), dom)
    ini, par, exp = cfg.get("initial", {}), cfg.get("params", {}), cfg.get("expect", {})
    seed = ini.get("seed", cfg["seed"])
    if ini.get("sampler", "random_swarm") == "diverging_pair":
        st = agentsim.diverging_pair(ini.get("N", 50), ini.get("D0", 1.0), ini.get("A0", 5.0), seed=seed)
    else:
        st = agentsim.random_swarm(ini.get("N", 50), seed, ini.get("spread", 1.0),
                                   ini.get("speed", 1.0), dom)
    d = agentsim.run(model, st, par.get("T", 10.0), par.get("dt", 1e-2), par.get("sigma", 0.0),
                     par.get("record_every", 10), seed=cfg["seed"])
    d.to_csv(out / "diagnostics.csv")
    t, A = np.asarray(d.t), np.asarray(d.A)
    sel = (t >= par.get("fit_from", 0.0)) & (A > 0)
    slope, r2 = float("nan"), float("nan")
    if sel.sum() >= 3:
        slope = float(np.polyfit(t[sel], np.log(A[sel]), 1)[0])
        r2 = float(np.corrcoef(t[sel], np.log(A[sel]))[0, 1] ** 2)
    summary = {"decay_rate": slope, "r2": r2, "A0": A[0], "A_final": A[-1], "D_final": d.D[-1],
               "ubar_drift": float(np.max(np.abs(d.ubar[-1] - d.ubar[0]))),
               "max_overshoot": d.max_overshoot, "dt_halved": d.dt_halved}
    checks = []
    if "rate_below" in exp:
        checks.append(_check("decay_rate < rate_below", slope < exp["rate_below"], slope))
    if "r2_above" in exp:
        checks.append(_check("r2 > r2_above", r2 > exp["r2_above"], r2))
    return summary, checks


def exp_relaxation(cfg, out: Path):
    dom = _domain(cfg)
    model = _model(cfg, _need(cfg, "model"), dom)
    ini, par, exp = cfg.get("initial", {}), cfg.get("params", {}), cfg.get("expect", {})
    sigma = par.get("sigma", 0.5)
    if sigma <= 0:
        raise ConfigError(f"{cfg['_path']}:1: params.sigma: relaxation needs sigma > 0")
    grid = kinetic.PhaseGrid.for_sigma(sigma, par.get("umax", 1.5), par.get("nx", 128),
                                       par.get("nv", 256), dom.length)
    kind = ini.get("sampler", "bimodal")
    if kind == "maxwellian":
        f0 = kinetic.maxwellian(sigma, ini.get("ubar", 0.0), grid)
    elif kind == "profiles":
        rho = profile(ini.get("rho"))
        f0 = kinetic.from_profiles(lambda x: rho(x, grid.L),
                                   lambda x, v: np.exp(-0.5 * (v - ini.get("ubar", 0.0)) ** 2
                                                       / ini.get("width", 1.0) ** 2), grid, sigma)
    else:
        f0 = kinetic.bimodal(grid, sigma, ini.get("shift", 1.5), ini.get("width", 0.5))
    res = kinetic.relax_experiment(model, f0, par.get("T", 4.0), par.get("dt"),
                                   par.get("record_every", 50))
    (out / "diagnostics.json").write_text(res.diagnostics.to_json())
    res.final.to_csv(out / "final_f.csv")
    ck = float(np.min(res.diagnostics.ck_slack))
    audit = kinetic.entropy_law_audit(model, res.diagnostics)
    summary = {"rate": res.rate, "r2": res.r2, "H_initial": res.diagnostics.H[0],
               "H_final": res.diagnostics.H[-1], "min_ck_slack": ck,
               "entropy_law": audit["kind"], "entropy_law_ok": audit["ok"],
               "min_rho": float(np.min(res.diagnostics.rho_min))}
    checks = [_check("Csiszar-Kullback at every snapshot", ck >= -1e-10, ck)]
    if "monotone_after" in exp:
        checks.append(_check("H monotone after t0", res.monotone_after(exp["monotone_after"])))
    if "rate_below" in exp:
        checks.append(_check("rate < rate_below", res.rate < exp["rate_below"], res.rate))
    return summary, checks


def exp_meanfield(cfg, out: Path):
    dom = _domain(cfg)
    model = _model(cfg, _need(cfg, "model"), dom)
    ini, par, exp = cfg.get("initial", {}), cfg.get("params", {}), cfg.get("expect", {})
    sampler = acceptance.halton_sampler if ini.get("sampler", "halton") == "halton" \
        else acceptance.random_sampler
    res = agentsim.meanfield_experiment(
        model, sampler, par.get("Ns", [25, 50, 100, 200]), par.get("T", 1.0), par.get("dt", 1e-2),
        par.get("reference_N", 800), par.get("sigma", 0.0), par.get("paths", 1),
        ini.get("seed", cfg["seed"]), line(), par.get("workers", 1))
    with open(out / "errors.csv", "w") as fh:
        fh.write("N,w1_mean,w1_std\n")
        for n, e, s in zip(res.N, res.error, res.std):
            fh.write(f"{n},{e!r},{s!r}\n")
    summary = {"N": res.N, "w1": res.error, "std": res.std, "reference_N": res.reference_N,
               "paths": res.paths, "decreasing": res.decreasing}
    checks = []
    if exp.get("decreasing", True):
        checks.append(_check("W1 decreasing in N", res.decreasing))
    return summary, checks


def exp_gap_survey(cfg, out: Path):
    dom = _domain(cfg)
    specs = cfg.get("models") or [_need(cfg, "model")]
    models = [_model(cfg, s, dom, "models" if "models" in cfg else "model") for s in specs]
    ini = cfg.get("initial", {})
    rng = np.random.default_rng(ini.get("seed", cfg["seed"]))
    cells = ini.get("cells", 128)
    uniform = Measure.uniform(dom, cells)
    rows, violations = [], 0
    for model in models:
        job = out / model.name
        job.mkdir(exist_ok=True)
        c = spectral.gap_constant(model, uniform)
        for i in range(ini.get("count", 20)):
            rho = random_grid_density(rng, dom, cells, ini.get("modes", 6),
                                      ini.get("floor", 0.05), ini.get("spikes", 0))
            rep = spectral.low_energy_bounds(model, rho, c)
            violations += not rep.ok
            rows.append((model.name, i, rep.eps_measured, rep.eps_bound, rep.thickness, rep.ok))
            if i == 0:
                (job / "report_0.json").write_text(rep.to_json())
    with open(out / "survey.csv", "w") as fh:
        fh.write("model,density,eps_measured,eps_bound,thickness,ok\n")
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")
    summary = {"densities": len(rows), "violations": violations}
    return summary, [_check("eps_measured >= eps_bound on every density", violations == 0, violations)]


def exp_hydro_threshold(cfg, out: Path):
    dom = _domain(cfg)
    model = _model(cfg, _need(cfg, "model"), dom)
    ini, par, exp = cfg.get("initial", {}), cfg.get("params", {}), cfg.get("expect", {})
    rho0, u0 = profile(ini.get("rho")), profile(ini.get("u"), 0.0)
    L = dom.length
    st = hydro.HydroState.from_functions(lambda x: rho0(x, L), lambda x: u0(x, L),
                                         par.get("n", 256), L)
    if par.get("transport_strength"):
        from dataclasses import replace
        from .measures import convolve
        st = replace(st, s=convolve(st.measure(), model.kernel))
    e0 = hydro.e_quantity(model, st)
    run = hydro.run_hydro(model, st, par.get("T", 5.0), par.get("dt"), par.get("cfl", 0.4),
                          par.get("record_every", 10), par.get("transport_strength", False))
    audit = hydro.e_quantity_audit(model, run)
    run.states[-1].to_csv(out / "final_state.csv", model)
    with open(out / "series.csv", "w") as fh:
        fh.write("t,mass,momentum,energy,max_abs_ux\n")
        for s in run.states:
            g = float(np.max(np.abs(hydro.forward_gradient(s.u, s.dx))))
            fh.write(f"{s.t!r},{s.mass!r},{s.momentum!r},{s.energy!r},{g!r}\n")
    summary = {"e0_min": float(e0.min()), "blowup_time": run.blowup_time,
               "integral_e_drift": audit["integral_drift"],
               "lagrangian_ratio_drift": audit["lagrangian_ratio_drift"]}
    if par.get("transport_strength"):
        summary["strength_ratio_drift"] = hydro.strength_ratio_drift(model, run)
    checks = []
    if "blowup" in exp:
        checks.append(_check("blow-up as expected", (run.blowup is not None) == exp["blowup"],
                             run.blowup_time))
    if run.blowup is None:
        checks.append(_check("int e dx conserved", audit["integral_drift"] < 1e-6,
                             audit["integral_drift"]))
    return summary, checks


def exp_monokinetic(cfg, out: Path):
    dom = _domain(cfg)
    model = _model(cfg, _need(cfg, "model"), dom)
    ini, par, exp = cfg.get("initial", {}), cfg.get("params", {}), cfg.get("expect", {})
    rho0, u0 = profile(ini.get("rho")), profile(ini.get("u"), 0.0)
    p = par.get("delta_power", 2.0)
    L = dom.length
    res = kinetic.monokinetic_experiment(model, lambda x: rho0(x, L), lambda x: u0(x, L),
                                         par.get("eps", [0.4, 0.2, 0.1]), par.get("T", 1.0),
                                         lambda e: e ** p, par.get("nx", 128), par.get("nv", 256), L)
    with open(out / "w2.csv", "w") as fh:
        fh.write("eps,w2\n")
        for e, w in zip(res.eps, res.w2):
            fh.write(f"{e!r},{w!r}\n")
    summary = {"eps": res.eps, "w2": res.w2, "slope": res.slope, "decreasing": res.decreasing}
    checks = []
    if exp.get("decreasing", True):
        checks.append(_check("W2 decreasing as eps -> 0", res.decreasing))
    if "slope_range" in exp:
        lo, hi = exp["slope_range"]
        checks.append(_check("log-log slope in range", lo <= res.slope <= hi, res.slope))
    return summary, checks


def property_suite(models: dict, rho: Measure, u, probes: int = 50) -> list:
    """Declared flags against numerical checks for each model on one measure."""
    rows = []
    for name, model in models.items():
        flags = model.flags
        try:
            cons = check_conservative(model, rho, probes=probes)[0]
            sym = is_symmetric(finite_reduction(model, rho)[0])
            bp = check_ball_positive(model, rho, probes=probes)[0]
            gal = check_galilean(model, rho, u, 0.1) < 1e-9
        except ValueError as exc:
            rows.append({"model": name, "error": str(exc), "agree": False})
            continue
        measured = {"conservative": cons, "symmetric": sym, "ball_positive": bp, "galilean": gal}
        # a declared property must hold; an undeclared one may still hold on a given measure
        agree = all(measured[k] for k, v in flags.items() if v)
        rows.append({"model": name, "declared": flags, "measured": measured, "agree": agree})
    return rows


def exp_property_suite(cfg, out: Path):
    dom = _domain(cfg)
    if "models" in cfg:
        models = {m.name: m for m in (_model(cfg, s, dom, "models") for s in cfg["models"])}
    else:
        models = builtin_models(dom)
    ini, par = cfg.get("initial", {}), cfg.get("params", {})
    rng = np.random.default_rng(ini.get("seed", cfg["seed"]))
    rho = random_grid_density(rng, dom, ini.get("cells", 64), ini.get("modes", 4), ini.get("floor", 0.2))
    u = rng.normal(size=rho.n)
    rows = property_suite(models, rho, u, par.get("probes", 50))
    (out / "properties.json").write_text(json.dumps(rows, indent=2))
    bad = [r["model"] for r in rows if not r["agree"]]
    summary = {"models": len(rows), "disagreements": bad, "rows": rows}
    return summary, [_check("declared flags confirmed", not bad, bad)]


EXPERIMENT_RUNNERS = {
    "flocking": exp_flocking,
    "relaxation": exp_relaxation,
    "meanfield": exp_meanfield,
    "gap_survey": exp_gap_survey,
    "hydro_threshold": exp_hydro_threshold,
    "monokinetic_limit": exp_monokinetic,
    "property_suite": exp_property_suite,
}


# ---------------------------------------------------------------------------

def _jsonable(x):
    return acceptance._jsonable(x)


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def output_dir(cfg, config_path: Path) -> Path:
    root = Path(os.environ.get(OUTPUT_ENV, "envavg_runs"))
    return root / cfg.get("output", config_path.stem)


def run_experiment(config_path, stream=None) -> int:
    stream = stream or sys.stderr
    config_path = Path(config_path)
    try:
        cfg = load_config(config_path)
        cfg["_path"] = str(config_path)
        out = output_dir(cfg, config_path)
        out.mkdir(parents=True, exist_ok=True)
        runner = EXPERIMENT_RUNNERS[cfg["experiment"]]
        status, summary, checks = "ok", {}, []
        try:
            summary, checks = runner(cfg, out)
        except ConfigError:
            raise
        except (RuntimeError, ValueError, FloatingPointError) as exc:
            status, summary = "solver_error", {"error": f"{type(exc).__name__}: {exc}"}
    except ConfigError as exc:
        print(str(exc), file=stream)
        return EXIT_CONFIG
    passed = status == "ok" and all(c["passed"] for c in checks)
    summary_doc = {"experiment": cfg["experiment"], "status": status, "partial": status != "ok",
                   "passed": passed, "checks": checks, "summary": summary}
    (out / "summary.json").write_text(json.dumps(_jsonable(summary_doc), indent=2, sort_keys=True))
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    manifest = {
        "config_hash": config_hash(cfg),
        "config": {k: v for k, v in cfg.items() if not k.startswith("_")},
        "seeds": {"master": cfg["seed"], "initial": cfg.get("initial", {}).get("seed", cfg["seed"])},
        "versions": {"envavg": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "outputs": {str(p.relative_to(out)): _sha(p) for p in files},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    if status != "ok":
        print(f"{config_path}: {summary['error']} (partial outputs in {out})", file=stream)
        return EXIT_FAIL
    for c in checks:
        print(f"[{'PASS' if c['passed'] else 'FAIL'}] {c['check']}", file=stream)
    return EXIT_OK if passed else EXIT_FAIL


def list_models(stream=None) -> int:
    stream = stream or sys.stdout
    for name, model in builtin_models().items():
        flags = ", ".join(k for k, v in model.flags.items() if v) or "none"
        print(f"{name:22s} {model.kind:16s} flags: {flags}", file=stream)
    return EXIT_OK


def describe(name: str, stream=None, err=None) -> int:
    stream, err = stream or sys.stdout, err or sys.stderr
    models = builtin_models()
    if name not in models:
        print(f"unknown model {name!r}; known: {', '.join(models)}", file=err)
        return EXIT_CONFIG
    print(models[name].describe(), file=stream)
    return EXIT_OK


def suite(only=None, out=None, stream=None) -> int:
    stream = stream or sys.stdout
    results = acceptance.run_suite(only, out, echo=lambda s: print(s, file=stream, flush=True))
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAIL


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="envavg", description="Environmental averaging experiments.")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    sub.add_parser("list-models", help="list the built-in models")
    p = sub.add_parser("describe", help="kernel formula and flags of a built-in model")
    p.add_argument("model")
    p = sub.add_parser("suite", help="run the acceptance battery")
    p.add_argument("--only", help="comma-separated criterion numbers")
    p.add_argument("--out", help="write a JSON summary here")
    sub.add_parser("schema", help="print the config JSON schema")
    args = ap.parse_args(argv)
    if args.cmd == "run":
        return run_experiment(args.config)
    if args.cmd == "list-models":
        return list_models()
    if args.cmd == "describe":
        return describe(args.model)
    if args.cmd == "suite":
        only = None
        if args.only:
            try:
                only = [int(k) for k in args.only.split(",")]
            except ValueError:
                print("--only: expected comma-separated integers", file=sys.stderr)
                return EXIT_CONFIG
            bad = [k for k in only if k not in acceptance.CRITERIA]
            if bad:
                print(f"--only: unknown criteria {bad}", file=sys.stderr)
                return EXIT_CONFIG
        return suite(only, args.out)
    print(json.dumps(SCHEMA, indent=2))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
