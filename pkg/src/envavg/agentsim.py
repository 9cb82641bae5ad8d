"""Agent-based alignment dynamics x' = v, v' = s (<v> - v), deterministic and stochastic."""
from __future__ import annotations

import csv
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .measures import Domain, Measure, as_points, ball_thickness, line, transport_cost
from .models import Model, alignment_force

DEFAULT_DT = 1e-3
FRAME_HEADER = struct.Struct("<iid")


class IntegratorError(RuntimeError):
    """Raised when a step produces non-finite values."""


@dataclass(frozen=True, eq=False)
class SwarmState:
    x: np.ndarray
    v: np.ndarray
    m: np.ndarray
    t: float = 0.0
    domain: Domain = field(default_factory=line)

    def __post_init__(self):
        x = self.domain.wrap(as_points(self.x, self.domain.dim))
        v = np.asarray(self.v, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        m = np.asarray(self.m, dtype=float).ravel()
        if not (len(x) == len(v) == len(m)):
            raise ValueError("x, v and m must have one row per agent")
        if np.any(m < 0) or abs(m.sum() - 1.0) > 1e-12:
            raise ValueError("masses must be non-negative and sum to 1")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "m", m)

    @classmethod
    def create(cls, x, v, m=None, domain: Domain | None = None, t: float = 0.0) -> "SwarmState":
        domain = domain or line()
        n = len(as_points(x, domain.dim))
        m = np.full(n, 1.0 / n) if m is None else m
        return cls(x, v, m, t, domain)

    @property
    def n(self) -> int:
        return len(self.m)

    @property
    def measure(self) -> Measure:
        return Measure(self.domain, self.x, self.m)

    @property
    def mean_velocity(self) -> np.ndarray:
        return self.m @ self.v


def _drift(model: Model, domain: Domain, m, x, v):
    return alignment_force(model, Measure(domain, x, m), v)


def _check(x, v, t):
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
        raise IntegratorError(f"integrator diverged at t={t:.6g}")


def step_deterministic(model: Model, state: SwarmState, dt: float) -> SwarmState:
    """One classical RK4 step of the agent system."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    D, m, x, v = state.domain, state.m, state.x, state.v
    k1x, k1v = v, _drift(model, D, m, x, v)
    k2x = v + 0.5 * dt * k1v
    k2v = _drift(model, D, m, x + 0.5 * dt * k1x, k2x)
    k3x = v + 0.5 * dt * k2v
    k3v = _drift(model, D, m, x + 0.5 * dt * k2x, k3x)
    k4x = v + dt * k3v
    k4v = _drift(model, D, m, x + dt * k3x, k4x)
    x_new = x + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
    v_new = v + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
    _check(x_new, v_new, state.t + dt)
    return SwarmState(x_new, v_new, m, state.t + dt, D)


def step_euler(model: Model, state: SwarmState, dt: float) -> SwarmState:
    """Explicit Euler step of the deterministic system."""
    return step_stochastic(model, state, dt, 0.0, None)


def step_stochastic(model: Model, state: SwarmState, dt: float, sigma: float,
                    rng: np.random.Generator | int | None) -> SwarmState:
    """Euler-Maruyama: v += s(<v> - v) dt + sqrt(2 sigma s dt) xi."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    D, m, x, v = state.domain, state.m, state.x, state.v
    F, s = alignment_force(model, Measure(D, x, m), v, return_strength=True)
    v_new = v + dt * F
    if sigma > 0:
        rng = np.random.default_rng(rng)
        v_new = v_new + np.sqrt(2 * sigma * s * dt)[:, None] * rng.standard_normal(v.shape)
    x_new = x + dt * v
    _check(x_new, v_new, state.t + dt)
    return SwarmState(x_new, v_new, m, state.t + dt, D)


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def _diameter(P, dist):
    """Max pairwise distance and the lowest-index pair attaining it."""
    n = len(P)
    if n < 2:
        return 0.0, (0, 0)
    iu = np.triu_indices(n, 1)
    vals = dist[iu]
    k = int(np.argmax(vals))
    return float(vals[k]), (int(iu[0][k]), int(iu[1][k]))


def position_diameter(state: SwarmState):
    return _diameter(state.x, state.domain.pairwise(state.x))


def velocity_diameter(state: SwarmState):
    V = state.v
    return _diameter(V, np.linalg.norm(V[:, None, :] - V[None, :, :], axis=-1))


def kinetic_energy(state: SwarmState) -> float:
    return 0.5 * float(np.sum(state.m[:, None] * state.v ** 2))


def dissipation(model: Model, state: SwarmState) -> float:
    """(v, v)_kappa - (v, <v>)_kappa, written as -sum m v . s(<v> - v)."""
    F = _drift(model, state.domain, state.m, state.x, state.v)
    return -float(np.sum(state.m[:, None] * state.v * F))


def symmetric_dissipation(model: Model, state: SwarmState) -> float:
    """1/2 sum_ij phi_ij |v_i - v_j|^2 m_i m_j for kernel-matrix models."""
    from .models import kernel_matrix
    km = kernel_matrix(model, state.measure)
    dv = np.sum((state.v[:, None, :] - state.v[None, :, :]) ** 2, axis=-1)
    return 0.5 * float(state.m @ (km.phi * dv) @ state.m)


@dataclass
class Diagnostics:
    t: list = field(default_factory=list)
    D: list = field(default_factory=list)
    A: list = field(default_factory=list)
    ubar: list = field(default_factory=list)
    energy: list = field(default_factory=list)
    dissipation: list = field(default_factory=list)
    thickness: list = field(default_factory=list)
    connected: list = field(default_factory=list)
    D_pair: list = field(default_factory=list)
    A_pair: list = field(default_factory=list)
    dt: float = DEFAULT_DT
    dt_halved: bool = False
    max_overshoot: float = 0.0
    step_energy: list = field(default_factory=list)
    final: SwarmState | None = None

    def record(self, model: Model, state: SwarmState, r: float | None):
        D, dp = position_diameter(state)
        A, ap = velocity_diameter(state)
        self.t.append(state.t)
        self.D.append(D)
        self.A.append(A)
        self.D_pair.append(dp)
        self.A_pair.append(ap)
        self.ubar.append(state.mean_velocity.copy())
        self.energy.append(kinetic_energy(state))
        self.dissipation.append(dissipation(model, state))
        if r is not None:
            self.thickness.append(ball_thickness(state.measure, r, S="support"))
            self.connected.append(chain_connected(state, r))

    @property
    def max_energy_increase(self) -> float:
        """Largest one-step increase of the kinetic energy."""
        e = np.asarray(self.step_energy)
        return float(np.max(np.diff(e))) if len(e) > 1 else 0.0

    def arrays(self) -> dict:
        return {"t": np.array(self.t), "D": np.array(self.D), "A": np.array(self.A),
                "ubar": np.array(self.ubar), "energy": np.array(self.energy),
                "dissipation": np.array(self.dissipation)}

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            dim = len(self.ubar[0]) if self.ubar else 1
            ucols = ["ubar"] if dim == 1 else [f"ubar{k}" for k in range(dim)]
            w.writerow(["t", "D", "A", *ucols, "energy", "dissipation", "thickness"])
            for i, t in enumerate(self.t):
                th = self.thickness[i] if self.thickness else ""
                w.writerow([repr(t), repr(self.D[i]), repr(self.A[i]),
                            *[repr(float(u)) for u in self.ubar[i]],
                            repr(self.energy[i]), repr(self.dissipation[i]),
                            repr(th) if th != "" else ""])


class FrameLog:
    """Binary trajectory log.

    Layout (little endian): header int32 N, int32 n, float64 dt; then per frame
    float64 t, float64 x[N*n], float64 v[N*n] (row-major, agent-major).
    """

    def __init__(self, path, N: int, n: int, dt: float):
        self.N, self.n = N, n
        self._fh = open(path, "wb")
        self._fh.write(FRAME_HEADER.pack(N, n, dt))

    def write(self, state: SwarmState):
        self._fh.write(np.asarray([state.t], "<f8").tobytes())
        self._fh.write(np.ascontiguousarray(state.x, "<f8").tobytes())
        self._fh.write(np.ascontiguousarray(state.v.reshape(self.N, -1)[:, :self.n], "<f8").tobytes())

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_frames(path):
    """(dt, times, x frames, v frames) from a binary frame log."""
    raw = Path(path).read_bytes()
    N, n, dt = FRAME_HEADER.unpack_from(raw)
    body = np.frombuffer(raw, "<f8", offset=FRAME_HEADER.size)
    per = 1 + 2 * N * n
    frames = body.reshape(-1, per)
    return dt, frames[:, 0], frames[:, 1:1 + N * n].reshape(-1, N, n), \
        frames[:, 1 + N * n:].reshape(-1, N, n)


def _integrate(model, state, T, dt, sigma, rng, record_every, r, log):
    diag = Diagnostics(dt=dt)
    vmax0, vmin0 = state.v.max(axis=0), state.v.min(axis=0)
    tol = 10 * dt ** 4 * T + 1e-12
    steps = int(round(T / dt))
    diag.record(model, state, r)
    diag.step_energy.append(kinetic_energy(state))
    if log is not None:
        log.write(state)
    for k in range(1, steps + 1):
        try:
            if sigma > 0:
                state = step_stochastic(model, state, dt, sigma, rng)
            else:
                state = step_deterministic(model, state, dt)
        except IntegratorError:
            raise
        except Exception as exc:  # annotate with the failing time
            raise type(exc)(f"t={state.t:.6g}: {exc}") from exc
        if sigma == 0:
            over = max(float(np.max(state.v.max(axis=0) - vmax0)),
                       float(np.max(vmin0 - state.v.min(axis=0))))
            diag.max_overshoot = max(diag.max_overshoot, over)
        diag.step_energy.append(kinetic_energy(state))
        if k % record_every == 0 or k == steps:
            diag.record(model, state, r)
            if log is not None:
                log.write(state)
    diag.final = state
    return diag, diag.max_overshoot <= tol


def run(model: Model, state: SwarmState, T: float, dt: float = DEFAULT_DT, sigma: float = 0.0,
        record_every: int = 10, seed: int | None = 0, thickness_radius: float | None = None,
        frame_log=None) -> Diagnostics:
    """Integrate to T and record diagnostics every ``record_every`` steps.

    Deterministic runs are repeated once at dt/2 if the velocity maximum principle
    is violated beyond 10 dt^4 T.
    """
    if T < 0:
        raise ValueError("T must be non-negative")
    rng = np.random.default_rng(seed)

    def attempt(h):
        if frame_log is None:
            return _integrate(model, state, T, h, sigma, rng, record_every, thickness_radius, None)
        with FrameLog(frame_log, state.n, state.v.shape[1], h) as log:
            return _integrate(model, state, T, h, sigma, rng, record_every, thickness_radius, log)

    diag, ok = attempt(dt)
    if not ok and sigma == 0:
        diag, _ = attempt(dt / 2)
        diag.dt_halved = True
    return diag


# ---------------------------------------------------------------------------
# chain connectivity
# ---------------------------------------------------------------------------

def _support_points(obj, domain):
    if isinstance(obj, SwarmState):
        return obj.x[obj.m > 0], obj.domain
    if isinstance(obj, Measure):
        return obj.support(), obj.domain
    domain = domain or line()
    return as_points(obj, domain.dim), domain


def _graph(P, domain, r):
    adj = domain.pairwise(P) < r
    np.fill_diagonal(adj, False)
    return csr_matrix(adj)


def chain_connected(obj, r: float, domain: Domain | None = None) -> bool:
    """True when the support is one component of the graph |x_i - x_j| < r."""
    P, dom = _support_points(obj, domain)
    if len(P) == 0:
        raise ValueError("empty point set")
    ncomp, _ = connected_components(_graph(P, dom, r), directed=False)
    return ncomp == 1


def reduced_chain_length(rho: Measure, r: float) -> int:
    """Longest hop-minimal 3r-chain between two support points.

    In a hop-minimal chain non-consecutive links are at least 3r apart, so the
    r-balls around every other link are disjoint.
    """
    P = rho.support()
    if not chain_connected(rho, r):
        raise ValueError("support is not chain connected at this scale")
    hops = shortest_path(_graph(P, rho.domain, 3 * r), unweighted=True, directed=False)
    return int(np.max(hops))


def chain_bound(rho: Measure, r: float) -> float:
    """2 / rho_bar_r over the support."""
    return 2.0 / ball_thickness(rho, r, S="support")


# ---------------------------------------------------------------------------
# ensembles and mean-field experiments
# ---------------------------------------------------------------------------

def spawn_seeds(master: int, count: int) -> list:
    """Independent child streams: SeedSequence(master).spawn(count)."""
    return np.random.SeedSequence(master).spawn(count)


def run_ensemble(job: Callable, seeds: Sequence, workers: int = 1) -> list:
    """Apply ``job(seed)`` to every seed; results are ordered like ``seeds``."""
    if workers <= 1:
        return [job(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(job, seeds))


def phase_space_w1(a: SwarmState, b: SwarmState) -> float:
    """Exact W1 between empirical measures in (x, v) with Euclidean cost."""
    dx = a.domain.pairwise(a.x, b.x)
    dv = np.linalg.norm(a.v[:, None, :] - b.v[None, :, :], axis=-1)
    return transport_cost(np.hypot(dx, dv), a.m, b.m)


def _evolve(model, state, T, dt, sigma, seed):
    rng = np.random.default_rng(seed)
    steps = int(round(T / dt))
    for _ in range(steps):
        if sigma > 0:
            state = step_stochastic(model, state, dt, sigma, rng)
        else:
            state = step_deterministic(model, state, dt)
    return state


@dataclass
class MeanFieldResult:
    N: list
    error: list
    std: list
    reference_N: int | None
    paths: int

    @property
    def decreasing(self) -> bool:
        return bool(np.all(np.diff(self.error) < 0))


def meanfield_experiment(model: Model, sampler: Callable, Ns: Sequence[int], T: float,
                         dt: float = 1e-2, reference: int | Callable | None = 800,
                         sigma: float = 0.0, paths: int = 1, seed: int = 0,
                         domain: Domain | None = None, workers: int = 1) -> MeanFieldResult:
    """W1 between the N-agent empirical measure at T and a reference.

    ``sampler(rng, N) -> (x, v)`` draws initial agents.  ``reference`` is either the
    agent count of a large run, or a callable ``reference(rng) -> SwarmState`` giving
    the reference state at time T.  Every sample is drawn from the same per-path seed,
    so N equal to the reference count reproduces the reference exactly.
    """
    if reference is None:
        raise ValueError("reference unavailable")
    domain = domain or line()
    path_seeds = spawn_seeds(seed, paths)

    def one_path(ss):
        noise = ss.spawn(len(Ns) + 1)

        def initial(n):
            x, v = sampler(np.random.default_rng(ss), n)
            return SwarmState.create(x, v, domain=domain)

        if callable(reference):
            ref = reference(np.random.default_rng(ss))
        else:
            ref = _evolve(model, initial(reference), T, dt, sigma, noise[-1])
        out = []
        for k, n in enumerate(Ns):
            st = _evolve(model, initial(n), T, dt, sigma,
                         noise[-1] if (not callable(reference) and n == reference) else noise[k])
            out.append(phase_space_w1(st, ref))
        return out

    errs = np.array(run_ensemble(one_path, path_seeds, workers))
    return MeanFieldResult(list(Ns), errs.mean(axis=0).tolist(), errs.std(axis=0).tolist(),
                           None if callable(reference) else int(reference), paths)


# ---------------------------------------------------------------------------
# canned initial data
# ---------------------------------------------------------------------------

def diverging_pair(N: int = 50, D0: float = 1.0, A0: float = 5.0, jitter: float = 1e-3,
                   seed: int = 0) -> SwarmState:
    """Two equal clusters a distance D0 apart moving away from each other at relative speed A0.

    With the fat-tail-free kernel (1 + r^2)^(-3/2) the relative speed can drop by at
    most int_{D0}^inf phi = 1 - D0 / sqrt(1 + D0^2), so it stays near A0.
    """
    rng = np.random.default_rng(seed)
    half = N // 2
    x = np.concatenate([np.zeros(half), np.full(N - half, D0)]) + jitter * rng.uniform(-1, 1, N)
    v = np.concatenate([np.full(half, -A0 / 2), np.full(N - half, A0 / 2)]) + jitter * rng.uniform(-1, 1, N)
    return SwarmState.create(x, v)


def random_swarm(N: int, seed: int = 0, spread: float = 1.0, speed: float = 1.0,
                 domain: Domain | None = None) -> SwarmState:
    rng = np.random.default_rng(seed)
    domain = domain or line()
    dim = domain.dim
    if domain.periodic:
        x = rng.uniform(0, domain.length, (N, dim))
    else:
        x = rng.uniform(-spread, spread, (N, dim))
    v = rng.uniform(-speed, speed, (N, dim))
    return SwarmState.create(x, v, domain=domain)


def boosted(state: SwarmState, h) -> SwarmState:
    return replace(state, v=state.v + np.asarray(h, dtype=float))
