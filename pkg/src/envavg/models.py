"""Environmental averaging models: strength s, average <u> and reproducing kernel.

Every model acts on a :class:`~envavg.measures.Measure` and a field aligned with
its atoms.  Two independent evaluation paths exist for most models: ``average``
uses the model's own composition formula, ``kernel_matrix`` its reproducing
kernel, so that each can be checked against the other.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measures import (Domain, Kernel, Measure, as_points, bochner, check_field,
                       chi, kernel_from_dict, smooth_cutoff, torus)

KINDS = ("global", "identity", "cucker_smale", "motsch_tadmor", "beta",
         "overmollified", "segregation", "rough_partition", "topological")

# reproducing kernels, one row per kind
KERNEL_FORMULAS = {
    "global": "s = 1, <u> = int u drho, phi_rho(x,y) = 1",
    "identity": "s = 1, <u> = u, phi_rho(x,y) = delta(x-y)/rho",
    "cucker_smale": "s = rho_phi, <u> = (u rho)_phi / rho_phi, phi_rho(x,y) = phi(x-y)",
    "motsch_tadmor": "s = 1, <u> = (u rho)_phi / rho_phi, phi_rho(x,y) = phi(x-y) / rho_phi(x)",
    "beta": "s = rho_phi^beta, <u> = (u rho)_phi / rho_phi, "
            "phi_rho(x,y) = phi(x-y) / rho_phi^(1-beta)(x)",
    "overmollified": "s = 1 (discretely: the quadrature mass of phi), <u> = ((u rho)_phi / rho_phi)_phi, "
                     "phi_rho(x,y) = int phi(x-z) phi(y-z) / rho_phi(z) dz",
    "segregation": "s = 1, <u> = sum_l g_l rho(u g_l) / rho(g_l), "
                   "phi_rho(x,y) = sum_l g_l(x) g_l(y) / rho(g_l)",
    "rough_partition": "s = 1, <u> = sum_l 1_{A_l} rho(u 1_{A_l}) / rho(A_l), "
                       "phi_rho(x,y) = sum_l 1_{A_l}(x) 1_{A_l}(y) / rho(A_l)",
    "topological": "s = int phi_rho(x,y) drho(y), "
                   "phi_rho(x,y) = psi(x-y) / (eps + d_rho(x,y)^2)^(alpha/2), "
                   "d_rho(x,y) = rho(O(x,y))",
}

PSI_FUNCTIONS = {
    "square": lambda x: x * x,
    "abs": np.abs,
    "cosh": lambda x: np.cosh(x) - 1.0,
}


class VacuumError(ValueError):
    pass


# ---------------------------------------------------------------------------
# partitions of unity
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Partition:
    """Smooth partition of unity g_l = b_l / sum_k b_k from radial bumps b_l."""

    centers: np.ndarray
    radius: float
    domain: Domain = field(default_factory=torus)

    def __post_init__(self):
        c = as_points(self.centers, self.domain.dim)
        object.__setattr__(self, "centers", c)

    @classmethod
    def uniform(cls, count: int, domain: Domain | None = None,
                radius_factor: float = 0.75) -> "Partition":
        """count bumps evenly spaced on a 1D torus; radius = radius_factor * spacing."""
        domain = domain or torus()
        if domain.dim != 1 or not domain.periodic:
            raise ValueError("uniform partitions are built on the 1D torus")
        if not 0.5 < radius_factor:
            raise ValueError("radius_factor must exceed 1/2 for the bumps to cover")
        spacing = domain.length / count
        centers = (np.arange(count) + 0.5) * spacing
        return cls(centers[:, None], radius_factor * spacing, domain)

    @property
    def count(self) -> int:
        return len(self.centers)

    def bumps(self, X) -> np.ndarray:
        return chi(self.domain.pairwise(X, self.centers) / self.radius)

    def __call__(self, X) -> np.ndarray:
        b = self.bumps(X)
        total = b.sum(axis=1, keepdims=True)
        if np.any(total <= 0):
            raise ValueError("partition bumps do not cover the evaluation points")
        return b / total

    @property
    def overlap_radius(self) -> float:
        """Radius of balls fitting inside neighbouring overlaps (uniform layout)."""
        if self.count < 2:
            return self.radius
        spacing = self.domain.length / self.count
        return max(self.radius - 0.5 * spacing, 0.0) / 2

    def to_dict(self):
        return {"centers": self.centers[:, 0].tolist() if self.domain.dim == 1 else
                self.centers.tolist(), "radius": self.radius}


# ---------------------------------------------------------------------------
# the model descriptor
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Model:
    kind: str
    kernel: Kernel | None = None
    beta: float = 1.0
    partition: Partition | None = None
    edges: tuple | None = None
    alpha: float = 1.0
    eps_top: float = 0.1
    width: float = 0.02
    eccentricity: float = 0.5
    quad_nodes: int = 512
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        needs_kernel = self.kind in ("cucker_smale", "motsch_tadmor", "beta",
                                     "overmollified", "topological")
        if needs_kernel and self.kernel is None:
            raise ValueError(f"model {self.kind} needs a kernel")
        if self.kind == "beta" and not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")
        if self.kind == "overmollified" and not self.kernel.mollifier:
            raise ValueError("the overmollified model needs a unit-mass (mollifier) kernel")
        if self.kind == "segregation" and self.partition is None:
            raise ValueError("segregation needs a partition")
        if self.kind == "rough_partition":
            if self.edges is None or len(self.edges) < 1:
                raise ValueError("rough_partition needs block edges")
            object.__setattr__(self, "edges", tuple(sorted(float(e) for e in self.edges)))
        if self.kind == "topological" and not (self.eps_top > 0 and self.alpha > 0):
            raise ValueError("topological needs eps > 0 and alpha > 0")
        if not self.name:
            object.__setattr__(self, "name", self.kind)

    # declared structure ------------------------------------------------------
    @property
    def bochner(self) -> bool:
        return self.kernel is not None and self.kernel.profile in ("bochner", "gaussian")

    @property
    def flags(self) -> dict:
        k = self.kind
        if k in ("global", "identity", "overmollified"):
            f = (True, True, True, True)
        elif k == "cucker_smale":
            f = (True, True, self.bochner, True)
        elif k == "topological":
            f = (True, True, False, True)
        elif k == "motsch_tadmor":
            f = (False, False, False, True)
        elif k == "beta":
            one = self.beta == 1.0
            f = (one, one, one and self.bochner, True)
        else:
            f = (True, True, True, False)
        return dict(zip(("conservative", "symmetric", "ball_positive", "galilean"), f))

    @property
    def material(self) -> bool:
        """Strength vanishes away from the support (CS-type families)."""
        return self.kind in ("cucker_smale", "topological") or (self.kind == "beta" and self.beta > 0)

    @property
    def locality(self) -> float | None:
        return self.kernel.locality if self.kernel is not None else None

    def strength_bound(self) -> float:
        if self.kind == "cucker_smale":
            return self.kernel.sup
        if self.kind == "beta":
            return self.kernel.sup ** self.beta
        if self.kind == "topological":
            return self.kernel.sup / self.eps_top ** (self.alpha / 2)
        return 1.0

    def describe(self) -> str:
        lines = [f"{self.name} [{self.kind}]",
                 "  " + KERNEL_FORMULAS[self.kind]]
        if self.kernel is not None:
            lines.append(f"  kernel: {self.kernel.describe()}")
        if self.kind == "beta":
            lines.append(f"  beta = {self.beta}")
        if self.kind == "topological":
            lines.append(f"  alpha = {self.alpha}, eps = {self.eps_top}, width = {self.width}")
        if self.locality is not None:
            lines.append(f"  locality radius r0 = {self.locality:g}")
        flags = ", ".join(f"{k}={'yes' if v else 'no'}" for k, v in self.flags.items())
        lines.append(f"  flags: {flags}")
        lines.append(f"  strength bound: {self.strength_bound():.6g}")
        return "\n".join(lines)


def global_model() -> Model:
    return Model("global")


def identity_model() -> Model:
    return Model("identity")


def cucker_smale(kernel: Kernel) -> Model:
    return Model("cucker_smale", kernel)


def motsch_tadmor(kernel: Kernel) -> Model:
    return Model("motsch_tadmor", kernel)


def beta_model(kernel: Kernel, beta: float) -> Model:
    return Model("beta", kernel, beta=float(beta))


def overmollified(kernel: Kernel, quad_nodes: int = 512, domain: Domain | None = None) -> Model:
    if not kernel.mollifier:
        kernel = kernel.normalized(domain or torus())
    return Model("overmollified", kernel, quad_nodes=quad_nodes)


def segregation(partition: Partition) -> Model:
    return Model("segregation", partition=partition)


def rough_partition(edges) -> Model:
    return Model("rough_partition", edges=tuple(edges))


def topological(psi: Kernel, alpha: float = 2.0, eps: float = 0.1, width: float = 0.02,
                eccentricity: float = 0.5) -> Model:
    return Model("topological", psi, alpha=alpha, eps_top=eps, width=width,
                 eccentricity=eccentricity)


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class KernelMatrix:
    phi: np.ndarray
    s: np.ndarray

    def row_residual(self, weights) -> float:
        return float(np.max(np.abs(self.phi @ weights - self.s)))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s"] + [f"phi_{j}" for j in range(len(self.s))])
            for si, row in zip(self.s, self.phi):
                w.writerow([f"{si:.17g}"] + [f"{v:.17g}" for v in row])


def _points(rho: Measure, at):
    return rho.points if at is None else as_points(at, rho.dim)


def _kmat(model: Model, rho: Measure, X):
    return model.kernel(rho.domain.pairwise(X, rho.points))


def _vacuum_check(rphi, where="atoms"):
    if np.any(rphi <= 0):
        raise VacuumError(f"vacuum evaluation: rho_phi = 0 at one of the {where}")


def _safe_div(a, b):
    """a / b with 0/0 (and x/0) guarded to 0."""
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    out = np.zeros(a.shape)
    np.divide(a, b, out=out, where=b != 0)
    return out


def _z_nodes(model: Model, rho: Measure):
    dom = rho.domain
    if dom.periodic:
        if dom.dim == 1:
            n = model.quad_nodes
            h = dom.length / n
            return ((np.arange(n) + 0.5) * h)[:, None], h
        n = max(16, int(round(math.sqrt(model.quad_nodes))) * 2)
        z, h = dom.grid(n / dom.length)
        return z, h * h
    if dom.dim != 1:
        raise ValueError("the overmollified model on the plane is not supported")
    R = model.kernel.support
    if not math.isfinite(R):
        R = 10 * (model.kernel.locality or 1.0)
    lo, hi = rho.x.min() - R, rho.x.max() + R
    n = max(model.quad_nodes, int(math.ceil(model.quad_nodes * (hi - lo))))
    h = (hi - lo) / n
    return (lo + (np.arange(n) + 0.5) * h)[:, None], h


def _overmollified_parts(model: Model, rho: Measure, X):
    """Row-normalized outer weights W (X -> z), inner kernel Kz (z -> atoms),
    rho_phi(z) and the discrete kernel mass n(X) = sum_z phi(X - z) h_z.

    Using n as the strength makes the discretized model exactly conservative
    and symmetric whatever the number of z nodes.
    """
    z, hz = _z_nodes(model, rho)
    Kz = model.kernel(rho.domain.pairwise(z, rho.points))
    Kx = Kz.T if X is rho.points else model.kernel(rho.domain.pairwise(X, z))
    mass = Kx.sum(axis=1) * hz
    W = _safe_div(Kx * hz, mass[:, None])
    rphi_z = Kz @ rho.weights
    return W, Kz, rphi_z, mass


def _block_labels(model: Model, rho: Measure, X=None):
    x = (rho.x if X is None else as_points(X, 1)[:, 0])
    edges = np.asarray(model.edges)
    if rho.domain.periodic:
        x = np.mod(x, rho.domain.length)
        lab = np.searchsorted(edges, x, side="right") % len(edges)
        return lab, len(edges)
    lab = np.searchsorted(edges, x, side="right")
    return lab, len(edges) + 1


def _topological_distance(model: Model, rho: Measure, X):
    """d_rho(x_i, y_j) for x_i in X and y_j the atoms, via mollified sets O(x, y)."""
    dom = rho.domain
    Y = rho.points
    w = model.width
    out = np.empty((len(X), len(Y)))
    step = lambda t: 1.0 - smooth_cutoff(t)  # 0 for t <= 0, 1 for t >= 1
    for i, xi in enumerate(X):
        disp = dom.displacement(Y, xi[None, :])            # y_j - x_i
        mid = xi[None, :] + 0.5 * disp                     # midpoints c_ij
        rel = dom.displacement(Y[None, :, :], mid[:, None, :])  # x_k - c_ij, (j, k, dim)
        if dom.dim == 1:
            half = 0.5 * np.abs(disp[:, 0])
            ind = step((half[:, None] - np.abs(rel[..., 0])) / w + 0.5)
            if dom.periodic:
                # antipodal pairs: both arcs are shortest, use their mean
                anti = np.abs(half - 0.25 * dom.length) < 1e-9 * dom.length
                if anti.any():
                    alt = dom.displacement(Y[None, :, :], mid[anti][:, None, :] + 0.5 * dom.length)
                    ind_alt = step((half[anti][:, None] - np.abs(alt[..., 0])) / w + 0.5)
                    ind[anti] = 0.5 * (ind[anti] + ind_alt)
        else:
            f = 0.5 * disp[:, None, :]
            dist_sum = (np.linalg.norm(rel + f, axis=-1) + np.linalg.norm(rel - f, axis=-1))
            major = np.linalg.norm(disp, axis=-1) / model.eccentricity
            ind = step((major[:, None] - dist_sum) / (2 * w) + 0.5)
        out[i] = ind @ rho.weights
    return out


# ---------------------------------------------------------------------------
# strength, average, kernel matrix
# ---------------------------------------------------------------------------

def strength(model: Model, rho: Measure, at=None) -> np.ndarray:
    """s_rho at the atoms of rho (or at the points ``at``)."""
    X = _points(rho, at)
    k = model.kind
    if k == "overmollified":
        return _overmollified_parts(model, rho, X)[3]
    if k in ("global", "identity", "motsch_tadmor", "segregation", "rough_partition"):
        if k == "motsch_tadmor":
            _vacuum_check(_kmat(model, rho, X) @ rho.weights)
        return np.ones(len(X))
    if k == "cucker_smale":
        return _kmat(model, rho, X) @ rho.weights
    if k == "beta":
        rphi = _kmat(model, rho, X) @ rho.weights
        _vacuum_check(rphi)
        return rphi ** model.beta
    # topological
    phi = _topological_kernel(model, rho, X)
    return phi @ rho.weights


def _topological_kernel(model: Model, rho: Measure, X):
    d = _topological_distance(model, rho, X)
    psi = model.kernel(rho.domain.pairwise(X, rho.points))
    return psi / (model.eps_top + d * d) ** (model.alpha / 2)


def average(model: Model, rho: Measure, u, at=None) -> np.ndarray:
    """<u>_rho at the atoms of rho (or at ``at``), by the model's own formula."""
    u = check_field(rho, u)
    X = _points(rho, at)
    k = model.kind
    m = rho.weights
    if k == "global":
        return np.broadcast_to(rho.integrate(u), (len(X),) + u.shape[1:]).copy()
    if k == "identity":
        if at is not None:
            raise ValueError("the identity model is only defined on the atoms")
        return u.copy()
    if k in ("cucker_smale", "motsch_tadmor", "beta"):
        K = _kmat(model, rho, X)
        rphi = K @ m
        if k != "cucker_smale":
            _vacuum_check(rphi)
        num = K @ (m[:, None] * u.reshape(len(m), -1))
        return _safe_div(num, rphi[:, None]).reshape((len(X),) + u.shape[1:])
    if k == "overmollified":
        W, Kz, rphi_z, _ = _overmollified_parts(model, rho, X)
        uf = _safe_div(Kz @ (m[:, None] * u.reshape(len(m), -1)), rphi_z[:, None])
        return (W @ uf).reshape((len(X),) + u.shape[1:])
    if k == "segregation":
        G = model.partition(X)
        Gr = model.partition(rho.points)
        mass = Gr.T @ m
        num = Gr.T @ (m[:, None] * u.reshape(len(m), -1))
        return (G @ _safe_div(num, mass[:, None])).reshape((len(X),) + u.shape[1:])
    if k == "rough_partition":
        if not rho.is_grid:
            raise ValueError("rough_partition is defined on grid measures only")
        lab, nb = _block_labels(model, rho)
        mass = np.bincount(lab, weights=m, minlength=nb)
        if np.any(mass <= 0):
            bad = int(np.flatnonzero(mass <= 0)[0])
            raise ValueError(f"rough_partition block {bad} carries zero mass")
        U = u.reshape(len(m), -1)
        num = np.stack([np.bincount(lab, weights=m * U[:, c], minlength=nb)
                        for c in range(U.shape[1])], axis=1)
        labx = lab if at is None else _block_labels(model, rho, X)[0]
        return (num[labx] / mass[labx, None]).reshape((len(X),) + u.shape[1:])
    # topological: kernel form is the definition
    phi = _topological_kernel(model, rho, X)
    s = phi @ m
    num = phi @ (m[:, None] * u.reshape(len(m), -1))
    return _safe_div(num, s[:, None]).reshape((len(X),) + u.shape[1:])


def kernel_matrix(model: Model, rho: Measure) -> KernelMatrix:
    """phi_rho(x_i, x_j) on the atoms together with s_rho(x_i)."""
    if rho.n > 10_000:
        raise ValueError("kernel matrices are limited to 10^4 atoms")
    X = rho.points
    m = rho.weights
    k = model.kind
    N = rho.n
    if k == "global":
        phi = np.ones((N, N))
    elif k == "identity":
        phi = np.diag(_safe_div(np.ones(N), m))
    elif k == "cucker_smale":
        phi = _kmat(model, rho, X)
    elif k in ("motsch_tadmor", "beta"):
        K = _kmat(model, rho, X)
        rphi = K @ m
        _vacuum_check(rphi)
        expo = 1.0 if k == "motsch_tadmor" else 1.0 - model.beta
        phi = K / rphi[:, None] ** expo
    elif k == "overmollified":
        W, Kz, rphi_z, mass = _overmollified_parts(model, rho, X)
        phi = mass[:, None] * (W @ _safe_div(Kz, rphi_z[:, None]))
    elif k == "segregation":
        G = model.partition(X)
        mass = G.T @ m
        phi = (G * _safe_div(np.ones_like(mass), mass)) @ G.T
    elif k == "rough_partition":
        if not rho.is_grid:
            raise ValueError("rough_partition is defined on grid measures only")
        lab, nb = _block_labels(model, rho)
        mass = np.bincount(lab, weights=m, minlength=nb)
        if np.any(mass <= 0):
            bad = int(np.flatnonzero(mass <= 0)[0])
            raise ValueError(f"rough_partition block {bad} carries zero mass")
        phi = (lab[:, None] == lab[None, :]) / mass[lab][:, None]
    else:
        phi = _topological_kernel(model, rho, X)
    if k in ("cucker_smale", "topological", "beta"):
        s = phi @ m
    elif k == "overmollified":
        s = mass
    else:
        s = np.ones(N)
    return KernelMatrix(np.asarray(phi, dtype=float), np.asarray(s, dtype=float))


def alignment_force(model: Model, rho: Measure, v, return_strength: bool = False):
    """s (<v> - v) at the atoms; the right-hand side of the agent system.

    With ``return_strength`` the strength at the atoms is returned as well, sharing
    the kernel evaluation.
    """
    v = check_field(rho, v)
    k = model.kind
    V = v.reshape(rho.n, -1)
    if k in ("cucker_smale", "motsch_tadmor", "beta", "topological"):
        km = kernel_matrix(model, rho)
        f = km.phi @ (rho.weights[:, None] * V) - km.s[:, None] * V
        s = km.s
    elif k == "overmollified":
        W, Kz, rphi_z, s = _overmollified_parts(model, rho, rho.points)
        uf = _safe_div(Kz @ (rho.weights[:, None] * V), rphi_z[:, None])
        f = s[:, None] * (W @ uf - V)
    else:
        s = strength(model, rho)
        f = s[:, None] * (average(model, rho, V) - V)
    f = f.reshape(v.shape)
    return (f, s) if return_strength else f


# ---------------------------------------------------------------------------
# structural probes
# ---------------------------------------------------------------------------

def kappa(model: Model, rho: Measure) -> np.ndarray:
    """Atom weights of the strength measure kappa = s rho."""
    return rho.weights * strength(model, rho)


def _probe_fields(n, probes, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((probes, n))


def check_conservative(model: Model, rho: Measure, tol: float = 1e-9, probes: int = 200,
                       seed: int = 0):
    """max |int <u> dkappa - int u dkappa| over random fields of unit kappa-norm."""
    kap = kappa(model, rho)
    worst = 0.0
    for u in _probe_fields(rho.n, probes, seed):
        nrm = math.sqrt(float(kap @ (u * u)))
        if nrm == 0:
            continue
        u = u / nrm
        worst = max(worst, abs(float(kap @ (average(model, rho, u) - u))))
    return worst < tol, worst


def finite_reduction(model: Model, rho: Measure):
    """The (kappa, A) pair on the atoms carrying positive kappa."""
    from .finite import FiniteModel
    km = kernel_matrix(model, rho)
    keep = (rho.weights > 0) & (km.s > 0)
    m = rho.weights[keep]
    s = km.s[keep]
    phi = km.phi[np.ix_(keep, keep)]
    A = phi * m[None, :] / s[:, None]
    A = A / A.sum(axis=1, keepdims=True)
    return FiniteModel(m * s, A), keep


def check_ball_positive(model: Model, rho: Measure, tol: float = 1e-10, probes: int = 200,
                        seed: int = 0):
    """Worst (u,<u>)_kappa - |<u>|_kappa^2 over unit-kappa-norm probes.

    Probes are random normal fields plus the eigen-directions of the finite
    reduction's ball-positivity form; every probe is evaluated through ``average``.
    """
    kap = kappa(model, rho)
    fm, keep = finite_reduction(model, rho)
    K = fm.kappa
    B = 0.5 * (K[:, None] * fm.A + (K[:, None] * fm.A).T) - fm.A.T @ (K[:, None] * fm.A)
    isq = 1.0 / np.sqrt(K)
    _, vecs = np.linalg.eigh(isq[:, None] * B * isq[None, :])
    eig_dirs = np.zeros((vecs.shape[1], rho.n))
    eig_dirs[:, keep] = (isq[:, None] * vecs).T
    fields = np.vstack([_probe_fields(rho.n, probes, seed), eig_dirs])
    worst = math.inf
    for u in fields:
        nrm = math.sqrt(float(kap @ (u * u)))
        if nrm == 0:
            continue
        u = u / nrm
        a = average(model, rho, u)
        worst = min(worst, float(kap @ (u * a) - kap @ (a * a)))
    return worst >= -tol, worst


def search_ball_positivity_violation(model: Model, sampler, trials: int = 200, seed: int = 0,
                                     artifact: str | Path | None = None, tol: float = 1e-10):
    """Random search for a measure on which the model is not ball-positive.

    ``sampler(rng)`` returns a Measure.  The first violating instance is written
    to ``artifact`` as JSON when a path is given.
    """
    from .measures import measure_to_dict
    rng = np.random.default_rng(seed)
    for trial in range(trials):
        rho = sampler(rng)
        ok, margin = check_ball_positive(model, rho, tol=tol, probes=20, seed=trial)
        if not ok:
            record = {"model": model_to_config(model), "trial": trial, "margin": margin,
                      "measure": measure_to_dict(rho)}
            if artifact is not None:
                Path(artifact).write_text(json.dumps(record, indent=2))
            return record
    return None


def check_jensen(model: Model, rho: Measure, u, psi: str = "square", tol: float = 1e-12):
    """psi(<u>) <= <psi(u)> pointwise on supp kappa; returns (ok, worst margin)."""
    if psi not in PSI_FUNCTIONS:
        raise ValueError(f"psi must be one of {sorted(PSI_FUNCTIONS)}")
    f = PSI_FUNCTIONS[psi]
    u = check_field(rho, u)
    lhs = f(average(model, rho, u))
    rhs = average(model, rho, f(u))
    on = kappa(model, rho) > 0
    margin = float(np.min((rhs - lhs)[on]))
    return margin >= -tol, margin


def check_galilean(model: Model, rho: Measure, u, h) -> float:
    """max |<u>_{shifted rho}(x + h) - <u>_rho(x)| over the atoms."""
    shifted = rho.with_points(rho.points + np.asarray(h, dtype=float))
    return float(np.max(np.abs(average(model, shifted, u) - average(model, rho, u))))


def check_kmt_inequality(phi: Kernel, beta: float, rho: Measure) -> float:
    """max over the grid of (rho / rho_phi^(1-beta))_phi / rho_phi^beta."""
    if not 0 <= beta <= 1:
        raise ValueError("beta must lie in [0, 1]")
    K = phi(rho.pairwise())
    rphi = K @ rho.weights
    if beta == 1.0:
        ratio = _safe_div(rphi, rphi)
    else:
        inner = _safe_div(rho.weights, rphi ** (1.0 - beta))
        ratio = _safe_div(K @ inner, rphi ** beta)
    return float(ratio[rphi > 0].max())


def check_max_principle(model: Model, rho: Measure, u, tol: float = 1e-12) -> bool:
    u = check_field(rho, u)
    a = average(model, rho, u)
    on = kappa(model, rho) > 0
    return bool(np.all(a[on] <= u.max(axis=0) + tol) and np.all(a[on] >= u.min(axis=0) - tol))


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def model_to_config(model: Model) -> dict:
    d = {"kind": model.kind, "name": model.name}
    if model.kernel is not None:
        d["kernel"] = model.kernel.to_dict()
    if model.kind == "beta":
        d["beta"] = model.beta
    if model.kind == "overmollified":
        d["quad_nodes"] = model.quad_nodes
    if model.partition is not None:
        d["partition"] = model.partition.to_dict()
        d["partition"]["length"] = model.partition.domain.length
    if model.edges is not None:
        d["edges"] = list(model.edges)
    if model.kind == "topological":
        d.update(alpha=model.alpha, eps=model.eps_top, width=model.width,
                 eccentricity=model.eccentricity)
    d["flags"] = model.flags
    return d


def model_from_config(cfg: dict, domain: Domain | None = None) -> Model:
    """Build a model from a plain mapping (as read from a YAML config)."""
    if not isinstance(cfg, dict):
        raise ValueError("model: expected a mapping")
    kind = cfg.get("kind")
    if kind not in KINDS:
        raise ValueError(f"model.kind: unknown kind {kind!r}")
    domain = domain or torus(cfg.get("length", 1.0))
    kernel = None
    if "kernel" in cfg:
        try:
            kernel = kernel_from_dict(cfg["kernel"])
        except (TypeError, ValueError, KeyError) as exc:
            raise ValueError(f"model.kernel: {exc}") from exc
    name = cfg.get("name", "")
    if kind == "overmollified":
        if kernel is None:
            raise ValueError("model.kernel: required for overmollified")
        if not kernel.mollifier:
            kernel = kernel.normalized(domain)
        return Model(kind, kernel, quad_nodes=int(cfg.get("quad_nodes", 512)), name=name)
    if kind == "segregation":
        p = cfg.get("partition", {})
        if "count" in p:
            part = Partition.uniform(int(p["count"]), domain, float(p.get("radius_factor", 0.75)))
        elif "centers" in p and "radius" in p:
            part = Partition(np.asarray(p["centers"], dtype=float), float(p["radius"]), domain)
        else:
            raise ValueError("model.partition: needs count or centers+radius")
        return Model(kind, partition=part, name=name)
    if kind == "rough_partition":
        if "edges" not in cfg:
            raise ValueError("model.edges: required for rough_partition")
        return Model(kind, edges=tuple(cfg["edges"]), name=name)
    if kind == "beta":
        return Model(kind, kernel, beta=float(cfg.get("beta", 1.0)), name=name)
    if kind == "topological":
        return Model(kind, kernel, alpha=float(cfg.get("alpha", 2.0)),
                     eps_top=float(cfg.get("eps", 0.1)), width=float(cfg.get("width", 0.02)),
                     eccentricity=float(cfg.get("eccentricity", 0.5)), name=name)
    if kind in ("cucker_smale", "motsch_tadmor") and kernel is None:
        raise ValueError(f"model.kernel: required for {kind}")
    return Model(kind, kernel, name=name)


def builtin_models(domain: Domain | None = None) -> dict:
    """A representative instance of every built-in kind on the unit torus."""
    from .measures import bump, cs_power, gaussian
    domain = domain or torus()
    psi = gaussian(0.05)
    return {
        "global": global_model(),
        "identity": identity_model(),
        "cucker_smale": cucker_smale(cs_power(1.0)),
        "cucker_smale_bochner": Model("cucker_smale", bochner(psi), name="cucker_smale_bochner"),
        "motsch_tadmor": motsch_tadmor(bump(0.2, 0.3)),
        "beta": beta_model(bump(0.2, 0.3), 0.5),
        "overmollified": overmollified(bump(0.15, 0.25), domain=domain),
        "segregation": segregation(Partition.uniform(4, domain)),
        "rough_partition": rough_partition([0.0, 0.25, 0.5, 0.75]),
        "topological": topological(gaussian(0.3), alpha=4.0, eps=0.01),
    }
