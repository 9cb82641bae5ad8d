"""Models on finite sets: a strength vector kappa and a right-stochastic matrix A."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

ROW_TOL = 1e-12
PROPERTY_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class FiniteModel:
    kappa: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        k = np.asarray(self.kappa, dtype=float).ravel().copy()
        A = np.asarray(self.A, dtype=float).copy()
        if A.ndim != 2 or A.shape != (len(k), len(k)):
            raise ValueError("A must be square and match kappa")
        if np.any(k <= 0):
            raise ValueError("kappa must be positive")
        if np.any(A < -ROW_TOL):
            raise ValueError("A must be non-negative")
        if np.max(np.abs(A.sum(axis=1) - 1.0)) > ROW_TOL:
            raise ValueError("A must be right-stochastic (rows sum to 1)")
        k.setflags(write=False)
        A.setflags(write=False)
        object.__setattr__(self, "kappa", k)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return len(self.kappa)

    @property
    def KA(self) -> np.ndarray:
        return self.kappa[:, None] * self.A

    def to_json(self) -> str:
        return json.dumps({"kappa": self.kappa.tolist(), "A": self.A.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "FiniteModel":
        d = json.loads(text)
        return cls(np.asarray(d["kappa"]), np.asarray(d["A"]))


def conservation_residual(fm: FiniteModel) -> float:
    return float(np.max(np.abs(fm.A.T @ fm.kappa - fm.kappa)))


def symmetry_residual(fm: FiniteModel) -> float:
    KA = fm.KA
    return float(np.max(np.abs(KA - KA.T)))


def is_conservative(fm: FiniteModel) -> bool:
    return conservation_residual(fm) < PROPERTY_TOL


def is_symmetric(fm: FiniteModel) -> bool:
    return symmetry_residual(fm) < PROPERTY_TOL


def ball_positivity_margin(fm: FiniteModel) -> float:
    """Smallest eigenvalue of sym(KA) - A^T K A."""
    KA = fm.KA
    B = 0.5 * (KA + KA.T) - fm.A.T @ KA
    return float(np.linalg.eigvalsh(0.5 * (B + B.T))[0])


def is_ball_positive(fm: FiniteModel):
    """(verdict, margin, status) with status 'boundary' when |margin| <= 1e-10."""
    margin = ball_positivity_margin(fm)
    status = "boundary" if abs(margin) <= PROPERTY_TOL else ("positive" if margin > 0 else "violated")
    return margin >= -PROPERTY_TOL, margin, status


def doubly_stochastic_residual(fm: FiniteModel) -> float:
    return float(max(np.max(np.abs(fm.A.sum(axis=0) - 1)), np.max(np.abs(fm.A.sum(axis=1) - 1))))


def counterexample_3pt(lambda1: float, lambda2: float) -> FiniteModel:
    """Doubly stochastic, non-symmetric yet ball-positive 3-point model (kappa = 1)."""
    l1, l2 = float(lambda1), float(lambda2)
    if not (0 < l1 < 1 and 0 < l2 < 1):
        raise ValueError("0 < lambda_i < 1 required")
    if l1 == l2:
        raise ValueError("λ₁ ≠ λ₂ required")
    failed = []
    if 1 + l2 - 2 * l1 < 0:
        failed.append(f"1+λ₂−2λ₁ = {1 + l2 - 2 * l1:.6g} < 0")
    if 1 + l1 - 2 * l2 < 0:
        failed.append(f"1+λ₁−2λ₂ = {1 + l1 - 2 * l2:.6g} < 0")
    lhs = (l1 + l2 - 2 * l1 * l2) ** 2
    rhs = 16 * (l2 - l2 ** 2) * (l1 - l1 ** 2)
    if lhs > rhs:
        failed.append(f"(λ₁+λ₂−2λ₁λ₂)² = {lhs:.6g} > 16(λ₂−λ₂²)(λ₁−λ₁²) = {rhs:.6g}")
    if failed:
        raise ValueError("counterexample conditions fail: " + "; ".join(failed))
    A = np.array([
        [1 + l1 + l2, 1 + l2 - 2 * l1, 1 + l1 - 2 * l2],
        [1 - l1, 1 + 2 * l1, 1 - l1],
        [1 - l2, 1 - l2, 1 + 2 * l2],
    ]) / 3.0
    return FiniteModel(np.ones(3), A)


def _constraint_vector(fm: FiniteModel, subspace: str, rho):
    if subspace == "zero_momentum":
        if rho is None:
            raise ValueError("zero_momentum needs the mass vector rho")
        c = np.asarray(rho, dtype=float).ravel()
        if c.shape != fm.kappa.shape:
            raise ValueError("rho must match kappa in length")
        return c
    if subspace == "zero_kappa_mean":
        return fm.kappa.copy()
    raise ValueError(f"unknown subspace {subspace!r}")


def numerical_range_max(fm: FiniteModel, c) -> float:
    """max (u, A u)_K over ||u||_K = 1 and c . u = 0."""
    sq = np.sqrt(fm.kappa)
    S = 0.5 * (fm.KA + fm.KA.T)
    M = S / sq[:, None] / sq[None, :]
    Q = null_space((c / sq)[None, :])
    if Q.shape[1] == 0:
        return -np.inf
    return float(np.linalg.eigvalsh(Q.T @ M @ Q)[-1])


def spectral_gap_finite(fm: FiniteModel, subspace: str = "zero_momentum", rho=None) -> float:
    """epsilon = 1 - sup (u, A u)_K over the unit sphere of the subspace."""
    return 1.0 - numerical_range_max(fm, _constraint_vector(fm, subspace, rho))


def check_gap_equivalence(fm: FiniteModel, rho, c0: float, c1: float):
    """Both implications between the zero-momentum and zero-kappa-mean gaps.

    Returns (ok, report) with the two gaps and the slack of each inequality.
    """
    rho = np.asarray(rho, dtype=float).ravel()
    if not is_conservative(fm):
        raise ValueError("gap equivalence needs a conservative model")
    ratio = fm.kappa / rho
    if np.any(ratio < c0 * (1 - 1e-12)) or np.any(ratio > c1 * (1 + 1e-12)):
        raise ValueError("kappa/rho must lie in [c0, c1]")
    e_mom = spectral_gap_finite(fm, "zero_momentum", rho)
    e_kap = spectral_gap_finite(fm, "zero_kappa_mean")
    f = c0 / (c0 + c1)
    slack1 = e_mom - e_kap * f
    slack2 = e_kap - e_mom * f
    ok = slack1 >= -1e-12 and slack2 >= -1e-12
    return ok, {"eps_momentum": e_mom, "eps_kappa_mean": e_kap,
                "slack_momentum": slack1, "slack_kappa_mean": slack2}


def adjoint(fm: FiniteModel) -> np.ndarray:
    """kappa-adjoint K^-1 A^T K of the matrix A."""
    return (fm.A.T * fm.kappa[None, :]) / fm.kappa[:, None]


# ---------------------------------------------------------------------------
# random instances
# ---------------------------------------------------------------------------

def sinkhorn(M, row, col, iters: int = 5000, tol: float = 1e-14):
    """Scale a positive matrix to the given row and column sums."""
    M = np.asarray(M, dtype=float).copy()
    for _ in range(iters):
        M *= (row / M.sum(axis=1))[:, None]
        M *= (col / M.sum(axis=0))[None, :]
        if np.max(np.abs(M.sum(axis=1) - row)) < tol:
            break
    return M


def random_finite_model(rng: np.random.Generator, n: int, family: str = "generic") -> FiniteModel:
    """Random right-stochastic model from one of several structural families.

    generic        Dirichlet rows, random kappa
    sparse         generic with random zero entries
    symmetric      A = K^-1 S, S symmetric non-negative
    conservative   A = K^-1 M with M Sinkhorn-scaled to marginals (kappa, kappa)
    ball_positive  convex mix of the identity and a random segregation-type model
    """
    kap = rng.uniform(0.2, 2.0, n)
    if family in ("generic", "sparse"):
        A = rng.dirichlet(np.full(n, rng.uniform(0.2, 2.0)), size=n)
        if family == "sparse":
            A = A * (rng.uniform(size=(n, n)) < 0.5)
            A[np.arange(n), np.arange(n)] += 1e-3
            A = A / A.sum(axis=1, keepdims=True)
        return FiniteModel(kap, A)
    if family == "symmetric":
        S = rng.exponential(size=(n, n))
        S = S + S.T
        kap = S.sum(axis=1)
        return FiniteModel(kap, S / kap[:, None])
    if family == "conservative":
        M = sinkhorn(rng.exponential(size=(n, n)), kap, kap)
        A = M / kap[:, None]
        return FiniteModel(kap, A / A.sum(axis=1, keepdims=True))
    if family == "ball_positive":
        L = int(rng.integers(1, n + 1))
        G = rng.dirichlet(np.ones(L), size=n)      # g_l(x_i), rows sum to one
        mass = G.T @ kap
        S = (G * kap[:, None]) @ ((G * kap[:, None]) / mass[None, :]).T
        theta = rng.uniform(0, 1)
        A = theta * np.eye(n) + (1 - theta) * S / kap[:, None]
        return FiniteModel(kap, A / A.sum(axis=1, keepdims=True))
    raise ValueError(f"unknown family {family!r}")
