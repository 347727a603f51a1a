"""Quadratic-at-infinity Hamiltonians H(x, p) = |p|²/2m + V(x).

Potentials have the form

    V(x) = ⟨Lx, x⟩ + V₀(x),      V₀(x) = a·cos(⟨w, x⟩)  (or absent),

with L an invertible n×n matrix.  The perturbation V₀ is bounded with bounded
derivatives, so ∇²V = (L+Lᵀ) − a·cos(⟨w,x⟩)·wwᵀ is uniformly bounded and the
phase-space Hessian of H is bounded by max(1/m, ‖L+Lᵀ‖₂ + |a||w|²).

The exact flow integrator in this module is a validation oracle: the
parametrix pipeline never calls it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

# ---------------------------------------------------------------------------
# specifications
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PotentialSpec:
    """Quadratic form plus optional cosine perturbation.

    matrix : the n×n matrix L (need not be symmetric; det L ≠ 0).
    perturbation : "none" or "cosine".
    amplitude, wavevector : a and w for V₀(x) = a·cos(⟨w, x⟩).
    """

    matrix: np.ndarray
    perturbation: str = "none"
    amplitude: float = 0.0
    wavevector: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        L = np.atleast_2d(np.asarray(self.matrix, dtype=np.float64))
        object.__setattr__(self, "matrix", L)
        if L.shape[0] != L.shape[1]:
            raise ValueError(f"L must be square, got {L.shape}")
        if abs(np.linalg.det(L)) < 1e-14:
            raise ValueError("L must be invertible")
        if self.perturbation not in ("none", "cosine"):
            raise ValueError(f"unknown perturbation {self.perturbation!r}")
        if self.perturbation == "cosine":
            if self.wavevector is None:
                raise ValueError("cosine perturbation requires a wavevector")
            w = np.atleast_1d(np.asarray(self.wavevector, dtype=np.float64))
            if w.shape != (L.shape[0],):
                raise ValueError(f"wavevector shape {w.shape} does not match n={L.shape[0]}")
            object.__setattr__(self, "wavevector", w)
        else:
            object.__setattr__(self, "amplitude", 0.0)
            object.__setattr__(self, "wavevector", np.zeros(L.shape[0]))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def symmetric_part(self) -> np.ndarray:
        """L + Lᵀ, the Hessian of the quadratic part."""
        return self.matrix + self.matrix.T


@dataclass(frozen=True)
class HamiltonianSpec:
    """H(x, p) = |p|²/(2·mass) + V(x)."""

    potential: PotentialSpec
    mass: float = 1.0

    def __post_init__(self) -> None:
        if not self.mass > 0.0:
            raise ValueError(f"mass must be positive, got {self.mass}")

    @property
    def dim(self) -> int:
        return self.potential.dim


# ---------------------------------------------------------------------------
# potential derivatives (batched over leading axes)
# ---------------------------------------------------------------------------


def eval_V(pot: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """V(x) for x of shape (..., n); returns shape (...)."""
    x = np.asarray(x, dtype=np.float64)
    quad = np.einsum("...i,ij,...j->...", x, pot.matrix, x)
    if pot.perturbation == "cosine":
        quad = quad + pot.amplitude * np.cos(x @ pot.wavevector)
    return quad


def grad_V(pot: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """∇V(x) = (L+Lᵀ)x − a·sin(⟨w,x⟩)·w, shape (..., n)."""
    x = np.asarray(x, dtype=np.float64)
    g = x @ pot.symmetric_part.T
    if pot.perturbation == "cosine":
        g = g - (pot.amplitude * np.sin(x @ pot.wavevector))[..., None] * pot.wavevector
    return g


def hess_V(pot: PotentialSpec, x: np.ndarray) -> np.ndarray:
    """∇²V(x) = (L+Lᵀ) − a·cos(⟨w,x⟩)·wwᵀ, shape (..., n, n)."""
    x = np.asarray(x, dtype=np.float64)
    sym = pot.symmetric_part
    out = np.broadcast_to(sym, x.shape[:-1] + sym.shape).copy()
    if pot.perturbation == "cosine":
        ww = np.outer(pot.wavevector, pot.wavevector)
        out = out - (pot.amplitude * np.cos(x @ pot.wavevector))[..., None, None] * ww
    return out


def sup_hess_V(pot: PotentialSpec) -> float:
    """Uniform bound sup_x ‖∇²V(x)‖₂ = ‖L+Lᵀ‖₂ + |a||w|²."""
    bound = float(np.linalg.norm(pot.symmetric_part, 2))
    if pot.perturbation == "cosine":
        bound += abs(pot.amplitude) * float(pot.wavevector @ pot.wavevector)
    return bound


def sup_d3_V(pot: PotentialSpec) -> float:
    """Uniform bound on third derivatives: |a||w|³ (zero for pure quadratic)."""
    if pot.perturbation == "cosine":
        return abs(pot.amplitude) * float(np.linalg.norm(pot.wavevector)) ** 3
    return 0.0


def sup_hess_H(ham: HamiltonianSpec) -> float:
    """sup ‖∇²H‖ over phase space: max(1/m, sup‖∇²V‖)."""
    return max(1.0 / ham.mass, sup_hess_V(ham.potential))


def energy(ham: HamiltonianSpec, x: np.ndarray, p: np.ndarray) -> np.ndarray:
    """H(x, p), batched over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    return np.sum(p * p, axis=-1) / (2.0 * ham.mass) + eval_V(ham.potential, x)


# ---------------------------------------------------------------------------
# weights and resonances
# ---------------------------------------------------------------------------


def lambda_weight(x: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """λ(x, η) = √(1 + |x|² + |η|²), batched over leading axes."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    return np.sqrt(1.0 + np.sum(x * x, axis=-1) + np.sum(eta * eta, axis=-1))


@dataclass(frozen=True)
class ResonantTimes:
    """Resonant times t = π(2β+1)/(2√λ_α) in (0, T] for eigenvalues λ_α of L+Lᵀ.

    When L+Lᵀ is not positive definite the enumeration is empty and
    positive_definite is False: the quadratic comparison spectrum is not real
    and no resonance certificate is available.

    The formula is in normalized time (it carries no mass factor); for
    mass ≠ 1 the flow's true caustic times are rescaled by √mass.
    """

    times: np.ndarray
    positive_definite: bool


def resonant_times(ham: HamiltonianSpec, horizon: float) -> ResonantTimes:
    """Enumerate resonant times of the quadratic part in (0, horizon]."""
    sym = ham.potential.symmetric_part
    eigs = np.linalg.eigvalsh(sym)
    if np.any(eigs <= 0.0):
        return ResonantTimes(np.empty(0), False)
    times = []
    for lam in eigs:
        root = math.sqrt(lam)
        beta = 0
        while True:
            t = math.pi * (2 * beta + 1) / (2.0 * root)
            if t > horizon:
                break
            times.append(t)
            beta += 1
    return ResonantTimes(np.unique(np.asarray(times)), True)


def nearest_resonance(ham: HamiltonianSpec, horizon: float, t: float):
    """Resonant time closest to t (None if the set is empty)."""
    res = resonant_times(ham, max(horizon, t) + 1.0)
    if res.times.size == 0:
        return None
    return float(res.times[np.argmin(np.abs(res.times - t))])


# ---------------------------------------------------------------------------
# exact flow (validation oracle only)
# ---------------------------------------------------------------------------


def classical_flow(
    ham: HamiltonianSpec,
    y: np.ndarray,
    eta: np.ndarray,
    t: float,
    rtol: float = 1e-12,
    atol: float = 1e-12,
    dense_times: np.ndarray | None = None,
):
    """Hamiltonian flow (y, η) ↦ (x(t), p(t)) by high-order adaptive integration.

    Validation oracle only — the parametrix never calls this.  Returns the
    final (x, p) pair, or (xs, ps) sampled at dense_times when given.
    """
    n = ham.dim
    y = np.atleast_1d(np.asarray(y, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))

    def rhs(_s, z):
        x, p = z[:n], z[n:]
        return np.concatenate([p / ham.mass, -grad_V(ham.potential, x)])

    if t == 0.0:
        if dense_times is None:
            return y.copy(), eta.copy()
        reps = np.ones(len(dense_times))
        return np.outer(reps, y), np.outer(reps, eta)

    sol = solve_ivp(
        rhs,
        (0.0, t),
        np.concatenate([y, eta]),
        method="DOP853",
        rtol=rtol,
        atol=atol,
        t_eval=dense_times,
        dense_output=False,
    )
    if not sol.success:  # pragma: no cover - DOP853 on smooth bounded RHS
        raise RuntimeError(f"flow integration failed: {sol.message}")
    if dense_times is None:
        z = sol.y[:, -1]
        return z[:n], z[n:]
    return sol.y[:n].T, sol.y[n:].T


def flow_positions(
    ham: HamiltonianSpec,
    ys: np.ndarray,
    eta: np.ndarray,
    t: float,
    rtol: float = 1e-12,
    atol: float = 1e-12,
) -> np.ndarray:
    """Final positions x(t; yᵢ, η) for a batch of initial positions (oracle).

    All trajectories share one stacked integration so scanning thousands of
    shooting candidates stays cheap.
    """
    n = ham.dim
    ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))  # (B, n)
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    B = ys.shape[0]
    if t == 0.0:
        return ys.copy()

    def rhs(_s, z):
        x = z[: B * n].reshape(B, n)
        p = z[B * n :].reshape(B, n)
        return np.concatenate(
            [(p / ham.mass).reshape(-1), -grad_V(ham.potential, x).reshape(-1)]
        )

    z0 = np.concatenate([ys.reshape(-1), np.tile(eta, B)])
    sol = solve_ivp(rhs, (0.0, t), z0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:  # pragma: no cover
        raise RuntimeError(f"flow integration failed: {sol.message}")
    return sol.y[: B * n, -1].reshape(B, n)
