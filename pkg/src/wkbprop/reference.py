"""Independent references: split-step evolution and closed-form solutions.

Nothing here touches the reduction — these are the other side of every
comparison.  The split-step integrator is plain Strang splitting with the
kinetic half exact in Fourier space; the free evolution is a single exact
kinetic step (splitting is exact when V ≡ 0, so the free case gets its own
entry point rather than a fake zero potential, which the potential spec
cannot express anyway).
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .hamiltonian import HamiltonianSpec, eval_V

__all__ = [
    "free_gaussian",
    "free_kinetic",
    "l2_error",
    "l2_norm",
    "mehler_phase",
    "relative_l2_error",
    "split_step",
]


def _check_uniform(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValueError("need at least two grid nodes")
    dx = np.diff(x)
    if np.max(np.abs(dx - dx[0])) > 1e-10 * abs(dx[0]):
        raise ValueError("split-step requires a uniform grid")
    return float(dx[0])


def split_step(
    ham: HamiltonianSpec,
    x: np.ndarray,
    psi: np.ndarray,
    t: float,
    hbar: float,
    *,
    dt: float = 1e-3,
    norm_tol: float = 1e-10,
    edge_fraction: float = 0.05,
    edge_tol: float = 1e-8,
) -> np.ndarray:
    """Strang split-step evolution of ψ on a uniform grid over time t.

    The step count is ⌈t/dt⌉ with the step adjusted to divide t exactly.
    Unitarity is verified at the end (norm drift beyond norm_tol raises);
    probability mass in the outer edge_fraction of the box beyond edge_tol
    triggers a warning — the box was too small for the evolved state.
    """
    dx = _check_uniform(x)
    psi = np.asarray(psi, dtype=np.complex128).copy()
    if t == 0.0:
        return psi
    if t < 0.0:
        raise ValueError("t must be nonnegative")
    n_steps = max(1, int(math.ceil(t / dt)))
    step = t / n_steps
    p = hbar * 2.0 * math.pi * np.fft.fftfreq(x.size, d=dx)
    kin = np.exp(-0.5j * step * p**2 / (ham.mass * hbar))
    vx = eval_V(ham.potential, np.asarray(x, dtype=np.float64)[:, None])
    half_v = np.exp(-0.5j * step * vx / hbar)
    norm0 = math.sqrt(float(np.sum(np.abs(psi) ** 2)) * dx)
    for _ in range(n_steps):
        psi *= half_v
        psi = np.fft.ifft(kin * np.fft.fft(psi))
        psi *= half_v
    norm1 = math.sqrt(float(np.sum(np.abs(psi) ** 2)) * dx)
    if abs(norm1 - norm0) > norm_tol * max(norm0, 1e-300):
        raise RuntimeError(
            f"split-step norm drift {abs(norm1 - norm0):.3e} exceeds {norm_tol:.1e}"
        )
    edge = max(1, int(edge_fraction * x.size))
    edge_mass = (np.sum(np.abs(psi[:edge]) ** 2) + np.sum(np.abs(psi[-edge:]) ** 2)) * dx
    if edge_mass > edge_tol * norm0**2:
        warnings.warn(
            f"probability mass {edge_mass:.3e} near the box edge; enlarge the grid",
            RuntimeWarning,
            stacklevel=2,
        )
    return psi


def free_kinetic(x: np.ndarray, psi: np.ndarray, t: float, hbar: float,
                 *, mass: float = 1.0) -> np.ndarray:
    """Exact free evolution (V ≡ 0) in one Fourier step."""
    dx = _check_uniform(x)
    psi = np.asarray(psi, dtype=np.complex128)
    if t == 0.0:
        return psi.copy()
    p = hbar * 2.0 * math.pi * np.fft.fftfreq(x.size, d=dx)
    return np.fft.ifft(np.exp(-0.5j * t * p**2 / (mass * hbar)) * np.fft.fft(psi))


def free_gaussian(x: np.ndarray, t: float, hbar: float, *, center: float = 0.0,
                  momentum: float = 0.0, width: float = 1.0,
                  mass: float = 1.0) -> np.ndarray:
    """Closed-form free evolution of the Gaussian packet

        ψ₀(x) = (2πσ²)^{-1/4} exp(−(x−c)²/(4σ²) + i p (x−c)/ħ):

        ψ(x,t) = (2πσ²)^{-1/4} √(σ²/α) ·
                 exp(−(x−c−pt/m)²/(4α) + i[p(x−c)/ħ − p²t/(2mħ)]),
        α = σ² + iħt/(2m)   (principal square root).
    """
    x = np.asarray(x, dtype=np.float64)
    sigma2 = width**2
    alpha = sigma2 + 0.5j * hbar * t / mass
    shift = x - center - momentum * t / mass
    return (
        (2.0 * math.pi * sigma2) ** -0.25
        * np.sqrt(sigma2 / alpha)
        * np.exp(
            -(shift**2) / (4.0 * alpha)
            + 1j * (momentum * (x - center) / hbar - momentum**2 * t / (2.0 * mass * hbar))
        )
    )


def mehler_phase(x: float, eta: float, t: float) -> float:
    """Generating phase of the unit harmonic oscillator (V = x²/2, m = 1):

        S(t, x, η) = (xη − (sin t / 2)(x² + η²)) / cos t ,

    valid away from the caustic times t = π/2 + πZ."""
    c = math.cos(t)
    if abs(c) < 1e-9:
        raise ValueError(f"t={t} is within 1e-9 of a caustic of the oscillator")
    return (x * eta - 0.5 * math.sin(t) * (x**2 + eta**2)) / c


def l2_norm(values: np.ndarray, dx: float) -> float:
    return math.sqrt(float(np.sum(np.abs(values) ** 2)) * dx)


def l2_error(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    return l2_norm(np.asarray(a) - np.asarray(b), dx)


def relative_l2_error(a: np.ndarray, b: np.ndarray, dx: float) -> float:
    """‖a − b‖ / ‖b‖ — b is the reference."""
    return l2_error(a, b, dx) / l2_norm(b, dx)
