"""Transport amplitudes riding on the multivalued phase.

The leading symbol attached to the reduced phase family is

    b₀(t, x, θ) = exp{ −(1/2m) ∫₀ᵗ Δ_x S(τ, γ^x(τ), θ) dτ } · ρ(θ),
    ρ(θ) = π^{−k/2} e^{−|θ|²},

with γ^x(τ) the position curve of the (t, x, θ) family — the closed-form
solution of the leading transport (continuity) equation

    ∂_t b + (1/m) ∇_x S · ∇_x b + (1/2m) (Δ_x S) b = 0

along the characteristics ζ̇ = ∇_x S / m.  The initial-momentum slot never
appears: every η-dependent term of S is linear in x or x-free, so Δ_x and
the curves γ^x are η-free, which is what makes batching over η free.

Higher corrections integrate the Laplacian of the previous symbol along the
same characteristics,

    b_{j}(t, x) = (i/2m) ∫₀ᵗ [Δ_x b_{j-1}](τ, ζ(τ)) dτ ,   ζ(t) = x,

at fixed (η, θ).

Step sizes here are chosen for the *residual* check, which differences b₀
itself: the inner Laplacian of S runs at a larger step than the generating
module's defaults, trading a little truncation bias (smooth, mostly
cancelling) against the 1/h² amplification of solver reproducibility noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp

from .genfun import AczConfig, _eval_batch, _frame, _solve_many, _theta_coeffs, eval_S_derivs
from .pathspace import volterra_rows

__all__ = [
    "SymbolConfig",
    "b0",
    "b0_batch",
    "rho_weight",
    "transport_correction",
    "transport_residual",
]


@dataclass(frozen=True)
class SymbolConfig:
    """Stencil and quadrature knobs for the transport symbols.

    fd_lap    spatial step scale for Laplacians of S (inner integrand and
              the residual's own Δ_xS term)
    fd_outer  step scale for first differences of b₀ in t and x (Richardson)
    n_tau     Gauss–Legendre node count for the ∫₀ᵗ transport integral
    rho_width Gaussian width of the normalized weight ρ.  The width is a
              gauge choice: the synthesized propagator normalization never
              sees it, and the stationary-phase normal form scales by
              exactly ρ(θ*) per branch, so changing it moves nothing
              physical.  The property suite pins both facts by varying
              this knob.
    """

    fd_lap: float = 3e-3
    fd_outer: float = 4e-3
    n_tau: int = 12
    ode_rtol: float = 1e-10
    ode_atol: float = 1e-12
    rho_width: float = 1.0

    def __post_init__(self) -> None:
        if self.rho_width <= 0.0:
            raise ValueError("rho_width must be positive")


def rho_weight(theta: np.ndarray, *, width: float = 1.0) -> np.ndarray:
    """Normalized Gaussian ρ(θ) = (πw²)^{−k/2} e^{−|θ|²/w²}; batched over
    leading axes.  ∫ρ dθ = 1 for every width."""
    theta = np.asarray(theta, dtype=np.float64)
    k = theta.shape[-1]
    return (math.pi * width**2) ** (-k / 2.0) * np.exp(
        -np.sum(theta**2, axis=-1) / width**2
    )


def _tau_rule(t: float, n_tau: int):
    """GL nodes/weights on [0, t]; nodes scale with t, so the rule is a
    smooth function of t — required for clean time differences through it."""
    z, w = leggauss(n_tau)
    return 0.5 * t * (z + 1.0), 0.5 * t * w


def _curve_positions(cfg: AczConfig, frame, TH, F, X, taus):
    """γ^x at arbitrary τ values for a solved batch; (B, n, n_tau)."""
    n = cfg.hamiltonian.dim
    A_tau = cfg.basis.antideriv_matrix(taus, "low")
    AT_rows = frame.at_row[None, :] - A_tau
    WT_rows = frame.wa[None, :] - volterra_rows(frame.grid, taus)
    return X[:, :, None] - (TH[:, :n, :] @ AT_rows.T + F[:, :n, :] @ WT_rows.T)


def _laplacian_S_at(cfg, sym, tau, Z, TH):
    """Δ_x S(τ, z, θ) for a batch of (z, θ); (B,) via one stencil batch.

    η is irrelevant for the Laplacian and passed as zero.
    """
    B, n = Z.shape
    frame = _frame(cfg, tau)
    h = sym.fd_lap * (1.0 + np.abs(Z))               # (B, n)
    rows = [Z]
    for i in range(n):
        zp = Z.copy(); zp[:, i] += h[:, i]
        zm = Z.copy(); zm[:, i] -= h[:, i]
        rows.extend([zp, zm])
    Xs = np.concatenate(rows, axis=0)
    THs = np.concatenate([TH] * (2 * n + 1), axis=0)
    ETAs = np.zeros_like(Xs)
    S, _ = _eval_batch(cfg, frame, Xs, ETAs, THs)
    S = S.reshape(2 * n + 1, B)
    lap = np.zeros(B)
    for i in range(n):
        lap += (S[1 + 2 * i] - 2.0 * S[0] + S[2 + 2 * i]) / h[:, i] ** 2
    return lap


def b0_batch(cfg: AczConfig, t: float, X: np.ndarray, TH: np.ndarray,
             sym: SymbolConfig | None = None, *, include_weight: bool = True) -> np.ndarray:
    """Leading symbol b₀ for batches X (B, n), TH (B, 2n, n_modes); (B,).

    At t = 0 the transport integral is empty and b₀ = ρ(θ) exactly.  With
    include_weight=False the Gaussian factor ρ(θ) is left out — for callers
    whose θ-quadrature carries the weight already.
    """
    sym = sym or SymbolConfig()
    B = X.shape[0]
    k = cfg.theta_dim
    if include_weight:
        rho = rho_weight(TH.reshape(B, k), width=sym.rho_width)
    else:
        rho = np.ones(B)
    if t <= 0.0:
        return rho
    frame = _frame(cfg, t)
    F, _, _, _ = _solve_many(cfg, frame, X, TH)
    taus, tw = _tau_rule(t, sym.n_tau)
    gamma = _curve_positions(cfg, frame, TH, F, X, taus)
    integral = np.zeros(B)
    for q, tau in enumerate(taus):
        integral += tw[q] * _laplacian_S_at(cfg, sym, tau, gamma[:, :, q].copy(), TH)
    return np.exp(-integral / (2.0 * cfg.hamiltonian.mass)) * rho


def b0(cfg: AczConfig, t: float, x, theta, sym: SymbolConfig | None = None) -> float:
    """Leading symbol at one (t, x, θ)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    TH = _theta_coeffs(cfg, theta)[None]
    return float(b0_batch(cfg, t, x[None], TH, sym=sym)[0])


# ---------------------------------------------------------------------------
# residual check and higher corrections


def transport_residual(cfg: AczConfig, t: float, x, eta, theta,
                       sym: SymbolConfig | None = None) -> float:
    """|∂_t b₀ + (1/m)∇_xS·∇_xb₀ + (1/2m)(Δ_xS) b₀| at fixed (η, θ).

    The b₀ differences are Richardson-extrapolated central stencils; ∇_xS
    comes from the generating module's tight first-derivative path; Δ_xS
    uses the same stencil b₀'s own integrand uses, so the bias largely
    cancels.  θ is typically a branch point but nothing requires it — the
    transport equation holds for every fixed θ.
    """
    sym = sym or SymbolConfig()
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    TH = _theta_coeffs(cfg, theta)[None]
    n = cfg.hamiltonian.dim
    m = cfg.hamiltonian.mass

    def b0_at(tt, xx):
        return b0_batch(cfg, tt, xx[None], TH, sym=sym)[0]

    # ∂_t b₀, Richardson over h and h/2; backward at the window end
    ht = sym.fd_outer * (1.0 + t)
    if t - 2.0 * ht <= 0.0:
        raise ValueError("transport residual needs t > 2·fd_outer·(1+t)")
    if t + ht <= cfg.basis.period:
        d_h = (b0_at(t + ht, x) - b0_at(t - ht, x)) / (2.0 * ht)
        d_h2 = (b0_at(t + 0.5 * ht, x) - b0_at(t - 0.5 * ht, x)) / ht
    else:
        b_t = b0_at(t, x)
        d_h = (3.0 * b_t - 4.0 * b0_at(t - ht, x) + b0_at(t - 2.0 * ht, x)) / (2.0 * ht)
        d_h2 = (3.0 * b_t - 4.0 * b0_at(t - 0.5 * ht, x) + b0_at(t - ht, x)) / ht
    db_dt = (4.0 * d_h2 - d_h) / 3.0

    # ∇_x b₀, same scheme per dimension
    grad_b = np.zeros(n)
    for i in range(n):
        hx = sym.fd_outer * (1.0 + abs(x[i]))
        xp = x.copy(); xp[i] += hx
        xm = x.copy(); xm[i] -= hx
        g_h = (b0_at(t, xp) - b0_at(t, xm)) / (2.0 * hx)
        xp2 = x.copy(); xp2[i] += 0.5 * hx
        xm2 = x.copy(); xm2[i] -= 0.5 * hx
        g_h2 = (b0_at(t, xp2) - b0_at(t, xm2)) / hx
        grad_b[i] = (4.0 * g_h2 - g_h) / 3.0

    gp = eval_S_derivs(cfg, t, x, eta, theta, request=("value", "grad_x"))
    lap_S = _laplacian_S_at(cfg, sym, t, x[None].copy(), TH)[0]
    b_val = b0_at(t, x)
    residual = db_dt + float(gp.grad_x @ grad_b) / m + lap_S * b_val / (2.0 * m)
    return abs(float(residual))


def _characteristic(cfg: AczConfig, t: float, x, eta, theta, sym: SymbolConfig):
    """Backward characteristic ζ(τ), ζ(t) = x, ζ̇ = ∇_xS(τ, ζ, η, θ)/m.

    Returns a dense-output callable on [0, t].  The gradient is differenced
    on the fly; adaptive steps hit arbitrary τ, which the per-time frame
    cache absorbs.
    """
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    TH = _theta_coeffs(cfg, theta)[None]
    n = cfg.hamiltonian.dim
    m = cfg.hamiltonian.mass

    def rhs(tau, z):
        tau = min(max(tau, 0.0), cfg.basis.period)
        frame = _frame(cfg, tau)
        h = cfg.fd_step * (1.0 + np.abs(z))
        rows = []
        for i in range(n):
            zp = z.copy(); zp[i] += h[i]
            zm = z.copy(); zm[i] -= h[i]
            rows.extend([zp, zm])
        Xs = np.asarray(rows)
        S, _ = _eval_batch(
            cfg, frame, Xs,
            np.broadcast_to(eta, Xs.shape).copy(),
            np.concatenate([TH] * Xs.shape[0], axis=0),
        )
        return np.array([(S[2 * i] - S[2 * i + 1]) / (2.0 * h[i]) for i in range(n)]) / m

    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    sol = solve_ivp(
        rhs, (t, 0.0), x, method="DOP853", dense_output=True,
        rtol=sym.ode_rtol, atol=sym.ode_atol,
    )
    if not sol.success:
        raise RuntimeError(f"characteristic integration failed: {sol.message}")
    return sol.sol


def transport_correction(cfg: AczConfig, t: float, x, eta, theta,
                         sym: SymbolConfig | None = None) -> complex:
    """First correction b₁ = (i/2m)∫₀ᵗ Δ_x b₀(τ, ζ(τ)) dτ along ζ.

    Purely diagnostic order-ħ data; the Laplacian of b₀ is differenced with
    the outer step and the integral uses the same scaled GL rule as b₀.
    """
    sym = sym or SymbolConfig()
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    TH = _theta_coeffs(cfg, theta)[None]
    n = cfg.hamiltonian.dim
    m = cfg.hamiltonian.mass
    zeta = _characteristic(cfg, t, x, eta, theta, sym)
    taus, tw = _tau_rule(t, sym.n_tau)
    total = 0.0
    for q, tau in enumerate(taus):
        z = zeta(tau)
        lap_b = 0.0
        for i in range(n):
            h = sym.fd_outer * (1.0 + abs(z[i]))
            zp = z.copy(); zp[i] += h
            zm = z.copy(); zm[i] -= h
            vals = b0_batch(cfg, tau, np.asarray([zp, z, zm]),
                            np.concatenate([TH] * 3, axis=0), sym=sym)
            lap_b += (vals[0] - 2.0 * vals[1] + vals[2]) / h**2
        total += tw[q] * lap_b
    return 1j * total / (2.0 * m)
