"""NumPy backend for the hot fixed-point / action / residual kernels.

Everything is batched over a leading axis B with layout (B, components,
trailing), trailing being a mode index or a grid-node index, so each hot
operation is a GEMM against matrices precomputed once per evaluation time
(see the frame construction in genfun):

    PHI  (nn, nm)  low-band basis values at the grid nodes
    A0   (nn, nm)  ∫₀ˢ of each low mode
    V    (nn, nn)  grid Volterra matrix, (V·g)[i] = ∫₀^{sᵢ} g
    AT   (nn, nm)  ∫ₛᵗ of each low mode  (row s, evaluated at the frame time)
    WT   (nn, nn)  ∫ₛᵗ for grid functions (masked-weight row minus V)
    w    (nn,)     full-interval quadrature weights (L² projections)
    wa   (nn,)     weights masked beyond the frame time (action integrals)

The tail unknown F holds path values at the grid nodes, i.e. the fixed point
is solved in collocation form on the orthogonal complement of the low band at
quadrature resolution.  The constant η/m block of the map is omitted from the
iteration — the low-band projector removes it exactly — which keeps F
independent of η; the public residual restores it.
"""

from __future__ import annotations

import numpy as np

BACKEND_NAME = "python"

# Iteration deltas below this scale are treated as rounding stall when
# estimating contraction rates.
_STALL = 1e-13


def _grad_V_nodes(gx: np.ndarray, lsym: np.ndarray, pamp: float, wvec: np.ndarray) -> np.ndarray:
    """∇V at node positions gx (B, n, nn) → (B, n, nn)."""
    g = np.einsum("de,ben->bdn", lsym, gx)
    if pamp != 0.0:
        phase = np.einsum("d,bdn->bn", wvec, gx)
        g = g - (pamp * np.sin(phase))[:, None, :] * wvec[:, None]
    return g


def _eval_V_nodes(gx: np.ndarray, lquad: np.ndarray, pamp: float, wvec: np.ndarray) -> np.ndarray:
    """V at node positions gx (B, n, nn) → (B, nn)."""
    vals = np.einsum("bdn,de,ben->bn", gx, lquad, gx)
    if pamp != 0.0:
        vals = vals + pamp * np.cos(np.einsum("d,bdn->bn", wvec, gx))
    return vals


def tail_fixed_point(
    PHI: np.ndarray,
    A0: np.ndarray,
    V: np.ndarray,
    w: np.ndarray,
    AT: np.ndarray,
    WT: np.ndarray,
    theta: np.ndarray,
    x: np.ndarray,
    lsym: np.ndarray,
    pamp: float,
    wvec: np.ndarray,
    mass: float,
    tol: float,
    max_iter: int,
    n_exact: int = 0,
    F0: np.ndarray | None = None,
):
    """Iterate F ← (I − P)[G(θ + F)] on the grid.

    theta : (B, 2n, nm) low-band coefficients, positions stacked over momenta.
    x     : (B, n) endpoint positions.
    F0    : optional start values (B, 2n, nn); zeros otherwise.

    With n_exact > 0 exactly that many iterations are run with no convergence
    test, making the output an exactly smooth function of (θ, x) — required
    for clean finite differences.  Otherwise iteration stops once the sup
    update drops below tol·(1 + |F|) (or stalls at rounding level).

    Returns (F, delta, iters, rate): final values, last sup update, iteration
    counts, and the largest observed update ratio after the first step
    (rounding-stalled steps excluded).
    """
    B, two_n, _nm = theta.shape
    n = two_n // 2
    nn = V.shape[0]
    thx = theta[:, :n, :]
    thp = theta[:, n:, :]

    base_Ip = thp @ A0.T  # (B, n, nn): ∫₀ˢ θ^p
    base_Ix = thx @ AT.T  # (B, n, nn): ∫ₛᵗ θ^x
    xb = x[:, :, None]

    F = np.zeros((B, two_n, nn)) if F0 is None else F0.astype(np.float64).copy()
    delta = np.full(B, np.inf)
    rate = np.zeros(B)
    prev_delta = np.full(B, np.inf)
    iters = np.zeros(B, dtype=np.intp)
    done = np.zeros(B, dtype=bool)

    n_steps = n_exact if n_exact > 0 else max_iter
    for it in range(1, n_steps + 1):
        Fx = F[:, :n, :]
        Fp = F[:, n:, :]
        Cx = (base_Ip + Fp @ V.T) / mass
        gx = xb - (base_Ix + Fx @ WT.T)
        Cp = -_grad_V_nodes(gx, lsym, pamp, wvec)
        C = np.concatenate([Cx, Cp], axis=1)
        C -= ((w * C) @ PHI) @ PHI.T
        step = np.max(np.abs(C - F), axis=(1, 2))
        F = C
        scale = 1.0 + np.max(np.abs(F), axis=(1, 2))
        live = ~done
        if it >= 2:
            ok = live & (prev_delta > _STALL * scale) & (step > _STALL * scale)
            ratio = np.divide(step, prev_delta, out=np.zeros_like(step), where=ok)
            rate = np.where(ok, np.maximum(rate, ratio), rate)
        stalled = (step <= _STALL * scale) | (
            (it >= 2) & (step <= 1e-11 * scale) & (step >= 0.9 * prev_delta)
        )
        prev_delta = np.where(live, step, prev_delta)
        delta = np.where(live, step, delta)
        iters = np.where(live, it, iters)
        if n_exact == 0:
            done = done | (step <= tol * scale) | stalled
            if done.all():
                break
    return F, delta, iters, rate


def action_terms(
    PHI: np.ndarray,
    A0: np.ndarray,
    V: np.ndarray,
    wa: np.ndarray,
    AT: np.ndarray,
    WT: np.ndarray,
    theta: np.ndarray,
    F: np.ndarray,
    x: np.ndarray,
    eta: np.ndarray,
    lquad: np.ndarray,
    pamp: float,
    wvec: np.ndarray,
    mass: float,
    t: float,
) -> np.ndarray:
    """Action values S (B,) given converged tail values F.

    S = ⟨x,η⟩ − (t/2m)|η|² − (1/m)⟨η, ∫₀ᵗγ̃^p⟩
        + ∫₀ᵗ [ ⟨γ̃^p, φ^x⟩ − |γ̃^p|²/2m − V(γ^x) ] ds,

    with γ̃^p = ∫₀ˢφ^p (no η), γ^x = x − ∫ₛᵗφ^x, φ = θ + F.
    """
    B, two_n, _nm = theta.shape
    n = two_n // 2
    thx = theta[:, :n, :]
    thp = theta[:, n:, :]
    Fx = F[:, :n, :]
    Fp = F[:, n:, :]

    gamma_p = thp @ A0.T + Fp @ V.T                      # (B, n, nn)
    phi_x = thx @ PHI.T + Fx                             # (B, n, nn)
    gamma_x = x[:, :, None] - (thx @ AT.T + Fx @ WT.T)   # (B, n, nn)

    cross = np.einsum("bdn,bdn->bn", gamma_p, phi_x)
    kinetic = np.einsum("bdn,bdn->bn", gamma_p, gamma_p) / (2.0 * mass)
    pot = _eval_V_nodes(gamma_x, lquad, pamp, wvec)
    a_rest = (cross - kinetic - pot) @ wa

    ip_t = gamma_p @ wa                                  # (B, n)
    s0 = np.einsum("bd,bd->b", x, eta)
    s1 = -0.5 * t / mass * np.einsum("bd,bd->b", eta, eta)
    s2 = -np.einsum("bd,bd->b", eta, ip_t) / mass
    return s0 + s1 + s2 + a_rest


def low_residual(
    PHI: np.ndarray,
    A0: np.ndarray,
    V: np.ndarray,
    w: np.ndarray,
    AT: np.ndarray,
    WT: np.ndarray,
    theta: np.ndarray,
    F: np.ndarray,
    x: np.ndarray,
    eta: np.ndarray,
    lsym: np.ndarray,
    pamp: float,
    wvec: np.ndarray,
    mass: float,
) -> np.ndarray:
    """Low-band stationarity residual r = θ − P[G(θ+F)], flat (B, 2n·nm).

    Unlike the tail iteration this includes the constant η/m block of the map
    (the low band retains constants).
    """
    B, two_n, nm = theta.shape
    n = two_n // 2
    thx = theta[:, :n, :]
    thp = theta[:, n:, :]
    Fx = F[:, :n, :]
    Fp = F[:, n:, :]

    Cx = (eta[:, :, None] + thp @ A0.T + Fp @ V.T) / mass
    gx = x[:, :, None] - (thx @ AT.T + Fx @ WT.T)
    Cp = -_grad_V_nodes(gx, lsym, pamp, wvec)
    C = np.concatenate([Cx, Cp], axis=1)
    r = theta - (w * C) @ PHI
    return r.reshape(B, two_n * nm)
