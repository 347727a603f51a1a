"""Finite reduction of the propagator's generating function.

The Hamilton two-point problem (final position x, initial momentum η) is
encoded as a fixed point of a map on paths φ = (φ^x, φ^p) ∈ L²([0,T]; ℝ²ⁿ):

    G_t(x, η, φ) = ( η/m + (1/m)∫₀ˢ φ^p ,  −∇V(x − ∫ₛᵗ φ^x) ),

whose fixed points are exactly the derivative pairs (γ̇^x, γ̇^p) of solution
curves with γ^x(t) = x, γ^p(0) = η.  Splitting off the Fourier band |r| ≤ M
(coefficients θ, dimension k = 2n(2M+1)) leaves a tail equation
f = Q[G_t(x, η, θ + f)] that contracts once

    T² · sup‖∇²H‖ · (1 + √(2M)) / (2πM) < 1,

and a finite-dimensional residual r(θ) = θ − P[G_t(x, η, θ + f(θ))] whose
zeros enumerate the classical branches.  The generating action evaluated on
the reduced family,

    S(t, x, η, θ) = ⟨x,η⟩ + ∫₀ᵗ (∫₀ˢφ^p)·φ^x ds
                    − ∫₀ᵗ [ |η + ∫₀ˢφ^p|²/(2m) + V(x − ∫ₛᵗφ^x) ] ds,

has the branch actions as critical values and is the phase of the
stationary-phase kernel.

Two numerical choices matter and are worth stating up front:

* The tail is solved in collocation form — values on a composite
  Gauss–Legendre grid, orthogonalized against the low band at quadrature
  accuracy — not as a truncated Fourier series.  The [0, t] cutoff couples
  all frequencies (even the constant mode acquires a non-periodic ramp under
  ∫₀ˢ), so a band-limited tail converges like 1/M_tail and cannot reach the
  tolerances this module promises.

* Derivative evaluations re-run the tail solve with a *fixed* iteration
  count, probed once per evaluation time.  A tolerance-stopped iteration is
  piecewise in (x, θ) — the iteration count jumps — which pollutes finite
  differences far above rounding.  With the count frozen, S is smooth to
  machine precision and safe to difference twice.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import _core
from .hamiltonian import (
    HamiltonianSpec,
    eval_V,
    grad_V,
    sup_hess_H,
    sup_hess_V,
)
from .pathspace import (
    FourierBasis,
    Grid,
    ModeVector,
    SampledPath,
    default_panel_count,
    make_grid,
    project,
    volterra_matrix,
)

__all__ = [
    "AczConfig",
    "GenFunPoint",
    "TailSolution",
    "contraction_factor",
    "curve_gamma",
    "eval_S",
    "eval_S_derivs",
    "g_map",
    "hamilton_residual",
    "initial_position",
    "select_cutoff",
    "solve_tail",
    "stationarity_residual",
    "tail_rate_bound",
]

_FRAME_CACHE_SIZE = 256
_PROBE_SEED = 987654321


# ---------------------------------------------------------------------------
# contraction bookkeeping


def contraction_factor(ham: HamiltonianSpec, period: float, cutoff: int) -> float:
    """Contraction factor of the tail map at low-band cutoff M.

    c(M) = T² · sup‖∇²H‖ · (1 + √(2M)) / (2πM); the tail equation is a
    contraction whenever this is < 1.
    """
    if cutoff < 1:
        raise ValueError("cutoff must be >= 1")
    big_m = float(cutoff)
    return (
        period**2
        * sup_hess_H(ham)
        * (1.0 + math.sqrt(2.0 * big_m))
        / (2.0 * math.pi * big_m)
    )


def select_cutoff(
    ham: HamiltonianSpec,
    period: float,
    *,
    safety: float = 0.8,
    max_cutoff: int = 4096,
) -> int:
    """Smallest cutoff M with contraction factor ≤ safety.

    The factor decays like 1/√M, so the scan is cheap.  ``safety`` defaults
    to 0.8 rather than the bare contraction threshold 1: running the
    iteration at factors near 1 is valid but slow, and the selected cutoffs
    then match the intended resolutions for the standard configurations
    (e.g. a unit oscillator over T = 3 selects M = 10).
    """
    if not 0.0 < safety < 1.0:
        raise ValueError("safety must lie in (0, 1)")
    for cutoff in range(1, max_cutoff + 1):
        if contraction_factor(ham, period, cutoff) <= safety:
            return cutoff
    raise ValueError(
        f"no cutoff ≤ {max_cutoff} achieves contraction ≤ {safety}; "
        "shorten the window"
    )


def tail_rate_bound(ham: HamiltonianSpec, period: float, cutoff: int) -> float:
    """Composite tail factor d = (T²/m)·‖Q_M‖²·sup‖∇²V‖, ‖Q_M‖ = (T/2π)√(2/M).

    The tail map composes two smoothing primitives (∫₀ˢ against the momentum
    slot, ∫ₛᵗ inside ∇V) through the complement projector; bounding each by
    ‖Q_M ∘ ∫‖ ≤ (T/2π)·√(2/M) in L² gives

        d = T⁴ · sup‖∇²V‖ / (2π² · m · M).

    Caveat: this is an L² composite estimate whose constant is optimistic at
    M = 1 — observed sup-norm iteration rates can exceed it there (they never
    exceed ``contraction_factor``, the proven Lipschitz constant of the
    iteration).  At moderate cutoffs (the auto-selected regime) d bounds the
    observed rate with an order-of-magnitude margin.
    """
    return (
        period**4
        * sup_hess_V(ham.potential)
        / (2.0 * math.pi**2 * ham.mass * cutoff)
    )


# ---------------------------------------------------------------------------
# configuration and per-time frames


@dataclass
class AczConfig:
    """Reduction configuration: Hamiltonian, band split, solver knobs.

    Frames (per-evaluation-time quadrature and operator matrices) and probed
    iteration counts are cached on the instance; a config is intended to be
    created once per (Hamiltonian, window, cutoff) and reused.
    """

    hamiltonian: HamiltonianSpec
    basis: FourierBasis
    fixed_point_tol: float = 1e-12
    max_iter: int = 200
    fd_step: float = 1e-5
    fd_step_hess: float = 1e-4
    n_panels: int | None = None
    batch_chunk: int = 32768
    _frames: OrderedDict = field(default_factory=OrderedDict, repr=False, compare=False)

    def __post_init__(self) -> None:
        n = self.hamiltonian.dim
        if self.basis.components != 2 * n:
            raise ValueError(
                f"basis carries {self.basis.components} components, need 2n = {2 * n}"
            )
        factor = contraction_factor(self.hamiltonian, self.basis.period, self.basis.cutoff)
        if not factor < 1.0:
            raise ValueError(
                f"tail map is not a contraction at cutoff M={self.basis.cutoff}: "
                f"factor {factor:.4f} ≥ 1; raise the cutoff or shorten the window"
            )
        if self.n_panels is None:
            self.n_panels = default_panel_count(self.basis)

    @property
    def theta_dim(self) -> int:
        """k = 2n(2M+1), the reduced phase dimension."""
        return self.basis.dim("low")

    @property
    def contraction(self) -> float:
        return contraction_factor(self.hamiltonian, self.basis.period, self.basis.cutoff)

    @property
    def rate_bound(self) -> float:
        return tail_rate_bound(self.hamiltonian, self.basis.period, self.basis.cutoff)


class _Frame:
    """Grid and operator matrices for one evaluation time t.

    All members are plain arrays shaped for the kernels in ``_core``:
    integrals ∫₀ˢ are GEMMs against A0 (modes) / V (grid values), integrals
    ∫ₛᵗ against AT / WT, action integrals ∫₀ᵗ are dots with the masked
    weights wa.
    """

    __slots__ = (
        "t", "grid", "nodes", "w", "wa", "PHI", "A0", "at_row", "AT",
        "V", "WT", "n_exact",
    )

    def __init__(self, cfg: AczConfig, t: float):
        basis = cfg.basis
        if not 0.0 <= t <= basis.period + 1e-12:
            raise ValueError(f"evaluation time {t} outside [0, T={basis.period}]")
        t = min(t, basis.period)
        self.t = t
        self.grid = make_grid(basis.period, cfg.n_panels, breaks=(t,))
        self.nodes = self.grid.nodes
        self.w = self.grid.weights
        self.wa = self.grid.mask_weights(t)
        self.PHI = basis.scalar_matrix(self.nodes, "low")
        self.A0 = basis.antideriv_matrix(self.nodes, "low")
        self.at_row = basis.antideriv_matrix(np.array([t]), "low")[0]
        self.AT = self.at_row[None, :] - self.A0
        self.V = volterra_matrix(self.grid)
        self.WT = self.wa[None, :] - self.V
        self.n_exact = self._probe_iterations(cfg)

    def _probe_iterations(self, cfg: AczConfig) -> int:
        """Iteration count that drives a representative solve to stall.

        Evaluation paths that feed finite differences run exactly this many
        iterations from a cold start, so the solved tail — and S — is an
        exactly smooth function of (x, θ).
        """
        rng = np.random.default_rng(_PROBE_SEED)
        two_n = cfg.basis.components
        nm = cfg.basis.n_modes("low")
        n = two_n // 2
        theta = 0.5 * rng.standard_normal((1, two_n, nm))
        x = 0.5 * rng.standard_normal((1, n))
        pot = cfg.hamiltonian.potential
        cap = max(400, cfg.max_iter)
        _, _, iters, _ = _core.tail_fixed_point(
            self.PHI, self.A0, self.V, self.w, self.AT, self.WT,
            theta, x, pot.symmetric_part, pot.amplitude, pot.wavevector,
            cfg.hamiltonian.mass, 1e-15, cap,
        )
        n0 = int(iters[0])
        return min(cap, max(8, int(math.ceil(1.3 * n0)) + 4))


def _frame(cfg: AczConfig, t: float) -> _Frame:
    key = round(float(t), 12)
    cache = cfg._frames
    frame = cache.get(key)
    if frame is None:
        frame = _Frame(cfg, float(t))
        cache[key] = frame
        if len(cache) > _FRAME_CACHE_SIZE:
            cache.popitem(last=False)
    else:
        cache.move_to_end(key)
    return frame


def _theta_coeffs(cfg: AczConfig, theta) -> np.ndarray:
    """Normalize a low-band argument to a (2n, n_modes) coefficient array."""
    if isinstance(theta, ModeVector):
        if theta.band != "low":
            raise ValueError("theta must be a low-band mode vector")
        return np.asarray(theta.coefficients, dtype=np.float64)
    arr = np.asarray(theta, dtype=np.float64)
    two_n = cfg.basis.components
    nm = cfg.basis.n_modes("low")
    if arr.shape == (two_n, nm):
        return arr
    if arr.shape == (two_n * nm,):
        return arr.reshape(two_n, nm)
    raise ValueError(
        f"theta shape {arr.shape} incompatible with k = {two_n * nm} "
        f"(= {two_n} components × {nm} modes)"
    )


# ---------------------------------------------------------------------------
# tail solve


@dataclass
class TailSolution:
    """Solved high-band component at one (t, x, θ).

    ``values`` holds the grid collocation truth (2n, n_nodes); ``f`` projects
    it onto the tail Fourier band for callers that want coefficients, with
    the usual caveat that the projection discards the slow 1/r part of the
    spectrum.
    """

    basis: FourierBasis
    grid: Grid
    values: np.ndarray
    residual: float
    iterations: int
    rate: float
    converged: bool

    @property
    def f(self) -> ModeVector:
        path = self.as_sampled_path()
        return project(path, self.basis, "tail")

    def as_sampled_path(self) -> SampledPath:
        return SampledPath(
            nodes=self.grid.nodes,
            values=self.values.T.copy(),
            weights=self.grid.weights,
        )


def solve_tail(
    cfg: AczConfig,
    t: float,
    x: np.ndarray,
    theta,
    *,
    tol: float | None = None,
    max_iter: int | None = None,
) -> TailSolution:
    """Contract the tail equation f = Q[G_t(x, η, θ + f)] at one point.

    The constant η/m block of the map lies in the low band and is removed
    exactly by the projector, so the tail is independent of η and none is
    taken.  Iteration stops on sup-norm updates below tol·(1 + ‖f‖), with a
    stall guard at rounding level.
    """
    frame = _frame(cfg, t)
    th = _theta_coeffs(cfg, theta)[None]
    xb = np.atleast_1d(np.asarray(x, dtype=np.float64))[None]
    pot = cfg.hamiltonian.potential
    F, delta, iters, rate = _core.tail_fixed_point(
        frame.PHI, frame.A0, frame.V, frame.w, frame.AT, frame.WT,
        th, xb, pot.symmetric_part, pot.amplitude, pot.wavevector,
        cfg.hamiltonian.mass,
        cfg.fixed_point_tol if tol is None else tol,
        cfg.max_iter if max_iter is None else max_iter,
    )
    scale = 1.0 + np.max(np.abs(F[0])) if F.size else 1.0
    eff_tol = cfg.fixed_point_tol if tol is None else tol
    return TailSolution(
        basis=cfg.basis,
        grid=frame.grid,
        values=F[0],
        residual=float(delta[0]),
        iterations=int(iters[0]),
        rate=float(rate[0]),
        converged=bool(delta[0] <= eff_tol * scale),
    )


def _solve_many(
    cfg: AczConfig,
    frame: _Frame,
    X: np.ndarray,
    TH: np.ndarray,
    *,
    smooth: bool = True,
):
    """Batched tail solve on a prebuilt frame.

    With smooth=True the solve runs exactly frame.n_exact iterations from a
    cold start (the finite-difference-safe mode); otherwise it is the
    tolerance-stopped production solve.
    """
    pot = cfg.hamiltonian.potential
    return _core.tail_fixed_point(
        frame.PHI, frame.A0, frame.V, frame.w, frame.AT, frame.WT,
        TH, X, pot.symmetric_part, pot.amplitude, pot.wavevector,
        cfg.hamiltonian.mass, cfg.fixed_point_tol, cfg.max_iter,
        n_exact=frame.n_exact if smooth else 0,
    )


# ---------------------------------------------------------------------------
# the reduced map and residual (band-limited public forms)


def g_map(ham: HamiltonianSpec, t: float, x: np.ndarray, eta: np.ndarray,
          phi: ModeVector, *, n_panels: int | None = None) -> ModeVector:
    """Apply the path-space map to a full-band mode vector, re-projected.

    This is the band-limited public form of the map — useful for inspecting
    the reduction and for affinity checks — not the collocation operator the
    solver iterates.
    """
    if phi.band != "full":
        raise ValueError("g_map expects a full-band mode vector")
    basis = phi.basis
    n = ham.dim
    if basis.components != 2 * n:
        raise ValueError("mode vector components do not match the Hamiltonian")
    if not 0.0 <= t <= basis.period + 1e-12:
        raise ValueError(f"time {t} outside [0, T]")
    panels = n_panels if n_panels is not None else default_panel_count(basis)
    grid = make_grid(basis.period, panels, breaks=(min(t, basis.period),))
    nodes = grid.nodes
    A = basis.antideriv_matrix(nodes, "full")
    a_t = basis.antideriv_matrix(np.array([min(t, basis.period)]), "full")[0]
    coef = phi.coefficients
    cx = coef[:n]
    cp = coef[n:]
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    int_p = cp @ A.T                          # (n, nn): ∫₀ˢ φ^p
    int_x_to_t = (cx @ a_t)[:, None] - cx @ A.T  # (n, nn): ∫ₛᵗ φ^x
    gx_vals = (eta[:, None] + int_p) / ham.mass
    gamma_x = x[:, None] - int_x_to_t
    gp_vals = -grad_V(ham.potential, gamma_x.T).T
    values = np.concatenate([gx_vals, gp_vals], axis=0)
    path = SampledPath(nodes=nodes, values=values.T, weights=grid.weights)
    return project(path, basis, "full")


def stationarity_residual(cfg: AczConfig, t: float, x: np.ndarray,
                          eta: np.ndarray, theta) -> np.ndarray:
    """Low-band residual r(θ) = θ − P[G_t(x, η, θ + f(θ))], flattened (k,).

    Zeros of r over θ are exactly the classical branches; ‖r‖ is the
    quantity the branch search drives to zero.
    """
    frame = _frame(cfg, t)
    th = _theta_coeffs(cfg, theta)[None]
    xb = np.atleast_1d(np.asarray(x, dtype=np.float64))[None]
    eb = np.atleast_1d(np.asarray(eta, dtype=np.float64))[None]
    F, _, _, _ = _solve_many(cfg, frame, xb, th, smooth=False)
    return _residual_from_tail(cfg, frame, th, F, xb, eb)[0]


def _residual_from_tail(cfg, frame, TH, F, X, ETA) -> np.ndarray:
    pot = cfg.hamiltonian.potential
    return _core.low_residual(
        frame.PHI, frame.A0, frame.V, frame.w, frame.AT, frame.WT,
        TH, F, X, ETA, pot.symmetric_part, pot.amplitude, pot.wavevector,
        cfg.hamiltonian.mass,
    )


def _residual_many(cfg: AczConfig, frame: _Frame, X, ETA, TH, *, smooth=True):
    """Batched residual; returns (r (B, k), tail F) for reuse."""
    F, _, _, _ = _solve_many(cfg, frame, X, TH, smooth=smooth)
    r = _residual_from_tail(cfg, frame, TH, F, X, ETA)
    return r, F


# ---------------------------------------------------------------------------
# action evaluation


def _eval_batch(cfg: AczConfig, frame: _Frame, X, ETA, TH):
    """S over a batch on one frame; returns (S, final tail deltas)."""
    pot = cfg.hamiltonian.potential
    B = X.shape[0]
    out = np.empty(B)
    deltas = np.empty(B)
    chunk = max(1, cfg.batch_chunk)
    for lo in range(0, B, chunk):
        hi = min(B, lo + chunk)
        F, delta, _, _ = _solve_many(cfg, frame, X[lo:hi], TH[lo:hi])
        out[lo:hi] = _core.action_terms(
            frame.PHI, frame.A0, frame.V, frame.wa, frame.AT, frame.WT,
            TH[lo:hi], F, X[lo:hi], ETA[lo:hi],
            pot.matrix, pot.amplitude, pot.wavevector,
            cfg.hamiltonian.mass, frame.t,
        )
        deltas[lo:hi] = delta
    return out, deltas


def _eval_S_many(cfg: AczConfig, t: float, X, ETA, TH) -> np.ndarray:
    frame = _frame(cfg, t)
    return _eval_batch(cfg, frame, X, ETA, TH)[0]


def eval_S(cfg: AczConfig, t: float, x, eta, theta) -> float:
    """Generating action S(t, x, η, θ) with the tail solved implicitly.

    At t = 0 the integral terms vanish and S = ⟨x, η⟩ exactly.
    """
    xb = np.atleast_1d(np.asarray(x, dtype=np.float64))[None]
    eb = np.atleast_1d(np.asarray(eta, dtype=np.float64))[None]
    th = _theta_coeffs(cfg, theta)[None]
    return float(_eval_S_many(cfg, t, xb, eb, th)[0])


def initial_position(cfg: AczConfig, t: float, x, eta, theta) -> np.ndarray:
    """∂S/∂η in closed form: the trajectory's initial position y.

    The tail is independent of η, so the envelope argument is exact here —
    on or off the stationary set — and

        ∇_η S = x − tη/m − (1/m)∫₀ᵗ (∫₀ˢ φ^p) ds = γ^x(0).
    """
    frame = _frame(cfg, t)
    th = _theta_coeffs(cfg, theta)[None]
    xb = np.atleast_1d(np.asarray(x, dtype=np.float64))[None]
    eb = np.atleast_1d(np.asarray(eta, dtype=np.float64))[None]
    F, _, _, _ = _solve_many(cfg, frame, xb, th)
    return _initial_from_tail(cfg, frame, th, F, xb, eb)[0]


def _initial_from_tail(cfg, frame, TH, F, X, ETA) -> np.ndarray:
    n = cfg.hamiltonian.dim
    m = cfg.hamiltonian.mass
    gamma_p = TH[:, n:, :] @ frame.A0.T + F[:, n:, :] @ frame.V.T
    ip_t = gamma_p @ frame.wa
    return X - frame.t * ETA / m - ip_t / m


# ---------------------------------------------------------------------------
# derivatives


@dataclass
class GenFunPoint:
    """S and requested derivatives at one (t, x, η, θ).

    First derivatives are Richardson-extrapolated central differences;
    second derivatives are plain central stencils.  ``hess_asymmetry``
    reports max |H − Hᵀ| prior to symmetrization; the shared cross stencil
    used here is symmetric by construction, so the field reads 0 unless an
    alternative stencil fills it.
    """

    t: float
    x: np.ndarray
    eta: np.ndarray
    theta: np.ndarray
    value: float
    grad_theta: np.ndarray | None = None
    grad_x: np.ndarray | None = None
    grad_eta: np.ndarray | None = None
    dt: float | None = None
    hess_theta: np.ndarray | None = None
    laplacian_x: float | None = None
    hess_asymmetry: float | None = None
    tail_delta: float | None = None


_REQUESTS = frozenset(
    ["value", "grad_theta", "grad_x", "grad_eta", "dt", "hess_theta", "laplacian_x"]
)


def eval_S_derivs(
    cfg: AczConfig,
    t: float,
    x,
    eta,
    theta,
    request: tuple = ("value", "grad_theta"),
) -> GenFunPoint:
    """Evaluate S and a requested set of derivatives at one point.

    Every same-time stencil row is collected into a single batched solve, so
    the cost is one tail iteration batch regardless of how many derivatives
    are requested (plus two extra frames when "dt" is present).

    The derivative in θ here is the total derivative of the reduced action
    θ ↦ S(t, x, η, θ) including the implicit tail response; off the
    stationary set this differs from the partial derivative along the
    band — which is why everything is differenced rather than assembled
    from envelope formulas.
    """
    bad = set(request) - _REQUESTS
    if bad:
        raise ValueError(f"unknown derivative request(s): {sorted(bad)}")
    x0 = np.atleast_1d(np.asarray(x, dtype=np.float64)).copy()
    e0 = np.atleast_1d(np.asarray(eta, dtype=np.float64)).copy()
    th0 = _theta_coeffs(cfg, theta).copy()
    n = cfg.hamiltonian.dim
    k = cfg.theta_dim
    th_flat = th0.reshape(-1)

    rows_x = [x0]
    rows_e = [e0]
    rows_th = [th_flat]

    def add(dx=None, de=None, dth=None) -> int:
        rows_x.append(x0 + dx if dx is not None else x0)
        rows_e.append(e0 + de if de is not None else e0)
        rows_th.append(th_flat + dth if dth is not None else th_flat)
        return len(rows_x) - 1

    def unit(mlen, j, h):
        v = np.zeros(mlen)
        v[j] = h
        return v

    idx: dict = {}
    if "grad_theta" in request:
        sl = []
        for j in range(k):
            h = cfg.fd_step * (1.0 + abs(th_flat[j]))
            sl.append((
                h,
                add(dth=unit(k, j, h)), add(dth=unit(k, j, -h)),
                add(dth=unit(k, j, 0.5 * h)), add(dth=unit(k, j, -0.5 * h)),
            ))
        idx["grad_theta"] = sl
    if "grad_x" in request:
        sl = []
        for i in range(n):
            h = cfg.fd_step * (1.0 + abs(x0[i]))
            sl.append((
                h,
                add(dx=unit(n, i, h)), add(dx=unit(n, i, -h)),
                add(dx=unit(n, i, 0.5 * h)), add(dx=unit(n, i, -0.5 * h)),
            ))
        idx["grad_x"] = sl
    if "grad_eta" in request:
        sl = []
        for i in range(n):
            h = cfg.fd_step * (1.0 + abs(e0[i]))
            sl.append((
                h,
                add(de=unit(n, i, h)), add(de=unit(n, i, -h)),
                add(de=unit(n, i, 0.5 * h)), add(de=unit(n, i, -0.5 * h)),
            ))
        idx["grad_eta"] = sl
    if "hess_theta" in request:
        hs = [cfg.fd_step_hess * (1.0 + abs(th_flat[j])) for j in range(k)]
        diag = [(hs[j], add(dth=unit(k, j, hs[j])), add(dth=unit(k, j, -hs[j])))
                for j in range(k)]
        off = {}
        for a in range(k):
            for b in range(a + 1, k):
                off[(a, b)] = (
                    add(dth=unit(k, a, hs[a]) + unit(k, b, hs[b])),
                    add(dth=unit(k, a, hs[a]) - unit(k, b, hs[b])),
                    add(dth=-unit(k, a, hs[a]) + unit(k, b, hs[b])),
                    add(dth=-unit(k, a, hs[a]) - unit(k, b, hs[b])),
                )
        idx["hess_theta"] = (hs, diag, off)
    if "laplacian_x" in request:
        sl = []
        for i in range(n):
            h = cfg.fd_step_hess * (1.0 + abs(x0[i]))
            sl.append((h, add(dx=unit(n, i, h)), add(dx=unit(n, i, -h))))
        idx["laplacian_x"] = sl

    X = np.stack(rows_x)
    ETA = np.stack(rows_e)
    TH = np.stack(rows_th).reshape(len(rows_x), 2 * n, -1)
    frame = _frame(cfg, t)
    S, deltas = _eval_batch(cfg, frame, X, ETA, TH)

    def richardson(h, ip, im, ip2, im2):
        d_h = (S[ip] - S[im]) / (2.0 * h)
        d_h2 = (S[ip2] - S[im2]) / h
        return (4.0 * d_h2 - d_h) / 3.0

    point = GenFunPoint(
        t=float(t), x=x0, eta=e0, theta=th_flat.copy(),
        value=float(S[0]), tail_delta=float(deltas[0]),
    )
    if "grad_theta" in request:
        point.grad_theta = np.array([richardson(*o) for o in idx["grad_theta"]])
    if "grad_x" in request:
        point.grad_x = np.array([richardson(*o) for o in idx["grad_x"]])
    if "grad_eta" in request:
        point.grad_eta = np.array([richardson(*o) for o in idx["grad_eta"]])
    if "hess_theta" in request:
        hs, diag, off = idx["hess_theta"]
        H = np.empty((k, k))
        for j, (h, ip, im) in enumerate(diag):
            H[j, j] = (S[ip] - 2.0 * S[0] + S[im]) / h**2
        for (a, b), (ipp, ipm, imp, imm) in off.items():
            H[a, b] = H[b, a] = (S[ipp] - S[ipm] - S[imp] + S[imm]) / (
                4.0 * hs[a] * hs[b]
            )
        point.hess_theta = H
        point.hess_asymmetry = 0.0
    if "laplacian_x" in request:
        lap = 0.0
        for h, ip, im in idx["laplacian_x"]:
            lap += (S[ip] - 2.0 * S[0] + S[im]) / h**2
        point.laplacian_x = float(lap)
    if "dt" in request:
        h = cfg.fd_step * (1.0 + t)
        period = cfg.basis.period
        xb, eb, thb = x0[None], e0[None], TH[:1]
        if t - h >= 0.0 and t + h <= period:
            sp = _eval_S_many(cfg, t + h, xb, eb, thb)[0]
            sm = _eval_S_many(cfg, t - h, xb, eb, thb)[0]
            point.dt = float((sp - sm) / (2.0 * h))
        elif t - h < 0.0:
            s1 = _eval_S_many(cfg, t + h, xb, eb, thb)[0]
            s2 = _eval_S_many(cfg, t + 2.0 * h, xb, eb, thb)[0]
            point.dt = float((-3.0 * S[0] + 4.0 * s1 - s2) / (2.0 * h))
        else:
            s1 = _eval_S_many(cfg, t - h, xb, eb, thb)[0]
            s2 = _eval_S_many(cfg, t - 2.0 * h, xb, eb, thb)[0]
            point.dt = float((3.0 * S[0] - 4.0 * s1 + s2) / (2.0 * h))
    return point


# ---------------------------------------------------------------------------
# reconstructed curves


def curve_gamma(cfg: AczConfig, t: float, x, eta, theta, *, tail: TailSolution | None = None):
    """Reconstruct (γ^x, γ^p) on [0, t] from the band + solved tail.

    Returned sampled paths carry the masked quadrature weights (zero weight
    on the appended endpoints s = 0 and s = t), so dotting values against
    weights integrates over [0, t].  By construction γ^x(t) = x exactly and
    γ^p(0) = η exactly; how well the pair satisfies Hamilton's equations is
    a separate check, see ``hamilton_residual``.
    """
    frame = _frame(cfg, t)
    th = _theta_coeffs(cfg, theta)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    n = cfg.hamiltonian.dim
    if tail is not None:
        F = tail.values[None]
    else:
        F, _, _, _ = _solve_many(cfg, frame, x[None], th[None], smooth=False)
    Fx, Fp = F[0, :n], F[0, n:]
    thx, thp = th[:n], th[n:]

    mask = frame.nodes <= t + 1e-14
    nodes_in = frame.nodes[mask]
    gamma_p = eta[:, None] + thp @ frame.A0[mask].T + Fp @ frame.V[mask].T
    gamma_x = x[:, None] - (thx @ frame.AT[mask].T + Fx @ frame.WT[mask].T)

    gx0 = x - (thx @ frame.at_row + Fx @ frame.wa)
    gpt = eta + thp @ frame.at_row + Fp @ frame.wa

    nodes = np.concatenate([[0.0], nodes_in, [t]])
    gx = np.concatenate([gx0[:, None], gamma_x, x[:, None]], axis=1)
    gp = np.concatenate([eta[:, None], gamma_p, gpt[:, None]], axis=1)
    weights = np.concatenate([[0.0], frame.wa[mask], [0.0]])
    return (
        SampledPath(nodes=nodes, values=gx.T, weights=weights),
        SampledPath(nodes=nodes, values=gp.T, weights=weights),
    )


def hamilton_residual(cfg: AczConfig, t: float, x, eta, theta, *, tail=None) -> float:
    """Sup-norm defect of the reconstructed curve in Hamilton's equations.

    Uses the exact derivative of the path representation (γ̇ = φ on the
    nodes), so no differencing enters:

        max_s |φ^x − (η + ∫₀ˢφ^p)/m|  ∨  max_s |φ^p + ∇V(γ^x)| ,  s ≤ t.

    Small exactly when θ is stationary; O(1) otherwise.
    """
    frame = _frame(cfg, t)
    th = _theta_coeffs(cfg, theta)
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    n = cfg.hamiltonian.dim
    if tail is not None:
        F = tail.values[None]
    else:
        F, _, _, _ = _solve_many(cfg, frame, x[None], th[None], smooth=False)
    Fx, Fp = F[0, :n], F[0, n:]
    thx, thp = th[:n], th[n:]
    mask = frame.nodes <= t + 1e-14
    phi_x = thx @ frame.PHI[mask].T + Fx[:, mask]
    phi_p = thp @ frame.PHI[mask].T + Fp[:, mask]
    gamma_p = eta[:, None] + thp @ frame.A0[mask].T + Fp @ frame.V[mask].T
    gamma_x = x[:, None] - (thx @ frame.AT[mask].T + Fx @ frame.WT[mask].T)
    res_x = phi_x - gamma_p / cfg.hamiltonian.mass
    res_p = phi_p + grad_V(cfg.hamiltonian.potential, gamma_x.T).T
    if res_x.size == 0:
        return 0.0
    return float(max(np.max(np.abs(res_x)), np.max(np.abs(res_p))))
