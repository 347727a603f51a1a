"""Branch enumeration: zeros of the reduced stationarity residual.

Each classical trajectory through (final position x, initial momentum η)
appears as a zero θ* of r(θ) = θ − P[G_t(x, η, θ + f(θ))].  This module
finds all of them with a batched damped Newton iteration from randomized
starts, certifies the count against an a-priori ball bound, and — in one
dimension — against an independent shooting count through the classical
flow, which never touches the reduction.

Branch data recorded per zero: the action S(θ*), the θ-Hessian determinant
and signature (the stationary-phase ingredients), first-derivative endpoint
identities, and defect diagnostics (residual norm, Hamilton–Jacobi defect).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .genfun import (
    AczConfig,
    _eval_batch,
    _frame,
    _residual_many,
    _theta_coeffs,
    eval_S_derivs,
)
from .hamiltonian import (
    HamiltonianSpec,
    eval_V,
    flow_positions,
    lambda_weight,
    nearest_resonance,
    sup_d3_V,
)
from .pathspace import SampledPath, make_grid, project

__all__ = [
    "BoundEstimates",
    "Branch",
    "BranchSet",
    "CriticalFreeRegion",
    "ResonanceError",
    "SearchConfig",
    "check_critical_free_region",
    "compute_branch_bound",
    "find_branches",
    "scan_branch_map",
    "shooting_branch_count",
]


class ResonanceError(RuntimeError):
    """The linearized two-point problem is (numerically) singular at t.

    Raised when the smallest singular value of I − L̂(t) drops below
    threshold; the message names the nearest resonant time.
    """


# ---------------------------------------------------------------------------
# results


@dataclass
class Branch:
    """One stationary point of θ ↦ S(t, x, η, θ) with derived data."""

    theta_star: np.ndarray
    action: float
    hess_det: float
    signature: int
    min_abs_eig: float
    hj_residual: float
    gen_residual: float
    newton_iters: int
    momentum: np.ndarray
    initial_point: np.ndarray


@dataclass
class BranchSet:
    """All branches found at one (t, x, η), sorted by action."""

    t: float
    x: np.ndarray
    eta: np.ndarray
    branches: list
    n_starts: int
    n_converged: int
    n_duplicates: int

    @property
    def count(self) -> int:
        return len(self.branches)

    def actions(self) -> np.ndarray:
        return np.array([b.action for b in self.branches])


@dataclass
class SearchConfig:
    """Multistart Newton knobs.

    ``radius`` is the standard deviation scale of the start cloud; None
    means 2·√(1+|x|²+|η|²), which covers the momenta a trajectory confined
    to the energy shell through (x, η) can reach.
    """

    n_starts: int = 64
    radius: float | None = None
    seed: int = 7
    newton_tol: float = 1e-11
    max_newton: int = 60
    max_halvings: int = 8
    jac_step: float = 1e-6
    dedupe_tol: float = 1e-6


# ---------------------------------------------------------------------------
# batched damped Newton


def _newton_polish(cfg, frame, x, eta, TH0, search):
    """Damped Newton on r(θ) from a batch of starts.

    Returns (theta (B,k), resid_norm (B,), iters (B,), ok (B,) bool).  All
    residual evaluations use the smooth fixed-count tail solve, so the
    finite-difference Jacobians are clean; a singular Jacobian discards the
    start rather than aborting the batch.
    """
    B, k = TH0.shape
    n = cfg.hamiltonian.dim
    nm = cfg.basis.n_modes("low")
    X = np.broadcast_to(x, (B, n)).copy()
    ETA = np.broadcast_to(eta, (B, n)).copy()
    TH = TH0.copy()
    ok = np.ones(B, dtype=bool)
    done = np.zeros(B, dtype=bool)
    iters = np.zeros(B, dtype=np.intp)

    def resid(thetas, xs, etas):
        r, _ = _residual_many(
            cfg, frame, xs, etas, thetas.reshape(-1, 2 * n, nm), smooth=True
        )
        return r

    r = resid(TH, X, ETA)
    rn = np.linalg.norm(r, axis=1)
    for it in range(1, search.max_newton + 1):
        scale = 1.0 + np.linalg.norm(TH, axis=1)
        done = done | (rn <= search.newton_tol * scale) | ~ok
        live = ~done
        if not live.any():
            break
        li = np.flatnonzero(live)
        nl = li.size
        # central-difference Jacobian, all starts and directions in one batch
        h = search.jac_step * (1.0 + np.abs(TH[li]))          # (nl, k)
        thp = np.repeat(TH[li], k, axis=0)
        thm = thp.copy()
        rows = np.arange(nl * k)
        cols = np.tile(np.arange(k), nl)
        thp[rows, cols] += h.ravel()
        thm[rows, cols] -= h.ravel()
        xs = np.repeat(X[li], k, axis=0)
        es = np.repeat(ETA[li], k, axis=0)
        rp = resid(np.vstack([thp, thm]), np.vstack([xs, xs]), np.vstack([es, es]))
        J = (rp[: nl * k] - rp[nl * k:]) / (2.0 * h.ravel())[:, None]
        J = J.reshape(nl, k, k).transpose(0, 2, 1)            # J[b][i,j] = ∂r_i/∂θ_j
        step = np.empty((nl, k))
        solved = np.ones(nl, dtype=bool)
        for b in range(nl):
            try:
                step[b] = np.linalg.solve(J[b], r[li[b]])
            except np.linalg.LinAlgError:
                ok[li[b]] = False
                solved[b] = False
        li = li[solved]
        step = step[solved]
        if li.size == 0:
            continue
        # damped acceptance with shared backtracking
        lam = np.ones(li.size)
        accepted = np.zeros(li.size, dtype=bool)
        trial = TH[li].copy()
        for _ in range(search.max_halvings + 1):
            pend = ~accepted
            if not pend.any():
                break
            pi = np.flatnonzero(pend)
            cand = TH[li[pi]] - lam[pi, None] * step[pi]
            rc = resid(cand, X[li[pi]], ETA[li[pi]])
            rcn = np.linalg.norm(rc, axis=1)
            good = rcn <= (1.0 - 0.25 * lam[pi]) * rn[li[pi]]
            gi = pi[good]
            trial[gi] = cand[good]
            r[li[gi]] = rc[good]
            rn[li[gi]] = rcn[good]
            accepted[gi] = True
            lam[pi[~good]] *= 0.5
        ok[li[~accepted]] = False
        TH[li[accepted]] = trial[accepted]
        iters[li[accepted]] = it
    scale = 1.0 + np.linalg.norm(TH, axis=1)
    ok = ok & (rn <= search.newton_tol * scale)
    return TH, rn, iters, ok


def _dedupe(thetas: np.ndarray, resid: np.ndarray, tol: float):
    """Cluster converged roots; keeps the lowest-residual representative."""
    order = np.argsort(resid)
    kept: list[int] = []
    for i in order:
        scale = 1.0 + np.max(np.abs(thetas[i]))
        if all(np.max(np.abs(thetas[i] - thetas[j])) > tol * scale for j in kept):
            kept.append(i)
    dup = len(order) - len(kept)
    return kept, dup


def find_branches(
    cfg: AczConfig,
    t: float,
    x,
    eta,
    search: SearchConfig | None = None,
) -> BranchSet:
    """Enumerate stationary branches at one (t, x, η).

    Starts are θ = 0 plus a seeded Gaussian cloud of scale radius/√k per
    coordinate; duplicates are clustered; every surviving root is enriched
    with the action, θ-Hessian determinant/signature, endpoint derivatives,
    and Hamilton–Jacobi defect.  Branches come back sorted by action (then
    lexicographically by θ) so repeated runs are bit-stable.
    """
    search = search or SearchConfig()
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    frame = _frame(cfg, t)
    k = cfg.theta_dim
    radius = search.radius
    if radius is None:
        radius = 2.0 * lambda_weight(x, eta)
    rng = np.random.default_rng(np.random.SeedSequence(search.seed))
    TH0 = np.zeros((search.n_starts, k))
    if search.n_starts > 1:
        TH0[1:] = radius / math.sqrt(k) * rng.standard_normal((search.n_starts - 1, k))

    TH, rn, iters, ok = _newton_polish(cfg, frame, x, eta, TH0, search)
    conv = np.flatnonzero(ok)
    kept, n_dup = _dedupe(TH[conv], rn[conv], search.dedupe_tol)

    branches = []
    pot = cfg.hamiltonian.potential
    m = cfg.hamiltonian.mass
    for i in kept:
        bi = conv[i]
        theta = TH[bi]
        gp = eval_S_derivs(
            cfg, t, x, eta, theta,
            request=("value", "grad_x", "grad_eta", "dt", "hess_theta"),
        )
        eigs = np.linalg.eigvalsh(gp.hess_theta)
        hj = gp.dt + float(gp.grad_x @ gp.grad_x) / (2.0 * m) + float(eval_V(pot, x))
        branches.append(Branch(
            theta_star=theta,
            action=gp.value,
            hess_det=float(np.prod(eigs)),
            signature=int(np.sum(eigs > 0.0) - np.sum(eigs < 0.0)),
            min_abs_eig=float(np.min(np.abs(eigs))),
            hj_residual=abs(float(hj)),
            gen_residual=float(rn[bi]),
            newton_iters=int(iters[bi]),
            momentum=gp.grad_x.copy(),
            initial_point=gp.grad_eta.copy(),
        ))
    branches.sort(key=lambda b: (b.action, tuple(b.theta_star)))
    return BranchSet(
        t=float(t), x=x, eta=eta, branches=branches,
        n_starts=search.n_starts, n_converged=int(ok.sum()), n_duplicates=n_dup,
    )


def scan_branch_map(cfg, t, x_values, eta_values, search=None):
    """Branch counts over a rectangle of (x, η) points (1D configurations).

    Returns (counts, sets): an (nx, nη) integer array and the matching
    nested list of BranchSet objects.
    """
    x_values = np.atleast_1d(np.asarray(x_values, dtype=np.float64))
    eta_values = np.atleast_1d(np.asarray(eta_values, dtype=np.float64))
    counts = np.zeros((x_values.size, eta_values.size), dtype=int)
    sets = []
    for i, xv in enumerate(x_values):
        row = []
        for j, ev in enumerate(eta_values):
            bs = find_branches(cfg, t, xv, ev, search=search)
            counts[i, j] = bs.count
            row.append(bs)
        sets.append(row)
    return counts, sets


# ---------------------------------------------------------------------------
# a-priori bounds and resonance detection


@dataclass
class BoundEstimates:
    """Scales controlling the branch count at time t.

    ``sigma_min`` is the smallest singular value of I − L̂(t) on the full
    band — the band-limited linearized two-point problem; it dips to zero
    exactly at flow resonances.  ε is the branch separation scale estimated
    from probed second/third θ-derivatives, Ẽ the reachable-θ scale, and
    n_max = (2Ẽ/ε)^k the resulting ball-count bound.  These are honest
    diagnostics of the enumeration, not certified constants: the derivative
    scales come from probes, and n_max is astronomically loose.
    """

    t: float
    sigma_min: float
    epsilon: float
    e_tilde: float
    n_max: float
    log10_n_max: float
    c0: float
    c00: float
    c1: float
    contraction: float
    rate_bound: float


def _linear_map_matrix(cfg: AczConfig, t: float) -> np.ndarray:
    """Full-band matrix of the linearized path map at time t.

    Columns are Π_full[ L(t) e_j ] with L(t)φ = ((1/m)∫₀ˢφ^p,
    (L+Lᵀ)∫ₛᵗφ^x); the projection loses the non-band-limited remainder of
    the ramps, which is the point — this is the operator the reduced
    residual linearizes through.
    """
    basis = cfg.basis
    ham = cfg.hamiltonian
    n = ham.dim
    nm = basis.n_modes("full")
    D = basis.dim("full")
    grid = make_grid(basis.period, cfg.n_panels, breaks=(min(t, basis.period),))
    nodes = grid.nodes
    A = basis.antideriv_matrix(nodes, "full")          # ∫₀ˢ e_j
    a_t = basis.antideriv_matrix(np.array([t]), "full")[0]
    AT = a_t[None, :] - A                              # ∫ₛᵗ e_j
    lsym = ham.potential.symmetric_part
    out = np.zeros((D, D))
    for c in range(2 * n):
        for j in range(nm):
            col = c * nm + j
            values = np.zeros((nodes.size, 2 * n))
            if c < n:
                # position component: feeds the momentum block via ∇²V(0)·∫ₛᵗ
                values[:, n:] = AT[:, j][:, None] * lsym[:, c][None, :]
            else:
                # momentum component: feeds the position block via (1/m)∫₀ˢ
                values[:, c - n] = A[:, j] / ham.mass
            path = SampledPath(nodes=nodes, values=values, weights=grid.weights)
            out[:, col] = project(path, basis, "full").as_flat()
    return out


def compute_branch_bound(
    cfg: AczConfig,
    t: float,
    *,
    resonance_threshold: float = 1e-6,
    probe_seed: int = 20240601,
) -> BoundEstimates:
    """Branch-count scales at time t; raises ResonanceError when singular.

    See BoundEstimates for what each number means.  The derivative probes
    run at θ = 0 over a fixed small set of (x, η) with a seeded direction
    for the third derivative.
    """
    ham = cfg.hamiltonian
    period = cfg.basis.period
    k = cfg.theta_dim
    near = nearest_resonance(ham, period, t)
    if near is not None and abs(t - near) < resonance_threshold:
        raise ResonanceError(
            f"evaluation time t={t!r} coincides with the resonant time "
            f"{near:.12g}; the two-point problem degenerates there"
        )
    Lhat = _linear_map_matrix(cfg, t)
    M = np.eye(Lhat.shape[0]) - Lhat
    sigma_min = float(np.linalg.svd(M, compute_uv=False)[-1])
    if sigma_min < resonance_threshold:
        msg = f"linearized two-point problem singular at t={t:.6g} (σ_min={sigma_min:.3e})"
        if near is not None:
            msg += f"; nearest resonant time {near:.6g}"
        raise ResonanceError(msg)

    pot = ham.potential
    c = cfg.contraction
    c0 = math.sqrt(2.0 * period) * max(1.0 / ham.mass, float(np.linalg.norm(pot.symmetric_part, 2)))
    c00 = c / (1.0 - c) * c0
    c1 = math.sqrt(period) * abs(pot.amplitude) * float(np.linalg.norm(pot.wavevector))
    e_tilde = 2.0 * c1 / sigma_min + 2.0 * c00

    # probe second/third derivative scales of the reduced action
    rng = np.random.default_rng(probe_seed)
    n = ham.dim
    probes = [
        (np.zeros(n), np.zeros(n)),
        (0.8 * np.ones(n), 0.5 * np.ones(n)),
        (-0.6 * np.ones(n), 1.1 * np.ones(n)),
    ]
    d2 = []
    d3 = []
    theta0 = np.zeros(k)
    for (px, pe) in probes:
        gp = eval_S_derivs(cfg, t, px, pe, theta0, request=("value", "hess_theta"))
        d2.append(np.max(np.abs(gp.hess_theta)))
        direction = rng.standard_normal(k)
        direction /= np.linalg.norm(direction)
        h = 1e-3
        gp_p = eval_S_derivs(cfg, t, px, pe, h * direction, request=("value", "hess_theta"))
        gp_m = eval_S_derivs(cfg, t, px, pe, -h * direction, request=("value", "hess_theta"))
        d3.append(np.max(np.abs(gp_p.hess_theta - gp_m.hess_theta)) / (2.0 * h))
    d2_inf = float(min(d2))
    d3_sup = float(max(d3))
    epsilon = d2_inf / (k * (d3_sup + 1.0))
    if epsilon <= 0.0:
        epsilon = np.finfo(float).tiny
    log10_n_max = k * (math.log10(2.0 * max(e_tilde, epsilon)) - math.log10(epsilon))
    n_max = 10.0**log10_n_max if log10_n_max < 300 else math.inf
    return BoundEstimates(
        t=float(t), sigma_min=sigma_min, epsilon=epsilon, e_tilde=e_tilde,
        n_max=n_max, log10_n_max=log10_n_max, c0=c0, c00=c00, c1=c1,
        contraction=c, rate_bound=cfg.rate_bound,
    )


@dataclass
class CriticalFreeRegion:
    """Ball guaranteed to contain every stationary point.

    Outside radius R the residual obeys ‖r(θ)‖ ≥ σ_aff(‖θ‖ − R_aff) − κ > 0:
    r is affine in θ for a purely quadratic potential (the whole reduction
    is then linear), and the cosine perturbation shifts the map by at most
    κ = √T·|a||w|·(1 + c/(1−c)) globally.
    """

    radius: float
    sigma_affine: float
    affine_center_norm: float
    kappa: float


def check_critical_free_region(cfg: AczConfig, t: float, x, eta) -> CriticalFreeRegion:
    """Radius beyond which no branch can exist at (t, x, η).

    Builds the exact affine model of the residual (finite differences on the
    quadratic part are exact), inverts it, and inflates by the global bound
    on the cosine perturbation.  The multistart search radius can be checked
    against this.
    """
    from .hamiltonian import PotentialSpec  # local: only to strip the perturbation

    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    pot = cfg.hamiltonian.potential
    if pot.perturbation == "none":
        quad_cfg = cfg
    else:
        quad_pot = PotentialSpec(matrix=pot.matrix)
        quad_ham = HamiltonianSpec(potential=quad_pot, mass=cfg.hamiltonian.mass)
        quad_cfg = AczConfig(
            hamiltonian=quad_ham, basis=cfg.basis,
            fixed_point_tol=cfg.fixed_point_tol, max_iter=cfg.max_iter,
            n_panels=cfg.n_panels,
        )
    k = cfg.theta_dim
    n = cfg.hamiltonian.dim
    nm = cfg.basis.n_modes("low")
    frame = _frame(quad_cfg, t)

    rows = [np.zeros(k)]
    h = 1e-2  # exact for an affine map, large enough to swamp solver noise
    for j in range(k):
        e = np.zeros(k)
        e[j] = h
        rows.append(e)
        rows.append(-e)
    TH = np.stack(rows).reshape(-1, 2 * n, nm)
    X = np.broadcast_to(x, (TH.shape[0], n)).copy()
    ETA = np.broadcast_to(eta, (TH.shape[0], n)).copy()
    R, _ = _residual_many(quad_cfg, frame, X, ETA, TH, smooth=True)
    r0 = R[0]
    J = np.empty((k, k))
    for j in range(k):
        J[:, j] = (R[1 + 2 * j] - R[2 + 2 * j]) / (2.0 * h)
    theta_aff = np.linalg.solve(J, -r0)
    sigma_aff = float(np.linalg.svd(J, compute_uv=False)[-1])
    c = cfg.contraction
    kappa = (
        math.sqrt(cfg.basis.period)
        * abs(pot.amplitude)
        * float(np.linalg.norm(pot.wavevector))
        * (1.0 + c / (1.0 - c))
    )
    r_aff = float(np.linalg.norm(theta_aff))
    radius = r_aff + 2.0 * (kappa + 1e-9) / sigma_aff
    return CriticalFreeRegion(
        radius=radius, sigma_affine=sigma_aff,
        affine_center_norm=r_aff, kappa=kappa,
    )


# ---------------------------------------------------------------------------
# independent shooting count (one dimension)


def shooting_branch_count(
    ham: HamiltonianSpec,
    t: float,
    x,
    eta,
    *,
    y_radius: float | None = None,
    n_scan: int = 2048,
    n_bisect: int = 60,
):
    """Count trajectories y ↦ x(t; y, η) = x by scanning + bisection.

    Pure flow integration — no reduction, no Fourier bands — so it is a
    genuinely independent oracle for branch counts in one dimension.
    Returns (count, y_roots).  The scan window defaults to ±4·√(1+x²+η²),
    which contains every trajectory that can return to x at moderate energy.
    """
    x = float(np.atleast_1d(x)[0])
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    if y_radius is None:
        y_radius = 4.0 * lambda_weight(np.array([x]), eta)
    ys = np.linspace(-y_radius, y_radius, n_scan)
    ends = flow_positions(ham, ys[:, None], eta, t)[:, 0] - x
    sign = np.sign(ends)
    idx = np.flatnonzero(sign[:-1] * sign[1:] < 0)
    exact = np.flatnonzero(ends == 0.0)
    lo = ys[idx].copy()
    hi = ys[idx + 1].copy()
    flo = ends[idx].copy()
    for _ in range(n_bisect):
        if lo.size == 0:
            break
        mid = 0.5 * (lo + hi)
        fm = flow_positions(ham, mid[:, None], eta, t)[:, 0] - x
        left = flo * fm <= 0.0
        hi = np.where(left, mid, hi)
        lo = np.where(left, lo, mid)
        flo = np.where(left, flo, fm)
    roots = sorted(set(np.round(0.5 * (lo + hi), 10)) | set(np.round(ys[exact], 10)))
    return len(roots), np.array(roots)
