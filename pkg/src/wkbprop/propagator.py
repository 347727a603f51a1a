"""Kernel assembly and propagation in the (position-out, momentum-in) form.

The evolved state is synthesized as

    ψ(t, x) = (2πħ)^{-1} ∫ Û(t, x, η) φ̂(η) dη ,
    φ̂(η)   = ∫ e^{-i y η/ħ} φ(y) dy ,

so Û(0, x, η) = e^{i x η/ħ} is the identity.  Two kernel normalizations are
assembled from the same branch data and kept side by side:

``values``       the stationary-phase normal form of the θ-integral,
                 Σ_α (2πħ)^{k/2} |det ∇²_θS|^{-1/2} e^{iπσ_α/4} e^{iS_α/ħ} b₀(θ*_α) —
                 directly comparable to the honest quadrature of
                 ∫ e^{iS/ħ} b₀ dθ (see direct_theta_kernel);

``prop_values``  the propagator (Van Vleck) normalization,
                 Σ_α |∂y/∂x|_α^{1/2} e^{-iπμ_α/2} e^{iS_α/ħ},
                 which is what ``propagate`` applies to data.  Here
                 ∂y/∂x = ∂²S/∂x∂η along the branch, the phase is certified
                 against the exact oscillator formula, and the amplitude is
                 certified end to end against the split-step oracle.

The Maslov count μ_α is anchored: a reference signature σ_ref is measured
once per configuration at a small time at the phase-space origin — before
any caustic — and μ_α = (σ_ref − σ_α)/2 counts the eigenvalue crossings the
branch family has accumulated since.

Large single-branch grids take a continuation fast path: branches are swept
over a coarse grid by warm Newton, certified single-branch by multistart
probes and field constancy (signature, fold orientation), then splined to
the requested nodes.  Everything else walks entries one by one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RectBivariateSpline

from . import _core
from .amplitude import SymbolConfig, b0_batch
from .genfun import (
    AczConfig,
    _eval_batch,
    _frame,
    _initial_from_tail,
    _solve_many,
)
from .hamiltonian import resonant_times
from .stationary import SearchConfig, _newton_polish, find_branches

__all__ = [
    "KernelMatrix",
    "Wavefunction",
    "direct_theta_kernel",
    "gaussian_wavepacket",
    "hbar_ft",
    "hbar_ift",
    "propagate",
    "wkb_kernel",
    "wkb_kernel_family",
]

FLAG_OK = 0
FLAG_NO_BRANCH = 1
FLAG_SEARCH_FAILED = 2


# ---------------------------------------------------------------------------
# states


@dataclass
class Wavefunction:
    """State sampled on a uniform position grid."""

    x: np.ndarray
    values: np.ndarray
    hbar: float

    def __post_init__(self) -> None:
        self.x = np.asarray(self.x, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.complex128)
        if self.x.shape != self.values.shape:
            raise ValueError("grid and values shapes differ")
        if self.hbar <= 0.0:
            raise ValueError("hbar must be positive")

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    def norm(self) -> float:
        return math.sqrt(float(np.sum(np.abs(self.values) ** 2)) * self.dx)


def gaussian_wavepacket(x: np.ndarray, hbar: float, *, center: float = 0.0,
                        momentum: float = 0.0, width: float | None = None) -> Wavefunction:
    """Normalized Gaussian packet; width defaults to the coherent √(ħ/2).

    The grid must cover at least six standard deviations on both sides of
    the center — enough that the truncated mass stays below every tolerance
    used downstream.
    """
    x = np.asarray(x, dtype=np.float64)
    sigma = math.sqrt(hbar / 2.0) if width is None else width
    if x.min() > center - 6.0 * sigma or x.max() < center + 6.0 * sigma:
        raise ValueError("grid does not cover ±6 standard deviations of the packet")
    values = (2.0 * math.pi * sigma**2) ** -0.25 * np.exp(
        -((x - center) ** 2) / (4.0 * sigma**2) + 1j * momentum * (x - center) / hbar
    )
    return Wavefunction(x=x, values=values, hbar=hbar)


def hbar_ft(wf: Wavefunction, eta: np.ndarray) -> np.ndarray:
    """Semiclassical Fourier transform φ̂(η) = ∫ e^{-iyη/ħ} φ(y) dy.

    Plain uniform-grid quadrature — spectrally accurate for states that
    decay inside the box — evaluated at arbitrary η nodes.  The inverse is
    ``hbar_ift``, which carries the (2πħ)^{-1} of the inversion formula.
    """
    eta = np.asarray(eta, dtype=np.float64)
    out = np.empty(eta.size, dtype=np.complex128)
    weighted = wf.values * wf.dx
    chunk = max(1, int(4e6 // max(wf.x.size, 1)))
    for lo in range(0, eta.size, chunk):
        hi = min(eta.size, lo + chunk)
        out[lo:hi] = np.exp(-1j * np.outer(eta[lo:hi], wf.x) / wf.hbar) @ weighted
    return out


def hbar_ift(phi_hat: np.ndarray, eta: np.ndarray, x: np.ndarray,
             hbar: float) -> np.ndarray:
    """Inversion φ(x) = (2πħ)^{-1} ∫ e^{ixη/ħ} φ̂(η) dη on a uniform η grid."""
    eta = np.asarray(eta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    deta = float(eta[1] - eta[0])
    phase = np.exp(1j * np.outer(x, eta) / hbar)
    return (phase @ (np.asarray(phi_hat) * deta)) / (2.0 * math.pi * hbar)


# ---------------------------------------------------------------------------
# kernels


@dataclass
class KernelMatrix:
    """Û on a rectangle of (x, η) nodes at one (t, ħ).

    values       stationary-phase normal form (see module docstring)
    prop_values  propagator normalization, used for synthesis
    branch_counts/flags  per-entry enumeration outcome; flagged entries are
                 zeroed (no classical branch reaches them, or the search
                 failed) and counted by ``propagate``.
    """

    t: float
    hbar: float
    x: np.ndarray
    eta: np.ndarray
    values: np.ndarray
    prop_values: np.ndarray
    branch_counts: np.ndarray
    flags: np.ndarray
    meta: dict = field(default_factory=dict)


def _reference_signature(cfg: AczConfig) -> int:
    """Hessian signature of the trivial branch before any caustic (cached)."""
    cached = getattr(cfg, "_sig_ref", None)
    if cached is not None:
        return cached
    period = cfg.basis.period
    res = resonant_times(cfg.hamiltonian, period)
    t_anchor = 0.5 * period
    if res.positive_definite and res.times.size:
        t_anchor = min(0.4 * float(res.times[0]), t_anchor)
    n = cfg.hamiltonian.dim
    bs = find_branches(cfg, t_anchor, np.zeros(n), np.zeros(n),
                       search=SearchConfig(n_starts=24, seed=5))
    if not bs.branches:
        raise RuntimeError("no branch at the origin anchor; cannot anchor Maslov data")
    b = min(bs.branches, key=lambda br: float(np.linalg.norm(br.theta_star)))
    if (b.signature - cfg.theta_dim) % 2 != 0:
        raise RuntimeError("anchor signature violates the parity invariant")
    cfg._sig_ref = b.signature
    return b.signature


_POLISH = SearchConfig(n_starts=1, newton_tol=1e-11, max_newton=14,
                       max_halvings=4, jac_step=1e-6)


def _branch_jacobian_y(cfg, frame, t, x, eta, theta_star):
    """|∂y/∂x| of one branch by differencing warm re-solved branches."""
    n = cfg.hamiltonian.dim
    x = np.atleast_1d(x)
    eta = np.atleast_1d(eta)
    rows_x = []
    hs = []
    for j in range(n):
        h = 1e-5 * (1.0 + abs(x[j]))
        hs.append(h)
        xp = x.copy(); xp[j] += h
        xm = x.copy(); xm[j] -= h
        rows_x.extend([xp, xm])
    X = np.asarray(rows_x)
    TH0 = np.broadcast_to(theta_star, (2 * n, cfg.theta_dim)).copy()
    ETA = np.broadcast_to(eta, (2 * n, n)).copy()
    TH, rn, _, ok = _newton_polish(cfg, frame, X, ETA, TH0, _POLISH)
    if not ok.all():
        raise RuntimeError("branch polish failed while differencing ∂y/∂x")
    nm = cfg.basis.n_modes("low")
    F, _, _, _ = _solve_many(cfg, frame, X, TH.reshape(-1, 2 * n, nm))
    Y = _initial_from_tail(cfg, frame, TH.reshape(-1, 2 * n, nm), F, X, ETA)
    J = np.empty((n, n))
    for j in range(n):
        J[:, j] = (Y[2 * j] - Y[2 * j + 1]) / (2.0 * hs[j])
    return float(abs(np.linalg.det(J)))


def _assemble_entry(cfg, branches, extras, hbar, sig_ref):
    """(values, prop_values) sums over one entry's branches."""
    k = cfg.theta_dim
    val = 0.0 + 0.0j
    prop = 0.0 + 0.0j
    for b, ex in zip(branches, extras):
        phase = np.exp(1j * b.action / hbar)
        val += (
            (2.0 * math.pi * hbar) ** (k / 2.0)
            * abs(b.hess_det) ** -0.5
            * np.exp(0.25j * math.pi * b.signature)
            * ex["b0"]
            * phase
        )
        mu = (sig_ref - b.signature) // 2
        prop += math.sqrt(ex["dydx"]) * np.exp(-0.5j * math.pi * mu) * phase
    return val, prop


def _identity_kernels(cfg, x, eta, hbars):
    out = []
    shape = (x.size, eta.size)
    phase = np.outer(x, eta)
    for hbar in hbars:
        u = np.exp(1j * phase / hbar)
        out.append(KernelMatrix(
            t=0.0, hbar=hbar, x=x.copy(), eta=eta.copy(),
            values=u.copy(), prop_values=u,
            branch_counts=np.ones(shape, dtype=int),
            flags=np.zeros(shape, dtype=np.uint8),
            meta={"mode": "identity"},
        ))
    return out


def _kernel_slow(cfg, t, x, eta, hbars, search, sym, sig_ref):
    nx, ne = x.size, eta.size
    frame = _frame(cfg, t)
    counts = np.zeros((nx, ne), dtype=int)
    flags = np.zeros((nx, ne), dtype=np.uint8)
    vals = [np.zeros((nx, ne), dtype=np.complex128) for _ in hbars]
    props = [np.zeros((nx, ne), dtype=np.complex128) for _ in hbars]
    nm = cfg.basis.n_modes("low")
    for i in range(nx):
        for j in range(ne):
            bs = find_branches(cfg, t, x[i], eta[j], search=search)
            counts[i, j] = bs.count
            if bs.count == 0:
                flags[i, j] = FLAG_NO_BRANCH
                continue
            extras = []
            try:
                for b in bs.branches:
                    if (sig_ref - b.signature) % 2 != 0:
                        raise RuntimeError("signature parity broke against the anchor")
                    dydx = _branch_jacobian_y(
                        cfg, frame, t, np.atleast_1d(x[i]), np.atleast_1d(eta[j]),
                        b.theta_star,
                    )
                    bb = b0_batch(
                        cfg, t, np.atleast_1d(x[i])[None],
                        b.theta_star.reshape(1, 2 * cfg.hamiltonian.dim, nm),
                        sym=sym,
                    )[0]
                    extras.append({"dydx": dydx, "b0": bb})
            except RuntimeError:
                flags[i, j] = FLAG_SEARCH_FAILED
                continue
            for hi, hbar in enumerate(hbars):
                v, p = _assemble_entry(cfg, bs.branches, extras, hbar, sig_ref)
                vals[hi][i, j] = v
                props[hi][i, j] = p
    return [
        KernelMatrix(
            t=t, hbar=hbar, x=x.copy(), eta=eta.copy(),
            values=vals[hi], prop_values=props[hi],
            branch_counts=counts.copy(), flags=flags.copy(),
            meta={"mode": "slow", "sig_ref": sig_ref},
        )
        for hi, hbar in enumerate(hbars)
    ]


def _single_branch_fields(cfg, t, xg, eg, search, sym, probe_points=5):
    """Coarse single-branch continuation; None if the regime is not simple.

    Certification: multistart enumeration at a 3×3 probe plus random
    interior nodes must find exactly one branch; the swept fields must have
    constant signature and fold orientation (no caustic inside the grid).
    """
    if cfg.hamiltonian.dim != 1:
        return None
    k = cfg.theta_dim
    nm = cfg.basis.n_modes("low")
    frame = _frame(cfg, t)
    nx, ne = xg.size, eg.size

    probe_idx = [0, nx // 2, nx - 1]
    probe_jdx = [0, ne // 2, ne - 1]
    for i in probe_idx:
        for j in probe_jdx:
            bs = find_branches(cfg, t, xg[i], eg[j], search=search)
            if bs.count != 1:
                return None
            if i == probe_idx[0] and j == probe_jdx[0]:
                th_corner = bs.branches[0].theta_star

    TH = np.zeros((nx, ne, k))
    # first column: sweep x upward from the solved corner
    th = th_corner.copy()
    eta0 = np.full((1, 1), eg[0])
    for i in range(nx):
        thn, _, _, ok = _newton_polish(
            cfg, frame, np.atleast_1d(xg[i])[None], eta0, th[None].copy(), _POLISH
        )
        if not ok[0]:
            return None
        th = thn[0]
        TH[i, 0] = th
    # remaining columns: whole-column warm polish from the previous column
    Xcol = xg[:, None]
    for j in range(1, ne):
        Ecol = np.full((nx, 1), eg[j])
        thn, _, _, ok = _newton_polish(cfg, frame, Xcol, Ecol, TH[:, j - 1].copy(),
                                       _POLISH)
        if not ok.all():
            return None
        TH[:, j] = thn

    # random interior spot enumeration — continuation can slide onto a fold
    rng = np.random.default_rng(1234)
    for _ in range(probe_points):
        i = int(rng.integers(1, nx - 1))
        j = int(rng.integers(1, ne - 1))
        bs = find_branches(cfg, t, xg[i], eg[j], search=search)
        if bs.count != 1:
            return None
        if np.max(np.abs(bs.branches[0].theta_star - TH[i, j])) > 1e-6 * (
            1.0 + np.max(np.abs(TH[i, j]))
        ):
            return None

    B = nx * ne
    TH_flat = TH.reshape(B, k)
    X_flat = np.repeat(xg, ne)[:, None]
    E_flat = np.tile(eg, nx)[:, None]
    TH_modes = TH_flat.reshape(B, 2, nm)

    S, _ = _eval_batch(cfg, frame, X_flat, E_flat, TH_modes)

    # θ-Hessians: central stencils, diagonal + upper triangle, chunked
    hs = cfg.fd_step_hess * (1.0 + np.abs(TH_flat))          # (B, k)
    rows = [TH_flat]
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    for j in range(k):
        e = np.zeros((B, k)); e[:, j] = hs[:, j]
        rows.extend([TH_flat + e, TH_flat - e])
    for (a, b) in pairs:
        ea = np.zeros((B, k)); ea[:, a] = hs[:, a]
        eb = np.zeros((B, k)); eb[:, b] = hs[:, b]
        rows.extend([TH_flat + ea + eb, TH_flat + ea - eb,
                     TH_flat - ea + eb, TH_flat - ea - eb])
    n_rows = len(rows)
    SH = np.empty((n_rows, B))
    chunk = max(1, cfg.batch_chunk // B)
    for lo in range(0, n_rows, chunk):
        hi = min(n_rows, lo + chunk)
        block = np.concatenate(rows[lo:hi], axis=0)
        Sb, _ = _eval_batch(
            cfg, frame,
            np.tile(X_flat, (hi - lo, 1)), np.tile(E_flat, (hi - lo, 1)),
            block.reshape(-1, 2, nm),
        )
        SH[lo:hi] = Sb.reshape(hi - lo, B)
    H = np.empty((B, k, k))
    for j in range(k):
        H[:, j, j] = (SH[1 + 2 * j] - 2.0 * S + SH[2 + 2 * j]) / hs[:, j] ** 2
    base = 1 + 2 * k
    for q, (a, b) in enumerate(pairs):
        r0 = base + 4 * q
        H[:, a, b] = H[:, b, a] = (SH[r0] - SH[r0 + 1] - SH[r0 + 2] + SH[r0 + 3]) / (
            4.0 * hs[:, a] * hs[:, b]
        )
    eigs = np.linalg.eigvalsh(H)
    sigs = np.sum(eigs > 0.0, axis=1) - np.sum(eigs < 0.0, axis=1)
    if np.unique(sigs).size != 1:
        return None
    logabsdet = np.sum(np.log(np.abs(eigs)), axis=1)

    b0_vals = np.empty(B)
    bchunk = 4096
    for lo in range(0, B, bchunk):
        hi = min(B, lo + bchunk)
        b0_vals[lo:hi] = b0_batch(cfg, t, X_flat[lo:hi], TH_modes[lo:hi], sym=sym)
    # interpolate log b₀: the Gaussian ρ(θ*) factor makes b₀ itself a poor
    # spline target, while log b₀ is quadratic-plus-small in (x, η)
    log_b0 = np.log(np.clip(b0_vals, 1e-300, None))

    # fold orientation field dy/dx by differencing warm-polished columns
    dydx = np.empty(B)
    h = 1e-5 * (1.0 + np.abs(X_flat[:, 0]))
    for sign in (1.0, -1.0):
        Xs = X_flat + (sign * h)[:, None]
        THs, _, _, ok = _newton_polish(cfg, frame, Xs, E_flat, TH_flat.copy(), _POLISH)
        if not ok.all():
            return None
        F, _, _, _ = _solve_many(cfg, frame, Xs, THs.reshape(B, 2, nm))
        Y = _initial_from_tail(cfg, frame, THs.reshape(B, 2, nm), F, Xs, E_flat)
        if sign > 0:
            y_plus = Y[:, 0]
        else:
            dydx = (y_plus - Y[:, 0]) / (2.0 * h)
    if np.any(dydx == 0.0) or np.unique(np.sign(dydx)).size != 1:
        return None

    shape = (nx, ne)
    return {
        "S": S.reshape(shape),
        "logabsdet": logabsdet.reshape(shape),
        "log_b0": log_b0.reshape(shape),
        "absdydx": np.abs(dydx).reshape(shape),
        "sigma": int(sigs[0]),
    }


def wkb_kernel_family(
    cfg: AczConfig,
    t: float,
    x: np.ndarray,
    eta: np.ndarray,
    hbars,
    *,
    search: SearchConfig | None = None,
    sym: SymbolConfig | None = None,
    mode: str = "auto",
    coarse: int = 81,
) -> list:
    """Assemble kernels at each ħ from one shared branch enumeration.

    The branch sweep is the expensive part and is ħ-free, so an ħ-sweep
    costs one enumeration.  mode 'auto' takes the continuation fast path
    for large single-branch grids and falls back to per-entry enumeration
    otherwise; 'slow' and 'fast' force the choice ('fast' raises if the
    regime is not certified single-branch).
    """
    if mode not in ("auto", "slow", "fast"):
        raise ValueError(f"unknown kernel mode {mode!r}")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    eta = np.atleast_1d(np.asarray(eta, dtype=np.float64))
    hbars = [float(h) for h in np.atleast_1d(hbars)]
    if any(h <= 0 for h in hbars):
        raise ValueError("hbar must be positive")
    if t == 0.0:
        return _identity_kernels(cfg, x, eta, hbars)
    search = search or SearchConfig()
    sym = sym or SymbolConfig()
    sig_ref = _reference_signature(cfg)

    fields = None
    if mode in ("auto", "fast") and x.size * eta.size >= 4096:
        nc = max(9, int(coarse))
        xg = np.linspace(x.min(), x.max(), nc)
        eg = np.linspace(eta.min(), eta.max(), nc)
        fields = _single_branch_fields(cfg, t, xg, eg, search, sym)
        if fields is None and mode == "fast":
            raise RuntimeError("fast kernel path requires a certified single-branch regime")
    elif mode == "fast":
        raise RuntimeError("fast kernel path is for large grids; use mode='auto'")

    if fields is None:
        return _kernel_slow(cfg, t, x, eta, hbars, search, sym, sig_ref)

    spl = {
        name: RectBivariateSpline(xg, eg, fields[name])
        for name in ("S", "logabsdet", "log_b0", "absdydx")
    }
    Sf = spl["S"](x, eta)
    ldf = spl["logabsdet"](x, eta)
    b0f = np.exp(spl["log_b0"](x, eta))
    ampf = np.sqrt(np.abs(spl["absdydx"](x, eta)))
    sigma = fields["sigma"]
    if (sig_ref - sigma) % 2 != 0:
        raise RuntimeError("signature parity broke against the anchor")
    mu = (sig_ref - sigma) // 2
    k = cfg.theta_dim
    shape = (x.size, eta.size)
    out = []
    for hbar in hbars:
        phase = np.exp(1j * Sf / hbar)
        vals = (
            (2.0 * math.pi * hbar) ** (k / 2.0)
            * np.exp(-0.5 * ldf)
            * np.exp(0.25j * math.pi * sigma)
            * b0f
            * phase
        )
        props = ampf * np.exp(-0.5j * math.pi * mu) * phase
        out.append(KernelMatrix(
            t=t, hbar=hbar, x=x.copy(), eta=eta.copy(),
            values=vals, prop_values=props,
            branch_counts=np.ones(shape, dtype=int),
            flags=np.zeros(shape, dtype=np.uint8),
            meta={"mode": "fast", "coarse": nc, "sigma": sigma, "mu": mu,
                  "sig_ref": sig_ref},
        ))
    return out


def wkb_kernel(
    cfg: AczConfig,
    t: float,
    x: np.ndarray,
    eta: np.ndarray,
    hbar: float,
    *,
    search: SearchConfig | None = None,
    sym: SymbolConfig | None = None,
    mode: str = "auto",
    coarse: int = 81,
) -> KernelMatrix:
    """Assembled kernel at one ħ; see ``wkb_kernel_family`` for ħ-sweeps."""
    return wkb_kernel_family(cfg, t, x, eta, [float(hbar)], search=search,
                             sym=sym, mode=mode, coarse=coarse)[0]


def direct_theta_kernel(
    cfg: AczConfig,
    t: float,
    xs: np.ndarray,
    etas: np.ndarray,
    hbar,
    *,
    sym: SymbolConfig | None = None,
    gh_order: int = 7,
    chunk: int = 16384,
    weight_cut: float = 1e-12,
) -> np.ndarray:
    """Honest quadrature of Û = ∫ e^{iS/ħ} b₀ dθ at point pairs (xs, etas).

    Tensor Gauss–Hermite in θ (the Gaussian of b₀ is the weight); exact at
    t = 0.  The θ-sweep — tail solves, the action, and the transport factor
    of b₀ — is ħ- and η-free, so it is shared: S splits as
    S₀(θ; x) + ⟨x,η⟩ − t|η|²/2m − ⟨η, I_p(θ; x)⟩/m with S₀ and I_p η-free,
    and each additional η or ħ at the same x costs one phase assembly.
    Pass ``hbar`` as a scalar for a (P,) result or as a sequence for (H, P).

    Tensor nodes whose relative weight falls below ``weight_cut`` are
    dropped; with |b₀/ρ| = O(1) their total contribution is bounded by
    weight_cut × node count × max term, far under quadrature error.
    """
    sym = sym or SymbolConfig()
    hbars = np.atleast_1d(np.asarray(hbar, dtype=np.float64))
    scalar_hbar = np.ndim(hbar) == 0
    if np.any(hbars <= 0.0):
        raise ValueError("hbar must be positive")
    xs = np.atleast_1d(np.asarray(xs, dtype=np.float64))
    etas = np.atleast_1d(np.asarray(etas, dtype=np.float64))
    n = cfg.hamiltonian.dim
    if xs.ndim == 1:
        xs = xs[:, None]
    if etas.ndim == 1:
        etas = etas[:, None]
    if xs.shape != etas.shape:
        raise ValueError("xs and etas must pair up")
    P = xs.shape[0]
    k = cfg.theta_dim
    nm = cfg.basis.n_modes("low")
    m = cfg.hamiltonian.mass
    pot = cfg.hamiltonian.potential

    z1, w1 = np.polynomial.hermite.hermgauss(gh_order)
    grids = np.meshgrid(*([z1] * k), indexing="ij")
    # θ = w·z absorbs the ρ width; the weight stays normalized to Σ W = 1
    Z = sym.rho_width * np.stack([g.ravel() for g in grids], axis=1)   # (Q, k)
    wgrids = np.meshgrid(*([w1] * k), indexing="ij")
    W = math.pi ** (-k / 2.0) * np.prod(np.stack([g.ravel() for g in wgrids]), axis=0)
    if weight_cut > 0.0:
        keep = W >= weight_cut * W.max()
        Z, W = Z[keep], W[keep]

    out = np.zeros((hbars.size, P), dtype=np.complex128)
    frame = _frame(cfg, t)
    ux, inv = np.unique(xs, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    for gi in range(ux.shape[0]):
        members = np.flatnonzero(inv == gi)
        xg = ux[gi]
        eta_g = etas[members]                                  # (Gm, n)
        acc = np.zeros((hbars.size, members.size), dtype=np.complex128)
        for lo in range(0, Z.shape[0], chunk):
            hi = min(Z.shape[0], lo + chunk)
            TH = Z[lo:hi].reshape(-1, 2 * n, nm)
            C = TH.shape[0]
            Xb = np.broadcast_to(xg, (C, n)).copy()
            F, _, _, _ = _solve_many(cfg, frame, Xb, TH)
            S0 = _core.action_terms(
                frame.PHI, frame.A0, frame.V, frame.wa, frame.AT, frame.WT,
                TH, F, Xb, np.zeros((C, n)), pot.matrix, pot.amplitude,
                pot.wavevector, m, frame.t,
            )
            gamma_p = TH[:, n:, :] @ frame.A0.T + F[:, n:, :] @ frame.V.T
            Ip = gamma_p @ frame.wa                            # (C, n)
            core = b0_batch(cfg, t, Xb, TH, sym=sym, include_weight=False)
            wcore = W[lo:hi] * core
            for gm, ev in enumerate(eta_g):
                phase = (
                    S0
                    + float(xg @ ev)
                    - 0.5 * t * float(ev @ ev) / m
                    - (Ip @ ev) / m
                )
                for hi_idx, hb in enumerate(hbars):
                    acc[hi_idx, gm] += np.sum(wcore * np.exp(1j * phase / hb))
        out[:, members] = acc
    return out[0] if scalar_hbar else out


# ---------------------------------------------------------------------------
# propagation


def propagate(
    cfg: AczConfig,
    wf: Wavefunction,
    t: float,
    *,
    method: str = "wkb",
    eta: np.ndarray | None = None,
    kernel: KernelMatrix | None = None,
    search: SearchConfig | None = None,
    sym: SymbolConfig | None = None,
    mode: str = "auto",
    coarse: int = 81,
    dt: float = 1e-3,
    gh_order: int = 7,
    max_flagged: float = 0.01,
) -> Wavefunction:
    """Evolve a state to time t and return it on the same grid.

    method 'wkb' synthesizes ψ = (2πħ)^{-1}∫Û φ̂ dη through the multivalued
    kernel's propagator normalization, 'direct' through the honest
    θ-quadrature (small grids only; carries the same scaling caveat as the
    raw integral — useful for consistency, not accuracy), 'reference'
    through split-step.  The momentum grid defaults to the position grid
    and must satisfy the alias bound Δη ≤ πħ/max|x|.  More than
    ``max_flagged`` of entries without a classical branch aborts — the
    kernel does not cover the state's phase-space support.
    """
    if method == "reference":
        from .reference import split_step

        values = split_step(cfg.hamiltonian, wf.x, wf.values, t, wf.hbar, dt=dt)
        return Wavefunction(x=wf.x.copy(), values=values, hbar=wf.hbar)
    if method not in ("wkb", "direct"):
        raise ValueError(f"unknown method {method!r}")
    if eta is None:
        eta = wf.x.copy()
    eta = np.asarray(eta, dtype=np.float64)
    deta = float(eta[1] - eta[0])
    xmax = float(np.max(np.abs(wf.x)))
    if deta > math.pi * wf.hbar / xmax + 1e-15:
        raise ValueError(
            f"momentum spacing {deta:.4g} aliases: need ≤ πħ/max|x| = "
            f"{math.pi * wf.hbar / xmax:.4g}"
        )
    phi_hat = hbar_ft(wf, eta)
    if method == "direct":
        if wf.x.size * eta.size > 32768:
            raise ValueError("direct θ-quadrature is for small grids")
        X, E = np.meshgrid(wf.x, eta, indexing="ij")
        U = direct_theta_kernel(
            cfg, t, X.ravel(), E.ravel(), wf.hbar, sym=sym, gh_order=gh_order
        ).reshape(wf.x.size, eta.size)
        flagged = 0
    else:
        km = kernel
        if km is None:
            km = wkb_kernel(cfg, t, wf.x, eta, wf.hbar, search=search, sym=sym,
                            mode=mode, coarse=coarse)
        else:
            if km.x.shape != wf.x.shape or not np.allclose(km.x, wf.x) \
                    or not np.allclose(km.eta, eta) or km.hbar != wf.hbar:
                raise ValueError("supplied kernel does not match the request")
        U = km.prop_values
        flagged = int(np.count_nonzero(km.flags))
        if flagged > max_flagged * km.flags.size:
            raise RuntimeError(
                f"{flagged}/{km.flags.size} kernel entries lack classical branches; "
                "the state leaves the covered region"
            )
    values = (U @ (phi_hat * deta)) / (2.0 * math.pi * wf.hbar)
    return Wavefunction(x=wf.x.copy(), values=values, hbar=wf.hbar)
