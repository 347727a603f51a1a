"""Truncated real Fourier path space on [0, T].

Paths φ: [0,T] → ℝ^{2n} are expanded component-wise in the orthonormal basis
of L²([0,T])

    e₀(s)        = 1/√T,
    e_{cos,r}(s) = √(2/T)·cos(2πrs/T),    r = 1, 2, ...
    e_{sin,r}(s) = √(2/T)·sin(2πrs/T),

with per-component mode ordering [const, cos_1, sin_1, cos_2, sin_2, ...].
The low band keeps frequencies r ≤ M (including the constant), the tail band
M < r ≤ M_tail (no constant mode).  Antiderivatives are exact:

    ∫₀ˢ e₀           = s/√T,
    ∫₀ˢ e_{cos,r}    = (T/2πr)·e_{sin,r}(s),
    ∫₀ˢ e_{sin,r}    = (T/2πr)·(√(2/T) − e_{cos,r}(s)).

Note the constant mode integrates to a ramp with Fourier content at every
frequency; this is why band-limited statements about integrated paths must be
handled with care elsewhere.

Sampling uses composite Gauss–Legendre panels (16 nodes each) so that grid
inner products of band-limited functions are exact to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import legendre as npleg

NODES_PER_PANEL = 16

# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FourierBasis:
    """Mode layout for a truncated Fourier path space.

    period : length T of the time interval.
    cutoff : low-band frequency cutoff M ≥ 1.
    tail_cutoff : tail-band cutoff M_tail > M (default 4M).
    components : number of path components 2n (positions stacked over momenta).
    """

    period: float
    cutoff: int
    tail_cutoff: int = 0
    components: int = 2

    def __post_init__(self) -> None:
        if not self.period > 0.0:
            raise ValueError(f"period must be positive, got {self.period}")
        if self.cutoff < 1:
            raise ValueError(f"cutoff must be ≥ 1, got {self.cutoff}")
        if self.tail_cutoff == 0:
            object.__setattr__(self, "tail_cutoff", 4 * self.cutoff)
        if self.tail_cutoff <= self.cutoff:
            raise ValueError(
                f"tail_cutoff must exceed cutoff, got {self.tail_cutoff} ≤ {self.cutoff}"
            )
        if self.components < 2 or self.components % 2 != 0:
            raise ValueError(f"components must be even and ≥ 2, got {self.components}")

    # -- mode bookkeeping ---------------------------------------------------

    def n_modes(self, band: str) -> int:
        """Number of scalar modes per component in `band` ∈ {low, tail, full}."""
        if band == "low":
            return 2 * self.cutoff + 1
        if band == "tail":
            return 2 * (self.tail_cutoff - self.cutoff)
        if band == "full":
            return 2 * self.tail_cutoff + 1
        raise ValueError(f"unknown band {band!r}")

    def dim(self, band: str) -> int:
        """Total dimension (all components) of `band`; dim('low') = 2n(2M+1)."""
        return self.components * self.n_modes(band)

    def frequencies(self, band: str) -> np.ndarray:
        """Integer frequency r of each scalar mode, in mode order (const → 0)."""
        if band == "low":
            lo, hi, const = 1, self.cutoff, True
        elif band == "tail":
            lo, hi, const = self.cutoff + 1, self.tail_cutoff, False
        elif band == "full":
            lo, hi, const = 1, self.tail_cutoff, True
        else:
            raise ValueError(f"unknown band {band!r}")
        freqs = [0] if const else []
        for r in range(lo, hi + 1):
            freqs.extend((r, r))
        return np.asarray(freqs, dtype=np.intp)

    # -- design matrices ----------------------------------------------------

    def scalar_matrix(self, s: np.ndarray, band: str) -> np.ndarray:
        """Basis values: matrix Φ with Φ[i, j] = e_j(s_i)."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        T = self.period
        freqs = self.frequencies(band)
        out = np.empty((s.size, freqs.size))
        amp = math.sqrt(2.0 / T)
        j = 0
        if freqs[0] == 0:
            out[:, 0] = 1.0 / math.sqrt(T)
            j = 1
        while j < freqs.size:
            w = 2.0 * math.pi * freqs[j] / T
            out[:, j] = amp * np.cos(w * s)
            out[:, j + 1] = amp * np.sin(w * s)
            j += 2
        return out

    def antideriv_matrix(self, s: np.ndarray, band: str) -> np.ndarray:
        """Exact antiderivatives: matrix A with A[i, j] = ∫₀^{s_i} e_j."""
        s = np.atleast_1d(np.asarray(s, dtype=np.float64))
        T = self.period
        freqs = self.frequencies(band)
        out = np.empty((s.size, freqs.size))
        amp = math.sqrt(2.0 / T)
        j = 0
        if freqs[0] == 0:
            out[:, 0] = s / math.sqrt(T)
            j = 1
        while j < freqs.size:
            w = 2.0 * math.pi * freqs[j] / T
            out[:, j] = (amp / w) * np.sin(w * s)
            out[:, j + 1] = (amp / w) * (1.0 - np.cos(w * s))
            j += 2
        return out


# ---------------------------------------------------------------------------
# mode vectors
# ---------------------------------------------------------------------------


@dataclass
class ModeVector:
    """Coefficients of a path (or band-limited part of one) in a FourierBasis.

    coefficients has shape (components, n_modes(band)); the flat layout used
    by solvers is component-major (all modes of component 0, then 1, ...).
    """

    basis: FourierBasis
    band: str
    coefficients: np.ndarray

    def __post_init__(self) -> None:
        expect = (self.basis.components, self.basis.n_modes(self.band))
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.coefficients.shape != expect:
            raise ValueError(
                f"coefficient shape {self.coefficients.shape} != {expect} for band {self.band!r}"
            )

    @classmethod
    def zeros(cls, basis: FourierBasis, band: str) -> "ModeVector":
        return cls(basis, band, np.zeros((basis.components, basis.n_modes(band))))

    @classmethod
    def from_flat(cls, basis: FourierBasis, band: str, flat: np.ndarray) -> "ModeVector":
        flat = np.asarray(flat, dtype=np.float64)
        return cls(basis, band, flat.reshape(basis.components, basis.n_modes(band)))

    def as_flat(self) -> np.ndarray:
        return self.coefficients.reshape(-1).copy()

    def norm(self) -> float:
        """L²([0,T];ℝ^{2n}) norm (the basis is orthonormal)."""
        return float(np.linalg.norm(self.coefficients))

    def copy(self) -> "ModeVector":
        return ModeVector(self.basis, self.band, self.coefficients.copy())

    def __add__(self, other: "ModeVector") -> "ModeVector":
        self._check_compatible(other)
        return ModeVector(self.basis, self.band, self.coefficients + other.coefficients)

    def __sub__(self, other: "ModeVector") -> "ModeVector":
        self._check_compatible(other)
        return ModeVector(self.basis, self.band, self.coefficients - other.coefficients)

    def __mul__(self, scalar: float) -> "ModeVector":
        return ModeVector(self.basis, self.band, self.coefficients * float(scalar))

    __rmul__ = __mul__

    def _check_compatible(self, other: "ModeVector") -> None:
        if self.basis != other.basis or self.band != other.band:
            raise ValueError("mode vectors live in different bands or bases")


def concat_bands(low: ModeVector, tail: ModeVector) -> ModeVector:
    """Combine a low-band and a tail-band vector into one full-band vector."""
    if low.band != "low" or tail.band != "tail" or low.basis != tail.basis:
        raise ValueError("expected low+tail vectors over one basis")
    return ModeVector(
        low.basis, "full", np.concatenate([low.coefficients, tail.coefficients], axis=1)
    )


def split_bands(full: ModeVector) -> tuple[ModeVector, ModeVector]:
    """Split a full-band vector into its (low, tail) parts."""
    if full.band != "full":
        raise ValueError("expected a full-band vector")
    n_low = full.basis.n_modes("low")
    return (
        ModeVector(full.basis, "low", full.coefficients[:, :n_low].copy()),
        ModeVector(full.basis, "tail", full.coefficients[:, n_low:].copy()),
    )


# ---------------------------------------------------------------------------
# sampling grids and sampled paths
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    """Composite 16-node Gauss–Legendre grid on [0, T].

    nodes/weights give exact L² inner products for panel-wise polynomials of
    degree ≤ 31; panel_edges includes 0 and T plus any requested interior
    break points, so masked weights integrate exactly up to a break.
    """

    nodes: np.ndarray
    weights: np.ndarray
    panel_edges: np.ndarray

    @property
    def size(self) -> int:
        return self.nodes.size

    def mask_weights(self, t: float) -> np.ndarray:
        """Quadrature weights for ∫₀ᵗ; t must be a panel edge."""
        edges = self.panel_edges
        if not np.any(np.abs(edges - t) <= 1e-12 * max(1.0, edges[-1])):
            raise ValueError(f"t={t} is not a panel edge of this grid")
        w = self.weights.copy()
        w[self.nodes > t] = 0.0
        return w


@dataclass
class SampledPath:
    """Path values on a quadrature grid: values[i, c] = φ_c(nodes[i])."""

    nodes: np.ndarray
    values: np.ndarray
    weights: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape[0] != self.nodes.size:
            raise ValueError("values must have one row per node")
        if self.weights is None:
            raise ValueError("quadrature weights are required for projection")
        self.weights = np.asarray(self.weights, dtype=np.float64)


_GL_NODES, _GL_WEIGHTS = npleg.leggauss(NODES_PER_PANEL)


_VANDER_INV = np.linalg.inv(npleg.legvander(_GL_NODES, NODES_PER_PANEL - 1))


def _cumulative_rows(xi: np.ndarray) -> np.ndarray:
    """Rows Ω[i, j] = ∫_{-1}^{ξ_i} ℓ_j, ℓ_j the GL-node Lagrange basis.

    Built in the Legendre basis, where antiderivatives are exact:
    ∫_{-1}^{ξ} P_q = (P_{q+1}(ξ) − P_{q−1}(ξ)) / (2q+1) for q ≥ 1, = ξ+1
    for q = 0.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=np.float64))
    n = NODES_PER_PANEL
    P = npleg.legvander(xi, n)  # degrees 0..n
    intP = np.empty((xi.size, n))
    intP[:, 0] = xi + 1.0
    for q in range(1, n):
        intP[:, q] = (P[:, q + 1] - P[:, q - 1]) / (2 * q + 1)
    return intP @ _VANDER_INV


_CUM_CORE = _cumulative_rows(_GL_NODES)


def make_grid(period: float, n_panels: int, breaks: tuple[float, ...] = ()) -> Grid:
    """Composite GL grid on [0, period] with panel edges at every break.

    The panel layout starts from n_panels equal panels and inserts each break
    as an extra edge (degenerate duplicates are dropped), so ∫₀^b of grid
    functions is a plain masked weight sum for every break b.
    """
    if n_panels < 1:
        raise ValueError("need at least one panel")
    edges = np.linspace(0.0, period, n_panels + 1)
    extra = [b for b in breaks if 0.0 < b < period]
    if extra:
        edges = np.unique(np.concatenate([edges, np.asarray(extra, dtype=np.float64)]))
        keep = np.concatenate([[True], np.diff(edges) > 1e-12 * period])
        edges = edges[keep]
        for b in extra:  # snap retained edges onto the exact break values
            i = int(np.argmin(np.abs(edges - b)))
            edges[i] = b
    nodes, weights = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        h = 0.5 * (b - a)
        nodes.append(a + h * (1.0 + _GL_NODES))
        weights.append(h * _GL_WEIGHTS)
    return Grid(np.concatenate(nodes), np.concatenate(weights), edges)


def default_panel_count(basis: FourierBasis) -> int:
    """Panel count giving ≥ 8(M_tail+1) nodes: ⌈(M_tail+1)/2⌉ 16-node panels."""
    return max(2, math.ceil((basis.tail_cutoff + 1) / 2))


def volterra_matrix(grid: Grid) -> np.ndarray:
    """Matrix V with (V·g)[i] ≈ ∫₀^{nodes[i]} g, spectrally exact per panel.

    Within a panel the integral uses the degree-15 interpolant of g; across
    panels full-panel quadrature sums accumulate.
    """
    nn = grid.size
    V = np.zeros((nn, nn))
    start = 0
    for a, b in zip(grid.panel_edges[:-1], grid.panel_edges[1:]):
        h = 0.5 * (b - a)
        stop = start + NODES_PER_PANEL
        V[start:stop, start:stop] = h * _CUM_CORE
        if start > 0:
            V[start:stop, :start] = grid.weights[:start]
        start = stop
    return V


def volterra_rows(grid: Grid, taus: np.ndarray) -> np.ndarray:
    """Rows R with (R·g)[q] ≈ ∫₀^{τ_q} g for arbitrary τ in [0, period].

    The same per-panel interpolatory rule as ``volterra_matrix``, evaluated
    at off-node upper limits: full weights for panels left of τ plus a
    partial cumulative row on the panel containing it.
    """
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    edges = grid.panel_edges
    if np.any(taus < edges[0] - 1e-12) or np.any(taus > edges[-1] + 1e-12):
        raise ValueError("tau outside the grid interval")
    taus = np.clip(taus, edges[0], edges[-1])
    rows = np.zeros((taus.size, grid.size))
    panel = np.clip(np.searchsorted(edges, taus, side="right") - 1, 0, len(edges) - 2)
    for p in np.unique(panel):
        sel = np.flatnonzero(panel == p)
        a, b = edges[p], edges[p + 1]
        h = 0.5 * (b - a)
        xi = (taus[sel] - a) / h - 1.0
        start = p * NODES_PER_PANEL
        rows[np.ix_(sel, np.arange(start, start + NODES_PER_PANEL))] = (
            h * _cumulative_rows(xi)
        )
        if start > 0:
            rows[sel, :start] = grid.weights[:start]
    return rows


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def synthesize(modes: ModeVector, s) -> np.ndarray:
    """Evaluate the path at time(s) s; returns (components,) or (len(s), components)."""
    scalar = np.isscalar(s)
    Phi = modes.basis.scalar_matrix(np.atleast_1d(s), modes.band)
    vals = Phi @ modes.coefficients.T
    return vals[0] if scalar else vals


def antideriv_from_zero(modes: ModeVector, s) -> np.ndarray:
    """Evaluate ∫₀ˢ φ exactly (mode-wise closed forms)."""
    scalar = np.isscalar(s)
    A = modes.basis.antideriv_matrix(np.atleast_1d(s), modes.band)
    vals = A @ modes.coefficients.T
    return vals[0] if scalar else vals


def antideriv_to_t(modes: ModeVector, t: float, s) -> np.ndarray:
    """Evaluate ∫ₛᵗ φ = ∫₀ᵗ φ − ∫₀ˢ φ exactly."""
    scalar = np.isscalar(s)
    A_s = modes.basis.antideriv_matrix(np.atleast_1d(s), modes.band)
    A_t = modes.basis.antideriv_matrix(np.asarray([t]), modes.band)
    vals = (A_t - A_s) @ modes.coefficients.T
    return vals[0] if scalar else vals


def project(path: SampledPath, basis: FourierBasis, band: str) -> ModeVector:
    """L²([0,T]) projection of a sampled path onto a band.

    Exact to quadrature for any grid from make_grid with enough panels to
    resolve the band (default_panel_count suffices for products of band
    frequencies).
    """
    Phi = basis.scalar_matrix(path.nodes, band)
    coeffs = (path.weights * path.values.T) @ Phi  # (components, n_modes)
    return ModeVector(basis, band, coeffs)
