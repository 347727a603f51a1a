"""Semiclassical propagator via a globally defined generating function.

Builds the Schrödinger evolution for quadratic-at-infinity potentials from a
finite-dimensional reduction of the classical variational problem: a low
Fourier band of path velocities is kept as explicit parameters, the rest is
solved by contraction, and the resulting multivalued phase plus transport
amplitudes assemble the kernel in the (final position, initial momentum)
representation.
"""

from ._core import BACKEND, HAVE_COMPILED
from .amplitude import (
    SymbolConfig,
    b0,
    b0_batch,
    rho_weight,
    transport_correction,
    transport_residual,
)
from .genfun import (
    AczConfig,
    GenFunPoint,
    TailSolution,
    contraction_factor,
    curve_gamma,
    eval_S,
    eval_S_derivs,
    g_map,
    hamilton_residual,
    initial_position,
    select_cutoff,
    solve_tail,
    stationarity_residual,
    tail_rate_bound,
)
from .hamiltonian import (
    HamiltonianSpec,
    PotentialSpec,
    classical_flow,
    resonant_times,
)
from .pathspace import FourierBasis, Grid, ModeVector, SampledPath, make_grid
from .propagator import (
    KernelMatrix,
    Wavefunction,
    direct_theta_kernel,
    gaussian_wavepacket,
    hbar_ft,
    hbar_ift,
    propagate,
    wkb_kernel,
    wkb_kernel_family,
)
from .stationary import (
    BoundEstimates,
    Branch,
    BranchSet,
    CriticalFreeRegion,
    ResonanceError,
    SearchConfig,
    check_critical_free_region,
    compute_branch_bound,
    find_branches,
    scan_branch_map,
    shooting_branch_count,
)

__version__ = "0.1.0"

__all__ = [
    "AczConfig",
    "BACKEND",
    "BoundEstimates",
    "Branch",
    "BranchSet",
    "CriticalFreeRegion",
    "FourierBasis",
    "GenFunPoint",
    "Grid",
    "HAVE_COMPILED",
    "HamiltonianSpec",
    "KernelMatrix",
    "ModeVector",
    "PotentialSpec",
    "ResonanceError",
    "SampledPath",
    "SearchConfig",
    "SymbolConfig",
    "TailSolution",
    "Wavefunction",
    "b0",
    "b0_batch",
    "check_critical_free_region",
    "classical_flow",
    "compute_branch_bound",
    "contraction_factor",
    "curve_gamma",
    "direct_theta_kernel",
    "eval_S",
    "eval_S_derivs",
    "find_branches",
    "g_map",
    "gaussian_wavepacket",
    "hamilton_residual",
    "hbar_ft",
    "hbar_ift",
    "initial_position",
    "make_grid",
    "propagate",
    "resonant_times",
    "rho_weight",
    "scan_branch_map",
    "select_cutoff",
    "shooting_branch_count",
    "solve_tail",
    "stationarity_residual",
    "tail_rate_bound",
    "transport_correction",
    "transport_residual",
    "wkb_kernel",
    "wkb_kernel_family",
    "__version__",
]
