"""Shared fixtures.

Reduction configs are expensive to warm up (frames, probed iteration
counts), so the small ones used across modules are session-scoped; AczConfig
caches frames internally and the suite runs single-threaded.
"""
import numpy as np
import pytest

from wkbprop.genfun import AczConfig, select_cutoff
from wkbprop.hamiltonian import HamiltonianSpec, PotentialSpec
from wkbprop.pathspace import FourierBasis


def make_config(ham: HamiltonianSpec, period: float, **kwargs) -> AczConfig:
    cutoff = select_cutoff(ham, period)
    basis = FourierBasis(period=period, cutoff=cutoff, components=2 * ham.dim)
    return AczConfig(hamiltonian=ham, basis=basis, **kwargs)


@pytest.fixture(scope="session")
def pure_ho() -> HamiltonianSpec:
    return HamiltonianSpec(PotentialSpec(np.array([[0.5]])))


@pytest.fixture(scope="session")
def perturbed_ho() -> HamiltonianSpec:
    return HamiltonianSpec(
        PotentialSpec(
            np.array([[0.5]]),
            perturbation="cosine",
            amplitude=0.1,
            wavevector=np.array([1.0]),
        )
    )


@pytest.fixture(scope="session")
def cfg_small(pure_ho) -> AczConfig:
    """Pure oscillator over a short window (smallest auto cutoff)."""
    return make_config(pure_ho, 0.75)


@pytest.fixture(scope="session")
def cfg_pert(perturbed_ho) -> AczConfig:
    """Perturbed oscillator over a unit window."""
    return make_config(perturbed_ho, 1.0)
