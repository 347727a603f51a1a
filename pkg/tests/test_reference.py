import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkbprop.hamiltonian import HamiltonianSpec, PotentialSpec, classical_flow
from wkbprop.reference import (
    free_gaussian,
    free_kinetic,
    l2_error,
    l2_norm,
    mehler_phase,
    relative_l2_error,
    split_step,
)


def gaussian(x, hbar, center=0.0, momentum=0.0, width=1.0):
    return (2 * math.pi * width**2) ** -0.25 * np.exp(
        -((x - center) ** 2) / (4 * width**2) + 1j * momentum * (x - center) / hbar
    )


@pytest.fixture(scope="module")
def box():
    return np.linspace(-20.0, 20.0, 1024, endpoint=False)


def test_free_evolution_matches_closed_form(box):
    """Spectral kinetic step vs the analytic spreading Gaussian."""
    hbar = 0.5
    psi0 = gaussian(box, hbar, momentum=1.0)
    got = free_kinetic(box, psi0, 1.5, hbar)
    want = free_gaussian(box, 1.5, hbar, momentum=1.0)
    dx = box[1] - box[0]
    assert relative_l2_error(got, want, dx) < 1e-10


def test_free_kinetic_t0(box):
    psi0 = gaussian(box, 0.3)
    assert_allclose(free_kinetic(box, psi0, 0.0, 0.3), psi0)


def test_split_step_second_order(pure_ho, box):
    """Strang splitting: halving δt cuts the error by ~4."""
    hbar = 0.5
    dx = box[1] - box[0]
    psi0 = gaussian(box, hbar, center=1.0)
    ref = split_step(pure_ho, box, psi0, 0.4, hbar, dt=1e-5)
    errs = [
        l2_error(split_step(pure_ho, box, psi0, 0.4, hbar, dt=dt), ref, dx)
        for dt in (8e-3, 4e-3, 2e-3)
    ]
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    assert all(3.0 < r < 5.0 for r in ratios), ratios


def test_split_step_norm_and_t0(perturbed_ho, box):
    hbar = 0.4
    dx = box[1] - box[0]
    psi0 = gaussian(box, hbar)
    out = split_step(perturbed_ho, box, psi0, 1.0, hbar)
    assert l2_norm(out, dx) == pytest.approx(l2_norm(psi0, dx), abs=1e-10)
    assert_allclose(split_step(perturbed_ho, box, psi0, 0.0, hbar), psi0)
    with pytest.raises(ValueError, match="nonnegative"):
        split_step(perturbed_ho, box, psi0, -0.1, hbar)


def test_split_step_warns_on_edge_mass():
    ham = HamiltonianSpec(PotentialSpec(np.array([[0.5]])))
    x = np.linspace(-4.0, 4.0, 256, endpoint=False)
    psi0 = gaussian(x, 0.5, momentum=5.0, width=0.5)
    with pytest.warns(RuntimeWarning, match="edge"):
        split_step(ham, x, psi0, math.pi / 2, 0.5)


def test_split_step_rejects_nonuniform(pure_ho):
    x = np.array([0.0, 0.1, 0.3])
    with pytest.raises(ValueError, match="uniform"):
        split_step(pure_ho, x, np.zeros(3, dtype=complex), 0.1, 0.5)


def test_mehler_phase_generates_flow(pure_ho):
    """∂_η S = y and ∂_x S = p reproduce the oscillator trajectory."""
    rng = np.random.default_rng(0)
    h = 1e-6
    for _ in range(5):
        x, eta, t = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.2, 1.4)
        y = (mehler_phase(x, eta + h, t) - mehler_phase(x, eta - h, t)) / (2 * h)
        p = (mehler_phase(x + h, eta, t) - mehler_phase(x - h, eta, t)) / (2 * h)
        xf, pf = classical_flow(pure_ho, np.array([y]), np.array([eta]), t)
        assert xf[0] == pytest.approx(x, abs=1e-5)
        assert pf[0] == pytest.approx(p, abs=1e-5)


def test_mehler_phase_hamilton_jacobi():
    h = 1e-6
    x, eta, t = 0.8, -0.6, 0.9
    dt = (mehler_phase(x, eta, t + h) - mehler_phase(x, eta, t - h)) / (2 * h)
    dx = (mehler_phase(x + h, eta, t) - mehler_phase(x - h, eta, t)) / (2 * h)
    assert dt + 0.5 * dx**2 + 0.5 * x**2 == pytest.approx(0.0, abs=1e-5)


def test_mehler_phase_small_time():
    # S → ⟨x, η⟩ as t → 0
    assert mehler_phase(1.3, -0.7, 1e-9) == pytest.approx(-0.91, abs=1e-6)


def test_mehler_phase_resonance():
    with pytest.raises(ValueError, match="caustic"):
        mehler_phase(1.0, 1.0, math.pi / 2)


def test_l2_helpers():
    assert l2_norm(np.ones(11), 0.1) == pytest.approx(math.sqrt(1.1))
    a = np.ones(11)
    assert l2_error(a, a, 0.1) == 0.0
    assert relative_l2_error(2 * a, a, 0.1) == pytest.approx(1.0)
