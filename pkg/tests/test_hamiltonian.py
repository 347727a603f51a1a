import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkbprop.hamiltonian import (
    HamiltonianSpec,
    PotentialSpec,
    classical_flow,
    energy,
    eval_V,
    flow_positions,
    grad_V,
    hess_V,
    lambda_weight,
    nearest_resonance,
    resonant_times,
    sup_hess_H,
    sup_hess_V,
)


@pytest.fixture(scope="module")
def pot2d() -> PotentialSpec:
    return PotentialSpec(
        np.array([[0.5, 0.1], [0.0, 0.4]]),
        perturbation="cosine",
        amplitude=0.2,
        wavevector=np.array([1.0, 0.5]),
    )


def test_potential_validation():
    with pytest.raises(ValueError, match="square"):
        PotentialSpec(np.zeros((2, 3)))
    with pytest.raises(ValueError, match="invertible"):
        PotentialSpec(np.zeros((2, 2)))
    with pytest.raises(ValueError, match="unknown perturbation"):
        PotentialSpec(np.eye(1), perturbation="quartic")
    with pytest.raises(ValueError, match="wavevector"):
        PotentialSpec(np.eye(1), perturbation="cosine", amplitude=0.1)
    with pytest.raises(ValueError, match="wavevector shape"):
        PotentialSpec(
            np.eye(2), perturbation="cosine", amplitude=0.1, wavevector=np.ones(3)
        )
    with pytest.raises(ValueError, match="mass"):
        HamiltonianSpec(PotentialSpec(np.eye(1)), mass=0.0)


def test_unperturbed_drops_amplitude():
    pot = PotentialSpec(np.eye(1), amplitude=3.0)
    assert pot.amplitude == 0.0
    assert eval_V(pot, np.array([2.0])) == pytest.approx(4.0)


def test_eval_V_closed_form(pot2d):
    x = np.array([0.3, -1.2])
    want = x @ pot2d.matrix @ x + 0.2 * math.cos(x @ pot2d.wavevector)
    assert eval_V(pot2d, x) == pytest.approx(want)


def test_grad_V_matches_fd(pot2d):
    rng = np.random.default_rng(0)
    x = rng.uniform(-2, 2, size=(5, 2))
    h = 1e-6
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (eval_V(pot2d, x + e) - eval_V(pot2d, x - e)) / (2 * h)
        assert_allclose(grad_V(pot2d, x)[:, i], fd, atol=1e-8)


def test_hess_V_matches_fd(pot2d):
    rng = np.random.default_rng(1)
    x = rng.uniform(-2, 2, size=(4, 2))
    h = 1e-5
    for i in range(2):
        e = np.zeros(2)
        e[i] = h
        fd = (grad_V(pot2d, x + e) - grad_V(pot2d, x - e)) / (2 * h)
        assert_allclose(hess_V(pot2d, x)[:, :, i], fd, atol=1e-8)


def test_sup_bounds(pot2d):
    sym = pot2d.symmetric_part
    want = np.linalg.norm(sym, 2) + 0.2 * float(pot2d.wavevector @ pot2d.wavevector)
    assert sup_hess_V(pot2d) == pytest.approx(want)
    # it really bounds the pointwise Hessian norm
    rng = np.random.default_rng(7)
    for x in rng.uniform(-3, 3, size=(20, 2)):
        assert np.linalg.norm(hess_V(pot2d, x), 2) <= sup_hess_V(pot2d) + 1e-12
    ham = HamiltonianSpec(pot2d, mass=0.5)
    assert sup_hess_H(ham) == pytest.approx(max(2.0, sup_hess_V(pot2d)))


def test_energy_and_weight():
    ham = HamiltonianSpec(PotentialSpec(np.array([[0.5]])), mass=2.0)
    assert energy(ham, np.array([1.0]), np.array([2.0])) == pytest.approx(1.5)
    assert lambda_weight(np.array([1.0]), np.array([2.0])) == pytest.approx(
        math.sqrt(6.0)
    )


def test_flow_pure_oscillator_closed_form(pure_ho):
    rng = np.random.default_rng(2)
    for _ in range(5):
        y, eta, t = rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(0.1, 3.0)
        x, p = classical_flow(pure_ho, np.array([y]), np.array([eta]), t)
        assert x[0] == pytest.approx(y * math.cos(t) + eta * math.sin(t), abs=1e-10)
        assert p[0] == pytest.approx(eta * math.cos(t) - y * math.sin(t), abs=1e-10)


def test_flow_t0_shortcircuit(pure_ho):
    y = np.array([0.7])
    eta = np.array([-0.3])
    x, p = classical_flow(pure_ho, y, eta, 0.0)
    assert_allclose(x, y)
    assert_allclose(p, eta)


def test_flow_dense_output(pure_ho):
    ts = np.linspace(0.0, 1.0, 5)
    xs, ps = classical_flow(
        pure_ho, np.array([1.0]), np.array([0.0]), 1.0, dense_times=ts
    )
    assert xs.shape == (5, 1) and ps.shape == (5, 1)
    assert_allclose(xs[:, 0], np.cos(ts), atol=1e-10)


def test_flow_conserves_energy(perturbed_ho):
    y = np.array([1.3])
    eta = np.array([-0.4])
    e0 = energy(perturbed_ho, y, eta)
    x, p = classical_flow(perturbed_ho, y, eta, 2.5)
    assert energy(perturbed_ho, x, p) == pytest.approx(float(e0), abs=1e-9)


def test_flow_positions_batch(perturbed_ho):
    ys = np.array([[-1.0], [0.2], [1.5]])
    eta = np.array([0.3])
    xs = flow_positions(perturbed_ho, ys, eta, 1.2)
    for i, y in enumerate(ys):
        x, _ = classical_flow(perturbed_ho, y, eta, 1.2)
        assert xs[i, 0] == pytest.approx(x[0], abs=1e-10)


def test_resonant_times_oscillator(pure_ho):
    res = resonant_times(pure_ho, 5.0)
    assert res.positive_definite
    assert_allclose(res.times, [math.pi / 2, 3 * math.pi / 2], atol=1e-14)
    assert nearest_resonance(pure_ho, 5.0, 1.0) == pytest.approx(math.pi / 2)
    assert nearest_resonance(pure_ho, 5.0, 4.0) == pytest.approx(3 * math.pi / 2)


def test_resonant_times_indefinite():
    ham = HamiltonianSpec(PotentialSpec(np.array([[-0.5]])))
    res = resonant_times(ham, 10.0)
    assert not res.positive_definite
    assert res.times.size == 0
    assert nearest_resonance(ham, 10.0, 1.0) is None
