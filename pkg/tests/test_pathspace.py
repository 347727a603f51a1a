import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from wkbprop.pathspace import (
    FourierBasis,
    Grid,
    ModeVector,
    SampledPath,
    antideriv_from_zero,
    antideriv_to_t,
    concat_bands,
    default_panel_count,
    make_grid,
    project,
    split_bands,
    synthesize,
    volterra_matrix,
    volterra_rows,
)

T = 2.0


@pytest.fixture(scope="module")
def basis() -> FourierBasis:
    return FourierBasis(period=T, cutoff=2, tail_cutoff=6, components=2)


@pytest.fixture(scope="module")
def grid(basis) -> Grid:
    return make_grid(basis.period, default_panel_count(basis))


def test_mode_counts(basis):
    assert basis.n_modes("low") == 5
    assert basis.n_modes("tail") == 8
    assert basis.n_modes("full") == 13
    assert basis.dim("low") == 10
    assert basis.dim("full") == 26


def test_frequencies(basis):
    assert list(basis.frequencies("low")) == [0, 1, 1, 2, 2]
    assert list(basis.frequencies("tail")) == [3, 3, 4, 4, 5, 5, 6, 6]
    assert basis.frequencies("full")[0] == 0
    with pytest.raises(ValueError, match="unknown band"):
        basis.frequencies("mid")


def test_tail_cutoff_default():
    b = FourierBasis(period=1.0, cutoff=3)
    assert b.tail_cutoff == 12


@pytest.mark.parametrize(
    "kwargs",
    [
        {"period": 0.0, "cutoff": 1},
        {"period": 1.0, "cutoff": 0},
        {"period": 1.0, "cutoff": 2, "tail_cutoff": 2},
        {"period": 1.0, "cutoff": 1, "components": 3},
        {"period": 1.0, "cutoff": 1, "components": 0},
    ],
)
def test_basis_validation(kwargs):
    with pytest.raises(ValueError):
        FourierBasis(**kwargs)


def test_full_band_orthonormal(basis, grid):
    """Grid inner products of the full band reproduce ⟨e_i, e_j⟩ = δ_ij."""
    Phi = basis.scalar_matrix(grid.nodes, "full")
    gram = Phi.T @ (grid.weights[:, None] * Phi)
    assert_allclose(gram, np.eye(basis.n_modes("full")), atol=1e-13)


def test_antideriv_matrix_exact(basis):
    """Closed-form antiderivatives agree with panel-wise quadrature."""
    g = make_grid(basis.period, 2 * default_panel_count(basis))
    for band in ("low", "tail", "full"):
        Phi = basis.scalar_matrix(g.nodes, band)
        A = basis.antideriv_matrix(g.nodes, band)
        assert_allclose(volterra_matrix(g) @ Phi, A, atol=1e-13)


def test_antideriv_endpoint(basis):
    """Over a full period the oscillatory modes integrate to zero."""
    A = basis.antideriv_matrix(np.array([T]), "full")[0]
    assert A[0] == pytest.approx(T / math.sqrt(T))
    assert_allclose(A[1:], 0.0, atol=1e-14)


def test_mode_vector_roundtrip(basis):
    rng = np.random.default_rng(0)
    flat = rng.standard_normal(basis.dim("low"))
    mv = ModeVector.from_flat(basis, "low", flat)
    assert_allclose(mv.as_flat(), flat)
    assert mv.norm() == pytest.approx(np.linalg.norm(flat))
    assert ModeVector.zeros(basis, "tail").norm() == 0.0


def test_mode_vector_algebra(basis):
    rng = np.random.default_rng(1)
    a = ModeVector.from_flat(basis, "low", rng.standard_normal(basis.dim("low")))
    b = ModeVector.from_flat(basis, "low", rng.standard_normal(basis.dim("low")))
    assert_allclose((a + b - a).coefficients, b.coefficients)
    assert_allclose((2.0 * a).coefficients, (a * 2.0).coefficients)
    c = a.copy()
    c.coefficients[:] = 0.0
    assert a.norm() > 0.0  # copy detached


def test_mode_vector_band_mismatch(basis):
    a = ModeVector.zeros(basis, "low")
    b = ModeVector.zeros(basis, "tail")
    with pytest.raises(ValueError, match="different bands"):
        _ = a + b
    with pytest.raises(ValueError, match="coefficient shape"):
        ModeVector(basis, "low", np.zeros((2, 3)))


def test_concat_split_roundtrip(basis):
    rng = np.random.default_rng(2)
    low = ModeVector.from_flat(basis, "low", rng.standard_normal(basis.dim("low")))
    tail = ModeVector.from_flat(basis, "tail", rng.standard_normal(basis.dim("tail")))
    full = concat_bands(low, tail)
    lo2, ta2 = split_bands(full)
    assert_allclose(lo2.coefficients, low.coefficients)
    assert_allclose(ta2.coefficients, tail.coefficients)
    with pytest.raises(ValueError):
        concat_bands(tail, low)
    with pytest.raises(ValueError):
        split_bands(low)


def test_make_grid_edges_and_weights():
    g = make_grid(T, 3, breaks=(0.7,))
    assert g.weights.sum() == pytest.approx(T)
    assert np.any(g.panel_edges == 0.7)
    # masked weights integrate x ↦ x exactly up to the break
    w = g.mask_weights(0.7)
    assert w @ g.nodes == pytest.approx(0.7**2 / 2.0, abs=1e-14)
    with pytest.raises(ValueError, match="panel edge"):
        g.mask_weights(0.65)
    with pytest.raises(ValueError, match="panel"):
        make_grid(T, 0)


def test_make_grid_drops_degenerate_breaks():
    g = make_grid(1.0, 4, breaks=(0.25 + 1e-15, 0.9))
    # the near-duplicate edge collapses onto the break value
    assert np.count_nonzero(np.abs(g.panel_edges - 0.25) < 1e-9) == 1
    assert np.any(g.panel_edges == 0.9)


def test_volterra_rows_arbitrary_tau(basis, grid):
    g = make_grid(basis.period, 2 * default_panel_count(basis))
    rng = np.random.default_rng(3)
    taus = rng.uniform(0.0, T, size=11)
    R = volterra_rows(g, taus)
    Phi = basis.scalar_matrix(g.nodes, "full")
    A = basis.antideriv_matrix(taus, "full")
    assert_allclose(R @ Phi, A, atol=1e-12)
    with pytest.raises(ValueError, match="outside"):
        volterra_rows(grid, np.array([T + 0.1]))


def test_synthesize_matches_antideriv(basis):
    rng = np.random.default_rng(4)
    mv = ModeVector.from_flat(basis, "full", rng.standard_normal(basis.dim("full")))
    s = np.linspace(0.1, T - 0.1, 7)
    h = 1e-6
    fd = (antideriv_from_zero(mv, s + h) - antideriv_from_zero(mv, s - h)) / (2 * h)
    assert_allclose(fd, synthesize(mv, s), atol=1e-7)
    # scalar evaluation returns a flat component vector
    assert synthesize(mv, 0.3).shape == (basis.components,)


def test_antideriv_to_t(basis):
    rng = np.random.default_rng(5)
    mv = ModeVector.from_flat(basis, "low", rng.standard_normal(basis.dim("low")))
    s = np.array([0.2, 0.9])
    want = antideriv_from_zero(mv, 1.4)[None] - antideriv_from_zero(mv, s)
    assert_allclose(antideriv_to_t(mv, 1.4, s), want, atol=1e-14)


def test_project_recovers_band_limited(basis, grid):
    rng = np.random.default_rng(6)
    mv = ModeVector.from_flat(basis, "low", rng.standard_normal(basis.dim("low")))
    path = SampledPath(
        nodes=grid.nodes, values=synthesize(mv, grid.nodes), weights=grid.weights
    )
    back = project(path, basis, "low")
    assert_allclose(back.coefficients, mv.coefficients, atol=1e-12)
    # a pure tail mode has no low-band content
    tail = ModeVector.zeros(basis, "tail")
    tail.coefficients[0, 0] = 1.0
    path_t = SampledPath(
        nodes=grid.nodes, values=synthesize(tail, grid.nodes), weights=grid.weights
    )
    assert np.abs(project(path_t, basis, "low").coefficients).max() < 1e-12


def test_sampled_path_requires_weights(grid):
    with pytest.raises(ValueError, match="weights"):
        SampledPath(nodes=grid.nodes, values=np.zeros((grid.size, 2)))
    with pytest.raises(ValueError, match="one row per node"):
        SampledPath(nodes=grid.nodes, values=np.zeros((3, 2)), weights=grid.weights)


def test_default_panel_count(basis):
    assert default_panel_count(basis) == max(2, math.ceil((basis.tail_cutoff + 1) / 2))
