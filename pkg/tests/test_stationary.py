"""Branch enumeration: multistart search, dedupe, bounds, shooting oracle."""

import math

import numpy as np
import pytest

from wkbprop.hamiltonian import classical_flow
from wkbprop.reference import mehler_phase
from wkbprop.stationary import (
    ResonanceError,
    SearchConfig,
    check_critical_free_region,
    compute_branch_bound,
    find_branches,
    scan_branch_map,
    shooting_branch_count,
)

from conftest import make_config

T_EVAL = 0.6
X_EVAL = 1.1
ETA_EVAL = -0.4


@pytest.fixture(scope="module")
def pure_branches(cfg_small):
    return find_branches(cfg_small, T_EVAL, X_EVAL, ETA_EVAL)


@pytest.fixture(scope="module")
def cfg_pure2(pure_ho):
    # long enough horizon to contain the first resonant time π/2
    return make_config(pure_ho, 2.0)


def test_pure_ho_has_exactly_one_branch(pure_branches):
    # the residual is affine in θ for a quadratic potential, so every
    # converged start must land on the same root
    assert pure_branches.count == 1
    assert pure_branches.n_converged == pure_branches.n_starts
    assert pure_branches.n_duplicates == pure_branches.n_converged - 1


def test_action_matches_mehler(pure_branches):
    expected = mehler_phase(X_EVAL, ETA_EVAL, T_EVAL)
    assert abs(pure_branches.branches[0].action - expected) <= 1e-8


def test_endpoints_match_flow_inversion(pure_ho, pure_branches):
    b = pure_branches.branches[0]
    y = (X_EVAL - ETA_EVAL * math.sin(T_EVAL)) / math.cos(T_EVAL)
    p = ETA_EVAL * math.cos(T_EVAL) - y * math.sin(T_EVAL)
    assert abs(b.initial_point[0] - y) <= 1e-8
    assert abs(b.momentum[0] - p) <= 1e-8
    # and that (y, η) really flows to (x, p)
    xs, ps = classical_flow(pure_ho, np.array([y]), np.array([ETA_EVAL]), T_EVAL)
    assert abs(xs[0] - X_EVAL) <= 1e-10
    assert abs(ps[0] - p) <= 1e-10


def test_branch_metadata(pure_branches):
    b = pure_branches.branches[0]
    assert b.gen_residual < 1e-9
    assert b.hj_residual < 1e-6
    assert b.min_abs_eig > 1e-8
    assert b.hess_det != 0.0
    assert b.newton_iters <= 60
    # no zero eigenvalues, so n₊ + n₋ = k and the signature has k's parity
    k = b.theta_star.size
    assert (k - abs(b.signature)) % 2 == 0


def test_search_is_deterministic(cfg_small):
    a = find_branches(cfg_small, T_EVAL, X_EVAL, ETA_EVAL)
    b = find_branches(cfg_small, T_EVAL, X_EVAL, ETA_EVAL)
    assert a.count == b.count
    for ba, bb in zip(a.branches, b.branches):
        assert np.array_equal(ba.theta_star, bb.theta_star)
        assert ba.action == bb.action


def test_seed_independence(cfg_small):
    base = find_branches(cfg_small, T_EVAL, X_EVAL, ETA_EVAL)
    other = find_branches(
        cfg_small, T_EVAL, X_EVAL, ETA_EVAL, search=SearchConfig(seed=123)
    )
    assert other.count == base.count
    assert np.allclose(
        other.branches[0].theta_star, base.branches[0].theta_star, atol=1e-9
    )


def test_explicit_small_radius_still_converges(cfg_small):
    bs = find_branches(
        cfg_small, T_EVAL, X_EVAL, ETA_EVAL,
        search=SearchConfig(n_starts=8, radius=0.5),
    )
    assert bs.count == 1


def test_resonance_error_at_quarter_period(cfg_pure2):
    with pytest.raises(ResonanceError, match="resonant"):
        compute_branch_bound(cfg_pure2, math.pi / 2.0)
    # slightly off the exact time but inside the proximity window
    with pytest.raises(ResonanceError):
        compute_branch_bound(cfg_pure2, math.pi / 2.0 + 1e-9)


def test_bound_estimates_sanity(cfg_small, pure_branches):
    be = compute_branch_bound(cfg_small, T_EVAL)
    assert be.sigma_min > 0.0
    assert be.epsilon > 0.0
    assert be.e_tilde > 0.0
    assert 0.0 < be.contraction < 1.0
    assert be.n_max >= pure_branches.count


def test_critical_free_region_pure(cfg_small, pure_branches):
    region = check_critical_free_region(cfg_small, T_EVAL, X_EVAL, ETA_EVAL)
    assert region.kappa == 0.0  # no perturbation, the residual is exactly affine
    assert region.sigma_affine > 0.0
    theta_norm = np.linalg.norm(pure_branches.branches[0].theta_star)
    assert theta_norm <= region.radius


def test_critical_free_region_perturbed(cfg_pert):
    bs = find_branches(cfg_pert, 0.9, 0.5, -0.2)
    region = check_critical_free_region(cfg_pert, 0.9, 0.5, -0.2)
    assert region.kappa > 0.0
    for b in bs.branches:
        assert np.linalg.norm(b.theta_star) <= region.radius


def test_scan_matches_shooting(perturbed_ho, cfg_pert):
    xs = np.array([-0.8, 0.7])
    etas = np.array([-0.5, 1.0])
    counts, sets = scan_branch_map(cfg_pert, 0.9, xs, etas)
    assert counts.shape == (2, 2)
    for i, xv in enumerate(xs):
        for j, ev in enumerate(etas):
            n_shoot, roots = shooting_branch_count(perturbed_ho, 0.9, xv, ev)
            assert counts[i, j] == n_shoot
            found = np.sort([b.initial_point[0] for b in sets[i][j].branches])
            assert np.allclose(found, roots, atol=1e-6)


def test_shooting_pure_ho_closed_form(pure_ho):
    count, roots = shooting_branch_count(pure_ho, T_EVAL, X_EVAL, ETA_EVAL)
    assert count == 1
    y = (X_EVAL - ETA_EVAL * math.sin(T_EVAL)) / math.cos(T_EVAL)
    assert abs(roots[0] - y) <= 1e-8


def test_branches_sorted_by_action(cfg_pert):
    bs = find_branches(cfg_pert, 0.9, 0.5, -0.2)
    actions = bs.actions()
    assert np.all(np.diff(actions) >= 0.0)
