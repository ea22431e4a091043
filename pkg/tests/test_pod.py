"""Snapshot collection, energy-rank truncation, and the POD basis maps."""

import numpy as np
import pytest

from helpers import random_state, small_setup

from tswrom.errors import ConfigError
from tswrom.fom import State
from tswrom.pod import (build_pod_basis, collect_snapshots, lift, restrict,
                        truncate_rank)


def _tiny_snapshots():
    """Two snapshots with a hand-computable decomposition.

    The h block has columns (1, 0, 0, 0) and (3, 0, 0, 0): mean (2, 0, 0, 0),
    deviations -/+ e1, singular value sqrt(2), single mode e1. The other
    variables are constant in time, so their deviations vanish.
    """
    N = 4
    z1 = np.concatenate([[1.0, 0, 0, 0], np.full(N, 0.5), np.full(N, -0.25), np.full(N, 3.0)])
    z2 = np.concatenate([[3.0, 0, 0, 0], np.full(N, 0.5), np.full(N, -0.25), np.full(N, 3.0)])
    return np.stack([z1, z2], axis=1)


def test_collect_snapshots_worked_example():
    snaps = collect_snapshots(_tiny_snapshots())
    assert snaps.N == 4
    assert snaps.num_snapshots == 2
    np.testing.assert_array_equal(snaps.means[0], [2.0, 0, 0, 0])
    np.testing.assert_array_equal(snaps.means[3], np.full(4, 3.0))
    np.testing.assert_array_equal(snaps.deviations[0][:, 0], [-1.0, 0, 0, 0])
    np.testing.assert_array_equal(snaps.deviations[0][:, 1], [1.0, 0, 0, 0])
    assert np.max(np.abs(snaps.deviations[1:])) == 0.0


def test_build_pod_basis_worked_example():
    basis = build_pod_basis(collect_snapshots(_tiny_snapshots()), kappa=0.0)
    assert basis.r == 1
    assert basis.ranks == (1, 1, 1, 1)
    np.testing.assert_allclose(basis.singular_values[0][0], np.sqrt(2.0), rtol=1e-14)
    np.testing.assert_allclose(np.abs(basis.modes[0][:, 0]), [1.0, 0, 0, 0], atol=1e-14)
    # lift(restrict(.)) reproduces both snapshots: deviations lie in the basis
    traj = _tiny_snapshots()
    rebuilt = basis.lift_array(basis.restrict_array(traj))
    np.testing.assert_allclose(rebuilt, traj, rtol=0.0, atol=1e-13)


def test_collect_snapshots_accepts_states(rng):
    grid, _ = small_setup(n=4)
    states = [random_state(grid, rng) for _ in range(3)]
    as_array = np.stack([st.z for st in states], axis=1)
    from_states = collect_snapshots(states)
    from_array = collect_snapshots(as_array)
    np.testing.assert_array_equal(from_states.means, from_array.means)
    np.testing.assert_array_equal(from_states.deviations, from_array.deviations)


def test_collect_snapshots_rejects_bad_input():
    with pytest.raises(ConfigError):
        collect_snapshots([])
    with pytest.raises(ConfigError):
        collect_snapshots(np.zeros((16, 0)))
    with pytest.raises(ConfigError):
        collect_snapshots(np.zeros((15, 3)))


def test_truncate_rank_worked_examples():
    sig = np.array([10.0, 1.0, 0.1])
    # squared energies 100, 1, 0.01: tails after r modes are 1.01 and 0.01
    assert truncate_rank(sig, 0.011) == 1
    assert truncate_rank(sig, 0.005) == 2
    assert truncate_rank(sig, 0.0) == 3
    # numerically zero singular values are clipped before the kappa = 0 rule
    assert truncate_rank(np.array([10.0, 1.0, 1e-17]), 0.0) == 2


def test_truncate_rank_rejects_bad_input():
    with pytest.raises(ConfigError):
        truncate_rank(np.array([1.0, 2.0]), 0.1)  # increasing
    with pytest.raises(ConfigError):
        truncate_rank(np.array([1.0, 0.5]), -0.1)
    with pytest.raises(ConfigError):
        truncate_rank(np.array([1.0, 0.5]), 1.0)
    with pytest.raises(ConfigError):
        truncate_rank(np.array([0.0, 0.0]), 0.1)
    with pytest.raises(ConfigError):
        truncate_rank(np.array([]), 0.1)


def test_modes_orthonormal(mini_pipeline):
    basis = mini_pipeline.basis
    for i in range(4):
        gram = basis.modes[i].T @ basis.modes[i]
        np.testing.assert_allclose(gram, np.eye(basis.r), rtol=0.0, atol=1e-12)


def test_r_override(rng):
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(6)], axis=1)
    snaps = collect_snapshots(traj)
    basis = build_pod_basis(snaps, kappa=1e-3, r_override=3)
    assert basis.r == 3
    # criterion ranks are still reported
    assert all(1 <= rk <= 6 for rk in basis.ranks)
    with pytest.raises(ConfigError):
        build_pod_basis(snaps, kappa=1e-3, r_override=0)
    # six snapshots offer six singular directions; the mean adds a seventh
    with pytest.raises(ConfigError):
        build_pod_basis(snaps, kappa=1e-3, r_override=8)
    with pytest.raises(ConfigError):
        build_pod_basis(snaps, kappa=1e-3, r_override=7, mean_mode=False)


def test_full_rank_basis_reproduces_snapshots(rng):
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(5)], axis=1)
    snaps = collect_snapshots(traj)
    basis = build_pod_basis(snaps, kappa=0.0, r_override=5)
    rebuilt = basis.lift_array(basis.restrict_array(traj))
    np.testing.assert_allclose(rebuilt, traj, rtol=0.0, atol=1e-10)


def test_restrict_lift_state_interface(rng):
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(5)], axis=1)
    # five columns hold the mean direction plus the full rank-4 deviation
    # span of five snapshots, so reconstruction of the snapshots is exact
    basis = build_pod_basis(collect_snapshots(traj), kappa=1e-8, r_override=5)
    state = State(z=traj[:, 2], t=7.0)
    z_r = restrict(basis, state)
    assert z_r.shape == (4 * basis.r,)
    lifted = lift(basis, z_r, t=7.0)
    assert lifted.t == 7.0
    np.testing.assert_allclose(lifted.z, state.z, rtol=0.0, atol=1e-10)
    # batched and single-column maps agree
    np.testing.assert_allclose(basis.restrict_array(traj)[:, 2], z_r, rtol=0.0, atol=1e-14)

    other = random_state(small_setup(n=5)[0], rng)
    with pytest.raises(ConfigError):
        restrict(basis, other)
    with pytest.raises(ConfigError):
        lift(basis, np.zeros(4 * basis.r + 1))


def test_mean_direction_lies_in_default_span(rng):
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(6)], axis=1)
    basis = build_pod_basis(collect_snapshots(traj), kappa=1e-3, r_override=3)
    plain = build_pod_basis(collect_snapshots(traj), kappa=1e-3, r_override=3,
                            mean_mode=False)
    for i in range(4):
        mean = basis.means[i]
        kept = basis.modes[i] @ (basis.modes[i].T @ mean)
        assert np.linalg.norm(kept - mean) <= 1e-10 * np.linalg.norm(mean)
        # whereas the plain SVD span is (generically) far from the mean
        dropped = mean - plain.modes[i] @ (plain.modes[i].T @ mean)
        assert np.linalg.norm(dropped) > 0.1 * np.linalg.norm(mean)


def test_plain_svd_projection_is_least_squares_optimal(rng):
    # || S - V_r V_r^T S ||_F^2 equals the tail energy sum_{j>r} sigma_j^2
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(8)], axis=1)
    snaps = collect_snapshots(traj)
    r = 3
    basis = build_pod_basis(snaps, kappa=1e-3, r_override=r, mean_mode=False)
    for i in range(4):
        s = snaps.deviations[i]
        err2 = np.linalg.norm(s - basis.modes[i] @ (basis.modes[i].T @ s)) ** 2
        tail = (basis.singular_values[i][r:] ** 2).sum()
        np.testing.assert_allclose(err2, tail, rtol=1e-10)


def test_mean_led_projection_error_sandwich(rng):
    # Spending one of r columns on the mean costs at most one mode of energy:
    # the optimal rank-r and rank-(r-1) tails bracket the projection error.
    grid, _ = small_setup(n=4)
    traj = np.stack([random_state(grid, rng).z for _ in range(8)], axis=1)
    snaps = collect_snapshots(traj)
    r = 4
    basis = build_pod_basis(snaps, kappa=1e-3, r_override=r)
    for i in range(4):
        s = snaps.deviations[i]
        sig2 = basis.singular_values[i] ** 2
        err2 = np.linalg.norm(s - basis.modes[i] @ (basis.modes[i].T @ s)) ** 2
        slack = 1e-10 * sig2.sum()
        assert sig2[r:].sum() - slack <= err2 <= sig2[r - 1 :].sum() + slack


def test_constant_trajectory_mean_led_basis():
    # deviations vanish entirely; the mean direction alone is exact
    traj = np.tile(np.arange(1.0, 17.0)[:, None], (1, 3))
    basis = build_pod_basis(collect_snapshots(traj), kappa=0.0)
    assert basis.r == 1
    rebuilt = basis.lift_array(basis.restrict_array(traj))
    np.testing.assert_allclose(rebuilt, traj, rtol=1e-14)


def test_mean_z_packs_variable_blocks():
    basis = build_pod_basis(collect_snapshots(_tiny_snapshots()), kappa=0.0)
    mean_z = basis.mean_z
    assert mean_z.shape == (16,)
    np.testing.assert_array_equal(mean_z[:4], [2.0, 0, 0, 0])
    np.testing.assert_array_equal(mean_z[12:], np.full(4, 3.0))
